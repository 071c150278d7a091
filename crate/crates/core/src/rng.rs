//! Deterministic random streams.
//!
//! Every consumer of randomness gets its own ChaCha8 stream derived from the
//! global seed plus a tuple of identifiers, so a (client, round) pair always
//! sees the same draws whether clients run serially or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Participants = 2,
    LocalTraining = 3,
    ClusterSelection = 4,
    Partition = 5,
    Synthetic = 6,
    Oracle = 7,
    Predictive = 8,
    ClusterSeeding = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream keyed by `(seed, purpose, a, b)`.
pub fn stream(seed: u64, purpose: Purpose, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let words = [
        splitmix64(seed),
        splitmix64(purpose as u64 ^ 0xA5A5_A5A5),
        splitmix64(a.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ 0x1234_5678),
        splitmix64(b.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x8765_4321),
    ];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
