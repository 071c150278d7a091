use std::collections::BTreeSet;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::{self, Purpose};
use crate::variational::{clamp_lambda, Posterior, SparseVariationalParams, VariationalParams};

/// Global tuple (or bank of `K` tuples) held by the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    /// One entry for the single-prior algorithms, `K` for the clustered one.
    pub bank: Vec<Posterior>,
    pub round: usize,
}

impl ServerState {
    pub fn single(global: Posterior) -> Self {
        Self {
            bank: vec![global],
            round: 0,
        }
    }

    pub fn clustered(bank: Vec<Posterior>) -> Result<Self> {
        let first = bank
            .first()
            .ok_or_else(|| Error::Structural("cluster bank needs K >= 1".into()))?;
        for w in &bank {
            check_len("bank entry", first.len(), w.len())?;
            if w.is_sparse() != first.is_sparse() {
                return Err(Error::Structural("bank entries mix families".into()));
            }
        }
        Ok(Self { bank, round: 0 })
    }

    pub fn global(&self) -> &Posterior {
        &self.bank[0]
    }
}

/// Clients whose uploads the server consumes this round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundPlan {
    /// Sorted, distinct client indices.
    pub participants: Vec<usize>,
    pub rng_seed: u64,
}

/// Uniform sample of `s` distinct clients out of `n`, fixed by `(seed, round)`.
pub fn sample_participants(n: usize, s: usize, round: usize, seed: u64) -> Result<RoundPlan> {
    if s == 0 || s > n {
        return Err(Error::Config(format!("need 1 <= S <= N, got S={s}, N={n}")));
    }
    let participants = if s == n {
        (0..n).collect()
    } else {
        let mut rng = rng::stream(seed, Purpose::Participants, round as u64, 0);
        let mut p = index::sample(&mut rng, n, s).into_vec();
        p.sort_unstable();
        p
    };
    Ok(RoundPlan {
        participants,
        rng_seed: seed,
    })
}

/// Coordinates that survive the upload threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityMask {
    pub kept: Vec<usize>,
    pub total: usize,
}

impl SparsityMask {
    pub fn kept_count(&self) -> usize {
        self.kept.len()
    }

    /// Fraction of coordinates transmitted.
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.kept.len() as f64 / self.total as f64
        }
    }
}

/// Coordinates with `lambda >= tol`; the rest are not transmitted.
pub fn sparsity_mask(params: &SparseVariationalParams, tol: f64) -> SparsityMask {
    SparsityMask {
        kept: (0..params.len()).filter(|&m| params.lambda[m] >= tol).collect(),
        total: params.len(),
    }
}

/// What a client sends to the server: its localized-global tuple, possibly
/// compacted to the coordinates in `kept`, and the selected cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Upload {
    pub client_id: usize,
    pub cluster_id: usize,
    /// Full tuple, or only the kept coordinates when `kept` is set.
    pub params: Posterior,
    pub kept: Option<Vec<usize>>,
}

impl Upload {
    /// Builds the payload; sparse tuples drop coordinates with `lambda < tol`.
    pub fn new(client_id: usize, cluster_id: usize, params: Posterior, tol: f64) -> Self {
        let (params, kept) = match params {
            Posterior::Sparse(s) if tol > 0.0 => {
                let mask = sparsity_mask(&s, tol);
                let pick = |v: &[f64]| mask.kept.iter().map(|&m| v[m]).collect::<Vec<f64>>();
                let compact = SparseVariationalParams {
                    base: VariationalParams {
                        mu: pick(&s.base.mu),
                        rho: pick(&s.base.rho),
                    },
                    lambda: pick(&s.lambda),
                };
                (Posterior::Sparse(compact), Some(mask.kept))
            }
            other => (other, None),
        };
        Self {
            client_id,
            cluster_id,
            params,
            kept,
        }
    }

    /// Fraction of the full tuple carried by this payload.
    pub fn transmitted_fraction(&self, total: usize) -> f64 {
        match &self.kept {
            Some(k) if total > 0 => k.len() as f64 / total as f64,
            _ => 1.0,
        }
    }

    /// Full tuple as seen by the receiver: dropped coordinates take the
    /// receiver's previous values.
    fn materialize(&self, prev: &Posterior) -> Result<Posterior> {
        if self.params.is_sparse() != prev.is_sparse() {
            return Err(Error::Protocol(format!(
                "client {} uploaded the wrong parameter family",
                self.client_id
            )));
        }
        let Some(kept) = &self.kept else {
            check_len("upload", prev.len(), self.params.len())?;
            return Ok(self.params.clone());
        };
        check_len("compacted upload", kept.len(), self.params.len())?;
        let mut full = prev.clone();
        let src = self.params.gaussian();
        let dst = full.gaussian_mut();
        for (j, &m) in kept.iter().enumerate() {
            if m >= dst.mu.len() {
                return Err(Error::Protocol(format!("coordinate {m} out of range")));
            }
            dst.mu[m] = src.mu[j];
            dst.rho[m] = src.rho[j];
        }
        if let (Posterior::Sparse(d), Some(l)) = (&mut full, self.params.lambda()) {
            for (j, &m) in kept.iter().enumerate() {
                d.lambda[m] = l[j];
            }
        }
        Ok(full)
    }
}

/// `(1 - beta) prev + beta * mean(uploads)` on raw coordinates.
fn mix(prev: &[f64], uploads: &[&[f64]], beta: f64) -> Vec<f64> {
    let s = uploads.len() as f64;
    (0..prev.len())
        .map(|m| {
            let mean = uploads.iter().map(|u| u[m]).sum::<f64>() / s;
            (1.0 - beta) * prev[m] + beta * mean
        })
        .collect()
}

fn mix_posterior(prev: &Posterior, uploads: &[Posterior], beta: f64) -> Result<Posterior> {
    let gaussians: Vec<&VariationalParams> = uploads.iter().map(|u| u.gaussian()).collect();
    let gp = prev.gaussian();
    let mu = mix(&gp.mu, &gaussians.iter().map(|g| g.mu.as_slice()).collect::<Vec<_>>(), beta);
    let rho = mix(&gp.rho, &gaussians.iter().map(|g| g.rho.as_slice()).collect::<Vec<_>>(), beta);
    let base = VariationalParams::new(mu, rho)?;
    Ok(match prev.lambda() {
        None => Posterior::Gaussian(base),
        Some(pl) => {
            let ls: Vec<&[f64]> = uploads.iter().map(|u| u.lambda().expect("family checked")).collect();
            let lambda = mix(pl, &ls, beta).into_iter().map(clamp_lambda).collect();
            Posterior::Sparse(SparseVariationalParams { base, lambda })
        }
    })
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("beta must be positive, got {beta}")))
    }
}

fn check_plan<'a>(ids: impl Iterator<Item = &'a usize>, plan: &RoundPlan) -> Result<()> {
    let got: Vec<usize> = ids.copied().collect();
    let set: BTreeSet<usize> = got.iter().copied().collect();
    if set.len() != got.len() {
        return Err(Error::Protocol("a client uploaded more than once".into()));
    }
    if set != plan.participants.iter().copied().collect() {
        return Err(Error::Protocol(format!(
            "uploads from {got:?} do not match participants {:?}",
            plan.participants
        )));
    }
    Ok(())
}

/// Single-prior server step; every participant uploads exactly once.
pub fn aggregate(server: &ServerState, uploads: &[Upload], plan: &RoundPlan, beta: f64) -> Result<ServerState> {
    if server.bank.len() != 1 {
        return Err(Error::Protocol("aggregate expects a single global tuple".into()));
    }
    check_plan(uploads.iter().map(|u| &u.client_id), plan)?;
    if let Some(u) = uploads.iter().find(|u| u.cluster_id != 0) {
        return Err(Error::Protocol(format!("client {} tagged cluster {}", u.client_id, u.cluster_id)));
    }
    aggregate_clusters(server, uploads, beta)
}

/// Per-cluster server step. Clusters that received nothing keep their tuple.
pub fn aggregate_clusters(server: &ServerState, uploads: &[Upload], beta: f64) -> Result<ServerState> {
    check_beta(beta)?;
    let k = server.bank.len();
    let mut groups: Vec<Vec<Posterior>> = vec![Vec::new(); k];
    for u in uploads {
        if u.cluster_id >= k {
            return Err(Error::Protocol(format!(
                "client {} selected cluster {} of {k}",
                u.client_id, u.cluster_id
            )));
        }
        groups[u.cluster_id].push(u.materialize(&server.bank[u.cluster_id])?);
    }
    let bank = server
        .bank
        .iter()
        .zip(&groups)
        .map(|(prev, g)| if g.is_empty() { Ok(prev.clone()) } else { mix_posterior(prev, g, beta) })
        .collect::<Result<Vec<_>>>()?;
    Ok(ServerState {
        bank,
        round: server.round + 1,
    })
}

/// FedAvg server step on point weights.
pub fn fedavg_aggregate(prev: &[f64], uploads: &[(usize, Vec<f64>)], plan: &RoundPlan, beta: f64) -> Result<Vec<f64>> {
    check_beta(beta)?;
    check_plan(uploads.iter().map(|(id, _)| id), plan)?;
    for (_, w) in uploads {
        check_len("weights", prev.len(), w.len())?;
    }
    let refs: Vec<&[f64]> = uploads.iter().map(|(_, w)| w.as_slice()).collect();
    Ok(mix(prev, &refs, beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gp(mu: Vec<f64>, rho: Vec<f64>) -> Posterior {
        Posterior::Gaussian(VariationalParams::new(mu, rho).unwrap())
    }

    fn plan(p: Vec<usize>) -> RoundPlan {
        RoundPlan { participants: p, rng_seed: 0 }
    }

    #[test]
    fn plain_average_and_interpolation() {
        let s = ServerState::single(gp(vec![0.0], vec![0.0]));
        let ups = vec![
            Upload::new(0, 0, gp(vec![0.0], vec![1.0]), 0.0),
            Upload::new(1, 0, gp(vec![2.0], vec![3.0]), 0.0),
        ];
        let out = aggregate(&s, &ups, &plan(vec![0, 1]), 1.0).unwrap();
        assert_eq!(out.global().gaussian().mu, vec![1.0]);
        assert_eq!(out.global().gaussian().rho, vec![2.0]);
        assert_eq!(out.round, 1);
        let out = aggregate(&s, &ups, &plan(vec![0, 1]), 0.5).unwrap();
        assert_eq!(out.global().gaussian().mu, vec![0.5]);
        let same = vec![Upload::new(3, 0, gp(vec![0.7], vec![-2.5]), 0.0)];
        assert_eq!(aggregate(&s, &same, &plan(vec![3]), 1.0).unwrap().global(), &same[0].params);
    }

    #[test]
    fn protocol_violations() {
        let s = ServerState::single(gp(vec![0.0], vec![0.0]));
        let u = |id| Upload::new(id, 0, gp(vec![1.0], vec![0.0]), 0.0);
        assert!(matches!(aggregate(&s, &[u(0)], &plan(vec![0, 1]), 1.0), Err(Error::Protocol(_))));
        assert!(matches!(aggregate(&s, &[u(0), u(0)], &plan(vec![0]), 1.0), Err(Error::Protocol(_))));
        assert!(matches!(aggregate(&s, &[u(2)], &plan(vec![1]), 1.0), Err(Error::Protocol(_))));
        let bad = Upload::new(0, 5, gp(vec![1.0], vec![0.0]), 0.0);
        assert!(matches!(aggregate_clusters(&s, &[bad], 1.0), Err(Error::Protocol(_))));
        assert!(aggregate(&s, &[u(0)], &plan(vec![0]), 0.0).is_err());
    }

    #[test]
    fn clusters_hold_when_empty() {
        let bank = vec![gp(vec![0.1, 0.2], vec![-1.0, -2.0]), gp(vec![5.0, 6.0], vec![0.3, 0.4])];
        let s = ServerState::clustered(bank.clone()).unwrap();
        let ups = vec![
            Upload::new(0, 0, gp(vec![1.0, 1.0], vec![0.0, 0.0]), 0.0),
            Upload::new(1, 0, gp(vec![3.0, 3.0], vec![0.0, 0.0]), 0.0),
        ];
        let out = aggregate_clusters(&s, &ups, 1.0).unwrap();
        assert_eq!(out.bank[0].gaussian().mu, vec![2.0, 2.0]);
        assert_eq!(out.bank[1], bank[1]);
        let ups = vec![
            Upload::new(0, 1, gp(vec![1.0, 1.0], vec![0.0, 0.0]), 0.0),
            Upload::new(1, 0, gp(vec![3.0, 3.0], vec![0.0, 0.0]), 0.0),
        ];
        let out = aggregate_clusters(&s, &ups, 1.0).unwrap();
        assert_eq!(out.bank[0], ups[1].params);
        assert_eq!(out.bank[1], ups[0].params);
        assert!(ServerState::clustered(vec![]).is_err());
    }

    #[test]
    fn single_prior_matches_one_cluster() {
        let s = ServerState::single(gp(vec![0.3, -0.1], vec![-2.0, -1.0]));
        let ups: Vec<Upload> = (0..3)
            .map(|i| Upload::new(i, 0, gp(vec![0.1 * i as f64, 0.7], vec![-1.0 / (i + 1) as f64, 0.2]), 0.0))
            .collect();
        let a = aggregate(&s, &ups, &plan(vec![0, 1, 2]), 0.7).unwrap();
        let b = aggregate_clusters(&s, &ups, 0.7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn masks_and_compacted_uploads() {
        let base = VariationalParams::new(vec![1.0, 2.0, 3.0], vec![0.1, 0.2, 0.3]).unwrap();
        let q = SparseVariationalParams::new(base.clone(), vec![0.3; 3]).unwrap();
        assert_eq!(sparsity_mask(&q, 0.0).kept_count(), 3);
        assert_eq!(sparsity_mask(&q, 0.5).kept_count(), 0);
        let mixed = SparseVariationalParams::new(base, vec![0.9, 0.1, 0.6]).unwrap();
        let m = sparsity_mask(&mixed, 0.5);
        assert_eq!(m.kept, vec![0, 2]);
        assert!((m.fraction() - 2.0 / 3.0).abs() < 1e-15);

        let prev = Posterior::Sparse(
            SparseVariationalParams::new(VariationalParams::new(vec![9.0; 3], vec![-9.0; 3]).unwrap(), vec![0.5; 3]).unwrap(),
        );
        let up = Upload::new(4, 0, Posterior::Sparse(mixed), 0.5);
        assert_eq!(up.params.len(), 2);
        assert!((up.transmitted_fraction(3) - 2.0 / 3.0).abs() < 1e-15);
        let out = aggregate(&ServerState::single(prev), &[up], &plan(vec![4]), 1.0).unwrap();
        let g = out.global();
        assert_eq!(g.gaussian().mu, vec![1.0, 9.0, 3.0]);
        assert_eq!(g.lambda().unwrap(), &[0.9, 0.5, 0.6]);
    }

    #[test]
    fn participation() {
        assert_eq!(sample_participants(5, 5, 3, 1).unwrap().participants, vec![0, 1, 2, 3, 4]);
        assert!(matches!(sample_participants(3, 4, 0, 0), Err(Error::Config(_))));
        assert!(sample_participants(3, 0, 0, 0).is_err());
        let a = sample_participants(20, 5, 7, 42).unwrap();
        assert_eq!(a, sample_participants(20, 5, 7, 42).unwrap());
        assert_eq!(a.participants.len(), 5);
        assert!(a.participants.windows(2).all(|w| w[0] < w[1]));
    }

    /// Each client's participation count is Binomial(rounds, S/N).
    #[test]
    fn participation_frequency_is_binomial() {
        let (n, s, rounds) = (10usize, 3usize, 10_000usize);
        let mut counts = vec![0usize; n];
        for r in 0..rounds {
            for i in sample_participants(n, s, r, 5).unwrap().participants {
                counts[i] += 1;
            }
        }
        let p = s as f64 / n as f64;
        let mean = rounds as f64 * p;
        let sd = (rounds as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sd, "{c} vs {mean} ± {sd}");
        }
    }

    #[test]
    fn fedavg_mixing() {
        let prev = vec![0.0, 4.0];
        let ups = vec![(0, vec![2.0, 0.0]), (1, vec![4.0, 0.0])];
        assert_eq!(fedavg_aggregate(&prev, &ups, &plan(vec![0, 1]), 1.0).unwrap(), vec![3.0, 0.0]);
        assert_eq!(fedavg_aggregate(&prev, &ups, &plan(vec![0, 1]), 0.5).unwrap(), vec![1.5, 2.0]);
        assert!(fedavg_aggregate(&prev, &ups, &plan(vec![0]), 1.0).is_err());
    }

    proptest! {
        /// Two steps with constant uploads compose to one affine step with
        /// coefficient `1 - (1 - b1)(1 - b2)`.
        #[test]
        fn mixing_composes(
            prev in prop::collection::vec(-5.0f64..5.0, 4),
            up in prop::collection::vec(-5.0f64..5.0, 4),
            b1 in 0.05f64..1.5,
            b2 in 0.05f64..1.5,
        ) {
            let s = ServerState::single(gp(prev.clone(), prev.clone()));
            let u = vec![Upload::new(0, 0, gp(up.clone(), up.clone()), 0.0)];
            let p = plan(vec![0]);
            let two = aggregate(&aggregate(&s, &u, &p, b1).unwrap(), &u, &p, b2).unwrap();
            let c = 1.0 - (1.0 - b1) * (1.0 - b2);
            let one = aggregate(&s, &u, &p, c).unwrap();
            for (a, b) in two.global().gaussian().mu.iter().zip(&one.global().gaussian().mu) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
