use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bnn::NetworkShape;
use crate::error::{Error, Result};
use crate::fed::Algorithm;
use crate::variational::Posterior;

const MAGIC: &[u8; 8] = b"FEDBAYS1";

/// Full training state after `round` completed rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub round: usize,
    pub algorithm: Algorithm,
    pub shape: NetworkShape,
    /// Server tuple(s); empty for FedAvg.
    pub bank: Vec<Posterior>,
    /// Per-client personal posteriors; empty for FedAvg.
    pub personal: Vec<Posterior>,
    /// FedAvg global weights.
    pub point: Option<Vec<f64>>,
    pub cluster_ids: Vec<Option<usize>>,
}

impl Snapshot {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
        bincode::serialize_into(&mut w, self).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            field: "state",
            msg: e.to_string(),
        })?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != MAGIC {
            return Err(Error::Format {
                path: path.to_path_buf(),
                field: "magic",
                msg: "not a fedbayes state file".into(),
            });
        }
        bincode::deserialize_from(r).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            field: "state",
            msg: e.to_string(),
        })
    }
}
