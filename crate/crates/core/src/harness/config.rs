use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Preset;
use crate::error::{Error, Result};
use crate::fed::{Algorithm, LocalConfig};

/// Environment variable naming the default dataset directory.
pub const DATA_DIR_ENV: &str = "FEDBAYES_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// One IDX dataset split across all clients.
    Idx,
    /// First half of the clients see the data, second half its pixel negation.
    InvertedClusters,
    /// First half draws from `data_dir`, second half from `second_data_dir`.
    MixedClusters,
    /// Clustered synthetic regression.
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterInit {
    /// Independent random initialization per bank entry.
    Random,
    /// Farthest-point seeding from briefly warmed-up client posteriors.
    ClientSeeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    MeanWeights,
    Sampled,
}

/// Complete description of one run. Every field has a default, so a config
/// file only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub dataset: DatasetKind,
    /// IDX directory; falls back to `$FEDBAYES_DATA_DIR`, then `data/mnist`.
    pub data_dir: Option<PathBuf>,
    pub second_data_dir: Option<PathBuf>,
    pub preset: Preset,
    /// Per-label sample counts; when set they replace the preset's.
    pub train_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    pub labels_per_client: usize,
    pub num_clients: usize,
    /// Clients whose uploads are aggregated each round.
    pub participants: usize,
    /// Bank size for the clustered algorithm.
    pub clusters: usize,
    pub cluster_init: ClusterInit,
    /// Local steps of the warm-up used by `client_seeded`.
    pub cluster_warmup_steps: usize,
    pub hidden: Vec<usize>,
    pub rounds: usize,
    pub local_steps: usize,
    pub batch_size: usize,
    pub mc_samples: usize,
    pub lr_personal: f64,
    pub lr_global: f64,
    /// Local step size of the FedAvg baseline.
    pub lr_fedavg: f64,
    pub beta: f64,
    pub zeta: f64,
    pub tau: f64,
    pub lambda_init: f64,
    pub rho_init: f64,
    /// Upload threshold on inclusion probabilities.
    pub tol: f64,
    pub seed: u64,
    /// Ground-truth clusters of the synthetic benchmark.
    pub synthetic_clusters: usize,
    pub synthetic_samples: usize,
    pub synthetic_noise: f64,
    pub synthetic_input_dim: usize,
    /// Evaluate every this many rounds (the last round is always evaluated).
    pub eval_every: usize,
    pub eval_mode: EvalMode,
    pub eval_draws: usize,
    pub per_client_metrics: bool,
    pub record_wall_time: bool,
    /// Completed-round counts at which the full state is saved (0 = initial).
    pub snapshot_rounds: Vec<usize>,
    pub uncertainty_clients: usize,
    pub uncertainty_draws: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::PFedBayes,
            dataset: DatasetKind::Idx,
            data_dir: None,
            second_data_dir: None,
            preset: Preset::Small,
            train_per_class: None,
            test_per_class: None,
            labels_per_client: 5,
            num_clients: 10,
            participants: 10,
            clusters: 2,
            cluster_init: ClusterInit::Random,
            cluster_warmup_steps: 50,
            hidden: vec![100],
            rounds: 800,
            local_steps: 20,
            batch_size: 20,
            mc_samples: 1,
            lr_personal: 0.001,
            lr_global: 0.001,
            lr_fedavg: 0.01,
            beta: 1.0,
            zeta: 10.0,
            tau: 0.5,
            lambda_init: 0.99,
            rho_init: -2.5,
            tol: 0.0,
            seed: 1,
            synthetic_clusters: 2,
            synthetic_samples: 200,
            synthetic_noise: 0.1,
            synthetic_input_dim: 2,
            eval_every: 1,
            eval_mode: EvalMode::MeanWeights,
            eval_draws: 16,
            per_client_metrics: false,
            record_wall_time: false,
            snapshot_rounds: Vec::new(),
            uncertainty_clients: 5,
            uncertainty_draws: 20,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

fn parse_override(raw: &str) -> Result<(String, toml::Value)> {
    let body = raw.strip_prefix("--").unwrap_or(raw);
    let (key, value) = body
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{raw}` is not of the form --key=value")))?;
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key.replace('-', "_"), parsed))
}

impl ExperimentConfig {
    /// Parses TOML text, applies `--key=value` overrides and validates.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for raw in overrides {
            let (k, v) = parse_override(raw)?;
            table.insert(k, v);
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.zeta >= 1.0) {
            return fail(format!("zeta must be at least 1, got {}", self.zeta));
        }
        if self.num_clients == 0 || self.participants == 0 || self.participants > self.num_clients {
            return fail(format!(
                "need 1 <= participants <= num_clients, got {} and {}",
                self.participants, self.num_clients
            ));
        }
        if self.clusters == 0 {
            return fail("clusters must be at least 1".into());
        }
        if self.rounds == 0 || self.local_steps == 0 || self.batch_size == 0 || self.mc_samples == 0 {
            return fail("rounds, local_steps, batch_size and mc_samples must be positive".into());
        }
        for (name, v) in [("lr_personal", self.lr_personal), ("lr_global", self.lr_global), ("lr_fedavg", self.lr_fedavg)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be non-negative, got {v}"));
            }
        }
        for (name, v) in [("beta", self.beta), ("tau", self.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.lambda_init > 0.0 && self.lambda_init < 1.0) {
            return fail(format!("lambda_init must lie in (0,1), got {}", self.lambda_init));
        }
        if !(0.0..1.0).contains(&self.tol) {
            return fail(format!("tol must lie in [0,1), got {}", self.tol));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return fail("hidden must list at least one positive width".into());
        }
        if self.eval_every == 0 || self.eval_draws == 0 {
            return fail("eval_every and eval_draws must be positive".into());
        }
        if !(self.synthetic_noise > 0.0) {
            return fail("synthetic_noise must be positive".into());
        }
        if self.dataset == DatasetKind::MixedClusters && self.second_data_dir.is_none() {
            return fail("mixed_clusters needs second_data_dir".into());
        }
        if self.dataset == DatasetKind::Synthetic
            && (self.synthetic_clusters == 0 || self.num_clients % self.synthetic_clusters != 0)
        {
            return fail("synthetic data needs num_clients divisible by synthetic_clusters".into());
        }
        Ok(())
    }

    pub fn resolved_data_dir(&self) -> PathBuf {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data/mnist"))
    }

    pub fn local(&self) -> LocalConfig {
        LocalConfig {
            local_steps: self.local_steps,
            batch_size: self.batch_size,
            mc_samples: self.mc_samples,
            lr_personal: if self.algorithm == Algorithm::FedAvg {
                self.lr_fedavg
            } else {
                self.lr_personal
            },
            lr_global: self.lr_global,
            zeta: self.zeta,
            tau: self.tau,
            seed: self.seed,
        }
    }

    /// Trailing window over which the final score is the maximum.
    pub fn final_window(&self) -> usize {
        final_window(self.rounds)
    }
}

/// 100 rounds, or the last quarter of a run shorter than 400 rounds.
pub fn final_window(rounds: usize) -> usize {
    if rounds >= 400 {
        100
    } else {
        rounds.div_ceil(4).max(1)
    }
}
