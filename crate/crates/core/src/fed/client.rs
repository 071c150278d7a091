use std::sync::Arc;

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bnn::{
    forward, localized_global_gradient_scaled, log_likelihood, personal_gradient_scaled,
    point_nll_and_grad, Batch, Gradient, LocalObjective, NetworkShape, Scales,
};
use crate::data::LabeledDataset;
use crate::error::{check_len, Error, Result};
use crate::rng::{self, Purpose};
use crate::variational::{clamp_lambda, sample_posterior, NoiseDraw, Posterior};

/// Hyper-parameters of one client's local loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalConfig {
    /// `R`: gradient steps per round.
    pub local_steps: usize,
    /// `b`: minibatch size.
    pub batch_size: usize,
    /// `a`: Monte-Carlo draws per step.
    pub mc_samples: usize,
    /// `eta_1`, the personal-side step size (also the FedAvg step size).
    pub lr_personal: f64,
    /// `eta_2`, the localized-global step size.
    pub lr_global: f64,
    pub zeta: f64,
    pub tau: f64,
    pub seed: u64,
}

impl LocalConfig {
    fn validate(&self, n: usize) -> Result<()> {
        if self.local_steps == 0 {
            return Err(Error::Config("local_steps must be at least 1".into()));
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be at least 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::Config(format!(
                "batch size {} does not fit a client with {n} samples",
                self.batch_size
            )));
        }
        if !(self.lr_personal >= 0.0 && self.lr_global >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        Ok(())
    }
}

/// Everything a client keeps between rounds.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub personal: Posterior,
    /// Last localized-global tuple this client produced.
    pub localized_global: Posterior,
    pub train: Arc<LabeledDataset>,
    pub cluster_id: Option<usize>,
}

impl ClientState {
    /// Fresh client whose personal and localized-global tuples start at `init`.
    pub fn new(id: usize, init: Posterior, train: Arc<LabeledDataset>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Config(format!("client {id} has no training data")));
        }
        Ok(Self {
            id,
            localized_global: init.clone(),
            personal: init,
            train,
            cluster_id: None,
        })
    }

    pub fn n(&self) -> usize {
        self.train.len()
    }
}

#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub localized_global: Posterior,
    /// Mean per-sample negative log-likelihood over the round's minibatches.
    pub train_loss: f64,
}

fn minibatch(rng: &mut ChaCha8Rng, data: &LabeledDataset, b: usize) -> Batch {
    let idx = index::sample(rng, data.len(), b).into_vec();
    data.batch(&idx)
}

fn sgd_step(p: &mut Posterior, g: &Gradient, lr: f64) {
    let gv = p.gaussian_mut();
    for (m, d) in gv.mu.iter_mut().zip(&g.d_mu) {
        *m -= lr * d;
    }
    for (r, d) in gv.rho.iter_mut().zip(&g.d_rho) {
        *r -= lr * d;
    }
    if let (Posterior::Sparse(s), Some(dl)) = (p, g.d_lambda.as_ref()) {
        for (l, d) in s.lambda.iter_mut().zip(dl) {
            *l = clamp_lambda(*l - lr * d);
        }
    }
}

fn check_pair(shape: &NetworkShape, a: &Posterior, b: &Posterior) -> Result<()> {
    check_len("personal params", shape.num_params(), a.len())?;
    check_len("global params", shape.num_params(), b.len())?;
    if a.is_sparse() != b.is_sparse() {
        return Err(Error::Structural("personal and global families differ".into()));
    }
    Ok(())
}

/// One round of local training against the downloaded `global`: `R`
/// alternating SGD steps, personal side first, then the localized copy of
/// the global tuple. The family (Gaussian or spike-and-slab) follows the
/// parameters. Personal parameters persist in `state`.
pub fn client_update(
    state: &mut ClientState,
    global: &Posterior,
    shape: &NetworkShape,
    cfg: &LocalConfig,
    round: usize,
) -> Result<LocalOutcome> {
    cfg.validate(state.n())?;
    check_pair(shape, &state.personal, global)?;
    let mut rng = rng::stream(cfg.seed, Purpose::LocalTraining, state.id as u64, round as u64);
    let mut w = global.clone();
    let sparse = global.is_sparse();
    if sparse && !(cfg.tau > 0.0) {
        return Err(Error::Domain(format!("tau must be positive, got {}", cfg.tau)));
    }
    if !(cfg.zeta >= 1.0) {
        return Err(Error::Domain(format!("zeta must be at least 1, got {}", cfg.zeta)));
    }
    // softplus/sigmoid of rho, refreshed whenever a side is stepped.
    let mut cv = Scales::of(&state.personal);
    let mut cw = Scales::of(&w);
    let mut loss = 0.0;
    for _ in 0..cfg.local_steps {
        let batch = minibatch(&mut rng, &state.train, cfg.batch_size);
        let noise: Vec<NoiseDraw> = (0..cfg.mc_samples)
            .map(|_| NoiseDraw::sample(&mut rng, w.len(), sparse))
            .collect();
        let obj = LocalObjective {
            shape,
            batch: &batch,
            n: state.n(),
            zeta: cfg.zeta,
            tau: cfg.tau,
        };
        let (_, per_sample, grad) = personal_gradient_scaled(&obj, &state.personal, &w, &cv, &cw, &noise)?;
        if !grad.is_finite() {
            return Err(Error::Domain(format!(
                "non-finite personal gradient at client {} round {round}",
                state.id
            )));
        }
        sgd_step(&mut state.personal, &grad, cfg.lr_personal);
        cv = Scales::of(&state.personal);
        let g = localized_global_gradient_scaled(&state.personal, &w, &cv, &cw);
        sgd_step(&mut w, &g, cfg.lr_global);
        cw = Scales::of(&w);
        loss += per_sample;
    }
    state.localized_global = w.clone();
    Ok(LocalOutcome {
        localized_global: w,
        train_loss: loss / cfg.local_steps as f64,
    })
}

/// Index of the bank entry under which a minibatch of the client's data is
/// most likely. The same minibatch and noise draws are shared by every
/// candidate, so the comparison is paired; ties go to the lowest index.
pub fn select_cluster(
    state: &ClientState,
    bank: &[Posterior],
    shape: &NetworkShape,
    cfg: &LocalConfig,
    round: usize,
) -> Result<usize> {
    let first = bank
        .first()
        .ok_or_else(|| Error::Structural("cluster bank is empty".into()))?;
    if bank.len() == 1 {
        return Ok(0);
    }
    cfg.validate(state.n())?;
    let mut rng = rng::stream(cfg.seed, Purpose::ClusterSelection, state.id as u64, round as u64);
    let batch = minibatch(&mut rng, &state.train, cfg.batch_size);
    let noise: Vec<NoiseDraw> = (0..cfg.mc_samples)
        .map(|_| NoiseDraw::sample(&mut rng, first.len(), first.is_sparse()))
        .collect();
    let scale = state.n() as f64 / (cfg.batch_size * cfg.mc_samples) as f64;
    let mut best = (0, f64::NEG_INFINITY);
    for (k, w) in bank.iter().enumerate() {
        check_len("bank entry", shape.num_params(), w.len())?;
        let mut ll = 0.0;
        for draw in &noise {
            let theta = sample_posterior(w, draw)?;
            ll += log_likelihood(shape, &forward(shape, &theta, batch.inputs.view())?, &batch)?;
        }
        let score = scale * ll;
        if score > best.1 {
            best = (k, score);
        }
    }
    Ok(best.0)
}

/// Cluster selection followed by [`client_update`] against the chosen entry.
pub fn client_update_cfedbayes(
    state: &mut ClientState,
    bank: &[Posterior],
    shape: &NetworkShape,
    cfg: &LocalConfig,
    round: usize,
) -> Result<(usize, LocalOutcome)> {
    let k = select_cluster(state, bank, shape, cfg, round)?;
    state.cluster_id = Some(k);
    let out = client_update(state, &bank[k], shape, cfg, round)?;
    Ok((k, out))
}

/// `R` plain SGD steps on the mean minibatch loss, starting from `global`.
/// Returns the new weights and the mean training loss over the steps.
pub fn fedavg_update(
    id: usize,
    train: &LabeledDataset,
    global: &[f64],
    shape: &NetworkShape,
    cfg: &LocalConfig,
    round: usize,
) -> Result<(Vec<f64>, f64)> {
    cfg.validate(train.len())?;
    check_len("global weights", shape.num_params(), global.len())?;
    let mut rng = rng::stream(cfg.seed, Purpose::LocalTraining, id as u64, round as u64);
    let mut w = global.to_vec();
    let mut loss = 0.0;
    for _ in 0..cfg.local_steps {
        let batch = minibatch(&mut rng, train, cfg.batch_size);
        let (l, g) = point_nll_and_grad(shape, &w, &batch)?;
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= cfg.lr_personal * gi;
        }
        loss += l;
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("FedAvg weights diverged at client {id} round {round}")));
    }
    Ok((w, loss / cfg.local_steps as f64))
}
