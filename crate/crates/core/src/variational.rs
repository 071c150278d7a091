//! Mean-field variational families and their closed forms.
//!
//! Every network coordinate carries a Gaussian `N(mu, softplus(rho)^2)`; the
//! sparse family additionally gates it with a Bernoulli inclusion variable of
//! probability `lambda` (spike at zero, Gaussian slab).

use rand::Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::{self, Purpose};

/// Inclusion probabilities are kept inside `[LAMBDA_EPS, 1 - LAMBDA_EPS]`.
pub const LAMBDA_EPS: f64 = 1e-12;

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `s > 0`.
pub fn softplus_inv(s: f64) -> f64 {
    if s > 30.0 {
        s + (-(-s).exp_m1()).ln()
    } else {
        s.exp_m1().ln()
    }
}

/// Logistic function; also the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(softplus(x), sigmoid(x))` sharing one exponential.
#[inline]
pub fn softplus_and_slope(x: f64) -> (f64, f64) {
    let e = (-x.abs()).exp();
    let s = 1.0 / (1.0 + e);
    (x.max(0.0) + e.ln_1p(), if x >= 0.0 { s } else { e * s })
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn clamp_lambda(l: f64) -> f64 {
    l.clamp(LAMBDA_EPS, 1.0 - LAMBDA_EPS)
}

/// Per-coordinate Gaussian parameters `(mu, rho)` with `sigma = softplus(rho)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
}

impl VariationalParams {
    pub fn new(mu: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        check_len("rho", mu.len(), rho.len())?;
        Ok(Self { mu, rho })
    }

    /// Builds params from standard deviations instead of `rho`.
    pub fn from_sigma(mu: Vec<f64>, sigma: &[f64]) -> Result<Self> {
        check_len("sigma", mu.len(), sigma.len())?;
        if let Some(s) = sigma.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::Domain(format!("sigma must be positive, got {s}")));
        }
        let rho = sigma.iter().map(|&s| softplus_inv(s)).collect();
        Ok(Self { mu, rho })
    }

    pub fn filled(len: usize, mu: f64, rho: f64) -> Self {
        Self {
            mu: vec![mu; len],
            rho: vec![rho; len],
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }
}

/// Spike-and-slab family: Gaussian slab plus inclusion probability per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVariationalParams {
    pub base: VariationalParams,
    pub lambda: Vec<f64>,
}

impl SparseVariationalParams {
    /// Checks lengths and clamps `lambda` into the open unit interval.
    pub fn new(base: VariationalParams, lambda: Vec<f64>) -> Result<Self> {
        check_len("lambda", base.len(), lambda.len())?;
        if let Some(l) = lambda.iter().find(|l| !l.is_finite()) {
            return Err(Error::Domain(format!("lambda must be finite, got {l}")));
        }
        let lambda = lambda.into_iter().map(clamp_lambda).collect();
        Ok(Self { base, lambda })
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn clamp(&mut self) {
        for l in &mut self.lambda {
            *l = clamp_lambda(*l);
        }
    }

    pub fn mean_lambda(&self) -> f64 {
        if self.lambda.is_empty() {
            return 0.0;
        }
        self.lambda.iter().sum::<f64>() / self.lambda.len() as f64
    }
}

/// Either variational family, as held by a client or the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Posterior {
    Gaussian(VariationalParams),
    Sparse(SparseVariationalParams),
}

impl Posterior {
    pub fn gaussian(&self) -> &VariationalParams {
        match self {
            Posterior::Gaussian(v) => v,
            Posterior::Sparse(s) => &s.base,
        }
    }

    pub fn gaussian_mut(&mut self) -> &mut VariationalParams {
        match self {
            Posterior::Gaussian(v) => v,
            Posterior::Sparse(s) => &mut s.base,
        }
    }

    pub fn lambda(&self) -> Option<&[f64]> {
        match self {
            Posterior::Gaussian(_) => None,
            Posterior::Sparse(s) => Some(&s.lambda),
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, Posterior::Sparse(_))
    }

    pub fn len(&self) -> usize {
        self.gaussian().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Point weights used for deterministic evaluation: the means, with
    /// coordinates whose inclusion probability is at most 1/2 switched off.
    pub fn mean_weights(&self) -> Vec<f64> {
        match self {
            Posterior::Gaussian(v) => v.mu.clone(),
            Posterior::Sparse(s) => s
                .base
                .mu
                .iter()
                .zip(&s.lambda)
                .map(|(&m, &l)| if l > 0.5 { m } else { 0.0 })
                .collect(),
        }
    }

    /// KL (or its spike-and-slab upper bound) from `self` to `prior`.
    pub fn kl_to(&self, prior: &Posterior) -> Result<f64> {
        match (self, prior) {
            (Posterior::Gaussian(q), Posterior::Gaussian(w)) => kl_gaussian(q, w),
            (Posterior::Sparse(q), Posterior::Sparse(w)) => kl_bernoulli_gaussian_upper(q, w),
            _ => Err(Error::Structural("posterior families differ".into())),
        }
    }
}

/// Externally drawn noise for one Monte-Carlo sample of the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    /// Standard-normal draws, one per coordinate.
    pub g: Vec<f64>,
    /// Uniform `(0,1)` draws for the Gumbel-softmax gates (sparse family only).
    pub u: Option<Vec<f64>>,
}

impl NoiseDraw {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, len: usize, with_uniform: bool) -> Self {
        let g = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        let u = with_uniform.then(|| (0..len).map(|_| rng.sample(Open01)).collect());
        Self { g, u }
    }

    pub fn uniforms(&self) -> Result<&[f64]> {
        self.u
            .as_deref()
            .ok_or_else(|| Error::Structural("noise draw has no uniform component".into()))
    }
}

/// `theta = mu + softplus(rho) * g`.
pub fn sample_gaussian(v: &VariationalParams, noise: &NoiseDraw) -> Result<Vec<f64>> {
    check_len("noise", v.len(), noise.g.len())?;
    Ok(v.mu
        .iter()
        .zip(&v.rho)
        .zip(&noise.g)
        .map(|((&m, &r), &g)| m + softplus(r) * g)
        .collect())
}

/// `theta = gamma * (mu + softplus(rho) * g)` with a binary gate per coordinate.
pub fn sample_spike_slab(
    v: &SparseVariationalParams,
    gamma: &[u8],
    noise: &NoiseDraw,
) -> Result<Vec<f64>> {
    check_len("gamma", v.len(), gamma.len())?;
    if let Some(g) = gamma.iter().find(|&&g| g > 1) {
        return Err(Error::Domain(format!("gate must be 0 or 1, got {g}")));
    }
    let slab = sample_gaussian(&v.base, noise)?;
    Ok(slab
        .into_iter()
        .zip(gamma)
        .map(|(t, &g)| if g == 1 { t } else { 0.0 })
        .collect())
}

/// One weight draw. Sparse gates are the hard Bernoulli decisions
/// `logit(lambda) + logit(u) > 0`, the same gates the straight-through
/// forward pass uses at any temperature.
pub fn sample_posterior(v: &Posterior, noise: &NoiseDraw) -> Result<Vec<f64>> {
    match v {
        Posterior::Gaussian(g) => sample_gaussian(g, noise),
        Posterior::Sparse(s) => {
            let u = noise.uniforms()?;
            check_len("uniform noise", s.len(), u.len())?;
            let gamma: Vec<u8> = s
                .lambda
                .iter()
                .zip(u)
                .map(|(&l, &u)| u8::from(logit(clamp_lambda(l)) + logit(u) > 0.0))
                .collect();
            sample_spike_slab(s, &gamma, noise)
        }
    }
}

/// Relaxed Bernoulli draw `sigmoid((logit(lambda) + logit(u)) / tau)`.
pub fn gumbel_softmax(lambda: f64, tau: f64, u: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Domain(format!("lambda must lie in (0,1), got {lambda}")));
    }
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("u must lie in (0,1), got {u}")));
    }
    Ok(relaxed_gate(lambda, tau, u))
}

pub(crate) fn relaxed_gate(lambda: f64, tau: f64, u: f64) -> f64 {
    sigmoid((logit(lambda) + logit(u)) / tau)
}

/// `d gumbel_softmax / d lambda` given the relaxed value.
pub(crate) fn relaxed_gate_dlambda(gate: f64, lambda: f64, tau: f64) -> f64 {
    gate * (1.0 - gate) / (tau * lambda * (1.0 - lambda))
}

/// Single-coordinate `KL(N(mq, sq^2) || N(mw, sw^2))`.
#[inline]
pub(crate) fn kl_coord(mq: f64, sq: f64, mw: f64, sw: f64) -> f64 {
    let d = mq - mw;
    let ratio = sq / sw;
    0.5 * (ratio * ratio + d * d / (sw * sw) - 1.0) - ratio.ln()
}

/// Closed-form KL between two factorized Gaussians.
pub fn kl_gaussian(q: &VariationalParams, w: &VariationalParams) -> Result<f64> {
    check_len("prior params", q.len(), w.len())?;
    Ok((0..q.len())
        .map(|m| kl_coord(q.mu[m], softplus(q.rho[m]), w.mu[m], softplus(w.rho[m])))
        .sum())
}

#[inline]
pub(crate) fn kl_bernoulli_coord(lq: f64, lw: f64) -> f64 {
    lq * (lq / lw).ln() + (1.0 - lq) * ((1.0 - lq) / (1.0 - lw)).ln()
}

/// Upper bound on the KL between two spike-and-slab families:
/// Bernoulli KL of the gates plus the slab KL weighted by `lambda_q`.
pub fn kl_bernoulli_gaussian_upper(
    q: &SparseVariationalParams,
    w: &SparseVariationalParams,
) -> Result<f64> {
    check_len("prior params", q.len(), w.len())?;
    for &l in q.lambda.iter().chain(&w.lambda) {
        if !(l > 0.0 && l < 1.0) {
            return Err(Error::Domain(format!("lambda must lie in (0,1), got {l}")));
        }
    }
    let mut total = 0.0;
    for m in 0..q.len() {
        let lq = clamp_lambda(q.lambda[m]);
        let lw = clamp_lambda(w.lambda[m]);
        let slab = kl_coord(
            q.base.mu[m],
            softplus(q.base.rho[m]),
            w.base.mu[m],
            softplus(w.base.rho[m]),
        );
        total += kl_bernoulli_coord(lq, lw) + lq * slab;
    }
    Ok(total)
}

/// Minimizer over `w` of the average `KL(q_i || w)`: mean of the means, and
/// the average second moment about that mean as variance.
pub fn optimal_global(clients: &[VariationalParams]) -> Result<VariationalParams> {
    let first = clients
        .first()
        .ok_or_else(|| Error::Structural("optimal_global needs at least one client".into()))?;
    let len = first.len();
    for c in clients {
        check_len("client params", len, c.len())?;
    }
    let n = clients.len() as f64;
    let mut mu = vec![0.0; len];
    let mut sigma = vec![0.0; len];
    for m in 0..len {
        let mean = clients.iter().map(|c| c.mu[m]).sum::<f64>() / n;
        let second = clients
            .iter()
            .map(|c| {
                let s = softplus(c.rho[m]);
                let d = c.mu[m] - mean;
                s * s + d * d
            })
            .sum::<f64>()
            / n;
        mu[m] = mean;
        sigma[m] = second.sqrt();
    }
    VariationalParams::from_sigma(mu, &sigma)
}

/// Monte-Carlo estimate of `KL(q || w)` from `n_samples` draws of `q`.
///
/// Returns the estimate together with the sample standard deviation of the
/// per-draw log ratio, so callers can judge the estimate's precision.
pub fn mc_kl_estimate_with_std(
    q: &VariationalParams,
    w: &VariationalParams,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_len("prior params", q.len(), w.len())?;
    if n_samples == 0 {
        return Err(Error::Domain("n_samples must be at least 1".into()));
    }
    let sq = q.sigma();
    let sw = w.sigma();
    // log q(x) - log w(x) with x = mu_q + sigma_q g; the 2*pi terms cancel.
    let log_sigma_ratio: f64 = sq.iter().zip(&sw).map(|(a, b)| b.ln() - a.ln()).sum();
    let inv_sw: Vec<f64> = sw.iter().map(|s| 1.0 / s).collect();
    let mut rng = rng::stream(seed, Purpose::Oracle, 0, 0);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let mut ratio = log_sigma_ratio;
        for m in 0..q.len() {
            let g: f64 = rng.sample(StandardNormal);
            let zw = (q.mu[m] + sq[m] * g - w.mu[m]) * inv_sw[m];
            ratio += 0.5 * (zw * zw - g * g);
        }
        sum += ratio;
        sum_sq += ratio * ratio;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = if n_samples > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok((mean, var.sqrt()))
}

/// Monte-Carlo estimate of `KL(q || w)`; deterministic given `seed`.
pub fn mc_kl_estimate(
    q: &VariationalParams,
    w: &VariationalParams,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    mc_kl_estimate_with_std(q, w, n_samples, seed).map(|(m, _)| m)
}
