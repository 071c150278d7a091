use serde::{Deserialize, Serialize};

use super::{backward, forward_cached, log_likelihood_and_grad, Batch, NetworkShape};
use crate::error::{check_len, Error, Result};
use crate::variational::{
    clamp_lambda, kl_bernoulli_gaussian_upper, kl_coord, kl_gaussian, relaxed_gate,
    relaxed_gate_dlambda, softplus_and_slope, NoiseDraw, Posterior, SparseVariationalParams,
    VariationalParams,
};

/// Which side of the client's bilevel problem a gradient is taken for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// The personalized posterior `v` (likelihood plus weighted KL).
    Personal,
    /// The localized copy of the global prior `v_w` (KL only).
    LocalizedGlobal,
}

/// Gradient with respect to `(mu, rho[, lambda])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub d_mu: Vec<f64>,
    pub d_rho: Vec<f64>,
    pub d_lambda: Option<Vec<f64>>,
}

impl Gradient {
    fn zeros(len: usize, sparse: bool) -> Self {
        Self {
            d_mu: vec![0.0; len],
            d_rho: vec![0.0; len],
            d_lambda: sparse.then(|| vec![0.0; len]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_mu
            .iter()
            .chain(&self.d_rho)
            .chain(self.d_lambda.iter().flatten())
            .all(|g| g.is_finite())
    }
}

/// Everything the client objective needs besides the parameters and noise.
#[derive(Debug, Clone, Copy)]
pub struct LocalObjective<'a> {
    pub shape: &'a NetworkShape,
    pub batch: &'a Batch,
    /// Size of the client's full training set.
    pub n: usize,
    /// Weight on the KL regularizer.
    pub zeta: f64,
    /// Gumbel-softmax temperature (sparse family only).
    pub tau: f64,
}

impl LocalObjective<'_> {
    fn validate(&self, noise: &[NoiseDraw], len: usize) -> Result<()> {
        if noise.is_empty() {
            return Err(Error::Domain("Monte-Carlo sample size must be at least 1".into()));
        }
        if !(self.zeta >= 1.0) {
            return Err(Error::Domain(format!("zeta must be at least 1, got {}", self.zeta)));
        }
        if self.batch.is_empty() || self.n < self.batch.len() {
            return Err(Error::Domain(format!(
                "batch of {} does not fit a dataset of {}",
                self.batch.len(),
                self.n
            )));
        }
        check_len("parameter vector", self.shape.num_params(), len)?;
        for d in noise {
            check_len("noise", len, d.g.len())?;
        }
        Ok(())
    }

    /// `n / (b * a)`: turns a sum over the minibatch and Monte-Carlo draws
    /// into an estimate of the full-data expected log-likelihood.
    fn scale(&self, draws: usize) -> f64 {
        self.n as f64 / (self.batch.len() * draws) as f64
    }
}

/// Value and gradient of the personal objective from one evaluation.
#[derive(Debug, Clone)]
pub struct LocalEstimate {
    /// Mean negative log-likelihood per sample over the minibatch and draws.
    pub nll_per_sample: f64,
    /// Full objective value (scaled likelihood term plus weighted KL).
    pub objective: f64,
    pub grad: Gradient,
}

/// `sigma = softplus(rho)` and its slope `sigmoid(rho)` per coordinate.
/// The client loop refreshes these only when `rho` changes.
#[derive(Debug, Clone)]
pub(crate) struct Scales {
    pub sigma: Vec<f64>,
    pub slope: Vec<f64>,
}

impl Scales {
    pub(crate) fn of(p: &Posterior) -> Self {
        let (sigma, slope) = p.gaussian().rho.iter().map(|&r| softplus_and_slope(r)).unzip();
        Self { sigma, slope }
    }
}

/// Gates applied to each Monte-Carlo draw of the sparse family.
enum Gates<'a> {
    /// Hard Bernoulli gates in the forward pass, relaxed gates for the gradient.
    StraightThrough { tau: f64 },
    /// Caller-supplied real-valued gates (value only).
    Fixed(&'a [Vec<f64>]),
}

/// Scaled negative log-likelihood term and, optionally, its gradient.
fn likelihood_term(
    obj: &LocalObjective,
    v: &Posterior,
    scales: &Scales,
    noise: &[NoiseDraw],
    gates: Gates,
    want_grad: bool,
) -> Result<(f64, f64, Option<Gradient>)> {
    let len = v.len();
    let gv = v.gaussian();
    let sigma = &scales.sigma;
    let scale = obj.scale(noise.len());
    let mut grad = want_grad.then(|| Gradient::zeros(len, v.is_sparse()));
    let mut nll = 0.0;

    for (k, draw) in noise.iter().enumerate() {
        let slab: Vec<f64> = (0..len).map(|m| gv.mu[m] + sigma[m] * draw.g[m]).collect();
        // (gate value used in the forward pass, relaxed gate for the backward pass)
        let gate_pairs: Option<Vec<(f64, f64)>> = match (v, &gates) {
            (Posterior::Gaussian(_), _) => None,
            (Posterior::Sparse(s), Gates::StraightThrough { tau }) => {
                let u = draw.uniforms()?;
                check_len("uniform noise", len, u.len())?;
                Some(
                    (0..len)
                        .map(|m| {
                            let soft = relaxed_gate(clamp_lambda(s.lambda[m]), *tau, u[m]);
                            (if soft > 0.5 { 1.0 } else { 0.0 }, soft)
                        })
                        .collect(),
                )
            }
            (Posterior::Sparse(_), Gates::Fixed(all)) => {
                let row = all
                    .get(k)
                    .ok_or_else(|| Error::Structural("one gate vector per draw required".into()))?;
                check_len("gates", len, row.len())?;
                Some(row.iter().map(|&g| (g, g)).collect())
            }
        };
        let theta: Vec<f64> = match &gate_pairs {
            None => slab.clone(),
            Some(p) => slab.iter().zip(p).map(|(s, (g, _))| g * s).collect(),
        };

        let (out, cache) = forward_cached(obj.shape, &theta, obj.batch.inputs.view());
        let (ll, d_out) = log_likelihood_and_grad(obj.shape, &out, obj.batch)?;
        nll -= ll;

        if let Some(grad) = grad.as_mut() {
            let d_theta = backward(obj.shape, &theta, &cache, d_out);
            for m in 0..len {
                let gt = -scale * d_theta[m];
                let dsig = scales.slope[m] * draw.g[m];
                match &gate_pairs {
                    None => {
                        grad.d_mu[m] += gt;
                        grad.d_rho[m] += gt * dsig;
                    }
                    Some(p) => {
                        let (hard, soft) = p[m];
                        grad.d_mu[m] += gt * hard;
                        grad.d_rho[m] += gt * hard * dsig;
                        let lam = clamp_lambda(v.lambda().expect("sparse")[m]);
                        let tau = match gates {
                            Gates::StraightThrough { tau } => tau,
                            Gates::Fixed(_) => unreachable!("fixed gates carry no gradient"),
                        };
                        grad.d_lambda.as_mut().expect("sparse")[m] +=
                            gt * slab[m] * relaxed_gate_dlambda(soft, lam, tau);
                    }
                }
            }
        }
    }
    let samples = (noise.len() * obj.batch.len()) as f64;
    Ok((scale * nll, nll / samples, grad))
}

/// Gradient of `KL(q || w)` (or its sparse upper bound) with respect to
/// either side, added into `grad` with weight `weight`.
#[cfg(test)]
fn add_kl_grad(q: &Posterior, w: &Posterior, target: Target, weight: f64, grad: &mut Gradient) {
    add_kl_grad_scaled(q, w, &Scales::of(q), &Scales::of(w), target, weight, grad);
}

fn add_kl_grad_scaled(
    q: &Posterior,
    w: &Posterior,
    cq: &Scales,
    cw: &Scales,
    target: Target,
    weight: f64,
    grad: &mut Gradient,
) {
    let (gq, gw) = (q.gaussian(), w.gaussian());
    for m in 0..gq.len() {
        let (sq, sw) = (cq.sigma[m], cw.sigma[m]);
        let d = gq.mu[m] - gw.mu[m];
        let sw2 = sw * sw;
        let (lq, lw) = match (q.lambda(), w.lambda()) {
            (Some(a), Some(b)) => (clamp_lambda(a[m]), clamp_lambda(b[m])),
            _ => (1.0, 1.0),
        };
        match target {
            Target::Personal => {
                grad.d_mu[m] += weight * lq * d / sw2;
                grad.d_rho[m] += weight * lq * (sq / sw2 - 1.0 / sq) * cq.slope[m];
                if let Some(dl) = grad.d_lambda.as_mut() {
                    let slab = kl_coord(gq.mu[m], sq, gw.mu[m], sw);
                    dl[m] += weight * ((lq * (1.0 - lw)) / (lw * (1.0 - lq))).ln() + weight * slab;
                }
            }
            Target::LocalizedGlobal => {
                grad.d_mu[m] -= weight * lq * d / sw2;
                grad.d_rho[m] +=
                    weight * lq * (1.0 / sw - (sq * sq + d * d) / (sw2 * sw)) * cw.slope[m];
                if let Some(dl) = grad.d_lambda.as_mut() {
                    dl[m] += weight * ((1.0 - lq) / (1.0 - lw) - lq / lw);
                }
            }
        }
    }
}

/// Monte-Carlo estimate of the personalized Gaussian objective:
/// `-(n/b)(1/a) sum log p(D | mu + sigma g_k) + zeta KL(q_v || w)`.
pub fn objective_pfedbayes(
    obj: &LocalObjective,
    v: &VariationalParams,
    w: &VariationalParams,
    noise: &[NoiseDraw],
) -> Result<f64> {
    obj.validate(noise, v.len())?;
    let q = Posterior::Gaussian(v.clone());
    let (nll, _, _) = likelihood_term(obj, &q, &Scales::of(&q), noise, Gates::StraightThrough { tau: obj.tau }, false)?;
    Ok(nll + obj.zeta * kl_gaussian(v, w)?)
}

/// Sparse objective with hard Bernoulli gates drawn through the Gumbel-softmax
/// uniforms, regularized by the spike-and-slab KL upper bound.
pub fn objective_sfedbayes(
    obj: &LocalObjective,
    v: &SparseVariationalParams,
    w: &SparseVariationalParams,
    noise: &[NoiseDraw],
) -> Result<f64> {
    check_tau(obj.tau)?;
    obj.validate(noise, v.len())?;
    let q = Posterior::Sparse(v.clone());
    let (nll, _, _) = likelihood_term(obj, &q, &Scales::of(&q), noise, Gates::StraightThrough { tau: obj.tau }, false)?;
    Ok(nll + obj.zeta * kl_bernoulli_gaussian_upper(v, w)?)
}

/// Sparse objective with explicit real-valued gates per draw (`gates[k][m]`
/// multiplies the slab sample of coordinate `m` in draw `k`).
///
/// With the hard gates this equals [`objective_sfedbayes`]; adding
/// `relaxed(lambda') - relaxed(lambda)` to them gives the straight-through
/// surrogate whose derivative in `lambda'` the analytic gradient reproduces.
pub fn objective_sfedbayes_with_gates(
    obj: &LocalObjective,
    v: &SparseVariationalParams,
    w: &SparseVariationalParams,
    gates: &[Vec<f64>],
    noise: &[NoiseDraw],
) -> Result<f64> {
    obj.validate(noise, v.len())?;
    check_len("gate draws", noise.len(), gates.len())?;
    let q = Posterior::Sparse(v.clone());
    let (nll, _, _) = likelihood_term(obj, &q, &Scales::of(&q), noise, Gates::Fixed(gates), false)?;
    Ok(nll + obj.zeta * kl_bernoulli_gaussian_upper(v, w)?)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("tau must be positive, got {tau}")))
    }
}

fn check_families(v: &Posterior, w: &Posterior) -> Result<()> {
    check_len("prior params", v.len(), w.len())?;
    if v.is_sparse() != w.is_sparse() {
        return Err(Error::Structural("posterior and prior families differ".into()));
    }
    if v.is_sparse() {
        for &l in v.lambda().into_iter().chain(w.lambda()).flatten() {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::Domain(format!("lambda must lie in (0,1), got {l}")));
            }
        }
    }
    Ok(())
}

/// Value and personal-side gradient of the local objective in one pass.
pub fn personal_step_gradient(
    obj: &LocalObjective,
    v: &Posterior,
    w: &Posterior,
    noise: &[NoiseDraw],
) -> Result<LocalEstimate> {
    check_families(v, w)?;
    if v.is_sparse() {
        check_tau(obj.tau)?;
    }
    obj.validate(noise, v.len())?;
    let (nll, per_sample, grad) = personal_gradient_scaled(obj, v, w, &Scales::of(v), &Scales::of(w), noise)?;
    Ok(LocalEstimate {
        nll_per_sample: per_sample,
        objective: nll + obj.zeta * v.kl_to(w)?,
        grad,
    })
}

/// Personal-side gradient with precomputed scales; the caller has already
/// validated the inputs. Returns `(scaled nll, nll per sample, gradient)`.
pub(crate) fn personal_gradient_scaled(
    obj: &LocalObjective,
    v: &Posterior,
    w: &Posterior,
    cv: &Scales,
    cw: &Scales,
    noise: &[NoiseDraw],
) -> Result<(f64, f64, Gradient)> {
    let (nll, per_sample, grad) =
        likelihood_term(obj, v, cv, noise, Gates::StraightThrough { tau: obj.tau }, true)?;
    let mut grad = grad.expect("gradient requested");
    add_kl_grad_scaled(v, w, cv, cw, Target::Personal, obj.zeta, &mut grad);
    Ok((nll, per_sample, grad))
}

/// Exact gradient of the client objective for the chosen side.
///
/// `Target::Personal` differentiates the full objective in `v` (through the
/// reparameterization, straight-through gates for the sparse family);
/// `Target::LocalizedGlobal` differentiates `KL(q_v || w)` in `w`, which has
/// no likelihood dependence. Noise is unused in the latter case.
pub fn grad_objective(
    obj: &LocalObjective,
    target: Target,
    v: &Posterior,
    w: &Posterior,
    noise: &[NoiseDraw],
) -> Result<Gradient> {
    match target {
        Target::Personal => personal_step_gradient(obj, v, w, noise).map(|e| e.grad),
        Target::LocalizedGlobal => localized_global_gradient(v, w),
    }
}

/// Gradient of the KL from `q` to the prior `w`, taken with respect to `w`.
pub(crate) fn localized_global_gradient(q: &Posterior, w: &Posterior) -> Result<Gradient> {
    check_families(q, w)?;
    Ok(localized_global_gradient_scaled(q, w, &Scales::of(q), &Scales::of(w)))
}

pub(crate) fn localized_global_gradient_scaled(q: &Posterior, w: &Posterior, cq: &Scales, cw: &Scales) -> Gradient {
    let mut grad = Gradient::zeros(q.len(), q.is_sparse());
    add_kl_grad_scaled(q, w, cq, cw, Target::LocalizedGlobal, 1.0, &mut grad);
    grad
}

/// Central differences `(f(x + h e_m) - f(x - h e_m)) / 2h` for every coordinate.
pub fn finite_diff_grad<F>(mut f: F, point: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "step must be positive");
    let mut x = point.to_vec();
    (0..x.len())
        .map(|m| {
            let orig = x[m];
            x[m] = orig + h;
            let up = f(&x);
            x[m] = orig - h;
            let down = f(&x);
            x[m] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::{Targets, Task};
    use crate::rng::{self, Purpose};
    use crate::variational::softplus_inv;
    use ndarray::{array, Array2};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn toy(seed: u64) -> (NetworkShape, Batch, VariationalParams, VariationalParams, Vec<NoiseDraw>) {
        let mut r = rng::stream(seed, Purpose::Oracle, 0, 0);
        let shape = NetworkShape::classifier(vec![3, 4, 3]).unwrap();
        let t = shape.num_params();
        let x = Array2::from_shape_fn((5, 3), |_| r.sample::<f64, _>(StandardNormal));
        let batch = Batch::new(x, Targets::Classes(vec![0, 1, 2, 1, 0])).unwrap();
        let mut gauss = |lo: f64, hi: f64| -> Vec<f64> { (0..t).map(|_| r.random_range(lo..hi)).collect() };
        let v = VariationalParams::new(gauss(-1.0, 1.0), gauss(-3.0, -1.0)).unwrap();
        let w = VariationalParams::new(gauss(-1.0, 1.0), gauss(-2.0, 0.0)).unwrap();
        let noise = (0..2).map(|_| NoiseDraw::sample(&mut r, t, true)).collect();
        (shape, batch, v, w, noise)
    }

    #[test]
    fn kl_only_gradient_unit_case() {
        let shape = NetworkShape::regressor(vec![1, 1, 1], 1.0).unwrap();
        let batch = Batch::new(array![[0.0]], Targets::Real(array![[0.0]])).unwrap();
        let obj = LocalObjective { shape: &shape, batch: &batch, n: 1, zeta: 1.0, tau: 0.5 };
        let one = softplus_inv(1.0);
        let q = Posterior::Gaussian(VariationalParams::new(vec![1.0; 4], vec![one; 4]).unwrap());
        let w = Posterior::Gaussian(VariationalParams::new(vec![0.0; 4], vec![one; 4]).unwrap());
        let mut g = Gradient::zeros(4, false);
        add_kl_grad(&q, &w, Target::Personal, 1.0, &mut g);
        assert!((g.d_mu[0] - 1.0).abs() < 1e-15);
        let lg = grad_objective(&obj, Target::LocalizedGlobal, &q, &w, &[]).unwrap();
        assert!((lg.d_mu[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn equal_posterior_and_prior_leaves_only_likelihood() {
        let (shape, batch, v, _, noise) = toy(1);
        let obj = LocalObjective { shape: &shape, batch: &batch, n: 40, zeta: 10.0, tau: 0.5 };
        let full = objective_pfedbayes(&obj, &v, &v, &noise).unwrap();
        let obj1 = LocalObjective { zeta: 1.0, ..obj };
        assert_eq!(full, objective_pfedbayes(&obj1, &v, &v, &noise).unwrap());
    }

    #[test]
    fn likelihood_term_is_linear_in_n() {
        let (shape, batch, v, w, noise) = toy(2);
        let at = |n| {
            let obj = LocalObjective { shape: &shape, batch: &batch, n, zeta: 10.0, tau: 0.5 };
            objective_pfedbayes(&obj, &v, &w, &noise).unwrap()
        };
        let kl = 10.0 * kl_gaussian(&v, &w).unwrap();
        let (l20, l40) = (at(20) - kl, at(40) - kl);
        assert!((l40 - 2.0 * l20).abs() < 1e-10 * l40.abs());
    }

    #[test]
    fn composes_verified_pieces() {
        let (shape, batch, v, w, noise) = toy(3);
        let obj = LocalObjective { shape: &shape, batch: &batch, n: 40, zeta: 10.0, tau: 0.5 };
        let mut ll = 0.0;
        for d in &noise {
            let theta = crate::variational::sample_gaussian(&v, d).unwrap();
            let out = crate::bnn::forward(&shape, &theta, batch.inputs.view()).unwrap();
            ll += crate::bnn::log_likelihood(&shape, &out, &batch).unwrap();
        }
        let want = -(40.0 / 5.0) / 2.0 * ll + 10.0 * kl_gaussian(&v, &w).unwrap();
        let got = objective_pfedbayes(&obj, &v, &w, &noise).unwrap();
        assert!((got - want).abs() < 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn sparse_limits() {
        let (shape, batch, v, w, noise) = toy(4);
        let obj = LocalObjective { shape: &shape, batch: &batch, n: 40, zeta: 10.0, tau: 0.5 };
        let t = v.len();
        let dense = objective_pfedbayes(&obj, &v, &w, &noise).unwrap();
        let sv = SparseVariationalParams::new(v.clone(), vec![1.0 - 1e-9; t]).unwrap();
        let sw = SparseVariationalParams::new(w.clone(), vec![1.0 - 1e-9; t]).unwrap();
        let sparse = objective_sfedbayes(&obj, &sv, &sw, &noise).unwrap();
        assert!((sparse - dense).abs() < 1e-5, "{sparse} vs {dense}");

        // Spike limit: every gate closed, so the network is identically zero.
        let sv = SparseVariationalParams::new(v.clone(), vec![1e-9; t]).unwrap();
        let sw = SparseVariationalParams::new(w.clone(), vec![1e-9; t]).unwrap();
        let reg = 10.0 * kl_bernoulli_gaussian_upper(&sv, &sw).unwrap();
        let lik = objective_sfedbayes(&obj, &sv, &sw, &noise).unwrap() - reg;
        let zero = vec![0.0; t];
        let out = crate::bnn::forward(&shape, &zero, batch.inputs.view()).unwrap();
        let want = -(40.0 / 5.0) * crate::bnn::log_likelihood(&shape, &out, &batch).unwrap();
        assert!((lik - want).abs() < 1e-10 * want.abs());
    }

    #[test]
    fn sparse_matches_composition() {
        let (shape, batch, v, w, noise) = toy(5);
        let obj = LocalObjective { shape: &shape, batch: &batch, n: 40, zeta: 10.0, tau: 0.5 };
        let t = v.len();
        let sv = SparseVariationalParams::new(v, vec![0.5; t]).unwrap();
        let sw = SparseVariationalParams::new(w, vec![0.5; t]).unwrap();
        let mut ll = 0.0;
        for d in &noise {
            let u = d.u.as_ref().unwrap();
            let gamma: Vec<u8> = (0..t)
                .map(|m| (crate::variational::gumbel_softmax(0.5, 0.5, u[m]).unwrap() > 0.5) as u8)
                .collect();
            let theta = crate::variational::sample_spike_slab(&sv, &gamma, d).unwrap();
            let out = crate::bnn::forward(&shape, &theta, batch.inputs.view()).unwrap();
            ll += crate::bnn::log_likelihood(&shape, &out, &batch).unwrap();
        }
        let want = -(40.0 / 5.0) / 2.0 * ll + 10.0 * kl_bernoulli_gaussian_upper(&sv, &sw).unwrap();
        let got = objective_sfedbayes(&obj, &sv, &sw, &noise).unwrap();
        assert!((got - want).abs() < 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn localized_global_gradient_has_no_likelihood_part() {
        let (shape, batch, v, w, noise) = toy(6);
        let obj = LocalObjective { shape: &shape, batch: &batch, n: 40, zeta: 10.0, tau: 0.5 };
        let (q, p) = (Posterior::Gaussian(v), Posterior::Gaussian(w));
        let a = grad_objective(&obj, Target::LocalizedGlobal, &q, &p, &noise).unwrap();
        let other = Batch::new(batch.inputs.clone() * 3.0, Targets::Classes(vec![2, 2, 2, 2, 2])).unwrap();
        let obj2 = LocalObjective { batch: &other, ..obj };
        let b = grad_objective(&obj2, Target::LocalizedGlobal, &q, &p, &noise).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn argument_errors() {
        let (shape, batch, v, w, noise) = toy(7);
        let obj = LocalObjective { shape: &shape, batch: &batch, n: 40, zeta: 10.0, tau: 0.5 };
        assert!(matches!(objective_pfedbayes(&obj, &v, &w, &[]), Err(Error::Domain(_))));
        let small = LocalObjective { n: 2, ..obj };
        assert!(objective_pfedbayes(&small, &v, &w, &noise).is_err());
        let low = LocalObjective { zeta: 0.5, ..obj };
        assert!(objective_pfedbayes(&low, &v, &w, &noise).is_err());
        let sv = SparseVariationalParams::new(v.clone(), vec![0.5; v.len()]).unwrap();
        let bare: Vec<NoiseDraw> = noise.iter().map(|d| NoiseDraw { g: d.g.clone(), u: None }).collect();
        assert!(objective_sfedbayes(&obj, &sv, &sv, &bare).is_err());
        let mixed = grad_objective(&obj, Target::Personal, &Posterior::Gaussian(v), &Posterior::Sparse(sv), &noise);
        assert!(matches!(mixed, Err(Error::Structural(_))));
        let _ = Task::Classification { num_classes: 3 };
    }

    #[test]
    fn finite_differences_basics() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-8);
        let g = finite_diff_grad(|_| 4.2, &[1.0, -2.0, 0.5], 1e-5);
        assert!(g.iter().all(|v| v.abs() < 1e-10));

        let (_, _, v, w, _) = toy(8);
        let fd = finite_diff_grad(
            |mu| kl_gaussian(&VariationalParams::new(mu.to_vec(), v.rho.clone()).unwrap(), &w).unwrap(),
            &v.mu,
            1e-5,
        );
        let mut exact = Gradient::zeros(v.len(), false);
        add_kl_grad(&Posterior::Gaussian(v), &Posterior::Gaussian(w), Target::Personal, 1.0, &mut exact);
        for (a, b) in exact.d_mu.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
