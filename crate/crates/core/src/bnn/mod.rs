//! Fully-connected Bayesian networks: forward/backward passes, likelihoods,
//! the local variational objectives and their exact gradients.

mod objective;
mod predictive;

pub use objective::{
    finite_diff_grad, grad_objective, objective_pfedbayes, objective_sfedbayes,
    objective_sfedbayes_with_gates, personal_step_gradient, Gradient, LocalEstimate, LocalObjective,
    Target,
};
pub use predictive::{entropy, predictive, softmax_rows};
pub(crate) use objective::{localized_global_gradient_scaled, personal_gradient_scaled, Scales};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Gaussian observation noise with standard deviation `noise_sigma`.
    Regression { noise_sigma: f64 },
    /// Softmax head over `num_classes` logits.
    Classification { num_classes: usize },
}

/// Layer widths `[r_0, ..., r_{L+1}]` plus activation and task head.
///
/// Parameters are flattened layer by layer; each layer stores its weight
/// matrix (`r_j x r_{j-1}`, row-major) followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkShape {
    widths: Vec<usize>,
    activation: Activation,
    task: Task,
}

impl NetworkShape {
    pub fn new(widths: Vec<usize>, activation: Activation, task: Task) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::Structural(format!(
                "network needs at least one hidden layer, got widths {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::Structural(format!("zero-width layer in {widths:?}")));
        }
        match task {
            Task::Classification { num_classes } if num_classes != *widths.last().unwrap() => {
                return Err(Error::Structural(format!(
                    "output width {} does not match {num_classes} classes",
                    widths.last().unwrap()
                )))
            }
            Task::Classification { num_classes } if num_classes < 2 => {
                return Err(Error::Structural("classification needs at least 2 classes".into()))
            }
            Task::Regression { noise_sigma } if !(noise_sigma > 0.0) => {
                return Err(Error::Domain(format!("noise sigma must be positive, got {noise_sigma}")))
            }
            _ => {}
        }
        Ok(Self {
            widths,
            activation,
            task,
        })
    }

    /// ReLU classifier, the configuration used for the image benchmarks.
    pub fn classifier(widths: Vec<usize>) -> Result<Self> {
        let classes = *widths.last().unwrap_or(&0);
        Self::new(
            widths,
            Activation::Relu,
            Task::Classification {
                num_classes: classes,
            },
        )
    }

    pub fn regressor(widths: Vec<usize>, noise_sigma: f64) -> Result<Self> {
        Self::new(widths, Activation::Relu, Task::Regression { noise_sigma })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// `(offset, fan_in, fan_out)` of each layer's weight block; its bias
    /// follows at `offset + fan_in * fan_out`.
    pub fn layer_layout(&self) -> Vec<(usize, usize, usize)> {
        let mut off = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let entry = (off, w[0], w[1]);
                off += w[0] * w[1] + w[1];
                entry
            })
            .collect()
    }

    /// Fan-in of the layer that owns each coordinate (used for initialization).
    pub fn fan_in_per_param(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, fan_in, fan_out) in self.layer_layout() {
            out.extend(std::iter::repeat_n(fan_in, fan_in * fan_out + fan_out));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// `b x r_{L+1}` real targets.
    Real(Array2<f64>),
    Classes(Vec<usize>),
}

/// A minibatch of inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Targets,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, targets: Targets) -> Result<Self> {
        let rows = match &targets {
            Targets::Real(y) => y.nrows(),
            Targets::Classes(c) => c.len(),
        };
        check_len("batch targets", inputs.nrows(), rows)?;
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    fn validate(&self, shape: &NetworkShape) -> Result<()> {
        check_len("batch input columns", shape.input_dim(), self.inputs.ncols())?;
        match (&self.targets, shape.task()) {
            (Targets::Real(y), Task::Regression { .. }) => {
                check_len("regression target columns", shape.output_dim(), y.ncols())
            }
            (Targets::Classes(c), Task::Classification { num_classes }) => {
                match c.iter().find(|&&k| k >= num_classes) {
                    Some(k) => Err(Error::Structural(format!(
                        "class index {k} out of range for {num_classes} classes"
                    ))),
                    None => Ok(()),
                }
            }
            _ => Err(Error::Structural("batch targets do not match the task".into())),
        }
    }
}

/// Layer inputs retained for backpropagation.
pub(crate) struct ForwardCache {
    /// `acts[j]` is the input to layer `j` (post-activation of layer `j-1`).
    acts: Vec<Array2<f64>>,
}

fn weights<'a>(theta: &'a [f64], off: usize, fan_in: usize, fan_out: usize) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((fan_out, fan_in), &theta[off..off + fan_in * fan_out])
        .expect("layer layout is consistent with the parameter vector")
}

fn check_forward(shape: &NetworkShape, theta: &[f64], x: ArrayView2<f64>) -> Result<()> {
    check_len("parameter vector", shape.num_params(), theta.len())?;
    check_len("input columns", shape.input_dim(), x.ncols())
}

pub(crate) fn forward_cached(
    shape: &NetworkShape,
    theta: &[f64],
    x: ArrayView2<f64>,
) -> (Array2<f64>, ForwardCache) {
    let layout = shape.layer_layout();
    let last = layout.len() - 1;
    let mut acts = Vec::with_capacity(layout.len());
    let mut current = x.to_owned();
    for (j, &(off, fan_in, fan_out)) in layout.iter().enumerate() {
        let w = weights(theta, off, fan_in, fan_out);
        let bias = &theta[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        let mut pre = current.dot(&w.t());
        for mut row in pre.rows_mut() {
            for (p, b) in row.iter_mut().zip(bias) {
                *p += b;
            }
        }
        if j < last {
            match shape.activation {
                Activation::Relu => pre.mapv_inplace(|v| v.max(0.0)),
            }
        }
        acts.push(std::mem::replace(&mut current, pre));
    }
    (current, ForwardCache { acts })
}

/// Network output for each row of `x` under the point weights `theta`.
pub fn forward(shape: &NetworkShape, theta: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_forward(shape, theta, x)?;
    Ok(forward_cached(shape, theta, x).0)
}

/// Gradient of a scalar loss with respect to `theta`, given the loss
/// gradient `d_out` with respect to the network outputs.
pub(crate) fn backward(
    shape: &NetworkShape,
    theta: &[f64],
    cache: &ForwardCache,
    d_out: Array2<f64>,
) -> Vec<f64> {
    let layout = shape.layer_layout();
    let mut grad = vec![0.0; theta.len()];
    let mut delta = d_out;
    for (j, &(off, fan_in, fan_out)) in layout.iter().enumerate().rev() {
        let input = &cache.acts[j];
        let dw = delta.t().dot(input);
        let wsz = fan_in * fan_out;
        grad[off..off + wsz].copy_from_slice(dw.as_slice().expect("standard layout"));
        let db = delta.sum_axis(Axis(0));
        grad[off + wsz..off + wsz + fan_out].copy_from_slice(db.as_slice().expect("contiguous"));
        if j > 0 {
            let w = weights(theta, off, fan_in, fan_out);
            let mut prev = delta.dot(&w);
            match shape.activation {
                Activation::Relu => {
                    ndarray::Zip::from(&mut prev).and(input).for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    })
                }
            }
            delta = prev;
        }
    }
    grad
}

fn log_softmax_row(logits: ndarray::ArrayView1<f64>) -> (f64, f64) {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    (max, sum.ln())
}

/// Summed log-likelihood of `batch` given network `outputs`, together with
/// its gradient with respect to the outputs.
pub(crate) fn log_likelihood_and_grad(
    shape: &NetworkShape,
    outputs: &Array2<f64>,
    batch: &Batch,
) -> Result<(f64, Array2<f64>)> {
    batch.validate(shape)?;
    check_len("output rows", batch.len(), outputs.nrows())?;
    check_len("output columns", shape.output_dim(), outputs.ncols())?;
    match (&batch.targets, shape.task()) {
        (Targets::Real(y), Task::Regression { noise_sigma }) => {
            let var = noise_sigma * noise_sigma;
            let resid = y - outputs;
            let sq: f64 = resid.iter().map(|r| r * r).sum();
            let norm = 0.5 * (2.0 * std::f64::consts::PI * var).ln() * (y.len() as f64);
            Ok((-sq / (2.0 * var) - norm, resid / var))
        }
        (Targets::Classes(c), Task::Classification { .. }) => {
            let mut total = 0.0;
            let mut grad = Array2::zeros(outputs.raw_dim());
            for (i, (row, &k)) in outputs.rows().into_iter().zip(c).enumerate() {
                let (max, lse) = log_softmax_row(row);
                total += row[k] - max - lse;
                for (j, &l) in row.iter().enumerate() {
                    grad[[i, j]] = -(l - max - lse).exp();
                }
                grad[[i, k]] += 1.0;
            }
            Ok((total, grad))
        }
        _ => Err(Error::Structural("batch targets do not match the task".into())),
    }
}

/// Summed log-likelihood of a batch under the task's observation model.
pub fn log_likelihood(shape: &NetworkShape, outputs: &Array2<f64>, batch: &Batch) -> Result<f64> {
    log_likelihood_and_grad(shape, outputs, batch).map(|(ll, _)| ll)
}

/// Mean negative log-likelihood per sample under point weights `theta`,
/// and its gradient with respect to `theta`.
pub fn point_nll_and_grad(shape: &NetworkShape, theta: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
    check_forward(shape, theta, batch.inputs.view())?;
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let (out, cache) = forward_cached(shape, theta, batch.inputs.view());
    let (ll, d_out) = log_likelihood_and_grad(shape, &out, batch)?;
    let b = batch.len() as f64;
    let mut grad = backward(shape, theta, &cache, d_out);
    for g in &mut grad {
        *g = -*g / b;
    }
    Ok((-ll / b, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    use crate::rng::{self, Purpose};

    fn tiny() -> NetworkShape {
        NetworkShape::regressor(vec![1, 1, 1], 1.0).unwrap()
    }

    /// Independent evaluation: explicit loops over each unit.
    fn naive_forward(widths: &[usize], theta: &[f64], x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let mut off = 0;
        for l in 0..widths.len() - 1 {
            let (fi, fo) = (widths[l], widths[l + 1]);
            let mut next = vec![0.0; fo];
            for (o, out) in next.iter_mut().enumerate() {
                let mut acc = theta[off + fi * fo + o];
                for (i, hi) in h.iter().enumerate() {
                    acc += theta[off + o * fi + i] * hi;
                }
                *out = if l + 2 < widths.len() { acc.max(0.0) } else { acc };
            }
            off += fi * fo + fo;
            h = next;
        }
        h
    }

    #[test]
    fn parameter_count() {
        let s = NetworkShape::classifier(vec![784, 100, 10]).unwrap();
        assert_eq!(s.num_params(), 784 * 100 + 100 + 100 * 10 + 10);
        assert_eq!(s.fan_in_per_param().len(), s.num_params());
    }

    #[test]
    fn shape_validation() {
        assert!(NetworkShape::classifier(vec![3, 4]).is_err());
        assert!(NetworkShape::classifier(vec![3, 0, 2]).is_err());
        assert!(NetworkShape::new(vec![3, 4, 2], Activation::Relu, Task::Classification { num_classes: 3 }).is_err());
        assert!(NetworkShape::regressor(vec![3, 4, 2], 0.0).is_err());
    }

    #[test]
    fn relu_pass_through() {
        let theta = [1.0, 0.0, 1.0, 0.0];
        let y = forward(&tiny(), &theta, array![[2.0]].view()).unwrap();
        assert_eq!(y, array![[2.0]]);
        let y = forward(&tiny(), &theta, array![[-2.0]].view()).unwrap();
        assert_eq!(y, array![[0.0]]);
        assert!(forward(&tiny(), &theta[..3], array![[2.0]].view()).is_err());
        assert!(forward(&tiny(), &theta, array![[2.0, 1.0]].view()).is_err());
    }

    #[test]
    fn forward_matches_naive_evaluation() {
        let mut r = rng::stream(7, Purpose::Oracle, 0, 0);
        for case in 0..100 {
            let widths: Vec<usize> = if case == 0 {
                vec![3, 4, 2]
            } else {
                let depth = r.random_range(3..6);
                (0..depth).map(|_| r.random_range(1..7)).collect()
            };
            let shape = NetworkShape::regressor(widths.clone(), 1.0).unwrap();
            let theta: Vec<f64> = (0..shape.num_params()).map(|_| r.sample(StandardNormal)).collect();
            let rows = r.random_range(1..5);
            let x = Array2::from_shape_fn((rows, widths[0]), |_| r.sample(StandardNormal));
            let y = forward(&shape, &theta, x.view()).unwrap();
            for i in 0..rows {
                let want = naive_forward(&widths, &theta, x.row(i).as_slice().unwrap());
                for (a, b) in y.row(i).iter().zip(&want) {
                    assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn likelihood_values() {
        let shape = NetworkShape::regressor(vec![1, 1, 1], 1.0).unwrap();
        let batch = Batch::new(array![[0.0]], Targets::Real(array![[0.5]])).unwrap();
        let ll = log_likelihood(&shape, &array![[0.5]], &batch).unwrap();
        assert!((ll + 0.918_938_533_204_672_7).abs() < 1e-12);

        let shape = NetworkShape::classifier(vec![1, 2, 10]).unwrap();
        let batch = Batch::new(array![[0.0]], Targets::Classes(vec![3])).unwrap();
        let ll = log_likelihood(&shape, &Array2::zeros((1, 10)), &batch).unwrap();
        assert!((ll + 2.302_585_092_994_045_7).abs() < 1e-12);

        // mpmath: 10 - log(e^10 + 2) = -9.0795737467244446e-5
        let shape = NetworkShape::classifier(vec![1, 2, 3]).unwrap();
        let batch = Batch::new(array![[0.0]], Targets::Classes(vec![0])).unwrap();
        let ll = log_likelihood(&shape, &array![[10.0, 0.0, 0.0]], &batch).unwrap();
        assert!((ll + 9.079_573_746_724_445e-5).abs() < 1e-15);

        let ll = log_likelihood(&shape, &array![[1000.0, 0.0, -1000.0]], &batch).unwrap();
        assert!(ll.is_finite());
    }

    #[test]
    fn batch_validation() {
        assert!(Batch::new(array![[0.0], [1.0]], Targets::Classes(vec![0])).is_err());
        let shape = NetworkShape::classifier(vec![1, 2, 3]).unwrap();
        let batch = Batch::new(array![[0.0]], Targets::Classes(vec![3])).unwrap();
        assert!(log_likelihood(&shape, &array![[0.0, 0.0, 0.0]], &batch).is_err());
    }

    #[test]
    fn backward_matches_differences() {
        let mut r = rng::stream(3, Purpose::Oracle, 0, 1);
        let shape = NetworkShape::classifier(vec![3, 5, 4]).unwrap();
        let theta: Vec<f64> = (0..shape.num_params()).map(|_| r.sample(StandardNormal)).collect();
        let x = Array2::from_shape_fn((6, 3), |_| r.sample::<f64, _>(StandardNormal));
        let batch = Batch::new(x.clone(), Targets::Classes(vec![0, 1, 2, 3, 0, 1])).unwrap();
        let (out, cache) = forward_cached(&shape, &theta, x.view());
        let (_, d_out) = log_likelihood_and_grad(&shape, &out, &batch).unwrap();
        let g = backward(&shape, &theta, &cache, d_out);
        let ll = |t: &[f64]| log_likelihood(&shape, &forward(&shape, t, x.view()).unwrap(), &batch).unwrap();
        let fd = finite_diff_grad(ll, &theta, 1e-6);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn point_gradient_is_mean_nll_gradient() {
        let mut r = rng::stream(4, Purpose::Oracle, 0, 1);
        let shape = NetworkShape::regressor(vec![2, 4, 1], 0.5).unwrap();
        let theta: Vec<f64> = (0..shape.num_params()).map(|_| r.sample(StandardNormal)).collect();
        let x = Array2::from_shape_fn((5, 2), |_| r.sample::<f64, _>(StandardNormal));
        let y = Array2::from_shape_fn((5, 1), |_| r.sample::<f64, _>(StandardNormal));
        let batch = Batch::new(x, Targets::Real(y)).unwrap();
        let (_, g) = point_nll_and_grad(&shape, &theta, &batch).unwrap();
        let fd = finite_diff_grad(|t| point_nll_and_grad(&shape, t, &batch).unwrap().0, &theta, 1e-6);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}
