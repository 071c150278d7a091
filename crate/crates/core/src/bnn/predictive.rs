use ndarray::Array2;

use super::{forward_cached, NetworkShape, Task};
use crate::error::{check_len, Error, Result};
use crate::rng::{self, Purpose};
use crate::variational::{sample_posterior, NoiseDraw, Posterior};

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|l| (l - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|p| p / sum);
    }
    out
}

/// Shannon entropy in nats of each row of a probability matrix.
pub fn entropy(probs: &Array2<f64>) -> Vec<f64> {
    probs
        .rows()
        .into_iter()
        .map(|row| -row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>())
        .collect()
}

/// Posterior predictive class probabilities, averaged over `n_samples`
/// weight draws, and the entropy of each averaged row.
pub fn predictive(
    v: &Posterior,
    shape: &NetworkShape,
    x: &Array2<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<(Array2<f64>, Vec<f64>)> {
    if !matches!(shape.task(), Task::Classification { .. }) {
        return Err(Error::UnsupportedTask);
    }
    if n_samples == 0 {
        return Err(Error::Domain("n_samples must be at least 1".into()));
    }
    check_len("parameter vector", shape.num_params(), v.len())?;
    check_len("input columns", shape.input_dim(), x.ncols())?;

    let mut rng = rng::stream(seed, Purpose::Predictive, 0, 0);
    let mut acc = Array2::<f64>::zeros((x.nrows(), shape.output_dim()));
    for _ in 0..n_samples {
        let noise = NoiseDraw::sample(&mut rng, v.len(), v.is_sparse());
        let theta = sample_posterior(v, &noise)?;
        let (logits, _) = forward_cached(shape, &theta, x.view());
        acc += &softmax_rows(&logits);
    }
    acc /= n_samples as f64;
    let ent = entropy(&acc);
    Ok((acc, ent))
}
