use ndarray::Array2;

use crate::bnn::{forward, predictive, NetworkShape, Task};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::variational::Posterior;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Evaluation {
    /// `theta = mu`, with sparse coordinates of `lambda <= 0.5` switched off.
    MeanWeights,
    /// Softmax averaged over `draws` posterior samples.
    Sampled { draws: usize, seed: u64 },
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows(scores: &Array2<f64>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn classes<'a>(shape: &NetworkShape, test: &'a LabeledDataset) -> Result<&'a [usize]> {
    if !matches!(shape.task(), Task::Classification { .. }) {
        return Err(Error::UnsupportedTask);
    }
    if test.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty test set".into()));
    }
    test.classes().ok_or(Error::UnsupportedTask)
}

fn hit_rate(pred: &[usize], truth: &[usize]) -> f64 {
    pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

/// Classification accuracy of point weights.
pub fn accuracy_point(theta: &[f64], shape: &NetworkShape, test: &LabeledDataset) -> Result<f64> {
    let truth = classes(shape, test)?;
    let out = forward(shape, theta, test.inputs.view())?;
    Ok(hit_rate(&argmax_rows(&out), truth))
}

/// Classification accuracy of a posterior on `test`.
pub fn evaluate(params: &Posterior, shape: &NetworkShape, test: &LabeledDataset, mode: Evaluation) -> Result<f64> {
    match mode {
        Evaluation::MeanWeights => accuracy_point(&params.mean_weights(), shape, test),
        Evaluation::Sampled { draws, seed } => {
            let truth = classes(shape, test)?;
            let (probs, _) = predictive(params, shape, &test.inputs, draws, seed)?;
            Ok(hit_rate(&argmax_rows(&probs), truth))
        }
    }
}

/// Mean squared error of the posterior mean on a regression set.
pub fn mse_point(theta: &[f64], shape: &NetworkShape, test: &LabeledDataset) -> Result<f64> {
    let crate::data::Labels::Real(y) = &test.labels else {
        return Err(Error::Structural("mse needs real targets".into()));
    };
    if test.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty test set".into()));
    }
    let out = forward(shape, theta, test.inputs.view())?;
    Ok((&out - y).mapv(|r| r * r).mean().unwrap_or(0.0))
}
