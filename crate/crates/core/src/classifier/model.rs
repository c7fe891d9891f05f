//! Multinomial linear model over hashed features.

use serde::{Deserialize, Serialize};

use super::features::FeatureVector;
use super::{Example, ModelError};

/// `C x D` weights (row-major, one row per class) plus `C` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n_classes: usize,
    pub dim: u32,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub scheme_version: String,
}

impl ModelParams {
    pub fn zeros(n_classes: usize, dim: u32, scheme_version: impl Into<String>) -> Self {
        Self {
            n_classes,
            dim,
            weights: vec![0.0; n_classes * dim as usize],
            bias: vec![0.0; n_classes],
            scheme_version: scheme_version.into(),
        }
    }

    pub fn row(&self, class: usize) -> &[f64] {
        let d = self.dim as usize;
        &self.weights[class * d..(class + 1) * d]
    }

    fn check_dim(&self, x: &FeatureVector) -> Result<(), ModelError> {
        if x.dim() != self.dim {
            return Err(ModelError::DimensionMismatch { model: self.dim, features: x.dim() });
        }
        Ok(())
    }

    pub fn logits(&self, x: &FeatureVector) -> Result<Vec<f64>, ModelError> {
        self.check_dim(x)?;
        Ok(self.logits_unchecked(x))
    }

    pub(crate) fn logits_unchecked(&self, x: &FeatureVector) -> Vec<f64> {
        (0..self.n_classes).map(|c| x.dot(self.row(c)) + self.bias[c]).collect()
    }

    pub fn predict_proba(&self, x: &FeatureVector) -> Result<Vec<f64>, ModelError> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Most probable class; ties go to the lowest index.
    pub fn predict(&self, x: &FeatureVector) -> Result<usize, ModelError> {
        Ok(argmax(&self.logits(x)?))
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Gradient of the mean cross-entropy, same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Mean cross-entropy `-ln p(y|x)` over `examples`.
pub fn cross_entropy(params: &ModelParams, examples: &[Example]) -> f64 {
    let total: f64 = examples
        .iter()
        .map(|ex| {
            let logits = params.logits_unchecked(&ex.features);
            log_sum_exp(&logits) - logits[ex.label]
        })
        .sum();
    total / examples.len() as f64
}

/// Analytic gradient of [`cross_entropy`]: `(p - onehot(y)) x^T` averaged.
pub fn cross_entropy_gradient(params: &ModelParams, examples: &[Example]) -> Gradient {
    let mut grad = Gradient {
        weights: vec![0.0; params.weights.len()],
        bias: vec![0.0; params.n_classes],
    };
    accumulate_gradient(params, examples.iter(), &mut grad);
    let scale = 1.0 / examples.len() as f64;
    grad.weights.iter_mut().chain(grad.bias.iter_mut()).for_each(|g| *g *= scale);
    grad
}

/// Adds the summed (not averaged) gradient of `examples` into `grad`.
pub(crate) fn accumulate_gradient<'a>(
    params: &ModelParams,
    examples: impl Iterator<Item = &'a Example>,
    grad: &mut Gradient,
) {
    let d = params.dim as usize;
    for ex in examples {
        let probs = softmax(&params.logits_unchecked(&ex.features));
        for (c, p) in probs.into_iter().enumerate() {
            let residual = p - if c == ex.label { 1.0 } else { 0.0 };
            grad.bias[c] += residual;
            let row = &mut grad.weights[c * d..(c + 1) * d];
            for &(i, w) in ex.features.entries() {
                row[i as usize] += residual * w;
            }
        }
    }
}
