//! Mini-batch training with decoupled weight decay, recording per-epoch
//! training dynamics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{accumulate_gradient, argmax, log_sum_exp, softmax, Gradient, ModelParams};
use super::{Example, TrainError};
use crate::rng::shuffle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Number of trailing epoch snapshots to retain; `None` keeps all.
    pub keep_snapshots: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 50,
            learning_rate: 0.1,
            weight_decay: 1e-4,
            seed: 0,
            keep_snapshots: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_owned()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be non-negative");
        }
        if self.keep_snapshots == Some(0) {
            return bad("keep_snapshots must be positive");
        }
        Ok(())
    }
}

/// Gold-label probability and correctness of every training example at the
/// end of every epoch. Rows are examples, columns are epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDynamics {
    pub gold_probs: Vec<Vec<f64>>,
    pub correct: Vec<Vec<bool>>,
}

impl TrainingDynamics {
    pub fn new(gold_probs: Vec<Vec<f64>>, correct: Vec<Vec<bool>>) -> Result<Self, TrainError> {
        let epochs = gold_probs.first().map_or(0, Vec::len);
        let rectangular = gold_probs.len() == correct.len()
            && gold_probs.iter().all(|r| r.len() == epochs)
            && correct.iter().all(|r| r.len() == epochs);
        if !rectangular {
            return Err(TrainError::InvalidConfig("dynamics must be rectangular".into()));
        }
        if gold_probs.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(TrainError::InvalidConfig("probabilities must lie in [0, 1]".into()));
        }
        Ok(Self { gold_probs, correct })
    }

    pub fn n_instances(&self) -> usize {
        self.gold_probs.len()
    }

    pub fn n_epochs(&self) -> usize {
        self.gold_probs.first().map_or(0, Vec::len)
    }
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainRun<P> {
    pub params: P,
    pub dynamics: TrainingDynamics,
    /// Mean training cross-entropy at the end of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Parameters at the last retained epoch boundaries, oldest first.
    snapshots: Vec<P>,
    epochs: usize,
}

impl<P: Clone> TrainRun<P> {
    pub fn new(params: P, dynamics: TrainingDynamics, epoch_loss: Vec<f64>, snapshots: Vec<P>, epochs: usize) -> Self {
        Self { params, dynamics, epoch_loss, snapshots, epochs }
    }

    /// Parameters at the last `k` epoch boundaries, oldest first.
    pub fn epoch_snapshots(&self, k: usize) -> Result<Vec<P>, TrainError> {
        if k == 0 || k > self.epochs {
            return Err(TrainError::SnapshotRange { requested: k, epochs: self.epochs });
        }
        if k > self.snapshots.len() {
            return Err(TrainError::SnapshotsNotRetained { requested: k, retained: self.snapshots.len() });
        }
        Ok(self.snapshots[self.snapshots.len() - k..].to_vec())
    }
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl AdamW {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    /// One step over the weight columns in `active` plus the bias. Decay
    /// applies to weights only. Columns outside `active` never receive a
    /// gradient, so their weights and moments stay exactly zero.
    fn update(&mut self, params: &mut ModelParams, grad: &Gradient, active: &[usize], lr: f64, decay: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        let d = params.dim as usize;
        let n_weights = params.weights.len();
        let step = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64, wd: f64| {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * wd * *p;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        };
        for c in 0..params.n_classes {
            let base = c * d;
            for &col in active {
                let k = base + col;
                step(&mut params.weights[k], &mut self.m[k], &mut self.v[k], grad.weights[k], decay);
            }
        }
        for (c, p) in params.bias.iter_mut().enumerate() {
            let k = n_weights + c;
            step(p, &mut self.m[k], &mut self.v[k], grad.bias[c], 0.0);
        }
    }
}

/// Train a fresh zero-initialised model on `examples`.
///
/// The seed only controls the per-epoch shuffle, so equal seeds give
/// bit-identical parameters.
pub fn train(
    examples: &[Example],
    n_classes: usize,
    dim: u32,
    scheme_version: &str,
    config: &TrainConfig,
) -> Result<TrainRun<ModelParams>, TrainError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if n_classes == 0 {
        return Err(TrainError::InvalidConfig("need at least one class".into()));
    }
    for (i, ex) in examples.iter().enumerate() {
        if ex.label >= n_classes {
            return Err(TrainError::LabelOutOfRange { index: i, label: ex.label, n_classes });
        }
        if ex.features.dim() != dim {
            return Err(TrainError::DimensionMismatch { index: i, expected: dim, found: ex.features.dim() });
        }
    }

    let mut params = ModelParams::zeros(n_classes, dim, scheme_version);
    let mut grad = Gradient { weights: vec![0.0; params.weights.len()], bias: vec![0.0; n_classes] };
    let mut optimizer = AdamW::new(params.weights.len() + n_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut active: Vec<usize> =
        examples.iter().flat_map(|ex| ex.features.entries().iter().map(|&(i, _)| i as usize)).collect();
    active.sort_unstable();
    active.dedup();
    let d = dim as usize;
    let mut order: Vec<usize> = (0..examples.len()).collect();

    let n = examples.len();
    let mut gold_probs = vec![Vec::with_capacity(config.epochs); n];
    let mut correct = vec![Vec::with_capacity(config.epochs); n];
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let keep = config.keep_snapshots.unwrap_or(config.epochs).min(config.epochs);
    let mut snapshots: Vec<ModelParams> = Vec::with_capacity(keep);

    for epoch in 0..config.epochs {
        shuffle(&mut order, &mut rng);
        for batch in order.chunks(config.batch_size) {
            for c in 0..n_classes {
                for &col in &active {
                    grad.weights[c * d + col] = 0.0;
                }
            }
            grad.bias.iter_mut().for_each(|g| *g = 0.0);
            accumulate_gradient(&params, batch.iter().map(|&i| &examples[i]), &mut grad);
            let scale = 1.0 / batch.len() as f64;
            for c in 0..n_classes {
                for &col in &active {
                    grad.weights[c * d + col] *= scale;
                }
            }
            grad.bias.iter_mut().for_each(|g| *g *= scale);
            optimizer.update(&mut params, &grad, &active, config.learning_rate, config.weight_decay);
        }

        let mut loss = 0.0;
        for (i, ex) in examples.iter().enumerate() {
            let logits = params.logits_unchecked(&ex.features);
            let probs = softmax(&logits);
            let p = probs[ex.label];
            loss += log_sum_exp(&logits) - logits[ex.label];
            gold_probs[i].push(p);
            correct[i].push(argmax(&probs) == ex.label);
        }
        let loss = loss / n as f64;
        if !loss.is_finite() || !params.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch: epoch + 1 });
        }
        epoch_loss.push(loss);

        if epoch + keep >= config.epochs {
            snapshots.push(params.clone());
        }
    }

    let dynamics = TrainingDynamics { gold_probs, correct };
    Ok(TrainRun::new(params, dynamics, epoch_loss, snapshots, config.epochs))
}
