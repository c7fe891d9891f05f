//! Text classifier contract and the reference hashed-n-gram softmax model.
//!
//! Anything that can [`Classifier::train`] on feature vectors and return
//! class distributions plugs into cartography and the active-learning loop.
//! Training must record [`TrainingDynamics`] and retain epoch snapshots.

mod features;
mod model;
mod trainer;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{tokenize, FeatureHasher, FeatureVector, MAX_TOKENS};
pub use model::{argmax, cross_entropy, cross_entropy_gradient, log_sum_exp, softmax, Gradient, ModelParams};
pub use trainer::{train, TrainConfig, TrainRun, TrainingDynamics};

/// A featurized instance with its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: FeatureVector,
    pub label: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("feature dimension {features} does not match model dimension {model}")]
    DimensionMismatch { model: u32, features: u32 },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("example {index}: label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { index: usize, label: usize, n_classes: usize },
    #[error("example {index}: feature dimension {found}, expected {expected}")]
    DimensionMismatch { index: usize, expected: u32, found: u32 },
    #[error("training diverged: non-finite loss at epoch {epoch}; lower the learning rate")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("requested {requested} snapshots from a {epochs}-epoch run")]
    SnapshotRange { requested: usize, epochs: usize },
    #[error("requested {requested} snapshots but only {retained} were retained")]
    SnapshotsNotRetained { requested: usize, retained: usize },
}

/// Pluggable backbone.
pub trait Classifier {
    type Params: Clone + Send + Sync;

    fn train(&self, examples: &[Example], config: &TrainConfig) -> Result<TrainRun<Self::Params>, TrainError>;

    fn predict_proba(&self, params: &Self::Params, features: &FeatureVector) -> Result<Vec<f64>, ModelError>;
}

/// The reference backbone: zero-initialised softmax regression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearSoftmax {
    pub n_classes: usize,
    pub dim: u32,
    pub scheme_version: String,
}

impl Classifier for LinearSoftmax {
    type Params = ModelParams;

    fn train(&self, examples: &[Example], config: &TrainConfig) -> Result<TrainRun<ModelParams>, TrainError> {
        train(examples, self.n_classes, self.dim, &self.scheme_version, config)
    }

    fn predict_proba(&self, params: &ModelParams, features: &FeatureVector) -> Result<Vec<f64>, ModelError> {
        params.predict_proba(features)
    }
}

pub const CHECKPOINT_FORMAT: &str = "dialcart-model";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a model checkpoint (format {0:?})")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Self-describing model file: parameters, feature configuration and the
/// tag order that fixes class indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub scheme_version: String,
    pub tags: Vec<String>,
    pub hasher: FeatureHasher,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams, hasher: FeatureHasher, tags: Vec<String>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            scheme_version: params.scheme_version.clone(),
            tags,
            hasher,
            params,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CheckpointError> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(CheckpointError::Format(ck.format));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(ck.version));
        }
        let p = &ck.params;
        if p.n_classes != ck.tags.len()
            || p.bias.len() != p.n_classes
            || p.weights.len() != p.n_classes * p.dim as usize
            || p.dim != ck.hasher.dim
        {
            return Err(CheckpointError::Inconsistent("shape does not match tags or hasher".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_examples(rng: &mut ChaCha8Rng, n: usize, dim: u32, classes: usize) -> Vec<Example> {
        (0..n)
            .map(|_| Example {
                features: FeatureVector::from_dense(
                    &(0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>(),
                ),
                label: rng.gen_range(0..classes),
            })
            .collect()
    }

    fn random_params(rng: &mut ChaCha8Rng, classes: usize, dim: u32) -> ModelParams {
        let mut p = ModelParams::zeros(classes, dim, "t");
        p.weights.iter_mut().chain(p.bias.iter_mut()).for_each(|w| *w = rng.gen_range(-2.0..2.0));
        p
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let classes = rng.gen_range(2..=4);
            let dim = rng.gen_range(2..=10);
            let examples = random_examples(&mut rng, 6, dim, classes);
            let params = random_params(&mut rng, classes, dim);
            let grad = cross_entropy_gradient(&params, &examples);
            let h = 1e-6;
            for k in 0..params.weights.len() {
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus.weights[k] += h;
                minus.weights[k] -= h;
                let fd = (cross_entropy(&plus, &examples) - cross_entropy(&minus, &examples)) / (2.0 * h);
                let rel = (fd - grad.weights[k]).abs() / fd.abs().max(grad.weights[k].abs()).max(1e-8);
                assert!(rel < 1e-4 || (fd - grad.weights[k]).abs() < 1e-9, "weight {k}: {fd} vs {}", grad.weights[k]);
            }
        }
    }

    fn separable_pair() -> Vec<Example> {
        vec![
            Example { features: FeatureVector::from_pairs(4, vec![(0, 1.0)]), label: 0 },
            Example { features: FeatureVector::from_pairs(4, vec![(1, 1.0)]), label: 1 },
        ]
    }

    #[test]
    fn separable_points_are_learned() {
        let run = train(&separable_pair(), 2, 4, "t", &TrainConfig::default()).unwrap();
        assert_eq!(run.dynamics.n_instances(), 2);
        assert_eq!(run.dynamics.n_epochs(), 30);
        for row in &run.dynamics.gold_probs {
            assert!(*row.last().unwrap() > 0.9);
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ex = random_examples(&mut rng, 40, 8, 3);
        let cfg = TrainConfig { batch_size: 7, seed: 9, ..TrainConfig::default() };
        let a = train(&ex, 3, 8, "t", &cfg).unwrap();
        let b = train(&ex, 3, 8, "t", &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.dynamics, b.dynamics);
    }

    #[test]
    fn dynamics_shape_and_snapshots() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ex = random_examples(&mut rng, 13, 5, 3);
        let cfg = TrainConfig { epochs: 6, ..TrainConfig::default() };
        let run = train(&ex, 3, 5, "t", &cfg).unwrap();
        assert_eq!(run.dynamics.gold_probs.len(), 13);
        assert!(run.dynamics.gold_probs.iter().all(|r| r.len() == 6));
        assert!(run.dynamics.correct.iter().all(|r| r.len() == 6));
        assert_eq!(run.epoch_snapshots(1).unwrap(), vec![run.params.clone()]);
        let all = run.epoch_snapshots(6).unwrap();
        assert_eq!(all.len(), 6);
        assert_eq!(all.last().unwrap(), &run.params);
        assert_ne!(all[0], all[5]);
        assert!(matches!(run.epoch_snapshots(7), Err(TrainError::SnapshotRange { .. })));

        let short = train(&ex, 3, 5, "t", &TrainConfig { epochs: 6, keep_snapshots: Some(2), ..cfg }).unwrap();
        assert_eq!(short.epoch_snapshots(2).unwrap(), all[4..].to_vec());
        assert!(matches!(short.epoch_snapshots(3), Err(TrainError::SnapshotsNotRetained { .. })));
    }

    #[test]
    fn snapshots_match_each_epoch_dynamics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ex = random_examples(&mut rng, 10, 4, 2);
        let run = train(&ex, 2, 4, "t", &TrainConfig { epochs: 4, ..TrainConfig::default() }).unwrap();
        for (e, snap) in run.epoch_snapshots(4).unwrap().iter().enumerate() {
            for (i, x) in ex.iter().enumerate() {
                let p = snap.predict_proba(&x.features).unwrap()[x.label];
                assert_eq!(p, run.dynamics.gold_probs[i][e]);
            }
        }
    }

    #[test]
    fn full_batch_loss_is_monotone_at_small_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ex = random_examples(&mut rng, 30, 6, 3);
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 30,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let run = train(&ex, 3, 6, "t", &cfg).unwrap();
        for w in run.epoch_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn class_permutation_permutes_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ex = random_examples(&mut rng, 25, 6, 3);
        let perm = [2usize, 0, 1];
        let relabeled: Vec<Example> =
            ex.iter().map(|e| Example { features: e.features.clone(), label: perm[e.label] }).collect();
        let cfg = TrainConfig { epochs: 5, batch_size: 4, seed: 3, ..TrainConfig::default() };
        let a = train(&ex, 3, 6, "t", &cfg).unwrap();
        let b = train(&relabeled, 3, 6, "t", &cfg).unwrap();
        for e in &ex {
            let pa = a.params.predict_proba(&e.features).unwrap();
            let pb = b.params.predict_proba(&e.features).unwrap();
            for c in 0..3 {
                assert!((pa[c] - pb[perm[c]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(train(&[], 2, 4, "t", &TrainConfig::default()), Err(TrainError::EmptyTrainingSet)));
        let ex = vec![Example { features: FeatureVector::zeros(4), label: 5 }];
        assert!(matches!(train(&ex, 2, 4, "t", &TrainConfig::default()), Err(TrainError::LabelOutOfRange { .. })));
        let ex = vec![Example { features: FeatureVector::zeros(3), label: 0 }];
        assert!(matches!(train(&ex, 2, 4, "t", &TrainConfig::default()), Err(TrainError::DimensionMismatch { .. })));
        let cfg = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(matches!(train(&separable_pair(), 2, 4, "t", &cfg), Err(TrainError::InvalidConfig(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let ex = vec![
            Example { features: FeatureVector::from_pairs(2, vec![(0, 1e300)]), label: 0 },
            Example { features: FeatureVector::from_pairs(2, vec![(0, -1e300)]), label: 1 },
        ];
        let cfg = TrainConfig { learning_rate: 1e300, epochs: 3, ..TrainConfig::default() };
        let r = train(&ex, 2, 2, "t", &cfg);
        assert!(matches!(r, Err(TrainError::NonFiniteLoss { .. })), "{:?}", r.map(|r| r.epoch_loss));
    }

    #[test]
    fn checkpoint_reloads_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let hasher = FeatureHasher::new(1, 2, 16, 0);
        let params = random_params(&mut rng, 3, 16);
        let ck = Checkpoint::new(params, hasher, vec!["a".into(), "b".into(), "c".into()]);
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        for (x, y) in back.params.weights.iter().zip(&ck.params.weights) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let mut wrong = ck.clone();
        wrong.tags.pop();
        assert!(matches!(Checkpoint::from_json(&wrong.to_json()), Err(CheckpointError::Inconsistent(_))));
    }
}
