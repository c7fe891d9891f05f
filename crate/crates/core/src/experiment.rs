//! Pool-based active-learning simulation: the stored gold labels act as the
//! annotator, the model is retrained from scratch after every acquired
//! batch, and every round is evaluated on a held-out test set.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{self, AcquisitionError, Candidate, InstanceId, StrategyConfig, StrategyKind};
use crate::classifier::{Classifier, Example, FeatureHasher, FeatureVector, ModelError, TrainConfig, TrainError};
use crate::corpus::{LabelScheme, Sentence};
use crate::metrics::{self, MetricError};

pub use crate::metrics::{accuracy, macro_f1, per_label_f1};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("pool of {pool} cannot hold {initial} initial + {rounds} x {batch} acquisitions")]
    PoolTooSmall { pool: usize, initial: usize, rounds: usize, batch: usize },
    #[error("initial labeled set must be non-empty and smaller than the pool ({initial} of {pool})")]
    BadInitial { initial: usize, pool: usize },
    #[error("test set is empty")]
    EmptyTest,
    #[error("sentence {0} has no gold label")]
    Unlabeled(String),
    #[error("sentence {id} has tag {tag:?} outside the scheme")]
    UnknownTag { id: String, tag: String },
    #[error("curves are on different labeled-count grids")]
    GridMismatch,
    #[error("no runs to aggregate")]
    NoRuns,
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error("round {round}: {source}")]
    Train { round: usize, source: TrainError },
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Featurized instances with gold class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub features: Vec<FeatureVector>,
    pub labels: Vec<usize>,
}

impl Dataset {
    /// Every sentence must carry a gold tag from `scheme`.
    pub fn from_sentences(
        sentences: &[Sentence],
        scheme: &LabelScheme,
        hasher: &FeatureHasher,
    ) -> Result<Self, ExperimentError> {
        let mut ds = Dataset { ids: Vec::new(), features: Vec::new(), labels: Vec::new() };
        for s in sentences {
            let tag = s.gold.as_ref().ok_or_else(|| ExperimentError::Unlabeled(s.id.to_string()))?;
            let label = scheme
                .index_of(tag)
                .ok_or_else(|| ExperimentError::UnknownTag { id: s.id.to_string(), tag: tag.clone() })?;
            ds.ids.push(s.id.to_string());
            ds.features.push(hasher.featurize(&s.text));
            ds.labels.push(label);
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn examples(&self) -> Vec<Example> {
        self.features
            .iter()
            .zip(&self.labels)
            .map(|(f, &label)| Example { features: f.clone(), label })
            .collect()
    }
}

/// Gold labels of the pool, released one acquired id at a time.
struct Oracle<'a> {
    labels: &'a [usize],
    revealed: BTreeSet<InstanceId>,
}

impl<'a> Oracle<'a> {
    fn new(labels: &'a [usize]) -> Self {
        Self { labels, revealed: BTreeSet::new() }
    }

    fn reveal(&mut self, id: InstanceId) -> usize {
        let fresh = self.revealed.insert(id);
        assert!(fresh, "instance {id} annotated twice");
        self.labels[id]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub initial_labeled: usize,
    pub batch_size: usize,
    /// Acquisition rounds after the initial one; `None` runs until the pool
    /// is exhausted.
    pub rounds: Option<usize>,
    pub strategies: Vec<StrategyConfig>,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub hasher: FeatureHasher,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            initial_labeled: 50,
            batch_size: 50,
            rounds: None,
            strategies: StrategyKind::ALL.iter().map(|&k| StrategyConfig::new(k, 50)).collect(),
            seeds: (0..6).collect(),
            train: TrainConfig::default(),
            hasher: FeatureHasher::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, pool: usize) -> Result<(), ExperimentError> {
        if self.batch_size == 0 {
            return Err(ExperimentError::InvalidConfig("batch size must be positive".into()));
        }
        if self.initial_labeled == 0 || self.initial_labeled >= pool {
            return Err(ExperimentError::BadInitial { initial: self.initial_labeled, pool });
        }
        if let Some(r) = self.rounds {
            if self.initial_labeled + r * self.batch_size > pool {
                return Err(ExperimentError::PoolTooSmall {
                    pool,
                    initial: self.initial_labeled,
                    rounds: r,
                    batch: self.batch_size,
                });
            }
        }
        Ok(())
    }
}

/// Metrics after one round of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub round: usize,
    pub labeled_count: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Indexed by class.
    pub per_label_f1: Vec<f64>,
    /// Ids acquired in this round, in selection order (empty for round 0).
    pub acquired_ids: Vec<InstanceId>,
    /// Gold-class histogram of `acquired_ids`.
    pub acquired_per_label: Vec<u64>,
    /// Running total of `acquired_per_label`.
    pub cumulative_per_label: Vec<u64>,
    /// Set when the pool ran out before a full batch could be drawn.
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRun {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub tags: Vec<String>,
    pub initial_ids: Vec<InstanceId>,
    pub rounds: Vec<RoundResult>,
}

/// Derive an independent stream seed from a base seed and a purpose.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const INITIAL_STREAM: u64 = 0x1;
const TRAIN_STREAM: u64 = 0x100;
const ACQUIRE_STREAM: u64 = 0x10000;

/// The initial labeled ids for `seed`; shared by every strategy.
pub fn initial_sample(pool_len: usize, n: usize, seed: u64) -> Result<Vec<InstanceId>, ExperimentError> {
    let ids: Vec<InstanceId> = (0..pool_len).collect();
    Ok(acquisition::random_select(&ids, n, mix_seed(seed, INITIAL_STREAM))?)
}

fn evaluate<C: Classifier>(
    classifier: &C,
    params: &C::Params,
    test: &Dataset,
    n_classes: usize,
) -> Result<(f64, f64, Vec<f64>), ExperimentError> {
    let preds = test
        .features
        .iter()
        .map(|x| classifier.predict_proba(params, x).map(|p| crate::classifier::argmax(&p)))
        .collect::<Result<Vec<usize>, ModelError>>()?;
    Ok((
        metrics::accuracy(&preds, &test.labels)?,
        metrics::macro_f1(&preds, &test.labels, n_classes)?,
        metrics::per_label_f1(&preds, &test.labels, n_classes)?,
    ))
}

/// Model outputs for the unlabeled ids; ensembles only when the strategy
/// needs them.
pub fn build_candidates<C: Classifier>(
    classifier: &C,
    params: &C::Params,
    ensemble: Option<&[C::Params]>,
    features: &[FeatureVector],
    ids: &[InstanceId],
) -> Result<Vec<Candidate>, ModelError> {
    ids.iter()
        .map(|&id| {
            let x = &features[id];
            let ensemble = ensemble
                .map(|members| members.iter().map(|m| classifier.predict_proba(m, x)).collect())
                .transpose()?;
            Ok(Candidate { id, predictive: classifier.predict_proba(params, x)?, ensemble, features: x.clone() })
        })
        .collect()
}

/// Run one (strategy, seed) simulation.
pub fn run_simulation<C: Classifier>(
    classifier: &C,
    pool: &Dataset,
    test: &Dataset,
    strategy: &StrategyConfig,
    config: &ExperimentConfig,
    seed: u64,
    tags: &[String],
) -> Result<SimulationRun, ExperimentError> {
    config.validate(pool.len())?;
    if test.is_empty() {
        return Err(ExperimentError::EmptyTest);
    }
    let n_classes = tags.len();
    let batch = config.batch_size;
    let mut oracle = Oracle::new(&pool.labels);

    let initial = initial_sample(pool.len(), config.initial_labeled, seed)?;
    let mut labeled: Vec<Example> = initial
        .iter()
        .map(|&id| Example { features: pool.features[id].clone(), label: oracle.reveal(id) })
        .collect();
    let mut unlabeled: BTreeSet<InstanceId> = (0..pool.len()).collect();
    for id in &initial {
        unlabeled.remove(id);
    }

    let mut train_cfg = config.train.clone();
    if strategy.needs_ensemble() {
        train_cfg.keep_snapshots = Some(strategy.ensemble_size.min(train_cfg.epochs));
    } else {
        train_cfg.keep_snapshots = Some(1);
    }

    let mut rounds = Vec::new();
    let mut cumulative = vec![0u64; n_classes];
    let mut acquired_ids: Vec<InstanceId> = Vec::new();
    let mut partial = false;
    let mut round = 0usize;
    loop {
        train_cfg.seed = mix_seed(seed, TRAIN_STREAM + round as u64);
        let run = classifier
            .train(&labeled, &train_cfg)
            .map_err(|source| ExperimentError::Train { round, source })?;
        let (acc, f1, per_label) = evaluate(classifier, &run.params, test, n_classes)?;

        let mut acquired_per_label = vec![0u64; n_classes];
        for ex in &labeled[labeled.len() - acquired_ids.len()..] {
            acquired_per_label[ex.label] += 1;
        }
        for (c, k) in acquired_per_label.iter().enumerate() {
            cumulative[c] += k;
        }
        rounds.push(RoundResult {
            round,
            labeled_count: labeled.len(),
            accuracy: acc,
            macro_f1: f1,
            per_label_f1: per_label,
            acquired_ids: std::mem::take(&mut acquired_ids),
            acquired_per_label,
            cumulative_per_label: cumulative.clone(),
            partial,
        });

        let done = unlabeled.is_empty() || config.rounds.is_some_and(|r| round >= r);
        if done {
            break;
        }

        let ids: Vec<InstanceId> = unlabeled.iter().copied().collect();
        let take = batch.min(ids.len());
        partial = take < batch;
        let ensemble = if strategy.needs_ensemble() {
            Some(
                run.epoch_snapshots(train_cfg.keep_snapshots.unwrap_or(1))
                    .map_err(|source| ExperimentError::Train { round, source })?,
            )
        } else {
            None
        };
        let candidates = build_candidates(classifier, &run.params, ensemble.as_deref(), &pool.features, &ids)?;
        let round_strategy = StrategyConfig {
            batch_size: take,
            candidate_cap: Some(strategy.candidate_cap.unwrap_or(10 * batch).max(take)),
            seed: mix_seed(seed ^ strategy.seed, ACQUIRE_STREAM + round as u64),
            ..strategy.clone()
        };
        let picked = acquisition::select(&candidates, &round_strategy)?;
        for &id in &picked {
            let was_unlabeled = unlabeled.remove(&id);
            assert!(was_unlabeled, "strategy returned labeled id {id}");
            labeled.push(Example { features: pool.features[id].clone(), label: oracle.reveal(id) });
        }
        acquired_ids = picked;
        round += 1;
    }

    Ok(SimulationRun { strategy: strategy.kind, seed, tags: tags.to_vec(), initial_ids: initial, rounds })
}

/// Running sums of the per-round acquisition histograms, as
/// `table[class][round]`.
pub fn cumulative_sampling_frequency(results: &[RoundResult]) -> Vec<Vec<u64>> {
    let n_classes = results.first().map_or(0, |r| r.acquired_per_label.len());
    let mut table = vec![Vec::with_capacity(results.len()); n_classes];
    let mut running = vec![0u64; n_classes];
    for r in results {
        for (c, k) in r.acquired_per_label.iter().enumerate() {
            running[c] += k;
            table[c].push(running[c]);
        }
    }
    table
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub labeled_count: usize,
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    /// Mean per-label F1, indexed by class.
    pub per_label_f1: Vec<f64>,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub strategy: StrategyKind,
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    /// Trapezoidal area under the mean macro-F1 curve divided by the width
    /// of the labeled-count range; a single point yields its own value.
    pub fn normalized_auc(&self) -> f64 {
        let pts = &self.points;
        match pts.len() {
            0 => 0.0,
            1 => pts[0].macro_f1.mean,
            _ => {
                let area: f64 = pts
                    .windows(2)
                    .map(|w| {
                        let dx = (w[1].labeled_count - w[0].labeled_count) as f64;
                        dx * (w[0].macro_f1.mean + w[1].macro_f1.mean) / 2.0
                    })
                    .sum();
                area / (pts[pts.len() - 1].labeled_count - pts[0].labeled_count) as f64
            }
        }
    }

    pub fn at(&self, labeled_count: usize) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.labeled_count == labeled_count)
    }
}

/// Pointwise mean and population std across seeds of one strategy.
pub fn aggregate_over_seeds(runs: &[SimulationRun]) -> Result<LearningCurve, ExperimentError> {
    let first = runs.first().ok_or(ExperimentError::NoRuns)?;
    let grid: Vec<usize> = first.rounds.iter().map(|r| r.labeled_count).collect();
    for run in runs {
        let g: Vec<usize> = run.rounds.iter().map(|r| r.labeled_count).collect();
        if g != grid || run.strategy != first.strategy {
            return Err(ExperimentError::GridMismatch);
        }
    }
    let n_classes = first.tags.len();
    let points = grid
        .iter()
        .enumerate()
        .map(|(i, &labeled_count)| {
            let acc: Vec<f64> = runs.iter().map(|r| r.rounds[i].accuracy).collect();
            let f1: Vec<f64> = runs.iter().map(|r| r.rounds[i].macro_f1).collect();
            let per_label = (0..n_classes)
                .map(|c| runs.iter().map(|r| r.rounds[i].per_label_f1[c]).sum::<f64>() / runs.len() as f64)
                .collect();
            CurvePoint {
                labeled_count,
                accuracy: MeanStd::of(&acc),
                macro_f1: MeanStd::of(&f1),
                per_label_f1: per_label,
                n_seeds: runs.len(),
            }
        })
        .collect();
    Ok(LearningCurve { strategy: first.strategy, points })
}

/// Every (strategy, seed) cell, run on up to `jobs` threads. Results come
/// back grouped by strategy in config order, seeds in config order.
pub fn run_experiment<C: Classifier + Sync>(
    classifier: &C,
    pool: &Dataset,
    test: &Dataset,
    config: &ExperimentConfig,
    tags: &[String],
    jobs: usize,
) -> Result<Vec<Vec<SimulationRun>>, ExperimentError> {
    let cells: Vec<(usize, &StrategyConfig, u64)> = config
        .strategies
        .iter()
        .enumerate()
        .flat_map(|(i, s)| config.seeds.iter().map(move |&seed| (i, s, seed)))
        .collect();
    let run_cell = |&(_, s, seed): &(usize, &StrategyConfig, u64)| {
        run_simulation(classifier, pool, test, s, config, seed, tags)
    };

    let results: Vec<Result<SimulationRun, ExperimentError>> = if jobs <= 1 {
        cells.iter().map(run_cell).collect()
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<Result<SimulationRun, ExperimentError>>>> =
            cells.iter().map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(cells.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= cells.len() {
                        break;
                    }
                    let r = run_cell(&cells[i]);
                    *slots[i].lock().expect("slot lock") = Some(r);
                });
            }
        });
        slots.into_iter().map(|s| s.into_inner().expect("slot lock").expect("cell ran")).collect()
    };

    let mut grouped: Vec<Vec<SimulationRun>> = vec![Vec::new(); config.strategies.len()];
    for ((i, _, _), r) in cells.iter().zip(results) {
        grouped[*i].push(r?);
    }
    Ok(grouped)
}
