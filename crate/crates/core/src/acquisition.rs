//! Batch acquisition strategies for pool-based active learning.
//!
//! Every strategy sees only [`Candidate`]s, which carry model outputs and
//! features but never gold labels. Ties are broken by ascending instance id
//! throughout.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::FeatureVector;
use crate::rng;

/// Index of an instance in the pool it was drawn from.
pub type InstanceId = usize;

/// Tolerance on a distribution's total mass.
pub const DIST_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum AcquisitionError {
    #[error("cannot select {requested} from {available} candidates")]
    BatchTooLarge { requested: usize, available: usize },
    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),
    #[error("candidate {0} has no ensemble distributions")]
    MissingEnsemble(InstanceId),
    #[error("ensemble members disagree on the number of classes")]
    RaggedEnsemble,
    #[error("invalid strategy configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown strategy {0:?} (expected random, entropy, least_confidence or coremse)")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "entropy")]
    MaxEntropy,
    #[serde(rename = "least_confidence")]
    LeastConfidence,
    #[serde(rename = "coremse")]
    CoreMse,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] =
        [StrategyKind::Random, StrategyKind::MaxEntropy, StrategyKind::LeastConfidence, StrategyKind::CoreMse];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::MaxEntropy => "entropy",
            StrategyKind::LeastConfidence => "least_confidence",
            StrategyKind::CoreMse => "coremse",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = AcquisitionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| AcquisitionError::UnknownStrategy(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Uncertainty shortlist size for CoreMSE; defaults to ten batches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_cap: Option<usize>,
    /// Number of trailing epoch snapshots forming the CoreMSE ensemble.
    #[serde(default = "default_ensemble")]
    pub ensemble_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch() -> usize {
    50
}

fn default_ensemble() -> usize {
    5
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind, batch_size: usize) -> Self {
        Self { kind, batch_size, candidate_cap: None, ensemble_size: default_ensemble(), seed: 0 }
    }

    pub fn cap(&self) -> usize {
        self.candidate_cap.unwrap_or(10 * self.batch_size)
    }

    pub fn needs_ensemble(&self) -> bool {
        self.kind == StrategyKind::CoreMse
    }

    pub fn validate(&self) -> Result<(), AcquisitionError> {
        if self.batch_size == 0 {
            return Err(AcquisitionError::InvalidConfig("batch size must be positive".into()));
        }
        if self.cap() < self.batch_size {
            return Err(AcquisitionError::InvalidConfig(format!(
                "candidate cap {} is below batch size {}",
                self.cap(),
                self.batch_size
            )));
        }
        if self.ensemble_size == 0 {
            return Err(AcquisitionError::InvalidConfig("ensemble size must be positive".into()));
        }
        Ok(())
    }
}

/// An unlabeled instance as the strategies see it.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: InstanceId,
    pub predictive: Vec<f64>,
    pub ensemble: Option<Vec<Vec<f64>>>,
    pub features: FeatureVector,
}

pub fn validate_distribution(dist: &[f64]) -> Result<(), AcquisitionError> {
    if dist.is_empty() {
        return Err(AcquisitionError::InvalidDistribution("empty".into()));
    }
    if dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(AcquisitionError::InvalidDistribution("entries must be finite and non-negative".into()));
    }
    let total: f64 = dist.iter().sum();
    if (total - 1.0).abs() > DIST_TOLERANCE {
        return Err(AcquisitionError::InvalidDistribution(format!("mass {total} is not 1")));
    }
    Ok(())
}

fn check_batch(requested: usize, available: usize) -> Result<(), AcquisitionError> {
    if requested > available {
        return Err(AcquisitionError::BatchTooLarge { requested, available });
    }
    Ok(())
}

/// `b` distinct ids uniformly without replacement.
pub fn random_select(pool: &[InstanceId], b: usize, seed: u64) -> Result<Vec<InstanceId>, AcquisitionError> {
    check_batch(b, pool.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rng::sample(pool, b, &mut rng))
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy_score(dist: &[f64]) -> Result<f64, AcquisitionError> {
    validate_distribution(dist)?;
    Ok(-dist.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>())
}

/// `1 - max p`; larger means less confident.
pub fn least_confidence_score(dist: &[f64]) -> Result<f64, AcquisitionError> {
    validate_distribution(dist)?;
    Ok(1.0 - dist.iter().copied().fold(0.0, f64::max))
}

fn by_score_desc(a: &(InstanceId, f64), b: &(InstanceId, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

/// Ids of the `b` highest scores, best first; ties by ascending id.
pub fn top_b_by_score(scored: &[(InstanceId, f64)], b: usize) -> Result<Vec<InstanceId>, AcquisitionError> {
    check_batch(b, scored.len())?;
    let mut sorted = scored.to_vec();
    sorted.sort_by(by_score_desc);
    Ok(sorted.into_iter().take(b).map(|s| s.0).collect())
}

/// Total variance of class probabilities across ensemble members:
/// `sum_c (1/K) sum_k (p_k(c) - mean(c))^2`.
pub fn coremse_uncertainty(ensemble: &[Vec<f64>]) -> Result<f64, AcquisitionError> {
    let Some(first) = ensemble.first() else {
        return Err(AcquisitionError::InvalidDistribution("empty ensemble".into()));
    };
    let classes = first.len();
    for member in ensemble {
        if member.len() != classes {
            return Err(AcquisitionError::RaggedEnsemble);
        }
        validate_distribution(member)?;
    }
    let k = ensemble.len() as f64;
    let score = (0..classes)
        .map(|c| {
            let mean = ensemble.iter().map(|m| m[c]).sum::<f64>() / k;
            ensemble.iter().map(|m| (m[c] - mean) * (m[c] - mean)).sum::<f64>() / k
        })
        .sum();
    Ok(score)
}

/// Greedy k-center (farthest-first) selection of `b` ids from `points`,
/// excluding `pre_selected`, which only contribute distances.
///
/// Each pick maximises the Euclidean distance to the nearest point already
/// chosen or pre-selected. Ties go to the higher `priority` (when given),
/// then to the lower id. With nothing chosen yet every distance is
/// infinite, so the first pick is the top-priority point, or the lowest id.
pub fn farthest_first(
    points: &[(InstanceId, &FeatureVector)],
    pre_selected: &BTreeSet<InstanceId>,
    b: usize,
    priority: Option<&HashMap<InstanceId, f64>>,
) -> Result<Vec<InstanceId>, AcquisitionError> {
    let anchors: Vec<&FeatureVector> =
        points.iter().filter(|(id, _)| pre_selected.contains(id)).map(|(_, f)| *f).collect();
    let mut open: Vec<(InstanceId, &FeatureVector, f64)> = points
        .iter()
        .filter(|(id, _)| !pre_selected.contains(id))
        .map(|&(id, f)| {
            let d = anchors.iter().map(|a| a.squared_distance(f)).fold(f64::INFINITY, f64::min);
            (id, f, d)
        })
        .collect();
    check_batch(b, open.len())?;
    let prio = |id: InstanceId| priority.and_then(|p| p.get(&id).copied()).unwrap_or(0.0);

    let mut chosen = Vec::with_capacity(b);
    while chosen.len() < b {
        let mut best = 0;
        for j in 1..open.len() {
            let (id, _, d) = open[j];
            let (bid, _, bd) = open[best];
            let better = match d.partial_cmp(&bd).unwrap_or(Ordering::Equal) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => match prio(id).partial_cmp(&prio(bid)).unwrap_or(Ordering::Equal) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => id < bid,
                },
            };
            if better {
                best = j;
            }
        }
        let (id, picked, _) = open.swap_remove(best);
        chosen.push(id);
        for entry in &mut open {
            let d = picked.squared_distance(entry.1);
            if d < entry.2 {
                entry.2 = d;
            }
        }
    }
    Ok(chosen)
}

/// Two-stage CoreMSE: shortlist the `cap` most uncertain candidates by
/// ensemble variance, then pick a diverse batch from the shortlist by
/// farthest-first traversal seeded at its most uncertain member.
pub fn coremse_select(candidates: &[Candidate], config: &StrategyConfig) -> Result<Vec<InstanceId>, AcquisitionError> {
    config.validate()?;
    check_batch(config.batch_size, candidates.len())?;
    let mut scored = Vec::with_capacity(candidates.len());
    for c in candidates {
        let ensemble = c.ensemble.as_ref().ok_or(AcquisitionError::MissingEnsemble(c.id))?;
        scored.push((c.id, coremse_uncertainty(ensemble)?));
    }
    let keep = config.cap().min(candidates.len());
    let shortlist = top_b_by_score(&scored, keep)?;
    let by_id: HashMap<InstanceId, &Candidate> = candidates.iter().map(|c| (c.id, c)).collect();
    let points: Vec<(InstanceId, &FeatureVector)> = shortlist.iter().map(|id| (*id, &by_id[id].features)).collect();
    let priority: HashMap<InstanceId, f64> = scored.into_iter().collect();
    farthest_first(&points, &BTreeSet::new(), config.batch_size, Some(&priority))
}

fn select_by(
    candidates: &[Candidate],
    b: usize,
    score: impl Fn(&[f64]) -> Result<f64, AcquisitionError>,
) -> Result<Vec<InstanceId>, AcquisitionError> {
    let scored = candidates
        .iter()
        .map(|c| Ok((c.id, score(&c.predictive)?)))
        .collect::<Result<Vec<_>, AcquisitionError>>()?;
    top_b_by_score(&scored, b)
}

/// Apply the configured strategy.
pub fn select(candidates: &[Candidate], config: &StrategyConfig) -> Result<Vec<InstanceId>, AcquisitionError> {
    config.validate()?;
    let b = config.batch_size;
    match config.kind {
        StrategyKind::Random => {
            let ids: Vec<InstanceId> = candidates.iter().map(|c| c.id).collect();
            random_select(&ids, b, config.seed)
        }
        StrategyKind::MaxEntropy => select_by(candidates, b, entropy_score),
        StrategyKind::LeastConfidence => select_by(candidates, b, least_confidence_score),
        StrategyKind::CoreMse => coremse_select(candidates, config),
    }
}
