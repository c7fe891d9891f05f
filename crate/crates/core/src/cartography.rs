//! Data maps: per-instance confidence, variability and correctness computed
//! from training dynamics, and the Easy/Medium/Hard/Impossible buckets
//! derived from correctness.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::TrainingDynamics;

#[derive(Debug, Error, PartialEq)]
pub enum CartographyError {
    #[error("statistic of an empty epoch sequence")]
    Empty,
    #[error("correctness {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("{ids} ids for {rows} dynamics rows")]
    Misaligned { ids: usize, rows: usize },
    #[error("no label for instance {0:?}")]
    Unlabeled(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bucket {
    Easy,
    Medium,
    Hard,
    Impossible,
}

impl Bucket {
    pub const ALL: [Bucket; 4] = [Bucket::Easy, Bucket::Medium, Bucket::Hard, Bucket::Impossible];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::Easy => "Easy",
            Bucket::Medium => "Medium",
            Bucket::Hard => "Hard",
            Bucket::Impossible => "Impossible",
        }
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Bucket {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Bucket::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| format!("unknown bucket {s:?}"))
    }
}

/// Mean gold-label probability across epochs.
pub fn confidence(gold_probs: &[f64]) -> Result<f64, CartographyError> {
    if gold_probs.is_empty() {
        return Err(CartographyError::Empty);
    }
    Ok(gold_probs.iter().sum::<f64>() / gold_probs.len() as f64)
}

/// Population standard deviation of the gold-label probability.
pub fn variability(gold_probs: &[f64]) -> Result<f64, CartographyError> {
    let mean = confidence(gold_probs)?;
    let ss: f64 = gold_probs.iter().map(|p| (p - mean) * (p - mean)).sum();
    Ok((ss / gold_probs.len() as f64).sqrt())
}

/// Fraction of epochs at which the prediction was correct.
pub fn correctness(correct: &[bool]) -> Result<f64, CartographyError> {
    if correct.is_empty() {
        return Err(CartographyError::Empty);
    }
    Ok(correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64)
}

/// Easy (>= 0.75), Medium (>= 0.5), Hard (>= 0.25), Impossible otherwise.
/// Boundary values go to the higher bucket.
pub fn bucket(correctness: f64) -> Result<Bucket, CartographyError> {
    if !(0.0..=1.0).contains(&correctness) {
        return Err(CartographyError::OutOfRange(correctness));
    }
    Ok(if correctness >= 0.75 {
        Bucket::Easy
    } else if correctness >= 0.5 {
        Bucket::Medium
    } else if correctness >= 0.25 {
        Bucket::Hard
    } else {
        Bucket::Impossible
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMapPoint {
    pub id: String,
    pub confidence: f64,
    pub variability: f64,
    pub correctness: f64,
    pub bucket: Bucket,
}

/// One point per dynamics row, in row order.
pub fn build_data_map<S: ToString>(
    dynamics: &TrainingDynamics,
    ids: &[S],
) -> Result<Vec<DataMapPoint>, CartographyError> {
    if ids.len() != dynamics.n_instances() {
        return Err(CartographyError::Misaligned { ids: ids.len(), rows: dynamics.n_instances() });
    }
    ids.iter()
        .zip(dynamics.gold_probs.iter().zip(&dynamics.correct))
        .map(|(id, (probs, flags))| {
            let cor = correctness(flags)?;
            Ok(DataMapPoint {
                id: id.to_string(),
                confidence: confidence(probs)?,
                variability: variability(probs)?,
                correctness: cor,
                bucket: bucket(cor)?,
            })
        })
        .collect()
}

/// Per-tag fractions over the four buckets, ordered like [`Bucket::ALL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketDistribution {
    /// Most frequent tag first.
    pub rows: Vec<(String, [f64; 4])>,
}

impl BucketDistribution {
    pub fn get(&self, tag: &str) -> Option<&[f64; 4]> {
        self.rows.iter().find(|r| r.0 == tag).map(|r| &r.1)
    }
}

/// Normalised bucket histogram per tag. Tags are ordered by how many points
/// carry them (descending), ties by name.
pub fn per_label_bucket_distribution(
    points: &[DataMapPoint],
    labels: &HashMap<String, String>,
) -> Result<BucketDistribution, CartographyError> {
    let mut counts: BTreeMap<&str, [usize; 4]> = BTreeMap::new();
    for p in points {
        let tag = labels.get(&p.id).ok_or_else(|| CartographyError::Unlabeled(p.id.clone()))?;
        counts.entry(tag.as_str()).or_default()[p.bucket.index()] += 1;
    }
    let mut rows: Vec<(String, [usize; 4], usize)> = counts
        .into_iter()
        .map(|(tag, c)| (tag.to_owned(), c, c.iter().sum()))
        .collect();
    rows.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    Ok(BucketDistribution {
        rows: rows
            .into_iter()
            .map(|(tag, c, total)| (tag, c.map(|k| k as f64 / total as f64)))
            .collect(),
    })
}
