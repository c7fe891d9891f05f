//! Classification metrics over class indices.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("prediction and gold lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no predictions to score")]
    Empty,
    #[error("class index {0} out of range")]
    ClassOutOfRange(usize),
}

fn check<T>(preds: &[T], golds: &[T]) -> Result<(), MetricError> {
    if preds.len() != golds.len() {
        return Err(MetricError::LengthMismatch(preds.len(), golds.len()));
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

pub fn accuracy<T: PartialEq>(preds: &[T], golds: &[T]) -> Result<f64, MetricError> {
    check(preds, golds)?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// One-vs-rest F1 for every class in `0..n_classes`. A class with no true
/// positives (including one absent from both lists) scores 0.
pub fn per_label_f1(preds: &[usize], golds: &[usize], n_classes: usize) -> Result<Vec<f64>, MetricError> {
    check(preds, golds)?;
    let mut tp = vec![0usize; n_classes];
    let mut pred_count = vec![0usize; n_classes];
    let mut gold_count = vec![0usize; n_classes];
    for (&p, &g) in preds.iter().zip(golds) {
        if p >= n_classes {
            return Err(MetricError::ClassOutOfRange(p));
        }
        if g >= n_classes {
            return Err(MetricError::ClassOutOfRange(g));
        }
        pred_count[p] += 1;
        gold_count[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    Ok((0..n_classes)
        .map(|c| {
            if tp[c] == 0 {
                return 0.0;
            }
            let precision = tp[c] as f64 / pred_count[c] as f64;
            let recall = tp[c] as f64 / gold_count[c] as f64;
            2.0 * precision * recall / (precision + recall)
        })
        .collect())
}

/// Mean per-label F1 over the classes that occur in `golds`.
pub fn macro_f1(preds: &[usize], golds: &[usize], n_classes: usize) -> Result<f64, MetricError> {
    let f1 = per_label_f1(preds, golds, n_classes)?;
    let mut present = vec![false; n_classes];
    golds.iter().for_each(|&g| present[g] = true);
    let (sum, n) = f1
        .iter()
        .zip(&present)
        .filter(|(_, &p)| p)
        .fold((0.0, 0usize), |(s, n), (f, _)| (s + f, n + 1));
    Ok(sum / n as f64)
}
