//! Sequence prediction metrics.

use crate::error::{Error, Result};

/// Fraction of positions where prediction and target agree, over a batch
/// of sequences.
pub fn element_wise_accuracy(preds: &[Vec<usize>], targets: &[Vec<usize>]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::LengthMismatch(preds.len(), targets.len()));
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for (p, t) in preds.iter().zip(targets) {
        if p.len() != t.len() {
            return Err(Error::LengthMismatch(p.len(), t.len()));
        }
        hits += p.iter().zip(t).filter(|(a, b)| a == b).count();
        total += t.len();
    }
    if total == 0 {
        return Err(Error::EmptyMetrics);
    }
    Ok(hits as f64 / total as f64)
}

/// Fraction of sequences predicted exactly.
pub fn full_sequence_accuracy(preds: &[Vec<usize>], targets: &[Vec<usize>]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::LengthMismatch(preds.len(), targets.len()));
    }
    if preds.is_empty() {
        return Err(Error::EmptyMetrics);
    }
    for (p, t) in preds.iter().zip(targets) {
        if p.len() != t.len() {
            return Err(Error::LengthMismatch(p.len(), t.len()));
        }
    }
    let hits = preds.iter().zip(targets).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / preds.len() as f64)
}
