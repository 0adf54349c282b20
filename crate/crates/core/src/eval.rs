//! Accuracy, transition-matrix comparison and confusion-based estimates.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major square matrix as nested rows.
pub type Matrix = Vec<Vec<f64>>;

/// Slack allowed on row sums of compared matrices.
pub const SIMPLEX_TOL: f64 = 1e-6;

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} labels", predictions.len()),
            actual: format!("{}", labels.len()),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionComparison {
    pub estimated: Matrix,
    pub ground_truth: Matrix,
    pub frobenius_error: f64,
    pub per_row_l1: Vec<f64>,
}

fn check_square_stochastic(m: &Matrix, what: &str) -> Result<usize> {
    let k = m.len();
    if k == 0 {
        return Err(Error::Empty("transition matrix"));
    }
    for (i, row) in m.iter().enumerate() {
        if row.len() != k {
            return Err(Error::ShapeMismatch {
                expected: format!("{k} x {k} {what}"),
                actual: format!("row {i} of length {}", row.len()),
            });
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL || row.iter().any(|v| !(*v >= -SIMPLEX_TOL)) {
            return Err(Error::invalid(format!(
                "row {i} of the {what} is not a distribution (sum {s})"
            )));
        }
    }
    Ok(k)
}

pub fn compare_transition(estimated: &Matrix, ground_truth: &Matrix) -> Result<TransitionComparison> {
    let k = check_square_stochastic(estimated, "estimate")?;
    let k2 = check_square_stochastic(ground_truth, "ground truth")?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            expected: format!("{k} x {k}"),
            actual: format!("{k2} x {k2}"),
        });
    }
    let mut sq = 0.0;
    let per_row_l1 = estimated
        .iter()
        .zip(ground_truth)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(x, y)| {
                    sq += (x - y) * (x - y);
                    (x - y).abs()
                })
                .sum()
        })
        .collect();
    Ok(TransitionComparison {
        estimated: estimated.clone(),
        ground_truth: ground_truth.clone(),
        frobenius_error: libm::sqrt(sq),
        per_row_l1,
    })
}

/// Row `i` is the distribution of observed labels among instances predicted
/// as class `i`; classes never predicted get a uniform row.
pub fn confusion_transition(predicted: &[usize], observed: &[usize], k: usize) -> Result<Matrix> {
    if predicted.len() != observed.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} labels", predicted.len()),
            actual: format!("{}", observed.len()),
        });
    }
    crate::data::check_labels(predicted, predicted.len(), k)?;
    crate::data::check_labels(observed, observed.len(), k)?;
    let mut counts = vec![vec![0usize; k]; k];
    for (&p, &o) in predicted.iter().zip(observed) {
        counts[p][o] += 1;
    }
    Ok(counts
        .into_iter()
        .map(|row| {
            let n: usize = row.iter().sum();
            if n == 0 {
                vec![1.0 / k as f64; k]
            } else {
                row.into_iter().map(|c| c as f64 / n as f64).collect()
            }
        })
        .collect())
}

/// Unwraps a per-row ground truth, failing if any class has no instances.
pub fn defined_rows(rows: &[Option<Vec<f64>>]) -> Result<Matrix> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            r.clone()
                .ok_or_else(|| Error::invalid(format!("transition row {i} is undefined (class has no instances)")))
        })
        .collect()
}

/// Mean of the diagonal and mean of the off-diagonal entries.
pub fn diagonal_dominance(m: &Matrix) -> (f64, f64) {
    let k = m.len();
    let diag: f64 = (0..k).map(|i| m[i][i]).sum::<f64>() / k as f64;
    let off: f64 = m
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().enumerate().filter(move |(j, _)| *j != i).map(|(_, v)| *v))
        .sum::<f64>()
        / (k * (k - 1)).max(1) as f64;
    (diag, off)
}
