//! Accuracy and average precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// All-points (non-interpolated) average precision.
///
/// Samples are ranked by descending score; equal scores keep input order.
/// Returns `None` when nothing is relevant.
pub fn average_precision<T: Scalar>(scores: &[T], relevant: &[bool]) -> Result<Option<f64>> {
    if scores.len() != relevant.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: relevant.len(),
        });
    }
    let total = relevant.iter().filter(|&&r| r).count();
    if total == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if relevant[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(Some(sum / total as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub mean_ap: f64,
    /// `None` for classes with no test examples; these are left out of the mean.
    pub per_class: Vec<Option<f64>>,
}

/// Mean over classes of the AP of each class's decision values (`scores` is `n × classes`).
pub fn mean_average_precision<T: Scalar>(scores: &Matrix<T>, truth: &[usize]) -> Result<MapReport> {
    if scores.rows() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.rows(),
            actual: truth.len(),
        });
    }
    let per_class = (0..scores.cols())
        .map(|k| {
            let relevant: Vec<bool> = truth.iter().map(|&t| t == k).collect();
            average_precision(&scores.column(k), &relevant)
        })
        .collect::<Result<Vec<_>>>()?;
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(MapReport {
        mean_ap: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
    })
}
