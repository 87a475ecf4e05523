//! Classification metrics: accuracy and macro-averaged precision, recall
//! and F1 over the two classes.
//!
//! Per-class precision and recall are computed from the 2×2 confusion
//! matrix and then averaged; per-class F1 is the harmonic mean of that
//! class's precision and recall, averaged afterwards. A class that never
//! appears in the predictions has undefined precision, which is counted as
//! 0 and reported so callers can log it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub const ZERO: Metrics = Metrics {
        accuracy: 0.0,
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
}

/// Per-class breakdown plus the macro summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDetail {
    pub summary: Metrics,
    pub per_class_precision: [f64; 2],
    pub per_class_recall: [f64; 2],
    pub per_class_f1: [f64; 2],
    /// Classes whose precision was undefined (no predictions of that
    /// class) and therefore counted as 0.
    pub undefined_precision: Vec<usize>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("cannot compute metrics over empty inputs")]
    EmptyInput,
    #[error("predictions ({predictions}) and labels ({labels}) differ in length")]
    LengthMismatch { predictions: usize, labels: usize },
}

/// Accuracy plus macro precision/recall/F1 with the per-class table.
pub fn compute_metrics_detailed(
    predictions: &[Label],
    labels: &[Label],
) -> Result<MetricsDetail, MetricsError> {
    if predictions.is_empty() || labels.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }

    // confusion[predicted][actual]
    let mut confusion = [[0usize; 2]; 2];
    for (p, l) in predictions.iter().zip(labels) {
        confusion[p.index()][l.index()] += 1;
    }
    let correct = confusion[0][0] + confusion[1][1];
    let accuracy = correct as f64 / labels.len() as f64;

    let mut per_class_precision = [0.0; 2];
    let mut per_class_recall = [0.0; 2];
    let mut per_class_f1 = [0.0; 2];
    let mut undefined_precision = Vec::new();
    for c in 0..2 {
        let tp = confusion[c][c];
        let predicted = confusion[c][0] + confusion[c][1];
        let actual = confusion[0][c] + confusion[1][c];
        let precision = if predicted == 0 {
            undefined_precision.push(c);
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        let recall = if actual == 0 { 0.0 } else { tp as f64 / actual as f64 };
        per_class_precision[c] = precision;
        per_class_recall[c] = recall;
        per_class_f1[c] = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
    }

    Ok(MetricsDetail {
        summary: Metrics {
            accuracy,
            precision: (per_class_precision[0] + per_class_precision[1]) / 2.0,
            recall: (per_class_recall[0] + per_class_recall[1]) / 2.0,
            f1: (per_class_f1[0] + per_class_f1[1]) / 2.0,
        },
        per_class_precision,
        per_class_recall,
        per_class_f1,
        undefined_precision,
    })
}

/// The macro summary alone.
pub fn compute_metrics(predictions: &[Label], labels: &[Label]) -> Result<Metrics, MetricsError> {
    Ok(compute_metrics_detailed(predictions, labels)?.summary)
}

/// Arithmetic mean and population standard deviation over repeat rows.
pub fn mean_std(rows: &[Metrics]) -> (Metrics, Metrics) {
    let n = rows.len().max(1) as f64;
    let mean = Metrics {
        accuracy: rows.iter().map(|m| m.accuracy).sum::<f64>() / n,
        precision: rows.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: rows.iter().map(|m| m.recall).sum::<f64>() / n,
        f1: rows.iter().map(|m| m.f1).sum::<f64>() / n,
    };
    let var = |f: fn(&Metrics) -> f64, mu: f64| -> f64 {
        (rows.iter().map(|m| (f(m) - mu).powi(2)).sum::<f64>() / n).sqrt()
    };
    let std = Metrics {
        accuracy: var(|m| m.accuracy, mean.accuracy),
        precision: var(|m| m.precision, mean.precision),
        recall: var(|m| m.recall, mean.recall),
        f1: var(|m| m.f1, mean.f1),
    };
    (mean, std)
}
