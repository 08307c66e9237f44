use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{DgodeError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<String>,
    pub per_class_f1: Vec<f64>,
    pub support: Vec<usize>,
    pub weighted_f1: f64,
    pub accuracy: f64,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
}

impl MetricsReport {
    pub fn from_confusion(classes: Vec<String>, confusion: Vec<Vec<usize>>) -> Result<Self> {
        let k = classes.len();
        if confusion.len() != k || confusion.iter().any(|r| r.len() != k) {
            return Err(DgodeError::Dimension(format!("confusion matrix must be {k}x{k}")));
        }
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(DgodeError::EmptyInput("no predictions to score".into()));
        }
        let support: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
        let per_class_f1: Vec<f64> = (0..k)
            .map(|c| {
                let tp = confusion[c][c];
                let fp: usize = (0..k).filter(|&r| r != c).map(|r| confusion[r][c]).sum();
                let fn_: usize = support[c] - tp;
                let denom = 2 * tp + fp + fn_;
                if denom == 0 {
                    0.0
                } else {
                    (2 * tp) as f64 / denom as f64
                }
            })
            .collect();
        let weighted_f1 = per_class_f1.iter().zip(&support).map(|(f, &s)| f * s as f64).sum::<f64>() / total as f64;
        let accuracy = (0..k).map(|c| confusion[c][c]).sum::<usize>() as f64 / total as f64;
        Ok(Self { classes, per_class_f1, support, weighted_f1, accuracy, confusion })
    }

    pub fn from_predictions(classes: Vec<String>, labels: &[usize], predictions: &[usize]) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(DgodeError::Dimension(format!("{} labels for {} predictions", labels.len(), predictions.len())));
        }
        let k = classes.len();
        let mut confusion = vec![vec![0; k]; k];
        for (&t, &p) in labels.iter().zip(predictions) {
            for c in [t, p] {
                if c >= k {
                    return Err(DgodeError::LabelOutOfRange { label: c, classes: k });
                }
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(classes, confusion)
    }
}

/// Per-class F1 columns followed by W-F1, in percent, then accuracy and
/// the confusion matrix.
pub fn format_metrics_table(method: &str, report: &MetricsReport) -> String {
    let width = report.classes.iter().map(|c| c.len()).max().unwrap_or(0).max(6);
    let label_width = method.len().max(6);
    let mut out = String::new();
    let _ = write!(out, "{:<label_width$}", "Method");
    for c in &report.classes {
        let _ = write!(out, " {c:>width$}");
    }
    let _ = writeln!(out, " {:>width$}", "W-F1");
    let _ = write!(out, "{method:<label_width$}");
    for f in &report.per_class_f1 {
        let _ = write!(out, " {:>width$.1}", 100.0 * f);
    }
    let _ = writeln!(out, " {:>width$.1}", 100.0 * report.weighted_f1);
    let _ = writeln!(out);
    let _ = writeln!(out, "accuracy {:.4}", report.accuracy);
    let _ = writeln!(out, "weighted_f1 {:.6}", report.weighted_f1);
    let _ = writeln!(out);
    let first = width.max(9);
    let _ = write!(out, "{:<first$}", "true\\pred");
    for c in &report.classes {
        let _ = write!(out, " {c:>width$}");
    }
    let _ = writeln!(out);
    for (c, row) in report.classes.iter().zip(&report.confusion) {
        let _ = write!(out, "{c:<first$}");
        for v in row {
            let _ = write!(out, " {v:>width$}");
        }
        let _ = writeln!(out);
    }
    out
}
