//! Positive-class precision, recall and F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Metrics {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Scores `pred` against `gold` for class 1. Empty denominators give 0,
/// except that two all-negative vectors score 1 on every metric.
pub fn f1_metrics(gold: &[u8], pred: &[u8]) -> Result<F1Metrics> {
    if gold.len() != pred.len() {
        return Err(Error::Input(format!(
            "{} gold labels vs {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    if let Some(v) = gold.iter().chain(pred).find(|&&v| v > 1) {
        return Err(Error::Input(format!("label {v} is not binary")));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&g, &p) in gold.iter().zip(pred) {
        match (g, p) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (1, 0) => fn_ += 1,
            _ => {}
        }
    }
    if tp + fp + fn_ == 0 {
        return Ok(F1Metrics {
            f1: 1.0,
            precision: 1.0,
            recall: 1.0,
        });
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(F1Metrics {
        f1,
        precision,
        recall,
    })
}
