//! One-vs-rest ROC curves and AUC by threshold sweep.
//!
//! The sweep visits each distinct score once, descending, so tied scores
//! move the curve diagonally in a single step; trapezoidal integration of
//! that polyline gives exactly the pair-counting statistic
//! P(score⁺ > score⁻) + ½ P(score⁺ = score⁻).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ROC polyline for one class, from (0, 0) to (1, 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocCurve {
    /// (false-positive rate, true-positive rate) vertices.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Per-class curves plus their unweighted mean AUC. A class with no
/// positive or no negative examples in the test set has no defined curve
/// and is excluded from the macro average.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MulticlassRoc {
    pub per_class: Vec<Option<RocCurve>>,
    pub macro_auc: Option<f64>,
}

/// ROC for one binary problem given raw scores (higher = more positive).
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Result<RocCurve> {
    if scores.len() != positive.len() {
        return Err(Error::invalid("score/label length mismatch"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("ROC scores must be finite"));
    }
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate(
            "ROC needs at least one positive and one negative example".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        // Consume the whole tie group at this score in one step.
        let score = scores[order[i]];
        let (mut dtp, mut dfp) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == score {
            if positive[order[i]] {
                dtp += 1;
            } else {
                dfp += 1;
            }
            i += 1;
        }
        let (x0, y0) = *points.last().unwrap();
        tp += dtp;
        fp += dfp;
        let x1 = fp as f64 / neg as f64;
        let y1 = tp as f64 / pos as f64;
        auc += (x1 - x0) * (y0 + y1) / 2.0;
        points.push((x1, y1));
    }
    Ok(RocCurve { points, auc })
}

/// One-vs-rest ROC per class from a probability matrix with one row per
/// sample; `probs[i][c]` scores sample i for class c.
pub fn per_class_roc(truth: &[u8], probs: &[Vec<f64>], n_classes: usize) -> Result<MulticlassRoc> {
    if truth.len() != probs.len() {
        return Err(Error::invalid("label/probability length mismatch"));
    }
    if probs.iter().any(|row| row.len() != n_classes) {
        return Err(Error::invalid(format!(
            "probability rows must have {n_classes} entries"
        )));
    }
    let mut per_class = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let scores: Vec<f64> = probs.iter().map(|row| row[class]).collect();
        let positive: Vec<bool> = truth.iter().map(|&t| t as usize == class).collect();
        match roc_curve(&scores, &positive) {
            Ok(c) => per_class.push(Some(c)),
            Err(Error::Degenerate(_)) => per_class.push(None),
            Err(e) => return Err(e),
        }
    }
    let defined: Vec<f64> = per_class
        .iter()
        .flatten()
        .map(|c| c.auc)
        .collect();
    let macro_auc = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    Ok(MulticlassRoc { per_class, macro_auc })
}
