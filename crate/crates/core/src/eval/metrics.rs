//! Confusion matrices and the classification metrics derived from pooled
//! one-vs-rest counts.
//!
//! Accuracy is always trace/total. For two classes, precision/recall/F
//! follow the usual convention that class 1 is "positive"; for three or
//! more classes they are micro-averages over the one-vs-rest
//! decompositions, which makes precision = recall = F = accuracy — an
//! identity this module asserts on every report rather than treating the
//! four numbers as independent.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row = true class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    /// Flattened row-major counts, `counts[true * n_classes + pred]`.
    pub counts: Vec<u64>,
}

/// One class's one-vs-rest contingency counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OvrCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

/// The four headline numbers for one classifier on one test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

impl ConfusionMatrix {
    pub fn from_labels(truth: &[u8], predicted: &[u8], n_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::invalid(format!(
                "{} true labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        if truth.is_empty() {
            return Err(Error::invalid("cannot score an empty test set"));
        }
        let mut counts = vec![0u64; n_classes * n_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t as usize >= n_classes || p as usize >= n_classes {
                return Err(Error::invalid(format!(
                    "label pair ({t}, {p}) out of range for {n_classes} classes"
                )));
            }
            counts[t as usize * n_classes + p as usize] += 1;
        }
        Ok(ConfusionMatrix { n_classes, counts })
    }

    /// All-zero matrix, for accumulating fold results.
    pub fn zeros(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    /// Add another matrix's counts into this one.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.n_classes != other.n_classes {
            return Err(Error::invalid(format!(
                "cannot merge a {}-class matrix into a {}-class one",
                other.n_classes, self.n_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Correctly classified count (the diagonal).
    pub fn correct(&self) -> u64 {
        (0..self.n_classes).map(|c| self.get(c, c)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total() as f64
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.n_classes).map(|p| self.get(truth, p)).sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.n_classes).map(|t| self.get(t, pred)).sum()
    }

    /// One-vs-rest counts for a single class.
    pub fn ovr(&self, class: usize) -> OvrCounts {
        let tp = self.get(class, class);
        let fp = self.col_sum(class) - tp;
        let fn_ = self.row_sum(class) - tp;
        let tn = self.total() - tp - fp - fn_;
        OvrCounts { tp, fp, fn_, tn }
    }

    /// As a dense matrix for rendering.
    pub fn to_array(&self) -> Array2<u64> {
        Array2::from_shape_vec((self.n_classes, self.n_classes), self.counts.clone())
            .expect("n² counts")
    }

    /// The headline metrics; see the module docs for the binary vs
    /// multiclass convention.
    pub fn metrics(&self) -> MetricSet {
        let accuracy = self.accuracy();
        let (tp, fp, fn_) = if self.n_classes == 2 {
            let c = self.ovr(1);
            (c.tp, c.fp, c.fn_)
        } else {
            let mut pooled = (0u64, 0u64, 0u64);
            for class in 0..self.n_classes {
                let c = self.ovr(class);
                pooled.0 += c.tp;
                pooled.1 += c.fp;
                pooled.2 += c.fn_;
            }
            pooled
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f_score = ratio(2 * tp, 2 * tp + fp + fn_);
        let m = MetricSet { accuracy, precision, recall, f_score };
        if self.n_classes > 2 {
            // Pooled one-vs-rest counts make the three ratios collapse to
            // the accuracy; a divergence means the counts are wrong.
            debug_assert!(
                (m.precision - m.accuracy).abs() < 1e-12
                    && (m.recall - m.accuracy).abs() < 1e-12
                    && (m.f_score - m.accuracy).abs() < 1e-12,
                "micro metric identity violated: {m:?}"
            );
        }
        m
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Majority vote over groups of window predictions (used to report
/// run-level accuracy next to window-level accuracy). Vote ties break
/// toward the lowest class index.
pub fn majority_vote(predicted: &[u8], groups: &[u32], n_classes: usize) -> Result<Vec<(u32, u8)>> {
    if predicted.len() != groups.len() {
        return Err(Error::invalid("prediction/group length mismatch"));
    }
    let mut per_group: std::collections::BTreeMap<u32, Vec<u64>> = std::collections::BTreeMap::new();
    for (&p, &g) in predicted.iter().zip(groups) {
        if p as usize >= n_classes {
            return Err(Error::invalid(format!("prediction {p} out of range")));
        }
        per_group.entry(g).or_insert_with(|| vec![0; n_classes])[p as usize] += 1;
    }
    Ok(per_group
        .into_iter()
        .map(|(g, hist)| {
            let mut best = 0usize;
            for (c, &n) in hist.iter().enumerate().skip(1) {
                if n > hist[best] {
                    best = c;
                }
            }
            (g, best as u8)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions_score_one() {
        let labels = [0u8, 1, 2, 3, 4, 5, 6, 7];
        let cm = ConfusionMatrix::from_labels(&labels, &labels, 8).unwrap();
        let m = cm.metrics();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.f_score, 1.0);
        for t in 0..8 {
            for p in 0..8 {
                assert_eq!(cm.get(t, p), u64::from(t == p));
            }
        }
    }

    #[test]
    fn binary_hand_count() {
        // true (1,1,0,0), predicted (1,0,0,0): TP=1, FN=1, FP=0, TN=2.
        let cm = ConfusionMatrix::from_labels(&[1, 1, 0, 0], &[1, 0, 0, 0], 2).unwrap();
        let c = cm.ovr(1);
        assert_eq!((c.tp, c.fn_, c.fp, c.tn), (1, 1, 0, 2));
        let m = cm.metrics();
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 0.5);
        assert!((m.f_score - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_predictor_on_balanced_classes() {
        let truth: Vec<u8> = (0..8).flat_map(|c| [c; 5]).collect();
        let pred = vec![3u8; truth.len()];
        let cm = ConfusionMatrix::from_labels(&truth, &pred, 8).unwrap();
        assert_eq!(cm.metrics().accuracy, 1.0 / 8.0);
    }

    #[test]
    fn bad_labels_rejected() {
        assert!(ConfusionMatrix::from_labels(&[0, 9], &[0, 0], 8).is_err());
        assert!(ConfusionMatrix::from_labels(&[0], &[0, 0], 8).is_err());
        assert!(ConfusionMatrix::from_labels(&[], &[], 8).is_err());
    }

    #[test]
    fn votes_follow_the_group_majority() {
        let pred = [0u8, 0, 1, 2, 2, 2];
        let groups = [7u32, 7, 7, 9, 9, 9];
        let votes = majority_vote(&pred, &groups, 8).unwrap();
        assert_eq!(votes, vec![(7, 0), (9, 2)]);
        // A 1-1 tie goes to the lower class.
        let votes = majority_vote(&[5, 3], &[1, 1], 8).unwrap();
        assert_eq!(votes, vec![(1, 3)]);
    }

    proptest! {
        /// Micro precision, recall, and F all equal accuracy on
        /// single-label multiclass data.
        #[test]
        fn micro_identity(
            pairs in proptest::collection::vec((0u8..8, 0u8..8), 1..200)
        ) {
            let truth: Vec<u8> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            let cm = ConfusionMatrix::from_labels(&truth, &pred, 8).unwrap();
            let m = cm.metrics();
            prop_assert!((m.precision - m.accuracy).abs() < 1e-12);
            prop_assert!((m.recall - m.accuracy).abs() < 1e-12);
            prop_assert!((m.f_score - m.accuracy).abs() < 1e-12);
            prop_assert_eq!(cm.total() as usize, truth.len());
        }
    }
}
