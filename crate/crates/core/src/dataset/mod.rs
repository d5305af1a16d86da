//! Windowed, labeled datasets and leakage-safe cross-validation plans.
//!
//! Traces are cut into fixed-length windows (default 125 samples × 5
//! channels, 1.5625 s at 80 Hz). Windows are stored **raw**; per-channel
//! z-score statistics are fitted per fold on that fold's training runs
//! only, so no test information ever reaches the scaler. Splitting is
//! group-aware at run granularity: all windows of one run land on the
//! same side of every fold, because windows cut from a single run are
//! temporally correlated and a window-level split would leak.

mod corpus;
mod folds;
mod normalize;
mod reshape;
mod window;

pub use corpus::{build_corpus, load_dataset, save_dataset};
pub use folds::{make_folds, FoldPlan};
pub use normalize::{apply_normalizer, fit_normalizer, NormStats};
pub use reshape::{reshape_for_convlstm, restore_from_convlstm};
pub use window::{slide_windows, window_count};

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::turbine::N_CHANNELS;

/// Source-run metadata: the group identity used for splitting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    /// Class label 0..=7 shared by every window of the run.
    pub class: u8,
}

/// A windowed corpus: N windows of `window_length` × 5, one label and one
/// source run per window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    /// Raw (un-normalized) windows, shape (N, window_length, 5).
    pub windows: Array3<f32>,
    /// Class labels 0..=7, one per window.
    pub labels: Vec<u8>,
    /// Index into `runs` for each window; the group id for splitting.
    pub group: Vec<u32>,
    /// Distinct source runs, in corpus order.
    pub runs: Vec<RunMeta>,
    pub window_length: usize,
    pub stride: usize,
    /// Statistics the windows were normalized with, or `None` while raw.
    pub norm: Option<NormStats>,
}

impl WindowSet {
    /// Number of windows.
    pub fn len(&self) -> usize {
        self.windows.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Run identifier of window `i`.
    pub fn group_id(&self, i: usize) -> &str {
        &self.runs[self.group[i] as usize].run_id
    }

    /// Windows per class, index 0..=7.
    pub fn class_histogram(&self) -> [usize; 8] {
        let mut hist = [0usize; 8];
        for &label in &self.labels {
            hist[label as usize] += 1;
        }
        hist
    }

    /// Materialize the subset at `indices` (windows stay in given order).
    pub fn gather(&self, indices: &[usize]) -> (Array3<f32>, Vec<u8>) {
        let mut out = Array3::zeros((indices.len(), self.window_length, N_CHANNELS));
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            out.index_axis_mut(Axis(0), row)
                .assign(&self.windows.index_axis(Axis(0), i));
            labels.push(self.labels[i]);
        }
        (out, labels)
    }

    /// Check the structural invariants (shapes, index ranges, label
    /// agreement between windows and their source runs).
    pub fn validate(&self) -> Result<()> {
        let (n, w, c) = self.windows.dim();
        if c != N_CHANNELS {
            return Err(Error::ShapeMismatch {
                expected: format!("(N, {}, {N_CHANNELS})", self.window_length),
                got: format!("({n}, {w}, {c})"),
            });
        }
        if w != self.window_length {
            return Err(Error::invalid(format!(
                "window axis is {w} but window_length says {}",
                self.window_length
            )));
        }
        if self.labels.len() != n || self.group.len() != n {
            return Err(Error::invalid(format!(
                "windows/labels/group lengths disagree: {n}/{}/{}",
                self.labels.len(),
                self.group.len()
            )));
        }
        for i in 0..n {
            let g = self.group[i] as usize;
            let run = self
                .runs
                .get(g)
                .ok_or_else(|| Error::invalid(format!("window {i} references run {g}")))?;
            if run.class != self.labels[i] {
                return Err(Error::invalid(format!(
                    "window {i} labeled {} but its run {} is class {}",
                    self.labels[i], run.run_id, run.class
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_set() -> WindowSet {
        WindowSet {
            windows: Array3::zeros((4, 3, N_CHANNELS)),
            labels: vec![0, 0, 2, 2],
            group: vec![0, 0, 1, 1],
            runs: vec![
                RunMeta {
                    run_id: "healthy-s1".into(),
                    class: 0,
                },
                RunMeta {
                    run_id: "f2-s9".into(),
                    class: 2,
                },
            ],
            window_length: 3,
            stride: 3,
            norm: None,
        }
    }

    #[test]
    fn valid_set_passes_and_reports() {
        let ws = tiny_set();
        ws.validate().unwrap();
        assert_eq!(ws.len(), 4);
        assert_eq!(ws.group_id(3), "f2-s9");
        let hist = ws.class_histogram();
        assert_eq!(hist[0], 2);
        assert_eq!(hist[2], 2);
        assert_eq!(hist.iter().sum::<usize>(), 4);
    }

    #[test]
    fn label_disagreement_is_caught() {
        let mut ws = tiny_set();
        ws.labels[2] = 5;
        assert!(ws.validate().is_err());
    }

    #[test]
    fn dangling_group_is_caught() {
        let mut ws = tiny_set();
        ws.group[0] = 7;
        assert!(ws.validate().is_err());
    }

    #[test]
    fn gather_keeps_label_alignment() {
        let mut ws = tiny_set();
        ws.windows[(2, 0, 0)] = 8.5;
        let (sub, labels) = ws.gather(&[2, 0]);
        assert_eq!(sub.dim(), (2, 3, N_CHANNELS));
        assert_eq!(sub[(0, 0, 0)], 8.5);
        assert_eq!(labels, vec![2, 0]);
    }
}
