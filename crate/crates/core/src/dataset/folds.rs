//! Group-aware, class-stratified cross-validation plans.
//!
//! Splits are planned over **runs**, never windows: every window of a run
//! lands on the same side of each fold, so temporally adjacent windows can
//! not straddle train and test. When every class has at least `k` runs the
//! plan is stratified (each fold sees near-proportional class counts);
//! otherwise it degrades to a plain shuffled group split with a warning.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{RunMeta, WindowSet};

/// A k-fold assignment of runs to folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// run_id → fold index in 0..k.
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, run_id: &str) -> Option<usize> {
        self.assignments.get(run_id).copied()
    }

    /// Run ids whose windows form fold `fold`'s test split.
    pub fn test_runs(&self, fold: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Window indices of `ws` on each side of `fold`: (train, test).
    pub fn split_windows(&self, ws: &WindowSet, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if fold >= self.k {
            return Err(Error::invalid(format!(
                "fold {fold} out of range for k = {}",
                self.k
            )));
        }
        let mut run_fold = Vec::with_capacity(ws.runs.len());
        for run in &ws.runs {
            let f = self.fold_of(&run.run_id).ok_or_else(|| {
                Error::invalid(format!("run {} is not in the fold plan", run.run_id))
            })?;
            run_fold.push(f);
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for i in 0..ws.len() {
            if run_fold[ws.group[i] as usize] == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        Ok((train, test))
    }

    /// (fold, class) pairs where the fold's **training** side has no run of
    /// that class. Empty means every fold can learn every class.
    pub fn missing_train_classes(&self, runs: &[RunMeta]) -> Vec<(usize, u8)> {
        let classes: Vec<u8> = {
            let mut c: Vec<u8> = runs.iter().map(|r| r.class).collect();
            c.sort_unstable();
            c.dedup();
            c
        };
        let mut missing = Vec::new();
        for fold in 0..self.k {
            for &class in &classes {
                let covered = runs.iter().any(|r| {
                    r.class == class && self.fold_of(&r.run_id) != Some(fold)
                });
                if !covered {
                    missing.push((fold, class));
                }
            }
        }
        missing
    }

    /// Check that the plan is a partition of exactly the given runs with
    /// every fold non-empty.
    pub fn validate(&self, runs: &[RunMeta]) -> Result<()> {
        if self.assignments.len() != runs.len() {
            return Err(Error::invalid(format!(
                "plan covers {} runs, corpus has {}",
                self.assignments.len(),
                runs.len()
            )));
        }
        let mut fold_sizes = vec![0usize; self.k];
        for run in runs {
            match self.fold_of(&run.run_id) {
                Some(f) if f < self.k => fold_sizes[f] += 1,
                Some(f) => {
                    return Err(Error::invalid(format!(
                        "run {} assigned to fold {f} ≥ k = {}",
                        run.run_id, self.k
                    )))
                }
                None => {
                    return Err(Error::invalid(format!(
                        "run {} missing from the fold plan",
                        run.run_id
                    )))
                }
            }
        }
        if let Some(empty) = fold_sizes.iter().position(|&n| n == 0) {
            return Err(Error::invalid(format!("fold {empty} is empty")));
        }
        Ok(())
    }
}

/// Plan a k-fold group split over `runs`, stratified by class when every
/// class has at least `k` runs.
pub fn make_folds(runs: &[RunMeta], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    if k > runs.len() {
        return Err(Error::invalid(format!(
            "cannot split {} runs into {k} folds",
            runs.len()
        )));
    }
    let mut by_class: BTreeMap<u8, Vec<&RunMeta>> = BTreeMap::new();
    for run in runs {
        by_class.entry(run.class).or_default().push(run);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = BTreeMap::new();
    let stratifiable = by_class.values().all(|members| members.len() >= k);
    if stratifiable {
        // Per class: shuffle, then deal round-robin. The per-class starting
        // offset staggers remainder runs across folds instead of piling
        // every class's extras onto fold 0.
        for (offset, members) in by_class.values_mut().enumerate() {
            members.shuffle(&mut rng);
            for (i, run) in members.iter().enumerate() {
                let prev = assignments.insert(run.run_id.clone(), (i + offset) % k);
                if prev.is_some() {
                    return Err(Error::invalid(format!("duplicate run id {}", run.run_id)));
                }
            }
        }
    } else {
        let (class, n) = by_class
            .iter()
            .map(|(c, m)| (*c, m.len()))
            .min_by_key(|&(_, n)| n)
            .expect("runs is non-empty");
        eprintln!(
            "warning: class {class} has only {n} runs (< {k} folds); \
             using a plain group split instead of a stratified one"
        );
        let mut shuffled: Vec<&RunMeta> = runs.iter().collect();
        shuffled.shuffle(&mut rng);
        for (i, run) in shuffled.iter().enumerate() {
            let prev = assignments.insert(run.run_id.clone(), i % k);
            if prev.is_some() {
                return Err(Error::invalid(format!("duplicate run id {}", run.run_id)));
            }
        }
    }
    let plan = FoldPlan { k, assignments };
    for (fold, class) in plan.missing_train_classes(runs) {
        eprintln!("warning: fold {fold}'s training split has no run of class {class}");
    }
    Ok(plan)
}
