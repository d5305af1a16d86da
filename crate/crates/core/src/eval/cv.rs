//! Cross-validated scoring: train one model per fold on the training-run
//! groups, score the held-out runs, and aggregate. The tree baselines run
//! under the identical fold plan so every classifier sees the same splits.
//!
//! A fold that fails to train does not sink the whole evaluation — it is
//! recorded as a failure annotation and the aggregate averages the folds
//! that completed. Window-level metrics are complemented by a run-level
//! accuracy where each held-out run is classified by majority vote over
//! its windows.

use ndarray::{Array2, Array3, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{apply_normalizer, FoldPlan, WindowSet};
use crate::error::{Error, Result};
use crate::nn::arch::{build_model, AnyModel, Arch, NUM_CLASSES};
use crate::nn::train::{train_model, TrainOptions};
use crate::nn::Phase;
use crate::uq::{mc_predict, uncertainty_report, McOptions, PredictionDistribution};

use super::metrics::{majority_vote, ConfusionMatrix, MetricSet};
use super::roc::{per_class_roc, MulticlassRoc};
use super::trees::{DecisionTree, ForestConfig, RandomForest, TreeConfig};

/// How to train and score each fold.
#[derive(Debug, Clone)]
pub struct CvOptions {
    pub train: TrainOptions,
    /// Monte-Carlo dropout settings; `None` scores each window with a
    /// single deterministic pass instead.
    pub uq: Option<McOptions>,
    /// Hash of the experiment configuration, stamped into the report.
    pub config_hash: String,
}

/// Everything measured on one fold's held-out runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub n_test_windows: usize,
    pub metrics: MetricSet,
    pub confusion: ConfusionMatrix,
    pub roc: MulticlassRoc,
    /// Final-epoch mean training loss; absent for the tree baselines.
    pub final_train_loss: Option<f64>,
    /// Fraction of held-out runs classified correctly by majority vote.
    pub run_accuracy: f64,
    /// Mean predictive entropy split by correctness; UQ mode only.
    pub mean_entropy_correct: Option<f64>,
    pub mean_entropy_incorrect: Option<f64>,
}

/// A fold that could not be scored, and why.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldFailure {
    pub fold: usize,
    pub detail: String,
}

/// Unweighted means over the folds that completed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    /// Mean of the folds' macro-AUCs, when any fold had one.
    pub macro_auc: Option<f64>,
    pub run_accuracy: f64,
    pub mean_entropy_correct: Option<f64>,
    pub mean_entropy_incorrect: Option<f64>,
}

/// The full result of one classifier × one fold plan × one UQ mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Classifier identifier: an architecture name, `decision-tree`, or
    /// `random-forest`.
    pub model: String,
    pub uq: bool,
    pub config_hash: String,
    pub seed: u64,
    pub uq_seed: Option<u64>,
    pub folds: Vec<FoldOutcome>,
    pub failures: Vec<FoldFailure>,
    /// `None` only when every fold failed.
    pub aggregate: Option<Aggregate>,
    /// Element-wise sum of the completed folds' confusion matrices.
    pub confusion: ConfusionMatrix,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

pub(crate) fn aggregate(folds: &[FoldOutcome]) -> Option<Aggregate> {
    if folds.is_empty() {
        return None;
    }
    let n = folds.len() as f64;
    Some(Aggregate {
        accuracy: folds.iter().map(|f| f.metrics.accuracy).sum::<f64>() / n,
        precision: folds.iter().map(|f| f.metrics.precision).sum::<f64>() / n,
        recall: folds.iter().map(|f| f.metrics.recall).sum::<f64>() / n,
        f_score: folds.iter().map(|f| f.metrics.f_score).sum::<f64>() / n,
        macro_auc: mean_of(folds.iter().filter_map(|f| f.roc.macro_auc)),
        run_accuracy: folds.iter().map(|f| f.run_accuracy).sum::<f64>() / n,
        mean_entropy_correct: mean_of(folds.iter().filter_map(|f| f.mean_entropy_correct)),
        mean_entropy_incorrect: mean_of(folds.iter().filter_map(|f| f.mean_entropy_incorrect)),
    })
}

/// Score one fold's predictions against the truth, including the run-level
/// majority vote.
fn score_fold(
    ws: &WindowSet,
    test_idx: &[usize],
    truth: &[u8],
    predicted: &[u8],
    probs: &[Vec<f64>],
    fold: usize,
    final_train_loss: Option<f64>,
    entropies: Option<(Option<f64>, Option<f64>)>,
) -> Result<FoldOutcome> {
    let confusion = ConfusionMatrix::from_labels(truth, predicted, NUM_CLASSES)?;
    let metrics = confusion.metrics();
    debug_assert_eq!(confusion.total() as usize, test_idx.len());
    let roc = per_class_roc(truth, probs, NUM_CLASSES)?;

    let groups: Vec<u32> = test_idx.iter().map(|&i| ws.group[i]).collect();
    let votes = majority_vote(predicted, &groups, NUM_CLASSES)?;
    let correct_runs = votes
        .iter()
        .filter(|(g, c)| ws.runs[*g as usize].class == *c)
        .count();
    let run_accuracy = correct_runs as f64 / votes.len() as f64;

    let (mean_entropy_correct, mean_entropy_incorrect) = entropies.unwrap_or((None, None));
    Ok(FoldOutcome {
        fold,
        n_test_windows: test_idx.len(),
        metrics,
        confusion,
        roc,
        final_train_loss,
        run_accuracy,
        mean_entropy_correct,
        mean_entropy_incorrect,
    })
}

/// Deterministic single-pass class probabilities, batched to bound memory.
fn eval_probs(model: &mut AnyModel<f32>, x: &ArrayView3<'_, f32>) -> Result<Array2<f32>> {
    let n = x.dim().0;
    let mut rng = ChaCha8Rng::seed_from_u64(0); // Eval draws nothing
    let mut out = Array2::<f32>::zeros((n, NUM_CLASSES));
    let mut start = 0;
    while start < n {
        let end = (start + 256).min(n);
        let xb = x.slice(ndarray::s![start..end, .., ..]).to_owned();
        let probs = model.predict(&xb, Phase::Eval, &mut rng)?;
        out.slice_mut(ndarray::s![start..end, ..]).assign(&probs);
        start = end;
    }
    Ok(out)
}

fn argmax_row(row: &[f64]) -> u8 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best as usize] {
            best = i as u8;
        }
    }
    best
}

/// Score a trained model on one fold's held-out windows with a single
/// deterministic pass per window. `x` must already be normalized.
pub(crate) fn outcome_from_eval_pass(
    ws: &WindowSet,
    test_idx: &[usize],
    truth: &[u8],
    model: &mut AnyModel<f32>,
    x: &ArrayView3<'_, f32>,
    fold: usize,
    final_train_loss: Option<f64>,
) -> Result<FoldOutcome> {
    let probs32 = eval_probs(model, x)?;
    let probs: Vec<Vec<f64>> = probs32
        .axis_iter(Axis(0))
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect();
    let predicted: Vec<u8> = probs.iter().map(|r| argmax_row(r)).collect();
    score_fold(ws, test_idx, truth, &predicted, &probs, fold, final_train_loss, None)
}

/// Score one fold from already-computed MC-dropout distributions.
pub(crate) fn outcome_from_distributions(
    ws: &WindowSet,
    test_idx: &[usize],
    truth: &[u8],
    dists: &[PredictionDistribution],
    fold: usize,
    final_train_loss: Option<f64>,
) -> Result<FoldOutcome> {
    let predicted: Vec<u8> = dists.iter().map(|d| d.predicted_class).collect();
    let probs: Vec<Vec<f64>> = dists.iter().map(|d| d.mean_probs.to_vec()).collect();
    let unc = uncertainty_report(dists, truth)?;
    score_fold(
        ws,
        test_idx,
        truth,
        &predicted,
        &probs,
        fold,
        final_train_loss,
        Some((unc.mean_entropy_correct, unc.mean_entropy_incorrect)),
    )
}

/// Pool fold confusions, aggregate, and stamp identity fields. `uq_seed`
/// doubles as the UQ-mode flag: reports scored from MC-dropout
/// distributions carry their seed, deterministic reports carry `None`.
pub(crate) fn assemble_report(
    model: impl Into<String>,
    uq_seed: Option<u64>,
    config_hash: &str,
    seed: u64,
    folds: Vec<FoldOutcome>,
    failures: Vec<FoldFailure>,
) -> Result<EvalReport> {
    let mut pooled = ConfusionMatrix::zeros(NUM_CLASSES);
    for fold in &folds {
        pooled.merge(&fold.confusion)?;
    }
    Ok(EvalReport {
        model: model.into(),
        uq: uq_seed.is_some(),
        config_hash: config_hash.to_string(),
        seed,
        uq_seed,
        aggregate: aggregate(&folds),
        folds,
        failures,
        confusion: pooled,
    })
}

/// Train and score `arch` on every fold of the plan.
pub fn run_cv(
    arch: Arch,
    ws: &WindowSet,
    plan: &FoldPlan,
    opts: &CvOptions,
) -> Result<EvalReport> {
    ws.validate()?;
    // Plan defects are deliberately not rejected here: a fold that cannot
    // be scored surfaces as a failure annotation on a partial report.
    let mut folds = Vec::new();
    let mut failures = Vec::new();
    for fold in 0..plan.k {
        match run_fold(arch, ws, plan, fold, opts) {
            Ok(outcome) => folds.push(outcome),
            Err(err) => failures.push(FoldFailure {
                fold,
                detail: err.to_string(),
            }),
        }
    }
    let report = assemble_report(
        arch.name(),
        opts.uq.as_ref().map(|u| u.seed),
        &opts.config_hash,
        opts.train.seed,
        folds,
        failures,
    )?;
    // Every window is held out exactly once, so a clean pass must have
    // scored the whole corpus.
    debug_assert!(
        !report.failures.is_empty() || report.confusion.total() as usize == ws.len()
    );
    Ok(report)
}

fn run_fold(
    arch: Arch,
    ws: &WindowSet,
    plan: &FoldPlan,
    fold: usize,
    opts: &CvOptions,
) -> Result<FoldOutcome> {
    let (_, test_idx) = plan.split_windows(ws, fold)?;
    let mut model = build_model::<f32>(arch, opts.train.seed);
    let record = train_model(&mut model, ws, plan, fold, &opts.train)?;

    let (raw_test, truth) = ws.gather(&test_idx);
    let x = apply_normalizer(&record.norm, &raw_test.view())?;
    let final_train_loss = record.train_loss.last().copied();

    if let Some(uq) = &opts.uq {
        let dists = mc_predict(&mut model, &x.view(), uq)?;
        outcome_from_distributions(ws, &test_idx, &truth, &dists, fold, final_train_loss)
    } else {
        outcome_from_eval_pass(
            ws,
            &test_idx,
            &truth,
            &mut model,
            &x.view(),
            fold,
            final_train_loss,
        )
    }
}

/// Flatten each window to one feature row (the representation the tree
/// baselines consume). Trees split one feature at a time, so per-channel
/// standardization — a monotone map per feature — would not change any
/// prediction; windows are used raw.
fn flatten(windows: &Array3<f32>) -> Result<Array2<f32>> {
    let (n, rows, ch) = windows.dim();
    windows
        .to_owned()
        .into_shape_with_order((n, rows * ch))
        .map_err(|e| Error::invalid(format!("cannot flatten windows: {e}")))
}

/// Decision-tree and random-forest results under the identical fold plan.
pub fn baseline_classifiers(
    ws: &WindowSet,
    plan: &FoldPlan,
    seed: u64,
    config_hash: &str,
) -> Result<(EvalReport, EvalReport)> {
    ws.validate()?;
    let mut reports = Vec::new();
    for forest in [false, true] {
        let mut folds = Vec::new();
        let mut failures = Vec::new();
        for fold in 0..plan.k {
            let outcome = (|| -> Result<FoldOutcome> {
                let (train_idx, test_idx) = plan.split_windows(ws, fold)?;
                let (raw_train, train_labels) = ws.gather(&train_idx);
                let (raw_test, truth) = ws.gather(&test_idx);
                let xt = flatten(&raw_train)?;
                let xs = flatten(&raw_test)?;
                let (predicted, probs) = if forest {
                    let rf = RandomForest::fit(
                        &xt.view(),
                        &train_labels,
                        NUM_CLASSES,
                        &ForestConfig::default(),
                        seed,
                    )?;
                    (rf.predict(&xs.view())?, rf.predict_proba(&xs.view())?)
                } else {
                    let dt = DecisionTree::fit(
                        &xt.view(),
                        &train_labels,
                        NUM_CLASSES,
                        &TreeConfig::default(),
                        None,
                    )?;
                    (dt.predict(&xs.view())?, dt.predict_proba(&xs.view())?)
                };
                score_fold(ws, &test_idx, &truth, &predicted, &probs, fold, None, None)
            })();
            match outcome {
                Ok(o) => folds.push(o),
                Err(err) => failures.push(FoldFailure {
                    fold,
                    detail: err.to_string(),
                }),
            }
        }
        reports.push(assemble_report(
            if forest { "random-forest" } else { "decision-tree" },
            None,
            config_hash,
            seed,
            folds,
            failures,
        )?);
    }
    let rf = reports.pop().expect("two reports");
    let dt = reports.pop().expect("two reports");
    Ok((dt, rf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_folds, testutil::synthetic_ws};
    use std::collections::BTreeMap;

    fn quick_train(seed: u64) -> TrainOptions {
        TrainOptions {
            epochs: 1,
            batch_size: 16,
            seed,
            val_fraction: 0.0,
            ..TrainOptions::default()
        }
    }

    #[test]
    fn every_fold_gets_a_record_and_the_aggregate_is_the_mean() {
        let ws = synthetic_ws(2, 4, 1); // 16 runs × 4 windows
        let plan = make_folds(&ws.runs, 2, 9).unwrap();
        let opts = CvOptions {
            train: quick_train(3),
            uq: None,
            config_hash: "cfg".into(),
        };
        let report = run_cv(Arch::SimpleCnn, &ws, &plan, &opts).unwrap();
        assert_eq!(report.folds.len(), 2);
        assert!(report.failures.is_empty());
        assert_eq!(report.model, "simple-cnn");
        assert!(!report.uq);
        let agg = report.aggregate.as_ref().unwrap();
        let hand: f64 = report.folds.iter().map(|f| f.metrics.accuracy).sum::<f64>() / 2.0;
        assert!((agg.accuracy - hand).abs() < 1e-12);
        // Each window is held out exactly once.
        assert_eq!(report.confusion.total() as usize, ws.len());
        let pooled_by_hand: u64 = report.folds.iter().map(|f| f.confusion.total()).sum();
        assert_eq!(report.confusion.total(), pooled_by_hand);
        // Micro identity on the pooled matrix too.
        let m = report.confusion.metrics();
        assert!((m.precision - m.accuracy).abs() < 1e-12);
        assert!((m.recall - m.accuracy).abs() < 1e-12);
        for fold in &report.folds {
            assert!(fold.final_train_loss.is_some());
            assert!(fold.mean_entropy_correct.is_none());
            assert!((0.0..=1.0).contains(&fold.run_accuracy));
        }
    }

    #[test]
    fn uq_mode_attaches_entropy_summaries() {
        let ws = synthetic_ws(2, 4, 2);
        let plan = make_folds(&ws.runs, 2, 9).unwrap();
        let opts = CvOptions {
            train: quick_train(3),
            uq: Some(McOptions {
                k: 3,
                seed: 11,
                retain_passes: false,
            }),
            config_hash: "cfg".into(),
        };
        let report = run_cv(Arch::SimpleCnn, &ws, &plan, &opts).unwrap();
        assert!(report.uq);
        assert_eq!(report.uq_seed, Some(11));
        // Entropy summaries exist wherever the correctness bucket is
        // non-empty; with 32 test windows at least one bucket is.
        for fold in &report.folds {
            assert!(
                fold.mean_entropy_correct.is_some() || fold.mean_entropy_incorrect.is_some()
            );
        }
    }

    #[test]
    fn same_seed_and_config_reproduce_the_report_exactly() {
        let ws = synthetic_ws(2, 3, 3);
        let plan = make_folds(&ws.runs, 2, 9).unwrap();
        let opts = CvOptions {
            train: quick_train(4),
            uq: Some(McOptions {
                k: 2,
                seed: 13,
                retain_passes: false,
            }),
            config_hash: "cfg".into(),
        };
        let a = run_cv(Arch::SimpleCnn, &ws, &plan, &opts).unwrap();
        let b = run_cv(Arch::SimpleCnn, &ws, &plan, &opts).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn a_bad_fold_is_annotated_not_fatal() {
        let ws = synthetic_ws(2, 4, 4);
        // A 3-fold plan over runs that only ever fill folds 0 and 1: fold 2
        // has no test runs, so scoring it must fail and be annotated.
        let mut assignments = BTreeMap::new();
        for (i, run) in ws.runs.iter().enumerate() {
            assignments.insert(run.run_id.clone(), i % 2);
        }
        let plan = FoldPlan { k: 3, assignments };
        let opts = CvOptions {
            train: quick_train(5),
            uq: None,
            config_hash: "cfg".into(),
        };
        let report = run_cv(Arch::SimpleCnn, &ws, &plan, &opts).unwrap();
        assert_eq!(report.folds.len(), 2);
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].fold, 2);
        assert!(report.aggregate.is_some());
    }

    #[test]
    fn baselines_share_the_fold_plan_and_are_deterministic() {
        let ws = synthetic_ws(2, 6, 5);
        let plan = make_folds(&ws.runs, 2, 9).unwrap();
        let (dt, rf) = baseline_classifiers(&ws, &plan, 7, "cfg").unwrap();
        assert_eq!(dt.model, "decision-tree");
        assert_eq!(rf.model, "random-forest");
        assert_eq!(dt.folds.len(), 2);
        assert_eq!(rf.folds.len(), 2);
        assert_eq!(dt.confusion.total() as usize, ws.len());
        for fold in dt.folds.iter().chain(&rf.folds) {
            assert!(fold.final_train_loss.is_none());
        }
        let (dt2, rf2) = baseline_classifiers(&ws, &plan, 7, "cfg").unwrap();
        assert_eq!(
            serde_json::to_string(&dt).unwrap(),
            serde_json::to_string(&dt2).unwrap()
        );
        assert_eq!(
            serde_json::to_string(&rf).unwrap(),
            serde_json::to_string(&rf2).unwrap()
        );
    }
}
