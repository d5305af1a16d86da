//! Mini-batch Adam training over one fold of a window set.
//!
//! The loop is deterministic for a fixed seed: example order comes from a
//! counter-mode RNG whose stream index is the epoch, dropout draws from the
//! same per-epoch stream, and all matrix products are single-threaded.
//! Channel statistics are fit on the fold's training windows only and
//! travel with the returned record so inference normalizes identically.

use ndarray::{Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, HashSet};

use crate::dataset::{apply_normalizer, fit_normalizer, FoldPlan, NormStats, WindowSet};
use crate::error::{Error, Result};

use super::arch::AnyModel;
use super::layers::softmax_cross_entropy;
use super::param::AdamConfig;
use super::{HasParams, Phase};

/// RNG stream reserved for the validation-run draw (epochs use 0..n).
const VAL_SPLIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Fraction of training *runs* per class held out for validation-loss
    /// tracking (floor; small classes simply get no validation runs).
    pub val_fraction: f64,
    /// Stop after any epoch whose training-set accuracy (deterministic
    /// forward) reaches this level. Used by capacity probes.
    pub stop_at_train_accuracy: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 50,
            batch_size: 32,
            seed: 0,
            adam: AdamConfig::default(),
            val_fraction: 0.1,
            stop_at_train_accuracy: None,
        }
    }
}

/// What a training run measured, plus everything inference needs to
/// reproduce its preprocessing.
#[derive(Debug, Clone)]
pub struct TrainRecord {
    /// Mean cross-entropy per epoch over the training batches.
    pub train_loss: Vec<f64>,
    /// Mean cross-entropy on the held-out runs, when any were held out.
    pub val_loss: Vec<Option<f64>>,
    /// Run ids held out for validation.
    pub val_runs: Vec<String>,
    /// Channel statistics fit on the fold's training windows.
    pub norm: NormStats,
    /// Total optimizer steps taken.
    pub steps: usize,
}

/// Contiguous batch spans over `n` shuffled positions: full `bs`-sized
/// batches, except that a would-be final batch of a single example is
/// folded into its predecessor (batch statistics need at least two rows).
fn batch_spans(n: usize, bs: usize) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + bs).min(n);
        spans.push((start, end));
        start = end;
    }
    if spans.len() >= 2 && spans.last().map(|&(s, e)| e - s) == Some(1) {
        let (_, e) = spans.pop().unwrap();
        spans.last_mut().unwrap().1 = e;
    }
    spans
}

fn mean_loss_batched(
    model: &mut AnyModel<f32>,
    x: &Array3<f32>,
    labels: &[u8],
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0); // Eval draws nothing
    let n = x.dim().0;
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + 256).min(n);
        let xb = x.slice(ndarray::s![start..end, .., ..]).to_owned();
        let logits = model.forward_logits(&xb, Phase::Eval, &mut rng)?;
        let (loss, _, _) = softmax_cross_entropy(&logits, &labels[start..end]);
        total += loss as f64 * (end - start) as f64;
        start = end;
    }
    Ok(total / n as f64)
}

fn train_accuracy(model: &mut AnyModel<f32>, x: &Array3<f32>, labels: &[u8]) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = x.dim().0;
    let mut correct = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + 256).min(n);
        let xb = x.slice(ndarray::s![start..end, .., ..]).to_owned();
        let probs = model.predict(&xb, Phase::Eval, &mut rng)?;
        for (row, &label) in probs.rows().into_iter().zip(&labels[start..end]) {
            let arg = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if arg == label as usize {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f64 / n as f64)
}

/// Train `model` on the fold's training split. See the module docs for the
/// determinism contract.
pub fn train_model(
    model: &mut AnyModel<f32>,
    ws: &WindowSet,
    plan: &FoldPlan,
    fold: usize,
    opts: &TrainOptions,
) -> Result<TrainRecord> {
    if opts.epochs == 0 {
        return Err(Error::invalid("epochs must be ≥ 1"));
    }
    if opts.batch_size < 2 {
        return Err(Error::invalid(
            "batch size must be ≥ 2 (batch statistics need two rows)",
        ));
    }
    if !(0.0..1.0).contains(&opts.val_fraction) {
        return Err(Error::invalid("val_fraction must be in [0, 1)"));
    }
    let (train_idx, _) = plan.split_windows(ws, fold)?;
    if train_idx.is_empty() {
        return Err(Error::invalid(format!("fold {fold} has no training windows")));
    }

    // Channel statistics come from the fold's full training split; the
    // validation carve-out below is only tracked, never selected on, so it
    // stays inside the fitting set.
    let (raw_train_all, _) = ws.gather(&train_idx);
    let norm = fit_normalizer(&raw_train_all.view())?;

    // Hold out floor(val_fraction · runs) runs per class for loss tracking.
    let train_run_ids: HashSet<u32> = train_idx.iter().map(|&i| ws.group[i]).collect();
    let mut by_class: BTreeMap<u8, Vec<u32>> = BTreeMap::new();
    for &run in &train_run_ids {
        by_class.entry(ws.runs[run as usize].class).or_default().push(run);
    }
    let mut val_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    val_rng.set_stream(VAL_SPLIT_STREAM);
    let mut val_runs: HashSet<u32> = HashSet::new();
    for runs in by_class.values_mut() {
        runs.sort_unstable();
        runs.shuffle(&mut val_rng);
        let take = (opts.val_fraction * runs.len() as f64).floor() as usize;
        val_runs.extend(runs.iter().take(take));
    }

    let fit_idx: Vec<usize> = train_idx
        .iter()
        .copied()
        .filter(|&i| !val_runs.contains(&ws.group[i]))
        .collect();
    let val_idx: Vec<usize> = train_idx
        .iter()
        .copied()
        .filter(|&i| val_runs.contains(&ws.group[i]))
        .collect();
    if fit_idx.is_empty() {
        return Err(Error::invalid("validation carve-out consumed every training run"));
    }

    let (raw_fit, fit_labels) = ws.gather(&fit_idx);
    let fit_x = apply_normalizer(&norm, &raw_fit.view())?;
    let (val_x, val_labels) = if val_idx.is_empty() {
        (None, Vec::new())
    } else {
        let (raw_val, val_labels) = ws.gather(&val_idx);
        (Some(apply_normalizer(&norm, &raw_val.view())?), val_labels)
    };

    let n = fit_idx.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut record = TrainRecord {
        train_loss: Vec::with_capacity(opts.epochs),
        val_loss: Vec::with_capacity(opts.epochs),
        val_runs: val_runs
            .iter()
            .map(|&r| ws.runs[r as usize].run_id.clone())
            .collect(),
        norm,
        steps: 0,
    };
    record.val_runs.sort();

    for epoch in 0..opts.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_no, &(s, e)) in batch_spans(n, opts.batch_size).iter().enumerate() {
            let rows: Vec<usize> = order[s..e].to_vec();
            let xb = fit_x.select(Axis(0), &rows);
            let yb: Vec<u8> = rows.iter().map(|&i| fit_labels[i]).collect();
            model.zero_grads();
            let logits = model.forward_logits(&xb, Phase::Train, &mut rng)?;
            let (loss, _, dlogits) = softmax_cross_entropy(&logits, &yb);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_no });
            }
            model.backward(&dlogits);
            record.steps += 1;
            model.step(&opts.adam, record.steps);
            epoch_loss += loss as f64 * rows.len() as f64;
        }
        record.train_loss.push(epoch_loss / n as f64);
        let val = match &val_x {
            Some(vx) => Some(mean_loss_batched(model, vx, &val_labels)?),
            None => None,
        };
        record.val_loss.push(val);
        if let Some(target) = opts.stop_at_train_accuracy {
            if train_accuracy(model, &fit_x, &fit_labels)? >= target {
                break;
            }
        }
    }
    Ok(record)
}
