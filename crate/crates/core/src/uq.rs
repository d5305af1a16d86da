//! Monte-Carlo-dropout inference: K stochastic forward passes through a
//! trained network with dropout left live, aggregated into one predictive
//! distribution per window.
//!
//! Sampling keeps batch normalisation on its running (inference)
//! statistics — only the dropout masks vary between passes. Pass p over
//! input chunk c draws its masks from a ChaCha stream derived as
//! `(p << 32) | c`, so results are deterministic for a fixed
//! (seed, K, input set) regardless of how many passes run, and passes may
//! be evaluated in any order. All averaging is done in 64-bit regardless
//! of the model precision so that per-class means cannot mask near-ties.

use ndarray::{Array3, ArrayView2, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::arch::{AnyModel, NUM_CLASSES};
use crate::nn::Phase;

/// Inputs are evaluated this many windows at a time; the chunk index is
/// folded into the mask-stream derivation, so the value is part of the
/// determinism contract and must not be configurable.
const CHUNK_WINDOWS: usize = 256;

/// Options for [`mc_predict`].
#[derive(Debug, Clone)]
pub struct McOptions {
    /// Number of stochastic passes.
    pub k: usize,
    /// Base seed; each pass derives its own mask stream from it.
    pub seed: u64,
    /// Keep every pass's probability row in the output (K×8 per window).
    /// Off by default: it multiplies prediction memory by K.
    pub retain_passes: bool,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            k: 200,
            seed: 0,
            retain_passes: false,
        }
    }
}

/// The ensemble's verdict on one window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionDistribution {
    /// Per-class probabilities averaged over the K passes; sums to 1 up to
    /// 64-bit accumulation error.
    pub mean_probs: [f64; NUM_CLASSES],
    /// Population standard deviation of each class probability across
    /// passes — exactly 0 when the passes are identical.
    pub class_std: [f64; NUM_CLASSES],
    /// `argmax(mean_probs)`, ties broken toward the lowest class index.
    pub predicted_class: u8,
    /// Predictive entropy of `mean_probs` in nats; ranges over [0, ln 8].
    pub entropy: f64,
    /// The raw per-pass rows when [`McOptions::retain_passes`] is set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_pass_probs: Option<Vec<[f64; NUM_CLASSES]>>,
}

/// Shannon entropy of a probability vector in nats, with 0·ln 0 = 0.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// Argmax with ties broken toward the lowest index.
fn argmax(p: &[f64; NUM_CLASSES]) -> u8 {
    let mut best = 0usize;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best as u8
}

/// Collapse a (K, 8) block of per-pass probabilities into one
/// distribution. Welford's recurrence keeps the mean exactly equal to the
/// common value (and the variance exactly zero) when every pass agrees
/// bit-for-bit, which a naive sum-then-divide would not.
fn aggregate_passes(passes: ArrayView2<'_, f64>, retain: bool) -> PredictionDistribution {
    let k = passes.dim().0;
    debug_assert!(k >= 1 && passes.dim().1 == NUM_CLASSES);
    let mut mean = [0.0f64; NUM_CLASSES];
    let mut m2 = [0.0f64; NUM_CLASSES];
    for (n, row) in passes.outer_iter().enumerate() {
        for c in 0..NUM_CLASSES {
            let x = row[c];
            let delta = x - mean[c];
            mean[c] += delta / (n + 1) as f64;
            m2[c] += delta * (x - mean[c]);
        }
    }
    let mut std = [0.0f64; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        std[c] = (m2[c] / k as f64).sqrt();
    }
    PredictionDistribution {
        mean_probs: mean,
        class_std: std,
        predicted_class: argmax(&mean),
        entropy: entropy(&mean),
        per_pass_probs: retain.then(|| {
            passes
                .outer_iter()
                .map(|r| {
                    let mut a = [0.0f64; NUM_CLASSES];
                    for c in 0..NUM_CLASSES {
                        a[c] = r[c];
                    }
                    a
                })
                .collect()
        }),
    }
}

/// Run K dropout-sampled forward passes over already-normalised windows
/// and aggregate each window's passes into a [`PredictionDistribution`].
pub fn mc_predict(
    model: &mut AnyModel<f32>,
    inputs: &ArrayView3<'_, f32>,
    opts: &McOptions,
) -> Result<Vec<PredictionDistribution>> {
    if opts.k < 1 {
        return Err(Error::invalid("mc_predict needs K ≥ 1 passes"));
    }
    if opts.k as u64 > u32::MAX as u64 {
        return Err(Error::invalid("mc_predict pass count exceeds the stream space"));
    }
    let total = inputs.dim().0;
    if total == 0 {
        return Err(Error::invalid("mc_predict called with no windows"));
    }
    let mut out = Vec::with_capacity(total);
    let mut start = 0usize;
    let mut chunk_idx = 0u64;
    while start < total {
        let end = (start + CHUNK_WINDOWS).min(total);
        let chunk = inputs.slice(ndarray::s![start..end, .., ..]).to_owned();
        let b = end - start;
        let mut passes = Array3::<f64>::zeros((b, opts.k, NUM_CLASSES));
        for p in 0..opts.k {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(((p as u64) << 32) | chunk_idx);
            let probs = model.predict(&chunk, Phase::McDropout, &mut rng)?;
            for (w, row) in probs.outer_iter().enumerate() {
                for c in 0..NUM_CLASSES {
                    passes[(w, p, c)] = f64::from(row[c]);
                }
            }
        }
        for w in 0..b {
            out.push(aggregate_passes(
                passes.index_axis(Axis(0), w),
                opts.retain_passes,
            ));
        }
        start = end;
        chunk_idx += 1;
    }
    Ok(out)
}

/// How confident the ensemble was when it was right versus when it was
/// wrong, plus an exportable entropy histogram split the same way.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub n_correct: usize,
    pub n_incorrect: usize,
    /// Mean predictive entropy over correctly classified windows
    /// (absent when none were).
    pub mean_entropy_correct: Option<f64>,
    /// Mean predictive entropy over misclassified windows.
    pub mean_entropy_incorrect: Option<f64>,
    /// Bin edges over [0, ln 8]; `correct` / `incorrect` hold counts for
    /// the `edges.len() - 1` bins between them.
    pub edges: Vec<f64>,
    pub correct: Vec<usize>,
    pub incorrect: Vec<usize>,
}

const HIST_BINS: usize = 16;

/// Split windows by whether the ensemble classified them correctly and
/// summarise predictive entropy on each side.
pub fn uncertainty_report(
    dists: &[PredictionDistribution],
    labels: &[u8],
) -> Result<UncertaintyReport> {
    if dists.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} distributions vs {} labels",
            dists.len(),
            labels.len()
        )));
    }
    let max_h = (NUM_CLASSES as f64).ln();
    let edges: Vec<f64> = (0..=HIST_BINS)
        .map(|i| max_h * i as f64 / HIST_BINS as f64)
        .collect();
    let mut correct = vec![0usize; HIST_BINS];
    let mut incorrect = vec![0usize; HIST_BINS];
    let (mut sum_c, mut n_c) = (0.0f64, 0usize);
    let (mut sum_i, mut n_i) = (0.0f64, 0usize);
    for (d, &label) in dists.iter().zip(labels) {
        let bin = ((d.entropy / max_h * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
        if d.predicted_class == label {
            correct[bin] += 1;
            sum_c += d.entropy;
            n_c += 1;
        } else {
            incorrect[bin] += 1;
            sum_i += d.entropy;
            n_i += 1;
        }
    }
    Ok(UncertaintyReport {
        n_correct: n_c,
        n_incorrect: n_i,
        mean_entropy_correct: (n_c > 0).then(|| sum_c / n_c as f64),
        mean_entropy_incorrect: (n_i > 0).then(|| sum_i / n_i as f64),
        edges,
        correct,
        incorrect,
    })
}
