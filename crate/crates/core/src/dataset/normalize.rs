//! Per-channel z-score normalization with leakage-safe fitting.
//!
//! Statistics are fitted on the training windows of the active fold and
//! nothing else; applying them to test windows therefore cannot leak test
//! information into the scaling. Accumulation runs in f64 even though the
//! windows are f32, so channel means in the 10⁴ range (generator torque)
//! keep full precision.

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold below which a channel's spread counts as zero.
const DEGENERATE_STD: f64 = 1e-12;

/// Per-channel location/scale fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Fit per-channel mean and population standard deviation over every sample
/// of every window in `train`.
///
/// A degenerate channel (zero spread) gets the identity transform — mean 0,
/// std 1 — so it passes through [`apply_normalizer`] unchanged instead of
/// amplifying rounding noise.
pub fn fit_normalizer(train: &ArrayView3<f32>) -> Result<NormStats> {
    let (n, w, channels) = train.dim();
    if n == 0 || w == 0 {
        return Err(Error::invalid("cannot fit a normalizer on an empty set"));
    }
    let count = (n * w) as f64;
    let mut mean = vec![0.0f64; channels];
    for window in train.outer_iter() {
        for row in window.outer_iter() {
            for (c, &v) in row.iter().enumerate() {
                mean[c] += v as f64;
            }
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    let mut var = vec![0.0f64; channels];
    for window in train.outer_iter() {
        for row in window.outer_iter() {
            for (c, &v) in row.iter().enumerate() {
                let d = v as f64 - mean[c];
                var[c] += d * d;
            }
        }
    }
    let mut std = Vec::with_capacity(channels);
    for (c, v) in var.iter().enumerate() {
        let s = (v / count).sqrt();
        if s < DEGENERATE_STD {
            mean[c] = 0.0;
            std.push(1.0);
        } else {
            std.push(s);
        }
    }
    Ok(NormStats { mean, std })
}

/// Z-score `windows` with previously fitted `stats`.
pub fn apply_normalizer(stats: &NormStats, windows: &ArrayView3<f32>) -> Result<Array3<f32>> {
    let channels = windows.dim().2;
    if stats.mean.len() != channels || stats.std.len() != channels {
        return Err(Error::ShapeMismatch {
            expected: format!("{} channels", stats.mean.len()),
            got: format!("{channels} channels"),
        });
    }
    let mut out = windows.to_owned();
    for mut window in out.outer_iter_mut() {
        for mut row in window.outer_iter_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = ((*v as f64 - stats.mean[c]) / stats.std[c]) as f32;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random windows with channel-dependent location and scale, including a
    /// torque-sized channel to exercise the f64 accumulation.
    fn sample_windows(n: usize, seed: u64) -> Array3<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = [1.0, 40_000.0, 5.0, 5.0, 5.0];
        let offset = [12.0, 38_000.0, 20.0, 20.0, 20.0];
        Array3::from_shape_fn((n, 25, 5), |(_, _, c)| {
            (offset[c] + scale[c] * rng.gen_range(-1.0..1.0f64)) as f32
        })
    }

    /// f64 per-channel mean/std of an f32 array, the oracle for fit.
    fn column_stats(x: &Array3<f32>) -> (Vec<f64>, Vec<f64>) {
        let (n, w, c) = x.dim();
        let count = (n * w) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for v in x.outer_iter() {
            for row in v.outer_iter() {
                for (ch, &e) in row.iter().enumerate() {
                    mean[ch] += e as f64;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for v in x.outer_iter() {
            for row in v.outer_iter() {
                for (ch, &e) in row.iter().enumerate() {
                    var[ch] += (e as f64 - mean[ch]).powi(2);
                }
            }
        }
        var.iter_mut().for_each(|s| *s = (*s / count).sqrt());
        (mean, var)
    }

    #[test]
    fn applying_fitted_stats_to_the_fit_set_zscores_it() {
        let x = sample_windows(64, 11);
        let stats = fit_normalizer(&x.view()).unwrap();
        let z = apply_normalizer(&stats, &x.view()).unwrap();
        let (mean, std) = column_stats(&z);
        for c in 0..5 {
            assert!(mean[c].abs() < 1e-6, "channel {c} mean {}", mean[c]);
            assert!((std[c] - 1.0).abs() < 1e-6, "channel {c} std {}", std[c]);
        }
    }

    #[test]
    fn fit_matches_the_hand_oracle() {
        let x = sample_windows(16, 3);
        let stats = fit_normalizer(&x.view()).unwrap();
        let (mean, std) = column_stats(&x);
        for c in 0..5 {
            assert_eq!(stats.mean[c], mean[c]);
            assert_eq!(stats.std[c], std[c]);
        }
    }

    #[test]
    fn constant_channel_passes_through_unchanged() {
        let mut x = sample_windows(8, 5);
        for mut window in x.outer_iter_mut() {
            for mut row in window.outer_iter_mut() {
                row[2] = 10.0;
            }
        }
        let stats = fit_normalizer(&x.view()).unwrap();
        assert_eq!(stats.mean[2], 0.0);
        assert_eq!(stats.std[2], 1.0);
        let z = apply_normalizer(&stats, &x.view()).unwrap();
        for window in z.outer_iter() {
            for row in window.outer_iter() {
                assert_eq!(row[2], 10.0);
            }
        }
        // The live channels still got scaled.
        let (_, std) = column_stats(&z);
        assert!((std[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn stats_ignore_everything_outside_the_train_split() {
        let train = sample_windows(32, 21);
        let stats_alone = fit_normalizer(&train.view()).unwrap();

        // Rebuild the same training windows inside a larger corpus, fit on
        // the train slice only, and demand bit-identical statistics.
        let other = sample_windows(32, 99);
        let mut corpus = Array3::zeros((64, 25, 5));
        corpus.slice_mut(ndarray::s![..32, .., ..]).assign(&train);
        corpus.slice_mut(ndarray::s![32.., .., ..]).assign(&other);
        let stats_sliced =
            fit_normalizer(&corpus.slice(ndarray::s![..32, .., ..])).unwrap();

        assert_eq!(stats_alone, stats_sliced);
    }

    #[test]
    fn empty_input_rejected() {
        let x = Array3::<f32>::zeros((0, 25, 5));
        assert!(fit_normalizer(&x.view()).is_err());
    }

    #[test]
    fn channel_count_mismatch_rejected() {
        let x = sample_windows(4, 1);
        let stats = fit_normalizer(&x.view()).unwrap();
        let wrong = Array3::<f32>::zeros((2, 25, 4));
        assert!(apply_normalizer(&stats, &wrong.view()).is_err());
    }
}
