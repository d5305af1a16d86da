//! Sliding-window extraction from sensor traces.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::turbine::{SensorTrace, N_CHANNELS};

/// Number of windows a trace of `rows` samples yields.
///
/// `floor((rows − window) / stride) + 1` when the trace covers at least one
/// window, else 0.
pub fn window_count(rows: usize, window_length: usize, stride: usize) -> usize {
    if rows < window_length {
        0
    } else {
        (rows - window_length) / stride + 1
    }
}

/// Cut `trace` into windows of `window_length` samples advancing by
/// `stride`, casting to f32.
///
/// Returns shape (count, window_length, 5) where count follows
/// [`window_count`]. Windows are contiguous slices of the trace and overlap
/// when `stride < window_length`. A trace shorter than one window yields an
/// empty array after a warning, so corpora with the odd truncated run keep
/// building.
pub fn slide_windows(
    trace: &SensorTrace,
    window_length: usize,
    stride: usize,
) -> Result<Array3<f32>> {
    if window_length == 0 {
        return Err(Error::invalid("window_length must be ≥ 1"));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be ≥ 1"));
    }
    let rows = trace.rows();
    let count = window_count(rows, window_length, stride);
    if count == 0 {
        eprintln!(
            "warning: run {} has {rows} samples, shorter than one \
             {window_length}-sample window; it contributes no windows",
            trace.run_id
        );
        return Ok(Array3::zeros((0, window_length, N_CHANNELS)));
    }
    let mut out = Array3::zeros((count, window_length, N_CHANNELS));
    for w in 0..count {
        let start = w * stride;
        for i in 0..window_length {
            for c in 0..N_CHANNELS {
                out[(w, i, c)] = trace.values[(start + i, c)] as f32;
            }
        }
    }
    Ok(out)
}
