//! Layout change between flat windows and the sequence-of-maps tensor the
//! recurrent branches consume.
//!
//! A 125 × 5 window becomes a 5 × 1 × 25 × 5 tensor: a sequence of five
//! consecutive 25-sample chunks in time order, each chunk a 1 × 25 spatial
//! map carrying the five sensor channels on the last axis. The mapping is a
//! bijection; [`restore_from_convlstm`] inverts it exactly.

use ndarray::{Array2, Array4, ArrayView2, ArrayView4};

use crate::error::{Error, Result};

const ROWS: usize = 125;
const CHANNELS: usize = 5;
const SEQ: usize = 5;
const CHUNK: usize = 25;

/// Reshape a 125 × 5 window into the 5 × 1 × 25 × 5 sequence tensor.
pub fn reshape_for_convlstm(window: &ArrayView2<f32>) -> Result<Array4<f32>> {
    if window.dim() != (ROWS, CHANNELS) {
        return Err(Error::ShapeMismatch {
            expected: format!("({ROWS}, {CHANNELS})"),
            got: format!("{:?}", window.dim()),
        });
    }
    let mut out = Array4::zeros((SEQ, 1, CHUNK, CHANNELS));
    for c in 0..SEQ {
        for j in 0..CHUNK {
            for s in 0..CHANNELS {
                out[(c, 0, j, s)] = window[(CHUNK * c + j, s)];
            }
        }
    }
    Ok(out)
}

/// Invert [`reshape_for_convlstm`], recovering the 125 × 5 window.
pub fn restore_from_convlstm(tensor: &ArrayView4<f32>) -> Result<Array2<f32>> {
    if tensor.dim() != (SEQ, 1, CHUNK, CHANNELS) {
        return Err(Error::ShapeMismatch {
            expected: format!("({SEQ}, 1, {CHUNK}, {CHANNELS})"),
            got: format!("{:?}", tensor.dim()),
        });
    }
    let mut out = Array2::zeros((ROWS, CHANNELS));
    for c in 0..SEQ {
        for j in 0..CHUNK {
            for s in 0..CHANNELS {
                out[(CHUNK * c + j, s)] = tensor[(c, 0, j, s)];
            }
        }
    }
    Ok(out)
}
