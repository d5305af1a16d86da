//! Convolution primitives built on im2col + GEMM.
//!
//! Two shapes cover every layer in this crate: 1-D same-padding convolution
//! over (batch, channels, length) — used by the time-series convolutions and
//! by both convolution paths inside the recurrent cell — and 2-D valid
//! convolution over (batch, channels, height, width) for the multi-headed
//! model. The matrix products go through `ndarray`'s `general_mat_mul`,
//! which is single-threaded and deterministic for a fixed build.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView2, Axis};

use super::param::Float;

/// `a · b` into a freshly allocated matrix.
pub fn matmul<F: Float>(a: &ArrayView2<F>, b: &ArrayView2<F>) -> Array2<F> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    ndarray::linalg::general_mat_mul(F::one(), a, b, F::zero(), &mut out);
    out
}

/// Unfold (B, C, L) into (C·k, B·L) columns for a same-padding kernel of
/// odd length `k`; out-of-range taps contribute zero.
pub fn im2col1d<F: Float>(x: &Array3<F>, k: usize) -> Array2<F> {
    let (b, c, l) = x.dim();
    let pad = (k - 1) / 2;
    let mut col = Array2::zeros((c * k, b * l));
    for bi in 0..b {
        for ci in 0..c {
            for dk in 0..k {
                let row = ci * k + dk;
                for li in 0..l {
                    let src = li + dk;
                    if src >= pad && src - pad < l {
                        col[(row, bi * l + li)] = x[(bi, ci, src - pad)];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col1d`]: fold (C·k, B·L) back onto (B, C, L), summing
/// overlapping taps.
pub fn col2im1d<F: Float>(col: &Array2<F>, b: usize, c: usize, l: usize, k: usize) -> Array3<F> {
    let pad = (k - 1) / 2;
    let mut x = Array3::zeros((b, c, l));
    for bi in 0..b {
        for ci in 0..c {
            for dk in 0..k {
                let row = ci * k + dk;
                for li in 0..l {
                    let src = li + dk;
                    if src >= pad && src - pad < l {
                        x[(bi, ci, src - pad)] = x[(bi, ci, src - pad)] + col[(row, bi * l + li)];
                    }
                }
            }
        }
    }
    x
}

/// 1-D same-padding convolution: (B, C_in, L) ⊛ (C_out, C_in, k) → (B, C_out, L).
pub fn conv1d_same<F: Float>(
    x: &Array3<F>,
    w: &Array3<F>,
    bias: Option<&Array1<F>>,
) -> Array3<F> {
    let (b, c_in, l) = x.dim();
    let (c_out, wc_in, k) = w.dim();
    debug_assert_eq!(c_in, wc_in, "input channels disagree with kernel");
    debug_assert_eq!(k % 2, 1, "same-padding needs an odd kernel");
    let col = im2col1d(x, k);
    let w2 = w.view().into_shape_with_order((c_out, c_in * k)).expect("kernel is contiguous");
    let y2 = matmul(&w2, &col.view());
    let y3 = y2.into_shape_with_order((c_out, b, l)).expect("gemm output is contiguous");
    let mut y = y3.permuted_axes([1, 0, 2]).as_standard_layout().to_owned();
    if let Some(bias) = bias {
        for (co, &bv) in bias.iter().enumerate() {
            y.index_axis_mut(Axis(1), co).mapv_inplace(|v| v + bv);
        }
    }
    y
}

/// Gradients of [`conv1d_same`]: given upstream dy, return (dx, dw, db).
pub fn conv1d_same_backward<F: Float>(
    x: &Array3<F>,
    w: &Array3<F>,
    dy: &Array3<F>,
) -> (Array3<F>, Array3<F>, Array1<F>) {
    let (b, c_in, l) = x.dim();
    let (c_out, _, k) = w.dim();
    let dy2 = dy
        .view()
        .permuted_axes([1, 0, 2])
        .as_standard_layout()
        .to_owned()
        .into_shape_with_order((c_out, b * l))
        .expect("contiguous");
    let col = im2col1d(x, k);
    let dw2 = matmul(&dy2.view(), &col.t());
    let dw = dw2.into_shape_with_order((c_out, c_in, k)).expect("contiguous");
    let db = dy2.sum_axis(Axis(1));
    let w2 = w.view().into_shape_with_order((c_out, c_in * k)).expect("contiguous");
    let dcol = matmul(&w2.t(), &dy2.view());
    let dx = col2im1d(&dcol, b, c_in, l, k);
    (dx, dw, db)
}

/// Unfold (B, C, H, W) into (C·kh·kw, B·OH·OW) columns for a valid kernel.
pub fn im2col2d<F: Float>(x: &Array4<F>, kh: usize, kw: usize) -> Array2<F> {
    let (b, c, h, w) = x.dim();
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut col = Array2::zeros((c * kh * kw, b * oh * ow));
    for bi in 0..b {
        for ci in 0..c {
            for dh in 0..kh {
                for dw in 0..kw {
                    let row = ci * kh * kw + dh * kw + dw;
                    for yh in 0..oh {
                        for yw in 0..ow {
                            col[(row, bi * oh * ow + yh * ow + yw)] =
                                x[(bi, ci, yh + dh, yw + dw)];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col2d`].
pub fn col2im2d<F: Float>(
    col: &Array2<F>,
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
) -> Array4<F> {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut x = Array4::zeros((b, c, h, w));
    for bi in 0..b {
        for ci in 0..c {
            for dh in 0..kh {
                for dw in 0..kw {
                    let row = ci * kh * kw + dh * kw + dw;
                    for yh in 0..oh {
                        for yw in 0..ow {
                            x[(bi, ci, yh + dh, yw + dw)] = x[(bi, ci, yh + dh, yw + dw)]
                                + col[(row, bi * oh * ow + yh * ow + yw)];
                        }
                    }
                }
            }
        }
    }
    x
}

/// 2-D valid convolution: (B, C_in, H, W) ⊛ (C_out, C_in, kh, kw)
/// → (B, C_out, H−kh+1, W−kw+1).
pub fn conv2d_valid<F: Float>(
    x: &Array4<F>,
    w: &Array4<F>,
    bias: Option<&Array1<F>>,
) -> Array4<F> {
    let (b, c_in, h, wd) = x.dim();
    let (c_out, wc_in, kh, kw) = w.dim();
    debug_assert_eq!(c_in, wc_in);
    debug_assert!(h >= kh && wd >= kw, "kernel larger than input");
    let (oh, ow) = (h - kh + 1, wd - kw + 1);
    let col = im2col2d(x, kh, kw);
    let w2 = w
        .view()
        .into_shape_with_order((c_out, c_in * kh * kw))
        .expect("contiguous");
    let y2 = matmul(&w2, &col.view());
    let y4 = y2.into_shape_with_order((c_out, b, oh, ow)).expect("contiguous");
    let mut y = y4.permuted_axes([1, 0, 2, 3]).as_standard_layout().to_owned();
    if let Some(bias) = bias {
        for (co, &bv) in bias.iter().enumerate() {
            y.index_axis_mut(Axis(1), co).mapv_inplace(|v| v + bv);
        }
    }
    y
}

/// Gradients of [`conv2d_valid`]: given upstream dy, return (dx, dw, db).
pub fn conv2d_valid_backward<F: Float>(
    x: &Array4<F>,
    w: &Array4<F>,
    dy: &Array4<F>,
) -> (Array4<F>, Array4<F>, Array1<F>) {
    let (b, c_in, h, wd) = x.dim();
    let (c_out, _, kh, kw) = w.dim();
    let (oh, ow) = (h - kh + 1, wd - kw + 1);
    let dy2 = dy
        .view()
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .to_owned()
        .into_shape_with_order((c_out, b * oh * ow))
        .expect("contiguous");
    let col = im2col2d(x, kh, kw);
    let dw2 = matmul(&dy2.view(), &col.t());
    let dw = dw2.into_shape_with_order((c_out, c_in, kh, kw)).expect("contiguous");
    let db = dy2.sum_axis(Axis(1));
    let w2 = w
        .view()
        .into_shape_with_order((c_out, c_in * kh * kw))
        .expect("contiguous");
    let dcol = matmul(&w2.t(), &dy2.view());
    let dx = col2im2d(&dcol, b, c_in, h, wd, kh, kw);
    (dx, dw, db)
}
