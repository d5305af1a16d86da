//! Trainable tensors and the adaptive-moment optimizer that updates them.
//!
//! Every learnable tensor lives in a [`Param`], which carries its gradient
//! and the optimizer's two moment buffers. Models expose their parameters
//! through [`ParamRef`] visitors so checkpointing, counting, and
//! finite-difference checks need no per-architecture code.

use ndarray::{Array, ArrayViewMutD, Dimension, IxDyn};
use num_traits::FromPrimitive;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Element type bound for everything in the network stack: training runs in
/// f32, finite-difference checks in f64.
pub trait Float: ndarray::NdFloat + FromPrimitive {}
impl<T: ndarray::NdFloat + FromPrimitive> Float for T {}

/// Adaptive-moment estimation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// A learnable tensor with its gradient and optimizer state.
#[derive(Debug, Clone)]
pub struct Param<F, D: Dimension> {
    pub value: Array<F, D>,
    pub grad: Array<F, D>,
    m: Array<F, D>,
    v: Array<F, D>,
}

impl<F: Float, D: Dimension> Param<F, D> {
    pub fn new(value: Array<F, D>) -> Self {
        let grad = Array::zeros(value.raw_dim());
        let m = Array::zeros(value.raw_dim());
        let v = Array::zeros(value.raw_dim());
        Param { value, grad, m, v }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }

    pub fn count(&self) -> usize {
        self.value.len()
    }

    /// One optimizer update; `t` is the 1-based global step for bias
    /// correction.
    pub fn adam_step(&mut self, cfg: &AdamConfig, t: usize) {
        let b1 = F::from_f64(cfg.beta1).unwrap();
        let b2 = F::from_f64(cfg.beta2).unwrap();
        let one = F::one();
        let lr = F::from_f64(cfg.lr).unwrap();
        let eps = F::from_f64(cfg.eps).unwrap();
        let c1 = F::from_f64(1.0 - cfg.beta1.powi(t as i32)).unwrap();
        let c2 = F::from_f64(1.0 - cfg.beta2.powi(t as i32)).unwrap();
        ndarray::Zip::from(&mut self.value)
            .and(&self.grad)
            .and(&mut self.m)
            .and(&mut self.v)
            .for_each(|w, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            });
    }

    /// Hand this parameter to a visitor under `name`.
    pub fn visit(&mut self, name: &str, f: &mut dyn FnMut(ParamRef<'_, F>)) {
        f(ParamRef {
            name,
            value: self.value.view_mut().into_dyn(),
            grad: self.grad.view_mut().into_dyn(),
        });
    }
}

/// A named view of one parameter tensor and its gradient.
pub struct ParamRef<'a, F> {
    pub name: &'a str,
    pub value: ArrayViewMutD<'a, F>,
    pub grad: ArrayViewMutD<'a, F>,
}

/// Fan-in-scaled uniform init: samples in ±√(3 / fan_in), drawn as f64 for
/// cross-precision reproducibility and then cast.
pub fn fan_in_uniform<F: Float, D: Dimension>(
    shape: D,
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> Array<F, D> {
    let bound = (3.0 / fan_in as f64).sqrt();
    Array::from_shape_simple_fn(shape, || {
        F::from_f64(rng.gen_range(-bound..bound)).unwrap()
    })
}

/// Dynamic-shape variant of [`fan_in_uniform`] for checkpoint plumbing.
pub fn fan_in_uniform_dyn<F: Float>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> Array<F, IxDyn> {
    fan_in_uniform(IxDyn(shape), fan_in, rng)
}
