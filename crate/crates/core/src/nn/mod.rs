//! A small, deterministic neural-network stack: exactly the layers the three
//! classifiers need, nothing more.
//!
//! Everything is generic over [`Float`] — training runs in f32, while
//! finite-difference gradient checks instantiate the same code in f64.
//! All matrix products go through one single-threaded GEMM, so a fixed
//! seed and thread count reproduce training bit-for-bit.

pub mod arch;
pub mod checkpoint;
pub mod convlstm;
pub mod layers;
pub mod linalg;
pub mod param;
pub mod train;

pub use arch::{build_model, AnyModel};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use param::{AdamConfig, Float, Param, ParamRef};
pub use train::{train_model, TrainOptions, TrainRecord};

/// What a forward pass is for. Dropout is live while training and during
/// stochastic (Monte Carlo) inference; batch normalization uses batch
/// statistics only while training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    /// Deterministic inference: dropout is the identity and draws nothing
    /// from the RNG; normalization uses running statistics.
    Eval,
    /// Stochastic inference: dropout live, normalization on running stats.
    McDropout,
}

impl Phase {
    pub fn dropout_live(self) -> bool {
        matches!(self, Phase::Train | Phase::McDropout)
    }

    pub fn batch_stats(self) -> bool {
        matches!(self, Phase::Train)
    }
}

/// Anything that can enumerate its trainable tensors in a stable order.
pub trait HasParams<F: Float> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(ParamRef<'_, F>));

    /// Non-trainable state that must survive a save/load round trip
    /// (normalization running statistics). Default: none.
    fn for_each_state(&mut self, _f: &mut dyn FnMut(&str, ndarray::ArrayViewMutD<'_, F>)) {}

    /// Total trainable scalars.
    fn parameter_count(&mut self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |p| n += p.value.len());
        n
    }

    fn zero_grads(&mut self) {
        self.for_each_param(&mut |mut p| p.grad.fill(F::zero()));
    }
}
