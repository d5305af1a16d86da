//! A convolutional LSTM cell over 1 × L feature maps.
//!
//! Per time step, with ⊛ a same-padding convolution along the map width and
//! ⊙ the elementwise product:
//!
//! ```text
//! z_t = tanh(W_z ⊛ x_t + R_z ⊛ y_{t−1} + b_z)            (block input)
//! i_t = σ(W_i ⊛ x_t + R_i ⊛ y_{t−1} + p_i ⊙ c_{t−1} + b_i)
//! f_t = σ(W_f ⊛ x_t + R_f ⊛ y_{t−1} + p_f ⊙ c_{t−1} + b_f)
//! c_t = z_t ⊙ i_t + c_{t−1} ⊙ f_t
//! o_t = σ(W_o ⊛ x_t + R_o ⊛ y_{t−1} + p_o ⊙ c_t + b_o)
//! y_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! The four gates share one fused input kernel `W` (4C, C_in, k) and one
//! fused recurrent kernel `R` (4C, C, k) in [z, i, f, o] order; peepholes
//! are full-map elementwise tensors of shape (C, L). The input convolution
//! is batched over all time steps in one GEMM; the recurrent convolution
//! runs once per step. Initial state is zero, and the forget-gate bias
//! starts at 1 so early training does not forget everything it sees.

use ndarray::{s, Array1, Array2, Array3, Array4, Axis, Ix1, Ix2, Ix3};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::linalg::{conv1d_same, conv1d_same_backward};
use super::param::{fan_in_uniform, AdamConfig, Float, Param, ParamRef};
use super::Phase;

struct StepCache<F> {
    c_prev: Array3<F>,
    h_prev: Array3<F>,
    z: Array3<F>,
    i: Array3<F>,
    f: Array3<F>,
    o: Array3<F>,
    c: Array3<F>,
    tanh_c: Array3<F>,
}

struct Cache<F> {
    /// Input permuted to (T·B, C_in, L) for the batched convolution.
    xb: Array3<F>,
    steps: Vec<StepCache<F>>,
    b: usize,
}

/// Convolutional LSTM layer; see the module docs for the recurrence.
pub struct ConvLstm<F: Float> {
    pub w: Param<F, Ix3>,
    pub r: Param<F, Ix3>,
    pub b: Param<F, Ix1>,
    pub p_i: Param<F, Ix2>,
    pub p_f: Param<F, Ix2>,
    pub p_o: Param<F, Ix2>,
    c_in: usize,
    filters: usize,
    width: usize,
    /// Peephole terms on by default; an ablation toggle removes them from
    /// the recurrence and from the trainable-parameter set.
    peepholes: bool,
    cache: Option<Cache<F>>,
}

fn sigmoid<F: Float>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

impl<F: Float> ConvLstm<F> {
    pub fn new(c_in: usize, filters: usize, k: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(k % 2 == 1, "same-padding needs an odd kernel, got {k}");
        let w = fan_in_uniform(Ix3(4 * filters, c_in, k), c_in * k, rng);
        let r = fan_in_uniform(Ix3(4 * filters, filters, k), filters * k, rng);
        let mut b = Array1::zeros(4 * filters);
        b.slice_mut(s![2 * filters..3 * filters]).fill(F::one());
        ConvLstm {
            w: Param::new(w),
            r: Param::new(r),
            b: Param::new(b),
            p_i: Param::new(Array2::zeros((filters, width))),
            p_f: Param::new(Array2::zeros((filters, width))),
            p_o: Param::new(Array2::zeros((filters, width))),
            c_in,
            filters,
            width,
            peepholes: true,
            cache: None,
        }
    }

    /// Ablation variant: drop the peephole terms entirely (they leave both
    /// the recurrence and the parameter set).
    pub fn without_peepholes(mut self) -> Self {
        self.peepholes = false;
        self
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    fn check_input(&self, x: &Array4<F>) -> Result<(usize, usize)> {
        let (b, t, c_in, l) = x.dim();
        if t == 0 {
            return Err(Error::invalid("empty input sequence"));
        }
        if c_in != self.c_in || l != self.width {
            return Err(Error::ShapeMismatch {
                expected: format!("(B, T, {}, {})", self.c_in, self.width),
                got: format!("({b}, {t}, {c_in}, {l})"),
            });
        }
        Ok((b, t))
    }

    /// Split the fused gate tensor (B, 4C, L) into (z, i, f, o) views.
    fn split_gates(g: &Array3<F>, c: usize) -> [Array3<F>; 4] {
        [
            g.slice(s![.., ..c, ..]).to_owned(),
            g.slice(s![.., c..2 * c, ..]).to_owned(),
            g.slice(s![.., 2 * c..3 * c, ..]).to_owned(),
            g.slice(s![.., 3 * c.., ..]).to_owned(),
        ]
    }

    /// Broadcast a (C, L) peephole over the batch axis.
    fn peep(p: &Array2<F>, c_state: &Array3<F>) -> Array3<F> {
        c_state * &p.view().insert_axis(Axis(0))
    }

    /// Run the recurrence from an explicit initial state, returning the
    /// output sequence (B, T, C, L). Public forward paths start from zero
    /// state; tests exercise degenerate cases from arbitrary states.
    pub fn forward_from(
        &mut self,
        x: &Array4<F>,
        h0: Array3<F>,
        c0: Array3<F>,
        phase: Phase,
    ) -> Result<Array4<F>> {
        let (b, t) = self.check_input(x)?;
        let (c, l) = (self.filters, self.width);
        // Batched input path: (B, T, C_in, L) → (T·B, C_in, L) → one conv.
        let xb = x
            .view()
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((t * b, self.c_in, l))
            .expect("contiguous");
        let gx = conv1d_same(&xb, &self.w.value, Some(&self.b.value));
        let mut h = h0;
        let mut c_state = c0;
        let mut ys = Array4::zeros((b, t, c, l));
        let mut steps = Vec::with_capacity(t);
        for ti in 0..t {
            let gx_t = gx.slice(s![ti * b..(ti + 1) * b, .., ..]).to_owned();
            let gh_t = conv1d_same(&h, &self.r.value, None);
            let gates = gx_t + gh_t;
            let [gz, mut gi, mut gf, mut go] = Self::split_gates(&gates, c);
            let z = gz.mapv(F::tanh);
            if self.peepholes {
                gi += &Self::peep(&self.p_i.value, &c_state);
                gf += &Self::peep(&self.p_f.value, &c_state);
            }
            let i = gi.mapv(sigmoid);
            let f = gf.mapv(sigmoid);
            let c_new = &z * &i + &c_state * &f;
            if self.peepholes {
                go += &Self::peep(&self.p_o.value, &c_new);
            }
            let o = go.mapv(sigmoid);
            let tanh_c = c_new.mapv(F::tanh);
            let y = &o * &tanh_c;
            ys.slice_mut(s![.., ti, .., ..]).assign(&y);
            if phase == Phase::Train {
                steps.push(StepCache {
                    c_prev: c_state.clone(),
                    h_prev: h.clone(),
                    z,
                    i,
                    f,
                    o,
                    c: c_new.clone(),
                    tanh_c,
                });
            }
            h = y;
            c_state = c_new;
        }
        if phase == Phase::Train {
            self.cache = Some(Cache { xb, steps, b });
        }
        Ok(ys)
    }

    /// Full output sequence from zero initial state: (B, T, C_in, L) →
    /// (B, T, C, L).
    pub fn forward_sequence(&mut self, x: &Array4<F>, phase: Phase) -> Result<Array4<F>> {
        let (b, _) = self.check_input(x)?;
        let zeros = Array3::zeros((b, self.filters, self.width));
        self.forward_from(x, zeros.clone(), zeros, phase)
    }

    /// Final hidden state only: (B, T, C_in, L) → (B, C, L).
    pub fn forward_last(&mut self, x: &Array4<F>, phase: Phase) -> Result<Array3<F>> {
        let ys = self.forward_sequence(x, phase)?;
        let t = ys.dim().1;
        Ok(ys.index_axis(Axis(1), t - 1).to_owned())
    }

    /// Backpropagate through time. `dy` supplies the upstream gradient per
    /// step (`None` where the step's output is unused).
    fn bptt(&mut self, dy: &dyn Fn(usize) -> Option<Array3<F>>) -> Array4<F> {
        let cache = self.cache.take().expect("forward(Train) before backward");
        let t = cache.steps.len();
        let b = cache.b;
        let (c, l) = (self.filters, self.width);
        let one = F::one();
        let mut dh_carry = Array3::<F>::zeros((b, c, l));
        let mut dc_carry = Array3::<F>::zeros((b, c, l));
        let mut dgx = Array3::<F>::zeros((t * b, 4 * c, l));
        for ti in (0..t).rev() {
            let step = &cache.steps[ti];
            let mut dy_total = dh_carry;
            if let Some(ext) = dy(ti) {
                dy_total += &ext;
            }
            let d_o = &dy_total * &step.tanh_c;
            let do_pre = &d_o * &step.o.mapv(|v| v * (one - v));
            let mut dc = dc_carry;
            dc += &(&dy_total * &step.o * &step.tanh_c.mapv(|v| one - v * v));
            if self.peepholes {
                dc += &Self::peep(&self.p_o.value, &do_pre);
                self.p_o.grad += &(&do_pre * &step.c).sum_axis(Axis(0));
            }
            let dz = &dc * &step.i;
            let di = &dc * &step.z;
            let df = &dc * &step.c_prev;
            let dz_pre = &dz * &step.z.mapv(|v| one - v * v);
            let di_pre = &di * &step.i.mapv(|v| v * (one - v));
            let df_pre = &df * &step.f.mapv(|v| v * (one - v));
            dc_carry = &dc * &step.f;
            if self.peepholes {
                self.p_i.grad += &(&di_pre * &step.c_prev).sum_axis(Axis(0));
                self.p_f.grad += &(&df_pre * &step.c_prev).sum_axis(Axis(0));
                dc_carry += &Self::peep(&self.p_i.value, &di_pre);
                dc_carry += &Self::peep(&self.p_f.value, &df_pre);
            }
            let mut dgates = Array3::zeros((b, 4 * c, l));
            dgates.slice_mut(s![.., ..c, ..]).assign(&dz_pre);
            dgates.slice_mut(s![.., c..2 * c, ..]).assign(&di_pre);
            dgates.slice_mut(s![.., 2 * c..3 * c, ..]).assign(&df_pre);
            dgates.slice_mut(s![.., 3 * c.., ..]).assign(&do_pre);
            // Recurrent path: dR accumulates; bias is counted once on the
            // input path below, so this call's db is dropped.
            let (dh_prev, dr, _) = conv1d_same_backward(&step.h_prev, &self.r.value, &dgates);
            self.r.grad += &dr;
            dh_carry = dh_prev;
            dgx.slice_mut(s![ti * b..(ti + 1) * b, .., ..]).assign(&dgates);
        }
        let (dxb, dw, db) = conv1d_same_backward(&cache.xb, &self.w.value, &dgx);
        self.w.grad += &dw;
        self.b.grad += &db;
        let dx = dxb
            .into_shape_with_order((t, b, self.c_in, l))
            .expect("contiguous")
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .to_owned();
        dx
    }

    /// Backward for [`forward_sequence`]: dy (B, T, C, L) → dx (B, T, C_in, L).
    pub fn backward_sequence(&mut self, dy: &Array4<F>) -> Array4<F> {
        self.bptt(&|ti| Some(dy.index_axis(Axis(1), ti).to_owned()))
    }

    /// Backward for [`forward_last`]: dy (B, C, L) → dx (B, T, C_in, L).
    pub fn backward_last(&mut self, dy: &Array3<F>) -> Array4<F> {
        let t = self
            .cache
            .as_ref()
            .expect("forward(Train) before backward")
            .steps
            .len();
        self.bptt(&|ti| if ti == t - 1 { Some(dy.clone()) } else { None })
    }

    pub fn step(&mut self, cfg: &AdamConfig, t: usize) {
        self.w.adam_step(cfg, t);
        self.r.adam_step(cfg, t);
        self.b.adam_step(cfg, t);
        if self.peepholes {
            self.p_i.adam_step(cfg, t);
            self.p_f.adam_step(cfg, t);
            self.p_o.adam_step(cfg, t);
        }
    }

    pub fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, F>)) {
        self.w.visit(&format!("{prefix}.w"), f);
        self.r.visit(&format!("{prefix}.r"), f);
        self.b.visit(&format!("{prefix}.b"), f);
        if self.peepholes {
            self.p_i.visit(&format!("{prefix}.p_i"), f);
            self.p_f.visit(&format!("{prefix}.p_f"), f);
            self.p_o.visit(&format!("{prefix}.p_o"), f);
        }
    }
}
