//! The three classifier architectures over 125 × 5 sensor windows.
//!
//! All models share the input contract (batch, 125 rows, 5 channels) and
//! produce 8-way logits; [`AnyModel::predict`] applies softmax. Internal
//! layouts differ:
//!
//! * [`SimpleCnn`] — four 1-D convolutions along time (channels = sensors),
//!   heavy MC-dropout, then a dense block.
//! * [`MultiHeaded`] — three parallel 2-D convolution heads over the raw
//!   (time × sensor) image with kernels 1×5, 7×5 and 20×5, fused by
//!   concatenation before a shared dense block.
//! * [`Casu2Net`] — three stacked recurrent-convolution branches over the
//!   window re-cut as five 25-sample maps, fused twice: first the raw
//!   branch features, then the four dense-block outputs.

use ndarray::{Array2, Array3, Array4, ArrayView2, Axis, Ix2, Ix3, Ix4, s};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::convlstm::ConvLstm;
use super::layers::{softmax, BatchNorm, Conv1dSame, Conv2dValid, Dense, Dropout, Relu};
use super::param::{AdamConfig, Float, ParamRef};
use super::{HasParams, Phase};

/// Fault classes: healthy plus seven faults.
pub const NUM_CLASSES: usize = 8;
/// Samples per window (1.5625 s at 80 Hz).
pub const WINDOW_ROWS: usize = 125;
/// Sensor channels per sample.
pub const WINDOW_CHANNELS: usize = 5;
/// Sequence length the recurrent model cuts a window into.
const SEQ_LEN: usize = 5;
/// Samples per sequence step.
const CHUNK: usize = 25;

/// Which classifier to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    #[serde(rename = "simple-cnn")]
    SimpleCnn,
    #[serde(rename = "multi-headed")]
    MultiHeaded,
    #[serde(rename = "casu2net")]
    Casu2Net,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::SimpleCnn, Arch::MultiHeaded, Arch::Casu2Net];

    pub fn name(&self) -> &'static str {
        match self {
            Arch::SimpleCnn => "simple-cnn",
            Arch::MultiHeaded => "multi-headed",
            Arch::Casu2Net => "casu2net",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown architecture {s:?}; expected simple-cnn, multi-headed or casu2net"
                ))
            })
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which fusion point of the two-step architecture to tap for features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionTap {
    /// Concatenated branch features, before the dense blocks (4000 wide).
    #[serde(rename = "fusion1")]
    Fusion1,
    /// Concatenated dense-block outputs, before the classifier (256 wide).
    #[serde(rename = "fusion2")]
    Fusion2,
}

impl FusionTap {
    pub fn name(&self) -> &'static str {
        match self {
            FusionTap::Fusion1 => "fusion1",
            FusionTap::Fusion2 => "fusion2",
        }
    }
}

impl std::str::FromStr for FusionTap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fusion1" => Ok(FusionTap::Fusion1),
            "fusion2" => Ok(FusionTap::Fusion2),
            other => Err(Error::invalid(format!(
                "unknown fusion tap {other:?}; expected fusion1 or fusion2"
            ))),
        }
    }
}

impl std::fmt::Display for FusionTap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Concatenate feature blocks along the feature axis. Returns the fused
/// tensor plus the recorded offsets (one per input, then the total width),
/// so callers can slice any input back out of the result.
pub fn fuse<F: Float>(parts: &[ArrayView2<'_, F>]) -> Result<(Array2<F>, Vec<usize>)> {
    if parts.is_empty() {
        return Err(Error::invalid("fuse of zero feature blocks"));
    }
    let batch = parts[0].dim().0;
    if let Some(bad) = parts.iter().find(|p| p.dim().0 != batch) {
        return Err(Error::invalid(format!(
            "fuse batch mismatch: {} vs {}",
            batch,
            bad.dim().0
        )));
    }
    let mut offsets = Vec::with_capacity(parts.len() + 1);
    let mut total = 0;
    for p in parts {
        offsets.push(total);
        total += p.dim().1;
    }
    offsets.push(total);
    let mut fused = Array2::zeros((batch, total));
    for (p, &start) in parts.iter().zip(&offsets) {
        fused
            .slice_mut(s![.., start..start + p.dim().1])
            .assign(p);
    }
    Ok((fused, offsets))
}

/// Split a gradient of a fused tensor back into per-input blocks.
pub fn split_fused<F: Float>(d: &Array2<F>, offsets: &[usize]) -> Vec<Array2<F>> {
    offsets
        .windows(2)
        .map(|w| d.slice(s![.., w[0]..w[1]]).to_owned())
        .collect()
}

/// The shared dense block: batch-norm → dense 128 ReLU → MC-dropout 0.5 →
/// dense 64 ReLU. Every architecture's classification tail is one of these
/// (the fusion model has four).
struct FcBlock<F: Float> {
    bn: BatchNorm<F>,
    fc1: Dense<F>,
    relu1: Relu<F, Ix2>,
    drop: Dropout<F, Ix2>,
    fc2: Dense<F>,
    relu2: Relu<F, Ix2>,
}

impl<F: Float> FcBlock<F> {
    const OUT: usize = 64;

    fn new(d_in: usize, rng: &mut ChaCha8Rng) -> Self {
        FcBlock {
            bn: BatchNorm::new(d_in),
            fc1: Dense::new(d_in, 128, rng),
            relu1: Relu::new(),
            drop: Dropout::new(0.5),
            fc2: Dense::new(128, Self::OUT, rng),
            relu2: Relu::new(),
        }
    }

    fn forward(&mut self, x: &Array2<F>, phase: Phase, rng: &mut ChaCha8Rng) -> Array2<F> {
        let x = self.bn.forward2(x, phase);
        let x = self.relu1.forward(&self.fc1.forward(&x, phase), phase);
        let x = self.drop.forward(&x, phase, rng);
        self.relu2.forward(&self.fc2.forward(&x, phase), phase)
    }

    fn backward(&mut self, dy: &Array2<F>) -> Array2<F> {
        let d = self.fc2.backward(&self.relu2.backward(dy));
        let d = self.drop.backward(&d);
        let d = self.fc1.backward(&self.relu1.backward(&d));
        self.bn.backward2(&d)
    }

    fn step(&mut self, cfg: &AdamConfig, t: usize) {
        self.bn.step(cfg, t);
        self.fc1.step(cfg, t);
        self.fc2.step(cfg, t);
    }

    fn set_dropout_rate(&mut self, rate: f64) {
        self.drop = Dropout::new(rate);
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, F>)) {
        self.bn.visit(&format!("{prefix}.bn"), f);
        self.fc1.visit(&format!("{prefix}.fc1"), f);
        self.fc2.visit(&format!("{prefix}.fc2"), f);
    }

    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ndarray::ArrayViewMutD<'_, F>)) {
        self.bn.visit_state(&format!("{prefix}.bn"), f);
    }
}

fn check_window_batch<F: Float>(x: &Array3<F>) -> Result<usize> {
    let (b, rows, ch) = x.dim();
    if rows != WINDOW_ROWS || ch != WINDOW_CHANNELS || b == 0 {
        return Err(Error::ShapeMismatch {
            expected: format!("(B ≥ 1, {WINDOW_ROWS}, {WINDOW_CHANNELS})"),
            got: format!("({b}, {rows}, {ch})"),
        });
    }
    Ok(b)
}

/// Plain convolutional classifier: 32/32 then 64/64 filters of width 3
/// along time, batch-norm between the pairs, MC-dropout keeping 20 % after
/// the convolutions, then the dense block.
pub struct SimpleCnn<F: Float> {
    conv1: Conv1dSame<F>,
    relu1: Relu<F, Ix3>,
    conv2: Conv1dSame<F>,
    relu2: Relu<F, Ix3>,
    bn_c: BatchNorm<F>,
    conv3: Conv1dSame<F>,
    relu3: Relu<F, Ix3>,
    conv4: Conv1dSame<F>,
    relu4: Relu<F, Ix3>,
    drop_c: Dropout<F, Ix3>,
    tail: FcBlock<F>,
    out: Dense<F>,
}

impl<F: Float> SimpleCnn<F> {
    const FLAT: usize = 64 * WINDOW_ROWS;

    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        SimpleCnn {
            conv1: Conv1dSame::new(WINDOW_CHANNELS, 32, 3, rng),
            relu1: Relu::new(),
            conv2: Conv1dSame::new(32, 32, 3, rng),
            relu2: Relu::new(),
            bn_c: BatchNorm::new(32),
            conv3: Conv1dSame::new(32, 64, 3, rng),
            relu3: Relu::new(),
            conv4: Conv1dSame::new(64, 64, 3, rng),
            relu4: Relu::new(),
            drop_c: Dropout::new(0.8),
            tail: FcBlock::new(Self::FLAT, rng),
            out: Dense::new(FcBlock::<F>::OUT, NUM_CLASSES, rng),
        }
    }

    pub fn forward_logits(
        &mut self,
        x: &Array3<F>,
        phase: Phase,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array2<F>> {
        let b = check_window_batch(x)?;
        // (B, rows, ch) → (B, ch, rows): sensors become conv channels.
        let x = x
            .view()
            .permuted_axes([0, 2, 1])
            .as_standard_layout()
            .to_owned();
        let x = self.relu1.forward(&self.conv1.forward(&x, phase), phase);
        let x = self.relu2.forward(&self.conv2.forward(&x, phase), phase);
        let x = self.bn_c.forward3(&x, phase);
        let x = self.relu3.forward(&self.conv3.forward(&x, phase), phase);
        let x = self.relu4.forward(&self.conv4.forward(&x, phase), phase);
        let x = self.drop_c.forward(&x, phase, rng);
        let flat = x.into_shape_with_order((b, Self::FLAT)).expect("contiguous");
        let feat = self.tail.forward(&flat, phase, rng);
        Ok(self.out.forward(&feat, phase))
    }

    pub fn backward(&mut self, dlogits: &Array2<F>) {
        let b = dlogits.dim().0;
        let d = self.out.backward(dlogits);
        let d = self.tail.backward(&d);
        let d = d.into_shape_with_order((b, 64, WINDOW_ROWS)).expect("contiguous");
        let d = self.drop_c.backward(&d);
        let d = self.conv4.backward(&self.relu4.backward(&d));
        let d = self.conv3.backward(&self.relu3.backward(&d));
        let d = self.bn_c.backward3(&d);
        let d = self.conv2.backward(&self.relu2.backward(&d));
        self.conv1.backward(&self.relu1.backward(&d));
    }

    pub fn step(&mut self, cfg: &AdamConfig, t: usize) {
        self.conv1.step(cfg, t);
        self.conv2.step(cfg, t);
        self.bn_c.step(cfg, t);
        self.conv3.step(cfg, t);
        self.conv4.step(cfg, t);
        self.tail.step(cfg, t);
        self.out.step(cfg, t);
    }

    pub fn set_dropout_rates(&mut self, rate: f64) {
        self.drop_c = Dropout::new(rate);
        self.tail.set_dropout_rate(rate);
    }
}

impl<F: Float> HasParams<F> for SimpleCnn<F> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(ParamRef<'_, F>)) {
        self.conv1.visit("conv1", f);
        self.conv2.visit("conv2", f);
        self.bn_c.visit("bn_c", f);
        self.conv3.visit("conv3", f);
        self.conv4.visit("conv4", f);
        self.tail.visit("tail", f);
        self.out.visit("out", f);
    }

    fn for_each_state(&mut self, f: &mut dyn FnMut(&str, ndarray::ArrayViewMutD<'_, F>)) {
        self.bn_c.visit_state("bn_c", f);
        self.tail.visit_state("tail", f);
    }
}

struct Head<F: Float> {
    conv: Conv2dValid<F>,
    relu: Relu<F, Ix4>,
    bn: BatchNorm<F>,
    drop: Dropout<F, Ix4>,
    filters: usize,
    out_rows: usize,
}

impl<F: Float> Head<F> {
    fn new(filters: usize, k_rows: usize, rng: &mut ChaCha8Rng) -> Self {
        Head {
            conv: Conv2dValid::new(1, filters, k_rows, WINDOW_CHANNELS, rng),
            relu: Relu::new(),
            bn: BatchNorm::new(filters),
            drop: Dropout::new(0.2),
            filters,
            out_rows: WINDOW_ROWS - k_rows + 1,
        }
    }

    fn width(&self) -> usize {
        // Valid convolution collapses the sensor axis to 1.
        self.filters * self.out_rows
    }

    fn forward(&mut self, x: &Array4<F>, phase: Phase, rng: &mut ChaCha8Rng) -> Array2<F> {
        let b = x.dim().0;
        let y = self.relu.forward(&self.conv.forward(x, phase), phase);
        let y = self.bn.forward4(&y, phase);
        let y = self.drop.forward(&y, phase, rng);
        y.into_shape_with_order((b, self.width())).expect("contiguous")
    }

    fn backward(&mut self, d: &Array2<F>) -> Array4<F> {
        let b = d.dim().0;
        let d = d
            .view()
            .into_shape_with_order((b, self.filters, self.out_rows, 1))
            .expect("contiguous")
            .to_owned();
        let d = self.drop.backward(&d);
        let d = self.bn.backward4(&d);
        self.conv.backward(&self.relu.backward(&d))
    }

    fn step(&mut self, cfg: &AdamConfig, t: usize) {
        self.conv.step(cfg, t);
        self.bn.step(cfg, t);
    }

    fn set_dropout_rate(&mut self, rate: f64) {
        self.drop = Dropout::new(rate);
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, F>)) {
        self.conv.visit(&format!("{prefix}.conv"), f);
        self.bn.visit(&format!("{prefix}.bn"), f);
    }

    fn visit_state(&mut self, prefix: &str, f: &mut dyn FnMut(&str, ndarray::ArrayViewMutD<'_, F>)) {
        self.bn.visit_state(&format!("{prefix}.bn"), f);
    }
}

/// Three parallel 2-D convolution heads (100/90/80 filters, kernels 1×5,
/// 7×5, 20×5, valid padding) fused by concatenation, then the dense block.
pub struct MultiHeaded<F: Float> {
    heads: Vec<Head<F>>,
    offsets: Vec<usize>,
    tail: FcBlock<F>,
    out: Dense<F>,
}

impl<F: Float> MultiHeaded<F> {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        let heads = vec![
            Head::new(100, 1, rng),
            Head::new(90, 7, rng),
            Head::new(80, 20, rng),
        ];
        let mut offsets = Vec::with_capacity(heads.len() + 1);
        let mut total = 0;
        for h in &heads {
            offsets.push(total);
            total += h.width();
        }
        offsets.push(total);
        MultiHeaded {
            heads,
            offsets,
            tail: FcBlock::new(total, rng),
            out: Dense::new(FcBlock::<F>::OUT, NUM_CLASSES, rng),
        }
    }

    /// Concatenation offsets of the head features (last entry = total width).
    pub fn fusion_offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn forward_logits(
        &mut self,
        x: &Array3<F>,
        phase: Phase,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array2<F>> {
        check_window_batch(x)?;
        let img = x.view().insert_axis(Axis(1)).to_owned(); // (B, 1, rows, ch)
        let feats: Vec<Array2<F>> = self
            .heads
            .iter_mut()
            .map(|h| h.forward(&img, phase, rng))
            .collect();
        let views: Vec<ArrayView2<'_, F>> = feats.iter().map(|f| f.view()).collect();
        let (fused, offsets) = fuse(&views)?;
        debug_assert_eq!(offsets, self.offsets);
        let feat = self.tail.forward(&fused, phase, rng);
        Ok(self.out.forward(&feat, phase))
    }

    pub fn backward(&mut self, dlogits: &Array2<F>) {
        let d = self.out.backward(dlogits);
        let d = self.tail.backward(&d);
        for (head, dpart) in self.heads.iter_mut().zip(split_fused(&d, &self.offsets)) {
            head.backward(&dpart);
        }
    }

    pub fn step(&mut self, cfg: &AdamConfig, t: usize) {
        for h in &mut self.heads {
            h.step(cfg, t);
        }
        self.tail.step(cfg, t);
        self.out.step(cfg, t);
    }

    pub fn set_dropout_rates(&mut self, rate: f64) {
        for h in &mut self.heads {
            h.set_dropout_rate(rate);
        }
        self.tail.set_dropout_rate(rate);
    }
}

impl<F: Float> HasParams<F> for MultiHeaded<F> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(ParamRef<'_, F>)) {
        for (i, h) in self.heads.iter_mut().enumerate() {
            h.visit(&format!("head{i}"), f);
        }
        self.tail.visit("tail", f);
        self.out.visit("out", f);
    }

    fn for_each_state(&mut self, f: &mut dyn FnMut(&str, ndarray::ArrayViewMutD<'_, F>)) {
        for (i, h) in self.heads.iter_mut().enumerate() {
            h.visit_state(&format!("head{i}"), f);
        }
        self.tail.visit_state("tail", f);
    }
}

/// A stack of recurrent-convolution cells: every cell but the last feeds
/// the full output sequence forward; the last returns its final hidden
/// state, flattened to (B, filters × 25).
struct Branch<F: Float> {
    cells: Vec<ConvLstm<F>>,
    out_ch: usize,
}

impl<F: Float> Branch<F> {
    /// `specs` = (filters, kernel) per cell, input channels inferred.
    fn new(specs: &[(usize, usize)], rng: &mut ChaCha8Rng) -> Self {
        let mut cells = Vec::with_capacity(specs.len());
        let mut c_in = WINDOW_CHANNELS;
        for &(filters, k) in specs {
            cells.push(ConvLstm::new(c_in, filters, k, CHUNK, rng));
            c_in = filters;
        }
        Branch { cells, out_ch: c_in }
    }

    fn width(&self) -> usize {
        self.out_ch * CHUNK
    }

    fn forward(&mut self, xs: &Array4<F>, phase: Phase) -> Result<Array2<F>> {
        let b = xs.dim().0;
        let n = self.cells.len();
        let mut seq = xs.clone();
        for cell in &mut self.cells[..n - 1] {
            seq = cell.forward_sequence(&seq, phase)?;
        }
        let last = self.cells[n - 1].forward_last(&seq, phase)?;
        Ok(last.into_shape_with_order((b, self.width())).expect("contiguous"))
    }

    fn backward(&mut self, d: &Array2<F>) {
        let b = d.dim().0;
        let n = self.cells.len();
        let d3 = d
            .view()
            .into_shape_with_order((b, self.out_ch, CHUNK))
            .expect("contiguous")
            .to_owned();
        let mut dseq = self.cells[n - 1].backward_last(&d3);
        for cell in self.cells[..n - 1].iter_mut().rev() {
            dseq = cell.backward_sequence(&dseq);
        }
    }

    fn step(&mut self, cfg: &AdamConfig, t: usize) {
        for c in &mut self.cells {
            c.step(cfg, t);
        }
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, F>)) {
        for (i, c) in self.cells.iter_mut().enumerate() {
            c.visit(&format!("{prefix}.cell{i}"), f);
        }
    }
}

/// Two-step early-fusion recurrent model: three branches of stacked
/// recurrent-convolution cells, a first fusion of the flattened branch
/// features, four dense blocks (one per branch plus one on the fusion),
/// and a second fusion of their outputs feeding the softmax layer.
pub struct Casu2Net<F: Float> {
    branch1: Branch<F>,
    branch2: Branch<F>,
    branch3: Branch<F>,
    fc_b1: FcBlock<F>,
    fc_b2: FcBlock<F>,
    fc_b3: FcBlock<F>,
    fc_fused: FcBlock<F>,
    out: Dense<F>,
    offsets1: Vec<usize>,
    offsets2: Vec<usize>,
}

impl<F: Float> Casu2Net<F> {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        let branch1 = Branch::new(&[(32, 5), (32, 5)], rng);
        let branch2 = Branch::new(&[(32, 5), (32, 5), (64, 5)], rng);
        let branch3 = Branch::new(&[(32, 5), (32, 5), (64, 3), (64, 3)], rng);
        let widths = [branch1.width(), branch2.width(), branch3.width()];
        let fused_width: usize = widths.iter().sum();
        let fc_b1 = FcBlock::new(widths[0], rng);
        let fc_b2 = FcBlock::new(widths[1], rng);
        let fc_b3 = FcBlock::new(widths[2], rng);
        let fc_fused = FcBlock::new(fused_width, rng);
        let out = Dense::new(4 * FcBlock::<F>::OUT, NUM_CLASSES, rng);
        let offsets1 = vec![0, widths[0], widths[0] + widths[1], fused_width];
        let offsets2 = (0..=4).map(|i| i * FcBlock::<F>::OUT).collect();
        Casu2Net {
            branch1,
            branch2,
            branch3,
            fc_b1,
            fc_b2,
            fc_b3,
            fc_fused,
            out,
            offsets1,
            offsets2,
        }
    }

    /// Re-cut a window batch into per-step maps: out[b, t, s, j] =
    /// x[b, 25·t + j, s] — five consecutive 25-sample chunks, sensors as
    /// channels, the chunk as a 1 × 25 map.
    fn to_sequence(x: &Array3<F>) -> Array4<F> {
        let b = x.dim().0;
        x.view()
            .into_shape_with_order((b, SEQ_LEN, CHUNK, WINDOW_CHANNELS))
            .expect("contiguous")
            .permuted_axes([0, 1, 3, 2])
            .as_standard_layout()
            .to_owned()
    }

    pub fn forward_logits(
        &mut self,
        x: &Array3<F>,
        phase: Phase,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array2<F>> {
        check_window_batch(x)?;
        let xs = Self::to_sequence(x);
        let f1 = self.branch1.forward(&xs, phase)?;
        let f2 = self.branch2.forward(&xs, phase)?;
        let f3 = self.branch3.forward(&xs, phase)?;
        let (fused1, off1) = fuse(&[f1.view(), f2.view(), f3.view()])?;
        debug_assert_eq!(off1, self.offsets1);
        let h1 = self.fc_b1.forward(&f1, phase, rng);
        let h2 = self.fc_b2.forward(&f2, phase, rng);
        let h3 = self.fc_b3.forward(&f3, phase, rng);
        let h4 = self.fc_fused.forward(&fused1, phase, rng);
        let (fused2, off2) = fuse(&[h1.view(), h2.view(), h3.view(), h4.view()])?;
        debug_assert_eq!(off2, self.offsets2);
        Ok(self.out.forward(&fused2, phase))
    }

    pub fn backward(&mut self, dlogits: &Array2<F>) {
        let d = self.out.backward(dlogits);
        let dh = split_fused(&d, &self.offsets2);
        let db1_direct = self.fc_b1.backward(&dh[0]);
        let db2_direct = self.fc_b2.backward(&dh[1]);
        let db3_direct = self.fc_b3.backward(&dh[2]);
        let dfused1 = self.fc_fused.backward(&dh[3]);
        let dvia = split_fused(&dfused1, &self.offsets1);
        // Each branch feature feeds both its own dense block and the first
        // fusion; the gradients add.
        self.branch1.backward(&(&db1_direct + &dvia[0]));
        self.branch2.backward(&(&db2_direct + &dvia[1]));
        self.branch3.backward(&(&db3_direct + &dvia[2]));
    }

    pub fn step(&mut self, cfg: &AdamConfig, t: usize) {
        self.branch1.step(cfg, t);
        self.branch2.step(cfg, t);
        self.branch3.step(cfg, t);
        self.fc_b1.step(cfg, t);
        self.fc_b2.step(cfg, t);
        self.fc_b3.step(cfg, t);
        self.fc_fused.step(cfg, t);
        self.out.step(cfg, t);
    }

    pub fn set_dropout_rates(&mut self, rate: f64) {
        self.fc_b1.set_dropout_rate(rate);
        self.fc_b2.set_dropout_rate(rate);
        self.fc_b3.set_dropout_rate(rate);
        self.fc_fused.set_dropout_rate(rate);
    }

    /// Deterministic activations at one of the two fusion points: the
    /// concatenated branch features (4000 wide) or the concatenated
    /// dense-block outputs feeding the classifier (256 wide). Used for
    /// embedding plots of what the network has learned to separate.
    pub fn fused_features(&mut self, x: &Array3<F>, tap: FusionTap) -> Result<Array2<F>> {
        check_window_batch(x)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0); // Eval draws nothing
        let xs = Self::to_sequence(x);
        let f1 = self.branch1.forward(&xs, Phase::Eval)?;
        let f2 = self.branch2.forward(&xs, Phase::Eval)?;
        let f3 = self.branch3.forward(&xs, Phase::Eval)?;
        let (fused1, _) = fuse(&[f1.view(), f2.view(), f3.view()])?;
        if tap == FusionTap::Fusion1 {
            return Ok(fused1);
        }
        let h1 = self.fc_b1.forward(&f1, Phase::Eval, &mut rng);
        let h2 = self.fc_b2.forward(&f2, Phase::Eval, &mut rng);
        let h3 = self.fc_b3.forward(&f3, Phase::Eval, &mut rng);
        let h4 = self.fc_fused.forward(&fused1, Phase::Eval, &mut rng);
        let (fused2, _) = fuse(&[h1.view(), h2.view(), h3.view(), h4.view()])?;
        Ok(fused2)
    }
}

impl<F: Float> HasParams<F> for Casu2Net<F> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(ParamRef<'_, F>)) {
        self.branch1.visit("branch1", f);
        self.branch2.visit("branch2", f);
        self.branch3.visit("branch3", f);
        self.fc_b1.visit("fc_b1", f);
        self.fc_b2.visit("fc_b2", f);
        self.fc_b3.visit("fc_b3", f);
        self.fc_fused.visit("fc_fused", f);
        self.out.visit("out", f);
    }

    fn for_each_state(&mut self, f: &mut dyn FnMut(&str, ndarray::ArrayViewMutD<'_, F>)) {
        self.fc_b1.visit_state("fc_b1", f);
        self.fc_b2.visit_state("fc_b2", f);
        self.fc_b3.visit_state("fc_b3", f);
        self.fc_fused.visit_state("fc_fused", f);
    }
}

/// Runtime-selected model, one variant per [`Arch`].
pub enum AnyModel<F: Float> {
    SimpleCnn(SimpleCnn<F>),
    MultiHeaded(MultiHeaded<F>),
    Casu2Net(Casu2Net<F>),
}

/// Build a freshly initialized model; the same (arch, seed) pair always
/// yields bit-identical parameters.
pub fn build_model<F: Float>(arch: Arch, seed: u64) -> AnyModel<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match arch {
        Arch::SimpleCnn => AnyModel::SimpleCnn(SimpleCnn::new(&mut rng)),
        Arch::MultiHeaded => AnyModel::MultiHeaded(MultiHeaded::new(&mut rng)),
        Arch::Casu2Net => AnyModel::Casu2Net(Casu2Net::new(&mut rng)),
    }
}

impl<F: Float> AnyModel<F> {
    pub fn arch(&self) -> Arch {
        match self {
            AnyModel::SimpleCnn(_) => Arch::SimpleCnn,
            AnyModel::MultiHeaded(_) => Arch::MultiHeaded,
            AnyModel::Casu2Net(_) => Arch::Casu2Net,
        }
    }

    pub fn forward_logits(
        &mut self,
        x: &Array3<F>,
        phase: Phase,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array2<F>> {
        match self {
            AnyModel::SimpleCnn(m) => m.forward_logits(x, phase, rng),
            AnyModel::MultiHeaded(m) => m.forward_logits(x, phase, rng),
            AnyModel::Casu2Net(m) => m.forward_logits(x, phase, rng),
        }
    }

    /// Class probabilities (softmax over the logits); rows sum to 1.
    pub fn predict(
        &mut self,
        x: &Array3<F>,
        phase: Phase,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array2<F>> {
        Ok(softmax(&self.forward_logits(x, phase, rng)?))
    }

    pub fn backward(&mut self, dlogits: &Array2<F>) {
        match self {
            AnyModel::SimpleCnn(m) => m.backward(dlogits),
            AnyModel::MultiHeaded(m) => m.backward(dlogits),
            AnyModel::Casu2Net(m) => m.backward(dlogits),
        }
    }

    pub fn step(&mut self, cfg: &AdamConfig, t: usize) {
        match self {
            AnyModel::SimpleCnn(m) => m.step(cfg, t),
            AnyModel::MultiHeaded(m) => m.step(cfg, t),
            AnyModel::Casu2Net(m) => m.step(cfg, t),
        }
    }

    /// Override every dropout layer's rate (e.g. 0.0 to make stochastic
    /// passes deterministic). Rates are architectural constants otherwise;
    /// this is an inference-time experiment knob, not a training option.
    pub fn set_dropout_rates(&mut self, rate: f64) {
        match self {
            AnyModel::SimpleCnn(m) => m.set_dropout_rates(rate),
            AnyModel::MultiHeaded(m) => m.set_dropout_rates(rate),
            AnyModel::Casu2Net(m) => m.set_dropout_rates(rate),
        }
    }

    /// Fused-feature activations; only the two-step fusion architecture
    /// has the taps.
    pub fn fused_features(&mut self, x: &Array3<F>, tap: FusionTap) -> Result<Array2<F>> {
        match self {
            AnyModel::Casu2Net(m) => m.fused_features(x, tap),
            other => Err(Error::invalid(format!(
                "{} has no fusion taps; embedding features require casu2net",
                other.arch()
            ))),
        }
    }
}

impl<F: Float> HasParams<F> for AnyModel<F> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(ParamRef<'_, F>)) {
        match self {
            AnyModel::SimpleCnn(m) => m.for_each_param(f),
            AnyModel::MultiHeaded(m) => m.for_each_param(f),
            AnyModel::Casu2Net(m) => m.for_each_param(f),
        }
    }

    fn for_each_state(&mut self, f: &mut dyn FnMut(&str, ndarray::ArrayViewMutD<'_, F>)) {
        match self {
            AnyModel::SimpleCnn(m) => m.for_each_state(f),
            AnyModel::MultiHeaded(m) => m.for_each_state(f),
            AnyModel::Casu2Net(m) => m.for_each_state(f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use crate::nn::layers::softmax_cross_entropy;
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn window_batch(b: usize, seed: u64) -> Array3<f32> {
        let mut r = rng(seed);
        Array3::from_shape_simple_fn((b, WINDOW_ROWS, WINDOW_CHANNELS), || {
            r.gen_range(-1.0f32..1.0)
        })
    }

    // Exact trainable-scalar counts, derived from the layer arithmetic.
    // SimpleCnn: convs 512 + 3_104 + 6_208 + 12_352, batch-norms 64 +
    // 16_000, dense 1_024_128 + 8_256 + 520.
    #[test]
    fn simple_cnn_parameter_count() {
        let mut m = build_model::<f32>(Arch::SimpleCnn, 0);
        assert_eq!(m.parameter_count(), 1_071_144);
    }

    // Heads 600 + 3_240 + 8_080 with norms 200 + 180 + 160; flat width
    // 31_690 gives norm 63_380 and dense 4_056_448; then 8_256 + 520.
    #[test]
    fn multi_headed_parameter_count() {
        let mut m = build_model::<f32>(Arch::MultiHeaded, 0);
        assert_eq!(m.parameter_count(), 4_141_064);
    }

    // Branches 69_696 + 197_632 + 251_840 (kernels and peepholes), dense
    // blocks 112_384 + 216_384 + 216_384 + 528_384, output 2_056.
    #[test]
    fn casu2net_parameter_count() {
        let mut m = build_model::<f32>(Arch::Casu2Net, 0);
        assert_eq!(m.parameter_count(), 1_594_760);
    }

    #[test]
    fn fusion_taps_have_documented_widths() {
        let mut m = build_model::<f32>(Arch::Casu2Net, 5);
        let x = window_batch(3, 21);
        let f1 = m.fused_features(&x, FusionTap::Fusion1).unwrap();
        let f2 = m.fused_features(&x, FusionTap::Fusion2).unwrap();
        assert_eq!(f1.dim(), (3, 4000));
        assert_eq!(f2.dim(), (3, 256));
        // Taps are deterministic: dropout never fires in them.
        let again = m.fused_features(&x, FusionTap::Fusion2).unwrap();
        assert!(f2.iter().zip(again.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        // Only the fusion architecture has the taps.
        for arch in [Arch::SimpleCnn, Arch::MultiHeaded] {
            let mut other = build_model::<f32>(arch, 5);
            assert!(other.fused_features(&x, FusionTap::Fusion1).is_err());
        }
        assert_eq!("fusion1".parse::<FusionTap>().unwrap(), FusionTap::Fusion1);
        assert!("fusion3".parse::<FusionTap>().is_err());
    }

    #[test]
    fn predictions_are_probability_rows() {
        for arch in Arch::ALL {
            let mut m = build_model::<f32>(arch, 3);
            let x = window_batch(4, 17);
            let p = m.predict(&x, Phase::Eval, &mut rng(0)).unwrap();
            assert_eq!(p.dim(), (4, NUM_CLASSES), "{arch}");
            for row in p.rows() {
                let sum: f32 = row.sum();
                assert!((sum - 1.0).abs() < 1e-5, "{arch}: row sum {sum}");
                assert!(row.iter().all(|&v| v.is_finite() && v >= 0.0), "{arch}");
            }
        }
    }

    #[test]
    fn multi_headed_concat_width_follows_kernel_arithmetic() {
        // 100·(125−1+1), 90·(125−7+1), 80·(125−20+1).
        let m = MultiHeaded::<f32>::new(&mut rng(0));
        assert_eq!(m.fusion_offsets(), &[0, 12_500, 23_210, 31_690]);
    }

    #[test]
    fn same_seed_same_initial_parameters() {
        for arch in Arch::ALL {
            let mut a = build_model::<f32>(arch, 11);
            let mut b = build_model::<f32>(arch, 11);
            let mut va = Vec::new();
            a.for_each_param(&mut |p| va.extend(p.value.iter().copied()));
            let mut vb = Vec::new();
            b.for_each_param(&mut |p| vb.extend(p.value.iter().copied()));
            assert_eq!(va, vb, "{arch}: same seed must reproduce init");
            let mut c = build_model::<f32>(arch, 12);
            let mut vc = Vec::new();
            c.for_each_param(&mut |p| vc.extend(p.value.iter().copied()));
            assert_ne!(va, vc, "{arch}: different seed must differ");
        }
    }

    #[test]
    fn wrong_input_shapes_rejected() {
        for arch in Arch::ALL {
            let mut m = build_model::<f32>(arch, 0);
            let short = Array3::<f32>::zeros((2, 100, 5));
            assert!(m.predict(&short, Phase::Eval, &mut rng(0)).is_err());
            let narrow = Array3::<f32>::zeros((2, 125, 4));
            assert!(m.predict(&narrow, Phase::Eval, &mut rng(0)).is_err());
        }
    }

    #[test]
    fn arch_names_round_trip() {
        for arch in Arch::ALL {
            assert_eq!(arch.name().parse::<Arch>().unwrap(), arch);
        }
        assert!("resnet".parse::<Arch>().is_err());
        // Serde names match the CLI names.
        let json = serde_json::to_string(&Arch::Casu2Net).unwrap();
        assert_eq!(json, "\"casu2net\"");
    }

    #[test]
    fn fuse_widths_additive_and_offsets_slice_back() {
        let mut r = rng(5);
        let parts: Vec<Array2<f64>> = [64, 128, 256]
            .iter()
            .map(|&w| Array2::from_shape_simple_fn((3, w), || r.gen_range(-1.0..1.0)))
            .collect();
        let views: Vec<ArrayView2<'_, f64>> = parts.iter().map(|p| p.view()).collect();
        let (fused, offsets) = fuse(&views).unwrap();
        assert_eq!(fused.dim(), (3, 448));
        assert_eq!(offsets, vec![0, 64, 192, 448]);
        for (part, pair) in parts.iter().zip(offsets.windows(2)) {
            assert_eq!(fused.slice(s![.., pair[0]..pair[1]]), *part);
        }
        // Singleton fusion is the identity.
        let (single, off) = fuse(&[parts[0].view()]).unwrap();
        assert_eq!(single, parts[0]);
        assert_eq!(off, vec![0, 64]);
    }

    #[test]
    fn fuse_rejects_batch_mismatch() {
        let a = Array2::<f32>::zeros((3, 4));
        let b = Array2::<f32>::zeros((2, 4));
        assert!(fuse(&[a.view(), b.view()]).is_err());
        assert!(fuse::<f32>(&[]).is_err());
    }

    #[test]
    fn sequence_cut_matches_window_layout() {
        let mut r = rng(6);
        let x = Array3::from_shape_simple_fn((2, WINDOW_ROWS, WINDOW_CHANNELS), || {
            r.gen_range(-1.0f64..1.0)
        });
        let xs = Casu2Net::to_sequence(&x);
        assert_eq!(xs.dim(), (2, SEQ_LEN, WINDOW_CHANNELS, CHUNK));
        for b in 0..2 {
            for t in 0..SEQ_LEN {
                for s in 0..WINDOW_CHANNELS {
                    for j in 0..CHUNK {
                        assert_eq!(xs[(b, t, s, j)], x[(b, CHUNK * t + j, s)]);
                    }
                }
            }
        }
    }

    /// Full-network gradient check: probe one scalar inside every tensor
    /// so each layer's wiring (permutes, flattens, fusion splits) is
    /// exercised. Dropout masks are held fixed by reseeding the RNG on
    /// every loss evaluation.
    fn gradcheck_arch(arch: Arch) {
        let mut model = build_model::<f64>(arch, 21);
        let mut r = rng(31);
        let x = Array3::from_shape_simple_fn((2, WINDOW_ROWS, WINDOW_CHANNELS), || {
            r.gen_range(-1.0..1.0)
        });
        // Zero-initialized peepholes would hide part of the recurrent
        // backward path; nudge every parameter off its init instead.
        model.for_each_param(&mut |mut p| {
            p.value.mapv_inplace(|v| v + r.gen_range(-0.05..0.05));
        });
        let labels = vec![2u8, 5u8];
        // Both evaluations run in Train phase so the probes differentiate
        // the same function the backward pass saw (batch statistics, live
        // dropout); the reseeded RNG pins the dropout masks.
        fn eval_loss(m: &mut AnyModel<f64>, x: &Array3<f64>, labels: &[u8], train: bool) -> f64 {
            let mut drop_rng = ChaCha8Rng::seed_from_u64(1234);
            let logits = m.forward_logits(x, Phase::Train, &mut drop_rng).unwrap();
            let (loss, _, dlogits) = softmax_cross_entropy(&logits, labels);
            if train {
                m.backward(&dlogits);
            }
            loss
        }
        let spans = gradcheck::tensor_spans(&mut model);
        let probes: Vec<usize> = spans
            .iter()
            .flat_map(|&(_, off, len)| [off + len / 3, off + 2 * len / 3])
            .collect();
        gradcheck::check_at(
            &mut model,
            &mut |m| {
                m.zero_grads();
                eval_loss(m, &x, &labels, true)
            },
            &mut |m| eval_loss(m, &x, &labels, false),
            &probes,
            // Small step: an early conv weight influences thousands of ReLU
            // pre-activations, and any kink inside ±eps contaminates the
            // central difference. f64 keeps the noise floor far below this.
            1e-5,
            2e-4,
        );
    }

    #[test]
    fn simple_cnn_end_to_end_gradients() {
        gradcheck_arch(Arch::SimpleCnn);
    }

    #[test]
    fn multi_headed_end_to_end_gradients() {
        gradcheck_arch(Arch::MultiHeaded);
    }

    #[test]
    fn casu2net_end_to_end_gradients() {
        gradcheck_arch(Arch::Casu2Net);
    }
}
