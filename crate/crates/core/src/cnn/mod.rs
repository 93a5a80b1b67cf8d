//! Two-stage convolutional classifier over reshaped feature vectors.
//!
//! reshape → conv+ReLU → pool → conv+ReLU → pool → flatten → dense+ReLU →
//! dropout → dense → softmax. Convolutions are 3×3 "same", pooling is 2×2
//! stride 2. Dense layers run on the whole minibatch at once; the conv
//! stack runs per sample.

mod layers;
mod params;

pub use layers::{col2im, conv2d, im2col, maxpool_2x2, KERNEL};
pub use params::{CnnGradients, CnnWeights};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::rng::SplitMix64;
use crate::tensor::{self, Matrix, Vector};
use crate::train::cross_entropy;
use crate::vit::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchName {
    Arch1,
    Arch2,
    Custom,
}

impl fmt::Display for ArchName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchName::Arch1 => "arch1",
            ArchName::Arch2 => "arch2",
            ArchName::Custom => "custom",
        })
    }
}

impl FromStr for ArchName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arch1" => Ok(ArchName::Arch1),
            "arch2" => Ok(ArchName::Arch2),
            other => Err(Error::invalid("architecture", format!("`{other}` (expected arch1 or arch2)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    pub name: ArchName,
    pub conv_filters: (usize, usize),
    pub dense_units: usize,
    pub dropout_rate: f64,
    pub num_classes: usize,
}

impl ArchitectureSpec {
    /// 32/64 filters, 128 dense units, dropout 0.5.
    pub fn arch1(num_classes: usize) -> Self {
        Self {
            name: ArchName::Arch1,
            conv_filters: (32, 64),
            dense_units: 128,
            dropout_rate: 0.5,
            num_classes,
        }
    }

    /// 64/128 filters, 512 dense units, dropout 0.1.
    pub fn arch2(num_classes: usize) -> Self {
        Self {
            name: ArchName::Arch2,
            conv_filters: (64, 128),
            dense_units: 512,
            dropout_rate: 0.1,
            num_classes,
        }
    }

    pub fn named(name: ArchName, num_classes: usize) -> Result<Self> {
        match name {
            ArchName::Arch1 => Ok(Self::arch1(num_classes)),
            ArchName::Arch2 => Ok(Self::arch2(num_classes)),
            ArchName::Custom => Err(Error::invalid("architecture", "custom specs have no preset")),
        }
    }

    /// Recovers the spec implied by a set of weights. Dropout is not stored
    /// with the weights and only matters for training.
    pub fn from_weights(w: &CnnWeights) -> Self {
        let classes = w.num_classes();
        for preset in [Self::arch1(classes), Self::arch2(classes)] {
            if preset.conv_filters == w.filters() && preset.dense_units == w.dense_units() {
                return preset;
            }
        }
        Self {
            name: ArchName::Custom,
            conv_filters: w.filters(),
            dense_units: w.dense_units(),
            dropout_rate: 0.0,
            num_classes: classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("architecture", format!("dropout {} outside [0, 1)", self.dropout_rate)));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("architecture", "need at least two classes"));
        }
        if self.conv_filters.0 == 0 || self.conv_filters.1 == 0 || self.dense_units == 0 {
            return Err(Error::invalid("architecture", "layer widths must be positive"));
        }
        Ok(())
    }
}

/// Channels-last 3-D activation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

/// Spatial geometry of the conv stack for a given feature length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureShape {
    pub side: usize,
    pub pooled1: usize,
    pub pooled2: usize,
}

impl FeatureShape {
    pub fn for_len(len: usize) -> Result<Self> {
        let side = square_side(len);
        let shape = Self { side, pooled1: side / 2, pooled2: side / 4 };
        if len == 0 || shape.pooled2 == 0 {
            return Err(Error::invalid("feature length", format!("{len} too short for two 2×2 pools")));
        }
        Ok(shape)
    }

    pub fn flat_len(&self, filters2: usize) -> usize {
        self.pooled2 * self.pooled2 * filters2
    }
}

/// `ceil(√len)` in exact integer arithmetic.
pub fn square_side(len: usize) -> usize {
    let mut s = (len as f64).sqrt() as usize;
    while s * s < len {
        s += 1;
    }
    while s > 0 && (s - 1) * (s - 1) >= len {
        s -= 1;
    }
    s
}

/// `s × s × 1` map, row-major, zero-padded past the feature length.
pub fn reshape_features(f: &[f64]) -> FeatureMap {
    let s = square_side(f.len()).max(1);
    let mut values = vec![0.0; s * s];
    values[..f.len()].copy_from_slice(f);
    FeatureMap { height: s, width: s, channels: 1, values }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Inverted dropout with masks drawn from this seed.
    Train { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities(pub Vector);

impl ClassProbabilities {
    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    /// Highest probability, ties to the lowest class index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mask seed for sample `index` of a minibatch trained under `seed`.
pub fn sample_mask_seed(seed: u64, index: usize) -> u64 {
    SplitMix64::new(seed ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)).next_u64()
}

/// Per-unit multipliers: 0 for dropped units, `1/(1−rate)` for survivors.
pub fn dropout_mask(units: usize, rate: f64, seed: u64) -> Vector {
    let mut rng = SplitMix64::substream(seed, "dropout");
    let keep = 1.0 / (1.0 - rate);
    (0..units)
        .map(|_| if rng.next_f64() < rate { 0.0 } else { keep })
        .collect()
}

/// What the backward pass needs from one sample's conv stack. The
/// pre-activations are not kept: the pooled values decide ReLU gradients.
struct ConvCache {
    p1: FeatureMap,
    arg1: Vec<u32>,
    arg2: Vec<u32>,
}

fn check_input(f: &[f64], w: &CnnWeights) -> Result<FeatureShape> {
    if f.len() != w.input_len {
        return Err(Error::shape(
            "cnn forward",
            format!("feature length {}", f.len()),
            format!("weights built for length {}", w.input_len),
        ));
    }
    FeatureShape::for_len(f.len())
}

fn conv_stack(f: &[f64], w: &CnnWeights) -> Result<(ConvCache, Vec<f64>)> {
    let g1 = layers::conv_grid(&reshape_features(f), &w.conv1_kernels, &w.conv1_bias)?;
    let (p1, arg1) = layers::relu_pool(&g1);
    drop(g1);
    let g2 = layers::conv_grid(&p1, &w.conv2_kernels, &w.conv2_bias)?;
    let (p2, arg2) = layers::relu_pool(&g2);
    Ok((ConvCache { p1, arg1, arg2 }, p2.values))
}

struct BatchForward {
    convs: Vec<ConvCache>,
    flat: Matrix,
    hidden_pre: Matrix,
    masks: Option<Matrix>,
    hidden: Matrix,
    probs: Matrix,
}

fn forward_batch(
    inputs: &[&[f64]],
    spec: &ArchitectureSpec,
    w: &CnnWeights,
    mask_seeds: Option<&[u64]>,
    mode: Parallelism,
) -> Result<BatchForward> {
    if inputs.is_empty() {
        return Err(Error::invalid("batch", "empty"));
    }
    for f in inputs {
        check_input(f, w)?;
    }
    let stacks = par::map(mode, inputs, |f| conv_stack(f, w))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let b = inputs.len();
    let flat_len = w.input_flat_len();
    let mut flat = Matrix::zeros(b, flat_len);
    let mut convs = Vec::with_capacity(b);
    for (i, (cache, pooled)) in stacks.into_iter().enumerate() {
        flat.row_mut(i).copy_from_slice(&pooled);
        convs.push(cache);
    }
    let mut hidden_pre = tensor::matmul(&flat, &w.dense)?;
    hidden_pre.add_row_vector(&w.dense_bias);
    let mut hidden = Matrix::new(b, w.dense_units(), tensor::relu(hidden_pre.data()))?;
    let masks = mask_seeds.map(|seeds| {
        let mut m = Matrix::zeros(b, w.dense_units());
        for (i, &s) in seeds.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&dropout_mask(w.dense_units(), spec.dropout_rate, s));
        }
        m
    });
    if let Some(m) = &masks {
        for (h, k) in hidden.data_mut().iter_mut().zip(m.data()) {
            *h *= k;
        }
    }
    let mut logits = tensor::matmul(&hidden, &w.output)?;
    logits.add_row_vector(&w.output_bias);
    let probs = tensor::softmax_rows(&logits);
    Ok(BatchForward { convs, flat, hidden_pre, masks, hidden, probs })
}

fn check_spec(spec: &ArchitectureSpec, w: &CnnWeights) -> Result<()> {
    spec.validate()?;
    if spec.conv_filters != w.filters() || spec.dense_units != w.dense_units() || spec.num_classes != w.num_classes() {
        return Err(Error::shape(
            "cnn",
            format!("spec {:?}/{}/{}", spec.conv_filters, spec.dense_units, spec.num_classes),
            format!("weights {:?}/{}/{}", w.filters(), w.dense_units(), w.num_classes()),
        ));
    }
    Ok(())
}

/// Class probabilities for one feature vector.
pub fn forward(f: &FeatureVector, spec: &ArchitectureSpec, w: &CnnWeights, mode: Mode) -> Result<ClassProbabilities> {
    check_spec(spec, w)?;
    let seeds = match mode {
        Mode::Eval => None,
        Mode::Train { seed } => Some(vec![sample_mask_seed(seed, 0)]),
    };
    let out = forward_batch(&[&f.values], spec, w, seeds.as_deref(), Parallelism::Sequential)?;
    Ok(ClassProbabilities(out.probs.row(0).to_vec()))
}

/// Eval-mode probabilities for many vectors, in input order.
pub fn forward_many(
    features: &[FeatureVector],
    spec: &ArchitectureSpec,
    w: &CnnWeights,
    mode: Parallelism,
) -> Result<Vec<ClassProbabilities>> {
    check_spec(spec, w)?;
    let mut out = Vec::with_capacity(features.len());
    // Chunked so that conv caches stay bounded.
    for chunk in features.chunks(32) {
        let inputs: Vec<&[f64]> = chunk.iter().map(|f| f.values.as_slice()).collect();
        let fwd = forward_batch(&inputs, spec, w, None, mode)?;
        out.extend((0..chunk.len()).map(|i| ClassProbabilities(fwd.probs.row(i).to_vec())));
    }
    Ok(out)
}

pub fn predict(f: &FeatureVector, spec: &ArchitectureSpec, w: &CnnWeights) -> Result<usize> {
    Ok(forward(f, spec, w, Mode::Eval)?.argmax())
}

pub fn predict_many(
    features: &[FeatureVector],
    spec: &ArchitectureSpec,
    w: &CnnWeights,
    mode: Parallelism,
) -> Result<Vec<usize>> {
    Ok(forward_many(features, spec, w, mode)?.iter().map(ClassProbabilities::argmax).collect())
}

/// Mean cross-entropy gradient over `batch` and the mean loss. Under
/// `Mode::Train { seed }` sample `i` uses the mask from
/// [`sample_mask_seed`]`(seed, i)`.
pub fn backward(
    batch: &[(&FeatureVector, usize)],
    spec: &ArchitectureSpec,
    w: &CnnWeights,
    mode: Mode,
) -> Result<(CnnGradients, f64)> {
    backward_with(batch, spec, w, mode, Parallelism::default())
}

pub fn backward_with(
    batch: &[(&FeatureVector, usize)],
    spec: &ArchitectureSpec,
    w: &CnnWeights,
    mode: Mode,
    par_mode: Parallelism,
) -> Result<(CnnGradients, f64)> {
    let seeds = match mode {
        Mode::Eval => None,
        Mode::Train { seed } => Some((0..batch.len()).map(|i| sample_mask_seed(seed, i)).collect::<Vec<_>>()),
    };
    backward_with_masks(batch, spec, w, seeds.as_deref(), par_mode)
}

/// Backward pass with explicit per-sample mask seeds (`None` = eval mode).
pub fn backward_with_masks(
    batch: &[(&FeatureVector, usize)],
    spec: &ArchitectureSpec,
    w: &CnnWeights,
    mask_seeds: Option<&[u64]>,
    par_mode: Parallelism,
) -> Result<(CnnGradients, f64)> {
    let mut grads = CnnWeights::zeros_like(w);
    let stats = backward_into(batch, spec, w, mask_seeds, par_mode, &mut grads)?;
    Ok((grads, stats.loss))
}

pub(crate) struct BackwardStats {
    pub loss: f64,
    /// Samples whose (train-mode) prediction matched the label.
    pub correct: usize,
}

/// Writes the mean gradient over `batch` into `grads`, which must be shaped
/// like `w`; its previous contents are ignored.
pub(crate) fn backward_into(
    batch: &[(&FeatureVector, usize)],
    spec: &ArchitectureSpec,
    w: &CnnWeights,
    mask_seeds: Option<&[u64]>,
    par_mode: Parallelism,
    grads: &mut CnnGradients,
) -> Result<BackwardStats> {
    check_spec(spec, w)?;
    if batch.is_empty() {
        return Err(Error::invalid("batch", "empty"));
    }
    for (i, &(_, label)) in batch.iter().enumerate() {
        if label >= spec.num_classes {
            return Err(Error::invalid(
                "label",
                format!("sample {i} has label {label} but only {} classes", spec.num_classes),
            ));
        }
    }
    if let Some(s) = mask_seeds {
        assert_eq!(s.len(), batch.len(), "one mask seed per sample");
    }
    assert!(grads.same_shape(w), "gradient buffer shaped like the weights");
    let inputs: Vec<&[f64]> = batch.iter().map(|(f, _)| f.values.as_slice()).collect();
    let fwd = forward_batch(&inputs, spec, w, mask_seeds, par_mode)?;
    let b = batch.len();
    let inv_b = 1.0 / b as f64;

    let mut loss = 0.0;
    let mut correct = 0;
    let mut dlogits = fwd.probs.clone();
    for (i, &(_, label)) in batch.iter().enumerate() {
        loss += cross_entropy(fwd.probs.row(i), label);
        correct += usize::from(argmax(fwd.probs.row(i)) == label);
        let row = dlogits.row_mut(i);
        row[label] -= 1.0;
        row.iter_mut().for_each(|g| *g *= inv_b);
    }
    loss *= inv_b;

    let (units, classes) = (w.dense_units(), w.num_classes());
    tensor::gemm(units, b, classes, fwd.hidden.data(), true, dlogits.data(), false, 0.0, grads.output.data_mut());
    grads.output_bias.copy_from_slice(&dlogits.column_sums());
    let mut dhidden = tensor::matmul_bt(&dlogits, &w.output)?;
    if let Some(m) = &fwd.masks {
        for (g, k) in dhidden.data_mut().iter_mut().zip(m.data()) {
            *g *= k;
        }
    }
    for (g, &z) in dhidden.data_mut().iter_mut().zip(fwd.hidden_pre.data()) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
    let flat_len = w.input_flat_len();
    tensor::gemm(flat_len, b, units, fwd.flat.data(), true, dhidden.data(), false, 0.0, grads.dense.data_mut());
    grads.dense_bias.copy_from_slice(&dhidden.column_sums());
    let dflat = tensor::matmul_bt(&dhidden, &w.dense)?;

    let conv_grads = par::map_range(par_mode, b, |i| {
        conv_backward(&fwd.convs[i], inputs[i], fwd.flat.row(i), dflat.row(i), w)
    });

    grads.conv1_kernels.data_mut().fill(0.0);
    grads.conv1_bias.fill(0.0);
    grads.conv2_kernels.data_mut().fill(0.0);
    grads.conv2_bias.fill(0.0);
    for g in &conv_grads {
        grads.conv1_kernels.add_assign(&g.k1);
        add_into(&mut grads.conv1_bias, &g.b1);
        grads.conv2_kernels.add_assign(&g.k2);
        add_into(&mut grads.conv2_bias, &g.b2);
    }
    Ok(BackwardStats { loss, correct })
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

struct ConvGrads {
    k1: Matrix,
    b1: Vector,
    k2: Matrix,
    b2: Vector,
}

fn conv_backward(cache: &ConvCache, f: &[f64], pooled: &[f64], dpooled: &[f64], w: &CnnWeights) -> ConvGrads {
    let p1 = &cache.p1;
    let g2 = layers::relu_pool_conv_backward(p1, &w.conv2_kernels, pooled, &cache.arg2, dpooled, true);
    let dp1 = g2.input.expect("input gradient requested");
    let x0 = reshape_features(f);
    let g1 = layers::relu_pool_conv_backward(&x0, &w.conv1_kernels, &p1.values, &cache.arg1, &dp1.values, false);
    ConvGrads { k1: g1.kernels, b1: g1.bias, k2: g2.kernels, b2: g2.bias }
}

/// Mean loss over `batch` without gradients.
pub fn batch_loss(
    batch: &[(&FeatureVector, usize)],
    spec: &ArchitectureSpec,
    w: &CnnWeights,
    mask_seeds: Option<&[u64]>,
) -> Result<f64> {
    check_spec(spec, w)?;
    let inputs: Vec<&[f64]> = batch.iter().map(|(f, _)| f.values.as_slice()).collect();
    let fwd = forward_batch(&inputs, spec, w, mask_seeds, Parallelism::Sequential)?;
    let total: f64 = batch
        .iter()
        .enumerate()
        .map(|(i, &(_, label))| cross_entropy(fwd.probs.row(i), label))
        .sum();
    Ok(total / batch.len() as f64)
}
