//! Small convolutional regressor written directly over `f64` buffers.
//!
//! ```text
//! 1xNxN -> conv3x3(8) -> relu -> maxpool2 -> conv3x3(16) -> relu -> maxpool2
//!       -> global average pool -> fc(16->32) -> relu -> fc(32->1)
//! ```
//!
//! With `N = 30` the spatial flow is 30 -> 15 -> 7. Convolutions use padding
//! 1 so they preserve size; pooling floors odd sizes.

mod checkpoint;
mod optim;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, CHECKPOINT_MAGIC};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use train::{
    cross_validate, fit, fold_partition, prescale_fields, train, CvOutcome, EpochRecord,
    FoldMode, FoldOutcome, FoldReport, Metrics, Sample, TrainConfig,
};

pub const CONV1_OUT: usize = 8;
pub const CONV2_OUT: usize = 16;
pub const HIDDEN: usize = 32;
pub const KERNEL: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum CnnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient in {param}[{index}]")]
    NonFiniteGradient { param: &'static str, index: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset has {found} samples, need at least {needed}")]
    TooFewSamples { found: usize, needed: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, CnnError>;

/// Row-major dense array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(CnnError::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    /// Stacks `B` square single-channel images into a `B x 1 x N x N` batch.
    pub fn batch_from_images<'a>(images: impl IntoIterator<Item = &'a [f64]>, size: usize) -> Result<Self> {
        let mut data = Vec::new();
        let mut count = 0;
        for img in images {
            if img.len() != size * size {
                return Err(CnnError::Shape(format!(
                    "image {count} has {} values, expected {}",
                    img.len(),
                    size * size
                )));
            }
            data.extend_from_slice(img);
            count += 1;
        }
        Self::new(vec![count, 1, size, size], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Name and shape of every parameter tensor, in storage order.
pub const PARAM_SHAPES: [(&str, &[usize]); 8] = [
    ("conv1.weight", &[CONV1_OUT, 1, KERNEL, KERNEL]),
    ("conv1.bias", &[CONV1_OUT]),
    ("conv2.weight", &[CONV2_OUT, CONV1_OUT, KERNEL, KERNEL]),
    ("conv2.bias", &[CONV2_OUT]),
    ("fc1.weight", &[HIDDEN, CONV2_OUT]),
    ("fc1.bias", &[HIDDEN]),
    ("fc2.weight", &[1, HIDDEN]),
    ("fc2.bias", &[1]),
];

/// One buffer per parameter tensor. Used for weights, gradients and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub fc1_w: Vec<f64>,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Vec<f64>,
    pub fc2_b: Vec<f64>,
}

impl ParamSet {
    pub fn zeros() -> Self {
        let z = |i: usize| vec![0.0; PARAM_SHAPES[i].1.iter().product()];
        Self {
            conv1_w: z(0),
            conv1_b: z(1),
            conv2_w: z(2),
            conv2_b: z(3),
            fc1_w: z(4),
            fc1_b: z(5),
            fc2_w: z(6),
            fc2_b: z(7),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 8] {
        [
            (PARAM_SHAPES[0].0, &self.conv1_w),
            (PARAM_SHAPES[1].0, &self.conv1_b),
            (PARAM_SHAPES[2].0, &self.conv2_w),
            (PARAM_SHAPES[3].0, &self.conv2_b),
            (PARAM_SHAPES[4].0, &self.fc1_w),
            (PARAM_SHAPES[5].0, &self.fc1_b),
            (PARAM_SHAPES[6].0, &self.fc2_w),
            (PARAM_SHAPES[7].0, &self.fc2_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 8] {
        [
            (PARAM_SHAPES[0].0, &mut self.conv1_w),
            (PARAM_SHAPES[1].0, &mut self.conv1_b),
            (PARAM_SHAPES[2].0, &mut self.conv2_w),
            (PARAM_SHAPES[3].0, &mut self.conv2_b),
            (PARAM_SHAPES[4].0, &mut self.fc1_w),
            (PARAM_SHAPES[5].0, &mut self.fc1_b),
            (PARAM_SHAPES[6].0, &mut self.fc2_w),
            (PARAM_SHAPES[7].0, &mut self.fc2_b),
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat copy in storage order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    /// Mutable access to the `index`-th scalar in storage order.
    pub fn flat_mut(&mut self, mut index: usize) -> &mut f64 {
        for (_, t) in self.tensors_mut() {
            if index < t.len() {
                return &mut t[index];
            }
            index -= t.len();
        }
        panic!("parameter index out of range");
    }

    fn add_assign(&mut self, other: &ParamSet) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Fixed layer layout plus the input size it was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_size: usize,
}

impl Architecture {
    pub fn new(input_size: usize) -> Result<Self> {
        if input_size < 4 {
            return Err(CnnError::Shape(format!(
                "input size {input_size} too small for two 2x2 poolings"
            )));
        }
        Ok(Self { input_size })
    }

    pub fn pooled_sizes(&self) -> (usize, usize) {
        let p1 = self.input_size / 2;
        (p1, p1 / 2)
    }

    /// SHA-256 over the layer description and input size.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"qcnn:conv3p1-relu-max2-conv3p1-relu-max2-gap-fc-relu-fc;");
        for (name, shape) in PARAM_SHAPES {
            h.update(name.as_bytes());
            for d in shape {
                h.update((*d as u64).to_le_bytes());
            }
        }
        h.update((self.input_size as u64).to_le_bytes());
        h.finalize().into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub arch: Architecture,
    pub params: ParamSet,
}

/// ReLU masks and pooling argmaxes for one forward pass; equal patterns
/// mean the network is locally linear between two parameter settings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern(Vec<u32>);

struct Cache {
    z1: Vec<f64>,
    p1: Vec<f64>,
    p1_idx: Vec<u32>,
    z2: Vec<f64>,
    p2_idx: Vec<u32>,
    gap: Vec<f64>,
    h_pre: Vec<f64>,
    out: f64,
}

impl CnnModel {
    pub fn zeros(arch: Architecture) -> Self {
        Self {
            arch,
            params: ParamSet::zeros(),
        }
    }

    /// Weights uniform in `+-sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::zeros();
        let fans = [
            (KERNEL * KERNEL, CONV1_OUT * KERNEL * KERNEL),
            (CONV1_OUT * KERNEL * KERNEL, CONV2_OUT * KERNEL * KERNEL),
            (CONV2_OUT, HIDDEN),
            (HIDDEN, 1),
        ];
        let weights = [
            &mut params.conv1_w,
            &mut params.conv2_w,
            &mut params.fc1_w,
            &mut params.fc2_w,
        ];
        for (w, (fan_in, fan_out)) in weights.into_iter().zip(fans) {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        Self { arch, params }
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let n = self.arch.input_size;
        match batch.shape() {
            [b, 1, h, w] if *h == n && *w == n => {
                if let Some(i) = batch.data.iter().position(|v| !v.is_finite()) {
                    return Err(CnnError::Shape(format!("non-finite input at flat index {i}")));
                }
                Ok(*b)
            }
            other => Err(CnnError::Shape(format!(
                "expected batch shape [B, 1, {n}, {n}], got {other:?}"
            ))),
        }
    }

    fn sample<'a>(&self, batch: &'a Tensor, b: usize) -> &'a [f64] {
        let n2 = self.arch.input_size * self.arch.input_size;
        &batch.data[b * n2..(b + 1) * n2]
    }

    /// Predictions with shape `B x 1`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let b = self.check_batch(batch)?;
        let out: Vec<f64> = (0..b)
            .into_par_iter()
            .map(|i| self.forward_sample(self.sample(batch, i)).out)
            .collect();
        Tensor::new(vec![b, 1], out)
    }

    pub fn activation_pattern(&self, batch: &Tensor) -> Result<ActivationPattern> {
        let b = self.check_batch(batch)?;
        let mut bits = Vec::new();
        for i in 0..b {
            let c = self.forward_sample(self.sample(batch, i));
            bits.extend(c.z1.iter().map(|&z| (z > 0.0) as u32));
            bits.extend(c.p1_idx.iter().copied());
            bits.extend(c.z2.iter().map(|&z| (z > 0.0) as u32));
            bits.extend(c.p2_idx.iter().copied());
            bits.extend(c.h_pre.iter().map(|&z| (z > 0.0) as u32));
        }
        Ok(ActivationPattern(bits))
    }

    /// Mean loss over the batch and its gradient with respect to every parameter.
    pub fn backward(&self, batch: &Tensor, targets: &[f64], kind: LossKind) -> Result<(f64, ParamSet)> {
        let b = self.check_batch(batch)?;
        if targets.len() != b {
            return Err(CnnError::Shape(format!("{} targets for batch of {b}", targets.len())));
        }
        let caches: Vec<Cache> = (0..b)
            .into_par_iter()
            .map(|i| self.forward_sample(self.sample(batch, i)))
            .collect();
        let preds: Vec<f64> = caches.iter().map(|c| c.out).collect();
        let (value, dout) = loss(&preds, targets, kind)?;
        let per_sample: Vec<ParamSet> = caches
            .par_iter()
            .zip(dout.par_iter())
            .enumerate()
            .map(|(i, (cache, &d))| self.backward_sample(self.sample(batch, i), cache, d))
            .collect();
        // Summed in sample order so results do not depend on thread scheduling.
        let mut grads = ParamSet::zeros();
        for g in &per_sample {
            grads.add_assign(g);
        }
        Ok((value, grads))
    }

    fn forward_sample(&self, input: &[f64]) -> Cache {
        let p = &self.params;
        let n = self.arch.input_size;
        let (s1, s2) = self.arch.pooled_sizes();

        let z1 = conv3x3(input, 1, n, &p.conv1_w, &p.conv1_b, CONV1_OUT);
        let a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
        let (p1, p1_idx) = maxpool2(&a1, CONV1_OUT, n);

        let z2 = conv3x3(&p1, CONV1_OUT, s1, &p.conv2_w, &p.conv2_b, CONV2_OUT);
        let a2: Vec<f64> = z2.iter().map(|&z| z.max(0.0)).collect();
        let (p2, p2_idx) = maxpool2(&a2, CONV2_OUT, s1);

        let area = (s2 * s2) as f64;
        let gap: Vec<f64> = p2.chunks_exact(s2 * s2).map(|c| c.iter().sum::<f64>() / area).collect();

        let h_pre: Vec<f64> = (0..HIDDEN)
            .map(|k| {
                let row = &p.fc1_w[k * CONV2_OUT..(k + 1) * CONV2_OUT];
                p.fc1_b[k] + row.iter().zip(&gap).map(|(w, g)| w * g).sum::<f64>()
            })
            .collect();
        let out = p.fc2_b[0]
            + p.fc2_w
                .iter()
                .zip(&h_pre)
                .map(|(w, h)| w * h.max(0.0))
                .sum::<f64>();

        Cache {
            z1,
            p1,
            p1_idx,
            z2,
            p2_idx,
            gap,
            h_pre,
            out,
        }
    }

    fn backward_sample(&self, input: &[f64], c: &Cache, dout: f64) -> ParamSet {
        let p = &self.params;
        let n = self.arch.input_size;
        let (s1, s2) = self.arch.pooled_sizes();
        let mut g = ParamSet::zeros();

        g.fc2_b[0] = dout;
        let mut dh_pre = [0.0; HIDDEN];
        for k in 0..HIDDEN {
            let h = c.h_pre[k].max(0.0);
            g.fc2_w[k] = dout * h;
            if c.h_pre[k] > 0.0 {
                dh_pre[k] = dout * p.fc2_w[k];
            }
        }

        let mut dgap = [0.0; CONV2_OUT];
        for k in 0..HIDDEN {
            let d = dh_pre[k];
            g.fc1_b[k] = d;
            for ch in 0..CONV2_OUT {
                g.fc1_w[k * CONV2_OUT + ch] = d * c.gap[ch];
                dgap[ch] += p.fc1_w[k * CONV2_OUT + ch] * d;
            }
        }

        // GAP and max-pool route straight back to the selected conv2 outputs.
        let area = (s2 * s2) as f64;
        let mut dz2 = vec![0.0; CONV2_OUT * s1 * s1];
        for (slot, &src) in c.p2_idx.iter().enumerate() {
            let ch = slot / (s2 * s2);
            let src = src as usize;
            if c.z2[src] > 0.0 {
                dz2[src] += dgap[ch] / area;
            }
        }

        let dp1 = conv3x3_backward(
            &c.p1,
            CONV1_OUT,
            s1,
            &p.conv2_w,
            CONV2_OUT,
            &dz2,
            &mut g.conv2_w,
            &mut g.conv2_b,
            true,
        );

        let mut dz1 = vec![0.0; CONV1_OUT * n * n];
        for (slot, &src) in c.p1_idx.iter().enumerate() {
            let src = src as usize;
            if c.z1[src] > 0.0 {
                dz1[src] += dp1[slot];
            }
        }
        conv3x3_backward(
            input,
            1,
            n,
            &p.conv1_w,
            CONV1_OUT,
            &dz1,
            &mut g.conv1_w,
            &mut g.conv1_b,
            false,
        );
        g
    }
}

/// Same-size 3x3 convolution with zero padding 1.
fn conv3x3(input: &[f64], in_ch: usize, size: usize, weight: &[f64], bias: &[f64], out_ch: usize) -> Vec<f64> {
    let plane = size * size;
    let mut out = vec![0.0; out_ch * plane];
    for co in 0..out_ch {
        let dst = &mut out[co * plane..(co + 1) * plane];
        dst.fill(bias[co]);
        for ci in 0..in_ch {
            let src = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let w = weight[((co * in_ch + ci) * KERNEL + ky) * KERNEL + kx];
                    // output (y, x) reads input (y + ky - 1, x + kx - 1)
                    let y0 = 1usize.saturating_sub(ky);
                    let y1 = (size + 1 - ky).min(size);
                    let x0 = 1usize.saturating_sub(kx);
                    let x1 = (size + 1 - kx).min(size);
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let drow = &mut dst[y * size + x0..y * size + x1];
                        let srow = &src[sy * size + x0 + kx - 1..sy * size + x1 + kx - 1];
                        for (d, s) in drow.iter_mut().zip(srow) {
                            *d += w * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    in_ch: usize,
    size: usize,
    weight: &[f64],
    out_ch: usize,
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    want_input_grad: bool,
) -> Vec<f64> {
    let plane = size * size;
    let mut dinput = if want_input_grad { vec![0.0; in_ch * plane] } else { Vec::new() };
    for co in 0..out_ch {
        let dsrc = &dout[co * plane..(co + 1) * plane];
        dbias[co] += dsrc.iter().sum::<f64>();
        for ci in 0..in_ch {
            let src = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let widx = ((co * in_ch + ci) * KERNEL + ky) * KERNEL + kx;
                    let w = weight[widx];
                    let y0 = 1usize.saturating_sub(ky);
                    let y1 = (size + 1 - ky).min(size);
                    let x0 = 1usize.saturating_sub(kx);
                    let x1 = (size + 1 - kx).min(size);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let drow = &dsrc[y * size + x0..y * size + x1];
                        let off = sy * size + x0 + kx - 1;
                        let srow = &src[off..off + (x1 - x0)];
                        acc += drow.iter().zip(srow).map(|(d, s)| d * s).sum::<f64>();
                        if want_input_grad {
                            let irow = &mut dinput[ci * plane + off..ci * plane + off + (x1 - x0)];
                            for (i, d) in irow.iter_mut().zip(drow) {
                                *i += w * d;
                            }
                        }
                    }
                    dweight[widx] += acc;
                }
            }
        }
    }
    dinput
}

/// 2x2 stride-2 max pooling, flooring odd sizes. Returns pooled values and
/// the flat source index of each maximum (first one on ties).
fn maxpool2(input: &[f64], channels: usize, size: usize) -> (Vec<f64>, Vec<u32>) {
    let half = size / 2;
    let plane = size * size;
    let mut out = Vec::with_capacity(channels * half * half);
    let mut idx = Vec::with_capacity(channels * half * half);
    for ch in 0..channels {
        for y in 0..half {
            for x in 0..half {
                let mut best = ch * plane + 2 * y * size + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let cand = ch * plane + (2 * y + dy) * size + 2 * x + dx;
                    if input[cand] > input[best] {
                        best = cand;
                    }
                }
                out.push(input[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mse,
    Mae,
}

/// Mean loss and its gradient with respect to each prediction.
pub fn loss(pred: &[f64], target: &[f64], kind: LossKind) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(CnnError::Shape(format!(
            "{} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    let b = pred.len() as f64;
    let residuals = pred.iter().zip(target).map(|(p, t)| p - t);
    Ok(match kind {
        LossKind::Mse => {
            let r: Vec<f64> = residuals.collect();
            let value = r.iter().map(|e| e * e).sum::<f64>() / b;
            (value, r.iter().map(|e| 2.0 * e / b).collect())
        }
        LossKind::Mae => {
            let r: Vec<f64> = residuals.collect();
            let value = r.iter().map(|e| e.abs()).sum::<f64>() / b;
            let grad = r
                .iter()
                .map(|&e| if e == 0.0 { 0.0 } else { e.signum() / b })
                .collect();
            (value, grad)
        }
    })
}
