//! 1D residual CNN for joint-moment regression.
//!
//! Tensors are laid out `(batch, time, channels)`. Convolution weights are
//! stored `[k][c_in][c_out]` and dense weights `[n_in][n_out]`.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::signal::{SampleSeries, StandardScaler};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ResNetError {
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("insufficient data: need {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("model format error: {0}")]
    Format(String),
}

impl ResNetError {
    pub fn code(&self) -> &'static str {
        match self {
            ResNetError::ShapeError(_) => "E_SHAPE",
            ResNetError::EmptyInput(_) => "E_EMPTY_INPUT",
            ResNetError::InsufficientData { .. } => "E_INSUFFICIENT_DATA",
            ResNetError::Diverged { .. } => "E_DIVERGED",
            ResNetError::Format(_) => "E_FORMAT",
        }
    }
}

type Result<T> = std::result::Result<T, ResNetError>;

fn shape_err<T>(msg: String) -> Result<T> {
    Err(ResNetError::ShapeError(msg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    batch: usize,
    time: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(batch: usize, time: usize, channels: usize) -> Self {
        Self {
            batch,
            time,
            channels,
            data: vec![0.0; batch * time * channels],
        }
    }

    pub fn from_vec(batch: usize, time: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != batch * time * channels {
            return shape_err(format!(
                "{} values for shape ({batch}, {time}, {channels})",
                data.len()
            ));
        }
        Ok(Self {
            batch,
            time,
            channels,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.time, self.channels)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, b: usize, t: usize, c: usize) -> f64 {
        self.data[(b * self.time + t) * self.channels + c]
    }

    pub fn set(&mut self, b: usize, t: usize, c: usize, v: f64) {
        self.data[(b * self.time + t) * self.channels + c] = v;
    }

    /// The `(time, channels)` block of one batch item.
    pub fn item(&self, b: usize) -> &[f64] {
        let n = self.time * self.channels;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn select(&self, idx: &[usize]) -> Tensor3 {
        let n = self.time * self.channels;
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(self.item(i));
        }
        Tensor3 {
            batch: idx.len(),
            time: self.time,
            channels: self.channels,
            data,
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }
}

fn relu_backward(pre: &Tensor3, dout: &Tensor3) -> Tensor3 {
    Tensor3 {
        data: pre
            .data
            .iter()
            .zip(&dout.data)
            .map(|(&a, &d)| if a > 0.0 { d } else { 0.0 })
            .collect(),
        ..*pre
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub kernel: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1d {
    pub fn zeros(kernel: usize, c_in: usize, c_out: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            c_in,
            c_out,
            stride,
            padding,
            weight: vec![0.0; kernel * c_in * c_out],
            bias: vec![0.0; c_out],
        }
    }

    pub fn out_time(&self, t: usize) -> Option<usize> {
        let padded = t + 2 * self.padding;
        (padded >= self.kernel && self.stride > 0).then(|| (padded - self.kernel) / self.stride + 1)
    }

    fn check(&self, x: &Tensor3) -> Result<usize> {
        if x.channels != self.c_in {
            return shape_err(format!("conv expects {} input channels, got {}", self.c_in, x.channels));
        }
        match self.out_time(x.time) {
            Some(t) => Ok(t),
            None => shape_err(format!("input length {} too short for kernel {}", x.time, self.kernel)),
        }
    }

    fn input_index(&self, to: usize, j: usize, t_in: usize) -> Option<usize> {
        let ti = (to * self.stride + j) as isize - self.padding as isize;
        (ti >= 0 && (ti as usize) < t_in).then_some(ti as usize)
    }

    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3> {
        let t_out = self.check(x)?;
        let (cin, cout) = (self.c_in, self.c_out);
        let mut y = Tensor3::zeros(x.batch, t_out, cout);
        for b in 0..x.batch {
            for to in 0..t_out {
                let yo = (b * t_out + to) * cout;
                let yrow = &mut y.data[yo..yo + cout];
                yrow.copy_from_slice(&self.bias);
                for j in 0..self.kernel {
                    let Some(ti) = self.input_index(to, j, x.time) else { continue };
                    let xo = (b * x.time + ti) * cin;
                    for ci in 0..cin {
                        let xv = x.data[xo + ci];
                        let wrow = &self.weight[(j * cin + ci) * cout..(j * cin + ci + 1) * cout];
                        for (yv, w) in yrow.iter_mut().zip(wrow) {
                            *yv += xv * w;
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    /// Returns the input gradient and accumulates parameter gradients into `grad`.
    pub fn backward(&self, x: &Tensor3, dy: &Tensor3, grad: &mut Conv1d) -> Result<Tensor3> {
        let t_out = self.check(x)?;
        if dy.shape() != (x.batch, t_out, self.c_out) {
            return shape_err(format!("conv output gradient has shape {:?}", dy.shape()));
        }
        let (cin, cout) = (self.c_in, self.c_out);
        let mut dx = Tensor3::zeros(x.batch, x.time, cin);
        for b in 0..x.batch {
            for to in 0..t_out {
                let yo = (b * t_out + to) * cout;
                let dyrow = &dy.data[yo..yo + cout];
                for (g, d) in grad.bias.iter_mut().zip(dyrow) {
                    *g += d;
                }
                for j in 0..self.kernel {
                    let Some(ti) = self.input_index(to, j, x.time) else { continue };
                    let xo = (b * x.time + ti) * cin;
                    for ci in 0..cin {
                        let xv = x.data[xo + ci];
                        let wo = (j * cin + ci) * cout;
                        let wrow = &self.weight[wo..wo + cout];
                        let grow = &mut grad.weight[wo..wo + cout];
                        let mut acc = 0.0;
                        for co in 0..cout {
                            grow[co] += xv * dyrow[co];
                            acc += wrow[co] * dyrow[co];
                        }
                        dx.data[xo + ci] += acc;
                    }
                }
            }
        }
        Ok(dx)
    }
}

pub fn conv1d_forward(x: &Tensor3, conv: &Conv1d) -> Result<Tensor3> {
    conv.forward(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Tensor3,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn check(&self, x: &Tensor3) -> Result<()> {
        if x.channels != self.channels {
            return shape_err(format!("batch norm expects {} channels, got {}", self.channels, x.channels));
        }
        Ok(())
    }

    /// Normalizes with the running statistics.
    pub fn forward_infer(&self, x: &Tensor3) -> Result<Tensor3> {
        self.check(x)?;
        let c = self.channels;
        let scale: Vec<f64> = (0..c)
            .map(|i| self.gamma[i] / (self.running_var[i] + self.eps).sqrt())
            .collect();
        let mut y = x.clone();
        for row in y.data.chunks_mut(c) {
            for i in 0..c {
                row[i] = (row[i] - self.running_mean[i]) * scale[i] + self.beta[i];
            }
        }
        Ok(y)
    }

    /// Normalizes with batch-and-time statistics; running stats are untouched
    /// until [`BatchNorm::update_running`] is called with the cache.
    pub fn forward_train(&self, x: &Tensor3) -> Result<(Tensor3, BnCache)> {
        self.check(x)?;
        let c = self.channels;
        let n = (x.batch * x.time) as f64;
        if n == 0.0 {
            return Err(ResNetError::EmptyInput("batch norm over zero samples".into()));
        }
        let mut mean = vec![0.0; c];
        for row in x.data.chunks(c) {
            for i in 0..c {
                mean[i] += row[i];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for row in x.data.chunks(c) {
            for i in 0..c {
                let d = row[i] - mean[i];
                var[i] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = x.clone();
        let mut y = x.clone();
        for (hrow, yrow) in xhat.data.chunks_mut(c).zip(y.data.chunks_mut(c)) {
            for i in 0..c {
                hrow[i] = (hrow[i] - mean[i]) * inv_std[i];
                yrow[i] = self.gamma[i] * hrow[i] + self.beta[i];
            }
        }
        Ok((
            y,
            BnCache {
                xhat,
                inv_std,
                mean,
                var,
            },
        ))
    }

    pub fn update_running(&mut self, cache: &BnCache) {
        let n = (cache.xhat.batch * cache.xhat.time) as f64;
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        let m = self.momentum;
        for i in 0..self.channels {
            self.running_mean[i] = (1.0 - m) * self.running_mean[i] + m * cache.mean[i];
            self.running_var[i] = (1.0 - m) * self.running_var[i] + m * cache.var[i] * unbias;
        }
    }

    pub fn backward(&self, cache: &BnCache, dy: &Tensor3, grad: &mut BatchNorm) -> Result<Tensor3> {
        if dy.shape() != cache.xhat.shape() {
            return shape_err(format!("batch norm gradient has shape {:?}", dy.shape()));
        }
        let c = self.channels;
        let n = (dy.batch * dy.time) as f64;
        let mut sum_d = vec![0.0; c];
        let mut sum_dx = vec![0.0; c];
        for (drow, hrow) in dy.data.chunks(c).zip(cache.xhat.data.chunks(c)) {
            for i in 0..c {
                sum_d[i] += drow[i];
                sum_dx[i] += drow[i] * hrow[i];
            }
        }
        for i in 0..c {
            grad.beta[i] += sum_d[i];
            grad.gamma[i] += sum_dx[i];
        }
        let mut dx = dy.clone();
        for (drow, hrow) in dx.data.chunks_mut(c).zip(cache.xhat.data.chunks(c)) {
            for i in 0..c {
                let g = self.gamma[i] * cache.inv_std[i] / n;
                drow[i] = g * (n * drow[i] - sum_d[i] - hrow[i] * sum_dx[i]);
            }
        }
        Ok(dx)
    }
}

/// Train mode also folds the batch statistics into the running averages.
pub fn batchnorm_forward(x: &Tensor3, bn: &mut BatchNorm, mode: Mode) -> Result<Tensor3> {
    match mode {
        Mode::Infer => bn.forward_infer(x),
        Mode::Train => {
            let (y, cache) = bn.forward_train(x)?;
            bn.update_running(&cache);
            Ok(y)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weight: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.n_in {
            return shape_err(format!("dense expects {} inputs, got {}", self.n_in, x.cols()));
        }
        let mut y = Matrix::zeros(x.rows(), self.n_out);
        for r in 0..x.rows() {
            let yrow = y.row_mut(r);
            yrow.copy_from_slice(&self.bias);
            for (i, &xv) in x.row(r).iter().enumerate() {
                let wrow = &self.weight[i * self.n_out..(i + 1) * self.n_out];
                for (yv, w) in yrow.iter_mut().zip(wrow) {
                    *yv += xv * w;
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Dense) -> Matrix {
        let mut dx = Matrix::zeros(x.rows(), self.n_in);
        for r in 0..x.rows() {
            let dyrow = dy.row(r);
            for (g, d) in grad.bias.iter_mut().zip(dyrow) {
                *g += d;
            }
            for i in 0..self.n_in {
                let xv = x.get(r, i);
                let wrow = &self.weight[i * self.n_out..(i + 1) * self.n_out];
                let grow = &mut grad.weight[i * self.n_out..(i + 1) * self.n_out];
                let mut acc = 0.0;
                for o in 0..self.n_out {
                    grow[o] += xv * dyrow[o];
                    acc += wrow[o] * dyrow[o];
                }
                dx.set(r, i, acc);
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvBn {
    pub conv: Conv1d,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub first: ConvBn,
    pub second: ConvBn,
    /// 1x1 projection, present when the channel count changes.
    pub shortcut: Option<Conv1d>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResNetArch {
    pub n_in: usize,
    pub n_out: usize,
    pub window: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_channels: usize,
    pub block_channels: Vec<usize>,
    pub kernel: usize,
    pub dense: usize,
}

impl ResNetArch {
    /// Stem k=3/c=32, blocks (32, 64, 64, 128), dense 64.
    pub fn standard(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            window: 10,
            stem_kernel: 3,
            stem_stride: 1,
            stem_channels: 32,
            block_channels: vec![32, 64, 64, 128],
            kernel: 3,
            dense: 64,
        }
    }

    /// Narrower layout for single-core training budgets.
    pub fn compact(n_in: usize, n_out: usize) -> Self {
        Self {
            stem_channels: 12,
            block_channels: vec![12, 12, 16, 16],
            dense: 32,
            ..Self::standard(n_in, n_out)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResNetModel {
    pub arch: ResNetArch,
    pub stem: ConvBn,
    pub blocks: Vec<ResidualBlock>,
    pub hidden: Dense,
    pub output: Dense,
    pub input_scaler: Option<StandardScaler>,
    pub target_scaler: Option<StandardScaler>,
    pub metadata: BTreeMap<String, String>,
}

struct BlockCache {
    x: Tensor3,
    a1: Tensor3,
    bn1: BnCache,
    h1: Tensor3,
    bn2: BnCache,
    pre: Tensor3,
}

pub struct NetCache {
    x: Tensor3,
    stem_bn: BnCache,
    stem_pre: Tensor3,
    blocks: Vec<BlockCache>,
    features: Tensor3,
    pooled: Matrix,
    z1: Matrix,
    r1: Matrix,
}

fn uniform_fill(v: &mut [f64], limit: f64, rng: &mut ChaCha8Rng) {
    for w in v {
        *w = rng.gen_range(-limit..limit);
    }
}

impl ResNetModel {
    /// Zero-initialized parameters (batch-norm γ = 1, β = 0).
    pub fn zeros(arch: &ResNetArch) -> Self {
        let k = arch.kernel;
        let conv_bn = |kernel: usize, stride: usize, c_in: usize, c_out: usize| ConvBn {
            conv: Conv1d::zeros(kernel, c_in, c_out, stride, kernel / 2),
            bn: BatchNorm::new(c_out),
        };
        let stem = conv_bn(arch.stem_kernel, arch.stem_stride, arch.n_in, arch.stem_channels);
        let mut c = arch.stem_channels;
        let mut blocks = Vec::new();
        for &co in &arch.block_channels {
            blocks.push(ResidualBlock {
                first: conv_bn(k, 1, c, co),
                second: conv_bn(k, 1, co, co),
                shortcut: (co != c).then(|| Conv1d::zeros(1, c, co, 1, 0)),
            });
            c = co;
        }
        Self {
            arch: arch.clone(),
            stem,
            blocks,
            hidden: Dense::zeros(c, arch.dense),
            output: Dense::zeros(arch.dense, arch.n_out),
            input_scaler: None,
            target_scaler: None,
            metadata: BTreeMap::new(),
        }
    }

    /// Fan-in scaled uniform weights from a seeded generator, zero biases.
    pub fn init(arch: &ResNetArch, seed: u64) -> Self {
        let mut m = Self::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv_init = |c: &mut Conv1d, rng: &mut ChaCha8Rng| {
            let fan_in = (c.kernel * c.c_in) as f64;
            uniform_fill(&mut c.weight, (6.0 / fan_in).sqrt(), rng);
        };
        conv_init(&mut m.stem.conv, &mut rng);
        for b in &mut m.blocks {
            conv_init(&mut b.first.conv, &mut rng);
            conv_init(&mut b.second.conv, &mut rng);
            if let Some(s) = &mut b.shortcut {
                conv_init(s, &mut rng);
            }
        }
        uniform_fill(&mut m.hidden.weight, (6.0 / m.hidden.n_in as f64).sqrt(), &mut rng);
        uniform_fill(&mut m.output.weight, (3.0 / m.output.n_in as f64).sqrt(), &mut rng);
        m
    }

    /// Trainable parameters in a fixed order (running statistics excluded).
    pub fn params(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        fn push_cb<'a>(c: &'a ConvBn, v: &mut Vec<&'a [f64]>) {
            v.extend([&c.conv.weight[..], &c.conv.bias, &c.bn.gamma, &c.bn.beta]);
        }
        push_cb(&self.stem, &mut v);
        for b in &self.blocks {
            push_cb(&b.first, &mut v);
            push_cb(&b.second, &mut v);
            if let Some(s) = &b.shortcut {
                v.extend([&s.weight[..], &s.bias]);
            }
        }
        v.extend([
            &self.hidden.weight[..],
            &self.hidden.bias,
            &self.output.weight,
            &self.output.bias,
        ]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        fn push_cb<'a>(c: &'a mut ConvBn, v: &mut Vec<&'a mut [f64]>) {
            v.push(&mut c.conv.weight);
            v.push(&mut c.conv.bias);
            v.push(&mut c.bn.gamma);
            v.push(&mut c.bn.beta);
        }
        push_cb(&mut self.stem, &mut v);
        for b in &mut self.blocks {
            push_cb(&mut b.first, &mut v);
            push_cb(&mut b.second, &mut v);
            if let Some(s) = &mut b.shortcut {
                v.push(&mut s.weight);
                v.push(&mut s.bias);
            }
        }
        v.push(&mut self.hidden.weight);
        v.push(&mut self.hidden.bias);
        v.push(&mut self.output.weight);
        v.push(&mut self.output.bias);
        v
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn zero_grads(&self) -> ResNetModel {
        let mut g = self.clone();
        for p in g.params_mut() {
            p.fill(0.0);
        }
        g
    }

    fn check_input(&self, x: &Tensor3) -> Result<()> {
        if x.channels != self.arch.n_in || x.time != self.arch.window {
            return shape_err(format!(
                "expected windows of ({}, {}), got ({}, {})",
                self.arch.window, self.arch.n_in, x.time, x.channels
            ));
        }
        Ok(())
    }

    /// Network pass on already-scaled input, in scaled target units.
    pub fn forward_net(&self, x: &Tensor3, mode: Mode) -> Result<Matrix> {
        self.check_input(x)?;
        match mode {
            Mode::Train => Ok(self.forward_cached(x)?.0),
            Mode::Infer => {
                let cbn = |c: &ConvBn, x: &Tensor3| -> Result<Tensor3> { c.bn.forward_infer(&c.conv.forward(x)?) };
                let mut h = cbn(&self.stem, x)?.map(|v| v.max(0.0));
                for b in &self.blocks {
                    let h1 = cbn(&b.first, &h)?.map(|v| v.max(0.0));
                    let mut pre = cbn(&b.second, &h1)?;
                    let s = match &b.shortcut {
                        Some(p) => p.forward(&h)?,
                        None => h,
                    };
                    pre.data.iter_mut().zip(&s.data).for_each(|(a, b)| *a = (*a + b).max(0.0));
                    h = pre;
                }
                let z1 = self.hidden.forward(&global_pool(&h))?;
                let r1 = relu_matrix(&z1);
                self.output.forward(&r1)
            }
        }
    }

    fn forward_cached(&self, x: &Tensor3) -> Result<(Matrix, NetCache)> {
        let stem_z = self.stem.conv.forward(x)?;
        let (stem_pre, stem_bn) = self.stem.bn.forward_train(&stem_z)?;
        let mut h = stem_pre.map(|v| v.max(0.0));
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let z1 = b.first.conv.forward(&h)?;
            let (a1, bn1) = b.first.bn.forward_train(&z1)?;
            let h1 = a1.map(|v| v.max(0.0));
            let z2 = b.second.conv.forward(&h1)?;
            let (mut pre, bn2) = b.second.bn.forward_train(&z2)?;
            match &b.shortcut {
                Some(p) => {
                    let s = p.forward(&h)?;
                    pre.data.iter_mut().zip(&s.data).for_each(|(a, b)| *a += b);
                }
                None => pre.data.iter_mut().zip(&h.data).for_each(|(a, b)| *a += b),
            }
            let out = pre.map(|v| v.max(0.0));
            blocks.push(BlockCache {
                x: h,
                a1,
                bn1,
                h1,
                bn2,
                pre,
            });
            h = out;
        }
        let pooled = global_pool(&h);
        let z1 = self.hidden.forward(&pooled)?;
        let r1 = relu_matrix(&z1);
        let y = self.output.forward(&r1)?;
        Ok((
            y,
            NetCache {
                x: x.clone(),
                stem_bn,
                stem_pre,
                blocks,
                features: h,
                pooled,
                z1,
                r1,
            },
        ))
    }

    fn backward(&self, cache: &NetCache, dy: &Matrix) -> Result<ResNetModel> {
        let mut g = self.zero_grads();
        let dr1 = self.output.backward(&cache.r1, dy, &mut g.output);
        let mut dz1 = dr1;
        for r in 0..dz1.rows() {
            for c in 0..dz1.cols() {
                if cache.z1.get(r, c) <= 0.0 {
                    dz1.set(r, c, 0.0);
                }
            }
        }
        let dpool = self.hidden.backward(&cache.pooled, &dz1, &mut g.hidden);
        let (bsz, t, c) = cache.features.shape();
        let mut dh = Tensor3::zeros(bsz, t, c);
        for b in 0..bsz {
            for ti in 0..t {
                for ci in 0..c {
                    dh.set(b, ti, ci, dpool.get(b, ci) / t as f64);
                }
            }
        }
        for (i, b) in self.blocks.iter().enumerate().rev() {
            let bc = &cache.blocks[i];
            let gb = &mut g.blocks[i];
            let dpre = relu_backward(&bc.pre, &dh);
            let dz2 = b.second.bn.backward(&bc.bn2, &dpre, &mut gb.second.bn)?;
            let dh1 = b.second.conv.backward(&bc.h1, &dz2, &mut gb.second.conv)?;
            let da1 = relu_backward(&bc.a1, &dh1);
            let dz1 = b.first.bn.backward(&bc.bn1, &da1, &mut gb.first.bn)?;
            let mut dx = b.first.conv.backward(&bc.x, &dz1, &mut gb.first.conv)?;
            let ds = match (&b.shortcut, &mut gb.shortcut) {
                (Some(p), Some(gp)) => p.backward(&bc.x, &dpre, gp)?,
                _ => dpre,
            };
            dx.data.iter_mut().zip(&ds.data).for_each(|(a, b)| *a += b);
            dh = dx;
        }
        let dstem = relu_backward(&cache.stem_pre, &dh);
        let dz = self.stem.bn.backward(&cache.stem_bn, &dstem, &mut g.stem.bn)?;
        self.stem.conv.backward(&cache.x, &dz, &mut g.stem.conv)?;
        Ok(g)
    }

    /// Train-mode MSE of the network on scaled data, with gradients shaped
    /// like the model. Running statistics are not modified.
    pub fn loss_and_gradients(&self, x: &Tensor3, y: &Matrix) -> Result<(f64, ResNetModel, NetCache)> {
        self.check_input(x)?;
        if y.rows() != x.batch || y.cols() != self.arch.n_out {
            return shape_err(format!("targets {}x{} for batch {}", y.rows(), y.cols(), x.batch));
        }
        let (pred, cache) = self.forward_cached(x)?;
        let n = (y.rows() * y.cols()) as f64;
        let mut dy = Matrix::zeros(y.rows(), y.cols());
        let mut loss = 0.0;
        for r in 0..y.rows() {
            for c in 0..y.cols() {
                let e = pred.get(r, c) - y.get(r, c);
                loss += e * e;
                dy.set(r, c, 2.0 * e / n);
            }
        }
        let g = self.backward(&cache, &dy)?;
        Ok((loss / n, g, cache))
    }

    pub fn update_running_stats(&mut self, cache: &NetCache) {
        self.stem.bn.update_running(&cache.stem_bn);
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            b.first.bn.update_running(&c.bn1);
            b.second.bn.update_running(&c.bn2);
        }
    }

    fn scale_input(&self, x: &Tensor3) -> Tensor3 {
        match &self.input_scaler {
            Some(s) => {
                let mut x = x.clone();
                for row in x.data.chunks_mut(x.channels) {
                    s.transform_row(row);
                }
                x
            }
            None => x.clone(),
        }
    }

    fn unscale_output(&self, mut y: Matrix) -> Matrix {
        if let Some(s) = &self.target_scaler {
            for r in 0..y.rows() {
                s.inverse_transform_row(y.row_mut(r));
            }
        }
        y
    }

    /// Inference on raw windows, returning outputs in target units.
    pub fn predict(&self, x: &Tensor3) -> Result<Matrix> {
        let xs = self.scale_input(x);
        Ok(self.unscale_output(self.forward_net(&xs, Mode::Infer)?))
    }

    pub fn to_json(&self) -> String {
        let doc = SavedModel {
            format: "gaitrt-resnet".into(),
            version: FORMAT_VERSION,
            model: self.clone(),
        };
        serde_json::to_string(&doc).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: SavedModel = serde_json::from_str(s).map_err(|e| ResNetError::Format(e.to_string()))?;
        if doc.format != "gaitrt-resnet" || doc.version != FORMAT_VERSION {
            return Err(ResNetError::Format(format!(
                "unsupported model format {} v{}",
                doc.format, doc.version
            )));
        }
        let expected = ResNetModel::zeros(&doc.model.arch);
        let shapes_ok = expected
            .params()
            .iter()
            .zip(doc.model.params())
            .all(|(a, b)| a.len() == b.len())
            && expected.params().len() == doc.model.params().len();
        if !shapes_ok {
            return Err(ResNetError::Format("parameter shapes do not match architecture".into()));
        }
        Ok(doc.model)
    }
}

#[derive(Serialize, Deserialize)]
struct SavedModel {
    format: String,
    version: u32,
    model: ResNetModel,
}

fn global_pool(h: &Tensor3) -> Matrix {
    let mut p = Matrix::zeros(h.batch, h.channels);
    for b in 0..h.batch {
        let row = p.row_mut(b);
        for t in 0..h.time {
            for (c, v) in row.iter_mut().enumerate() {
                *v += h.get(b, t, c);
            }
        }
        row.iter_mut().for_each(|v| *v /= h.time as f64);
    }
    p
}

fn relu_matrix(z: &Matrix) -> Matrix {
    let mut r = z.clone();
    r.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    r
}

pub fn resnet_forward(model: &ResNetModel, window: &Tensor3, mode: Mode) -> Result<Matrix> {
    let xs = model.scale_input(window);
    Ok(model.unscale_output(model.forward_net(&xs, mode)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shapes: &[usize], lr: f64) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_model(model: &ResNetModel, lr: f64) -> Self {
        let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
        Self::new(&shapes, lr)
    }
}

pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return shape_err(format!(
            "{} parameter groups, {} gradient groups, {} moment groups",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.len() != g.len() || p.len() != m.len() {
            return shape_err("parameter and gradient sizes differ".into());
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            p[j] -= state.lr * mh / (vh.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub restore_best: bool,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub window: usize,
    pub window_stride: usize,
    pub learning_rate: f64,
    pub scale_targets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 500,
            patience: 10,
            restore_best: true,
            batch_size: 64,
            val_fraction: 0.1,
            window: 10,
            window_stride: 1,
            learning_rate: 1e-3,
            scale_targets: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    /// Training-set MSE of the initialized model, in training units.
    pub initial_loss: f64,
    pub train_loss: Vec<f64>,
    /// Validation MSE in target units, one entry per epoch.
    pub val_mse: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

fn flat_rows(x: &Tensor3) -> Matrix {
    Matrix::from_vec(x.batch * x.time, x.channels, x.data.clone())
}

fn mse(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.as_slice().len() as f64;
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

/// Fits a model on windows `x` with targets `y`. `groups` assigns each
/// window to a gait cycle; validation holds out whole cycles.
pub fn train_moments(
    x: &Tensor3,
    y: &Matrix,
    groups: &[u64],
    arch: &ResNetArch,
    config: &TrainConfig,
    seed: u64,
) -> Result<(ResNetModel, TrainHistory)> {
    if x.batch == 0 {
        return Err(ResNetError::EmptyInput("no training windows".into()));
    }
    if y.rows() != x.batch || groups.len() != x.batch {
        return shape_err(format!(
            "{} windows, {} targets, {} group labels",
            x.batch,
            y.rows(),
            groups.len()
        ));
    }
    if y.cols() != arch.n_out || x.channels != arch.n_in || x.time != arch.window {
        return shape_err("data does not match architecture".into());
    }
    if !(config.val_fraction > 0.0 && config.val_fraction < 1.0) || config.batch_size == 0 {
        return shape_err("invalid training configuration".into());
    }
    let mut cycles: Vec<u64> = groups.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if cycles.len() < 2 {
        return Err(ResNetError::EmptyInput(
            "need at least one gait cycle for training and one for validation".into(),
        ));
    }
    let mut split_rng = ChaCha8Rng::seed_from_u64(seed);
    split_rng.set_stream(2);
    cycles.shuffle(&mut split_rng);
    let n_val = ((cycles.len() as f64 * config.val_fraction).ceil() as usize).clamp(1, cycles.len() - 1);
    let val_set: BTreeSet<u64> = cycles[..n_val].iter().copied().collect();
    let (mut train_idx, mut val_idx) = (Vec::new(), Vec::new());
    for (i, g) in groups.iter().enumerate() {
        if val_set.contains(g) {
            val_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }

    let mut model = ResNetModel::init(arch, seed);
    let train_x = x.select(&train_idx);
    let scaler = StandardScaler::fit(&flat_rows(&train_x)).map_err(|e| ResNetError::ShapeError(e.to_string()))?;
    model.input_scaler = Some(scaler);
    let train_y = y.select_rows(&train_idx);
    if config.scale_targets {
        model.target_scaler =
            Some(StandardScaler::fit(&train_y).map_err(|e| ResNetError::ShapeError(e.to_string()))?);
    }
    let xs = model.scale_input(&train_x);
    let ys = match &model.target_scaler {
        Some(s) => s.transform(&train_y).map_err(|e| ResNetError::ShapeError(e.to_string()))?,
        None => train_y,
    };
    let val_xs = model.scale_input(&x.select(&val_idx));
    let val_y = y.select_rows(&val_idx);
    model.metadata.extend([
        ("optimizer".to_string(), "adam".to_string()),
        ("learning_rate".to_string(), config.learning_rate.to_string()),
        ("beta1".to_string(), "0.9".to_string()),
        ("beta2".to_string(), "0.999".to_string()),
        ("batch_size".to_string(), config.batch_size.to_string()),
        ("val_fraction".to_string(), config.val_fraction.to_string()),
        ("seed".to_string(), seed.to_string()),
    ]);

    let mut adam = AdamState::for_model(&model, config.learning_rate);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..xs.batch).collect();
    let mut history = TrainHistory {
        initial_loss: mse(&model.forward_net(&xs, Mode::Infer)?, &ys),
        best_val_mse: f64::INFINITY,
        ..Default::default()
    };
    let mut best_model = model.clone();
    let mut wait = 0;
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let xb = xs.select(chunk);
            let yb = ys.select_rows(chunk);
            let (loss, grads, cache) = model.loss_and_gradients(&xb, &yb)?;
            if !loss.is_finite() {
                return Err(ResNetError::Diverged { epoch, loss });
            }
            let g = grads.params();
            adam_step(&mut model.params_mut(), &g, &mut adam)?;
            model.update_running_stats(&cache);
            loss_sum += loss;
            n_batches += 1;
        }
        let val = mse(&model.unscale_output(model.forward_net(&val_xs, Mode::Infer)?), &val_y);
        if !val.is_finite() {
            return Err(ResNetError::Diverged { epoch, loss: val });
        }
        history.train_loss.push(loss_sum / n_batches as f64);
        history.val_mse.push(val);
        if val < history.best_val_mse {
            history.best_val_mse = val;
            history.best_epoch = epoch;
            best_model = model.clone();
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.patience {
                break;
            }
        }
    }
    if config.restore_best {
        model = best_model;
    } else {
        history.best_val_mse = *history.val_mse.last().unwrap_or(&f64::INFINITY);
    }
    model
        .metadata
        .insert("epochs_run".to_string(), history.val_mse.len().to_string());
    model
        .metadata
        .insert("best_epoch".to_string(), history.best_epoch.to_string());
    Ok((model, history))
}

/// Sliding windows over matrix rows; window `i` covers rows
/// `[i*stride, i*stride + length)` and targets its last row.
pub fn windowize_matrix(data: &Matrix, length: usize, stride: usize) -> Result<(Tensor3, Vec<usize>)> {
    if length == 0 || stride == 0 {
        return shape_err("window length and stride must be positive".into());
    }
    if data.rows() < length {
        return Err(ResNetError::InsufficientData {
            needed: length,
            got: data.rows(),
        });
    }
    let count = (data.rows() - length) / stride + 1;
    let c = data.cols();
    let mut out = Vec::with_capacity(count * length * c);
    let mut targets = Vec::with_capacity(count);
    for i in 0..count {
        let s = i * stride;
        out.extend_from_slice(&data.as_slice()[s * c..(s + length) * c]);
        targets.push(s + length - 1);
    }
    Ok((Tensor3::from_vec(count, length, c, out)?, targets))
}

pub fn windowize(series: &SampleSeries, length: usize, stride: usize) -> Result<(Tensor3, Vec<usize>)> {
    windowize_matrix(series.data(), length, stride)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t3(b: usize, t: usize, c: usize, v: &[f64]) -> Tensor3 {
        Tensor3::from_vec(b, t, c, v.to_vec()).unwrap()
    }

    #[test]
    fn conv_hand_example() {
        let mut conv = Conv1d::zeros(2, 1, 1, 1, 0);
        conv.weight = vec![1.0, 1.0];
        let y = conv1d_forward(&t3(1, 3, 1, &[1.0, 2.0, 3.0]), &conv).unwrap();
        assert_eq!(y.as_slice(), &[3.0, 5.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut conv = Conv1d::zeros(1, 2, 2, 1, 0);
        conv.weight = vec![1.0, 0.0, 0.0, 1.0];
        let x = t3(2, 3, 2, &[1.0, -2.0, 3.0, 4.0, 5.5, 6.0, 7.0, 8.0, -9.0, 10.0, 11.0, 0.5]);
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn conv_output_length_rule() {
        let conv = Conv1d::zeros(3, 1, 1, 2, 1);
        let y = conv.forward(&Tensor3::zeros(1, 10, 1)).unwrap();
        assert_eq!(y.time(), (10 + 2 - 3) / 2 + 1);
        assert!(matches!(
            conv.forward(&Tensor3::zeros(1, 10, 2)),
            Err(ResNetError::ShapeError(_))
        ));
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let mut bn = BatchNorm::new(2);
        let x = t3(2, 3, 2, &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0, 5.0, 50.0, 6.0, 60.0]);
        let y = batchnorm_forward(&x, &mut bn, Mode::Train).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = y.as_slice().iter().skip(c).step_by(2).copied().collect();
            let mean = vals.iter().sum::<f64>() / 6.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        assert!((bn.running_mean[0] - 0.35).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_infer_identity_stats() {
        let mut bn = BatchNorm::new(1);
        let x = t3(1, 3, 1, &[1.0, -2.0, 3.0]);
        let y = batchnorm_forward(&x, &mut bn, Mode::Infer).unwrap();
        for (a, b) in y.as_slice().iter().zip(x.as_slice()) {
            assert!((a - b).abs() < 1e-4 * b.abs());
        }
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let arch = ResNetArch::compact(3, 2);
        let mut m = ResNetModel::zeros(&arch);
        m.output.bias = vec![1.5, -0.25];
        let x = Tensor3::from_vec(4, 10, 3, (0..120).map(|i| (i as f64).sin()).collect()).unwrap();
        for mode in [Mode::Infer, Mode::Train] {
            let y = m.forward_net(&x, mode).unwrap();
            for r in 0..4 {
                assert_eq!(y.row(r), &[1.5, -0.25]);
            }
        }
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut state = AdamState::new(&[1], 1e-3);
        let mut p = vec![0.0];
        adam_step(&mut [&mut p[..]], &[&[1.0][..]], &mut state).unwrap();
        assert!((p[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
        let mut q = vec![0.7, -2.0];
        let mut s2 = AdamState::new(&[2], 1e-3);
        adam_step(&mut [&mut q[..]], &[&[0.0, 0.0][..]], &mut s2).unwrap();
        assert_eq!(q, vec![0.7, -2.0]);
        assert!(adam_step(&mut [&mut q[..]], &[&[0.0][..]], &mut s2).is_err());
    }

    #[test]
    fn windowize_counts_and_alignment() {
        let m = Matrix::from_vec(20, 1, (0..20).map(|i| i as f64).collect());
        assert_eq!(windowize_matrix(&m, 10, 10).unwrap().0.batch(), 2);
        let (w, t) = windowize_matrix(&m, 10, 1).unwrap();
        assert_eq!(w.batch(), 11);
        assert_eq!(t[3], 12);
        assert_eq!(w.get(3, 9, 0), 12.0);
        assert!(matches!(
            windowize_matrix(&m, 21, 1),
            Err(ResNetError::InsufficientData { .. })
        ));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = ResNetModel::init(&ResNetArch::compact(4, 2), 3);
        let s = m.to_json();
        assert_eq!(ResNetModel::from_json(&s).unwrap(), m);
        assert!(ResNetModel::from_json("{}").is_err());
    }
}
