//! Layer definitions and the per-sample forward/backward passes.
//!
//! Activations are stored channel-major (`[c][h][w]`); convolution weights
//! are `[out][in][ky][kx]` and dense weights `[out][in]`. Convolutions are
//! unpadded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::label_codec::NUM_CLASSES;
use crate::util::{argmax, derive_seed, fnv1a};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        kernel_size: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    GlobalAvgPool,
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Dropout {
        rate: f64,
    },
}

/// Two convolution blocks followed by a two-layer 64-unit head with 0.25
/// dropout and a 6-way output.
pub fn default_spec() -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![
        Conv2d { kernel_size: 3, in_channels: 3, out_channels: 8, stride: 1 },
        Relu,
        MaxPool { size: 2 },
        Conv2d { kernel_size: 3, in_channels: 8, out_channels: 16, stride: 1 },
        Relu,
        GlobalAvgPool,
        Dense { in_dim: 16, out_dim: 64 },
        Relu,
        Dropout { rate: 0.25 },
        Dense { in_dim: 64, out_dim: 64 },
        Relu,
        Dropout { rate: 0.25 },
        Dense { in_dim: 64, out_dim: NUM_CLASSES },
    ]
}

/// Activation shape; flat vectors are `(n, 1, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn flat(n: usize) -> Self {
        Self::new(n, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// Weights and bias of one layer. Also used for gradients and optimizer
/// moments, which share the parameter layout.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn zeros_like(other: &LayerParams) -> Self {
        Self {
            weights: vec![0.0; other.weights.len()],
            bias: vec![0.0; other.bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &LayerParams) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().chain(&mut self.bias).for_each(|v| *v *= factor);
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Inference,
    /// Dropout active; masks are drawn from streams derived from `seed` and
    /// the sample's position in the batch.
    Train { seed: u64 },
}

#[derive(Clone, Debug)]
enum Aux {
    None,
    PoolArgmax(Vec<usize>),
    Mask(Vec<f64>),
}

/// Activations retained by the forward pass of one sample.
#[derive(Clone, Debug)]
pub struct SampleCache {
    inputs: Vec<Vec<f64>>,
    aux: Vec<Aux>,
    logits: Vec<f64>,
}

impl SampleCache {
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }
}

#[derive(Clone, Debug)]
pub struct ForwardCache {
    samples: Vec<SampleCache>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input: Shape,
    specs: Vec<LayerSpec>,
    shapes: Vec<Shape>,
    params: Vec<LayerParams>,
}

impl Network {
    /// Builds a network with He-scaled uniform weights and zero biases.
    pub fn build(input: Shape, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let shapes = chain_shapes(input, specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = specs
            .iter()
            .map(|spec| {
                let (n_weights, n_bias, fan_in) = param_counts(spec);
                if n_weights == 0 {
                    return LayerParams::default();
                }
                let bound = (6.0 / fan_in as f64).sqrt();
                LayerParams {
                    weights: (0..n_weights).map(|_| rng.random_range(-bound..bound)).collect(),
                    bias: vec![0.0; n_bias],
                }
            })
            .collect();
        Ok(Self {
            input,
            specs: specs.to_vec(),
            shapes,
            params,
        })
    }

    /// Reassembles a network from stored parameters.
    pub fn from_parts(input: Shape, specs: Vec<LayerSpec>, params: Vec<LayerParams>) -> Result<Self> {
        let shapes = chain_shapes(input, &specs)?;
        if params.len() != specs.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter blocks for {} layers",
                params.len(),
                specs.len()
            )));
        }
        for (i, (spec, p)) in specs.iter().zip(&params).enumerate() {
            let (w, b, _) = param_counts(spec);
            if p.weights.len() != w || p.bias.len() != b {
                return Err(Error::ShapeMismatch(format!("layer {i} parameter sizes")));
            }
        }
        Ok(Self {
            input,
            specs,
            shapes,
            params,
        })
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.weights.len() + p.bias.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<LayerParams> {
        self.params.iter().map(LayerParams::zeros_like).collect()
    }

    /// FNV-1a over the little-endian bytes of every parameter.
    pub fn checksum(&self) -> u64 {
        let bytes: Vec<u8> = self
            .params
            .iter()
            .flat_map(|p| p.values())
            .flat_map(|v| v.to_le_bytes())
            .collect();
        fnv1a(&bytes)
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let expected = [self.input.channels, self.input.height, self.input.width];
        if batch.shape().len() != 4 || batch.shape()[1..] != expected {
            return Err(Error::ShapeMismatch(format!(
                "batch shape {:?}, network expects [n, {}, {}, {}]",
                batch.shape(),
                expected[0],
                expected[1],
                expected[2]
            )));
        }
        Ok(())
    }

    /// Runs a `[n, c, h, w]` batch and returns `[n, 6]` logits with the
    /// activations needed by [`Network::backward`].
    pub fn forward(&self, batch: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache)> {
        self.check_batch(batch)?;
        let samples: Vec<SampleCache> = batch
            .rows()
            .take(batch.batch_len())
            .enumerate()
            .map(|(i, x)| self.forward_sample(x, dropout_seed(mode, i)))
            .collect();
        let mut logits = Vec::with_capacity(samples.len() * NUM_CLASSES);
        for s in &samples {
            logits.extend_from_slice(&s.logits);
        }
        let logits = Tensor::new(vec![samples.len(), NUM_CLASSES], logits)?;
        Ok((logits, ForwardCache { samples }))
    }

    /// Parameter gradients summed over the batch, given `dL/dlogits` per row.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Tensor) -> Result<Vec<LayerParams>> {
        if grad_logits.shape() != [cache.len(), NUM_CLASSES] {
            return Err(Error::StaleCache(format!(
                "gradient shape {:?} for a cached batch of {}",
                grad_logits.shape(),
                cache.len()
            )));
        }
        let mut grads = self.zero_grads();
        for (sample, g) in cache.samples.iter().zip(grad_logits.rows()) {
            if sample.inputs.len() != self.specs.len() {
                return Err(Error::StaleCache("cache built by a different network".into()));
            }
            self.backward_sample(sample, g, &mut grads);
        }
        Ok(grads)
    }

    /// Arg-max class per sample; ties go to the lowest index.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        self.check_batch(batch)?;
        Ok(batch
            .rows()
            .take(batch.batch_len())
            .map(|x| argmax(&self.infer_sample(x)))
            .collect())
    }

    /// Inference logits for one sample without keeping activations.
    pub fn infer_sample(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (i, spec) in self.specs.iter().enumerate() {
            if matches!(spec, LayerSpec::Dropout { .. }) {
                continue;
            }
            cur = self.layer_forward(i, &cur, None).0;
        }
        cur
    }

    pub(crate) fn forward_sample(&self, x: &[f64], dropout_seed: Option<u64>) -> SampleCache {
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let mut inputs = Vec::with_capacity(self.specs.len());
        let mut aux = Vec::with_capacity(self.specs.len());
        let mut cur = x.to_vec();
        for i in 0..self.specs.len() {
            let (out, extra) = self.layer_forward(i, &cur, rng.as_mut());
            inputs.push(std::mem::replace(&mut cur, out));
            aux.push(extra);
        }
        SampleCache {
            inputs,
            aux,
            logits: cur,
        }
    }

    fn layer_forward(&self, i: usize, x: &[f64], rng: Option<&mut ChaCha8Rng>) -> (Vec<f64>, Aux) {
        let (s_in, s_out) = (self.shapes[i], self.shapes[i + 1]);
        let p = &self.params[i];
        match self.specs[i] {
            LayerSpec::Conv2d { kernel_size, stride, .. } => (
                conv_forward(x, s_in, s_out, p, kernel_size, stride),
                Aux::None,
            ),
            LayerSpec::Relu => (x.iter().map(|v| v.max(0.0)).collect(), Aux::None),
            LayerSpec::MaxPool { size } => {
                let (out, idx) = pool_forward(x, s_in, s_out, size);
                (out, Aux::PoolArgmax(idx))
            }
            LayerSpec::GlobalAvgPool => {
                let plane = s_in.plane();
                let out = x
                    .chunks_exact(plane)
                    .map(|c| c.iter().sum::<f64>() / plane as f64)
                    .collect();
                (out, Aux::None)
            }
            LayerSpec::Dense { in_dim, out_dim } => {
                let out = (0..out_dim)
                    .map(|j| {
                        let row = &p.weights[j * in_dim..(j + 1) * in_dim];
                        p.bias[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                    })
                    .collect();
                (out, Aux::None)
            }
            LayerSpec::Dropout { rate } => match rng {
                Some(rng) if rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..x.len())
                        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                        .collect();
                    let out = x.iter().zip(&mask).map(|(v, m)| v * m).collect();
                    (out, Aux::Mask(mask))
                }
                _ => (x.to_vec(), Aux::None),
            },
        }
    }

    /// Accumulates this sample's parameter gradients into `grads`.
    pub(crate) fn backward_sample(&self, cache: &SampleCache, grad: &[f64], grads: &mut [LayerParams]) {
        let mut g = grad.to_vec();
        for i in (0..self.specs.len()).rev() {
            let x = &cache.inputs[i];
            let (s_in, s_out) = (self.shapes[i], self.shapes[i + 1]);
            g = match self.specs[i] {
                LayerSpec::Conv2d { kernel_size, stride, .. } => conv_backward(
                    x,
                    &g,
                    s_in,
                    s_out,
                    &self.params[i],
                    &mut grads[i],
                    kernel_size,
                    stride,
                    i > 0,
                ),
                LayerSpec::Relu => g
                    .iter()
                    .zip(x)
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect(),
                LayerSpec::MaxPool { .. } => {
                    let Aux::PoolArgmax(idx) = &cache.aux[i] else {
                        unreachable!("pool layer without argmax cache")
                    };
                    let mut dx = vec![0.0; s_in.len()];
                    for (o, src) in idx.iter().enumerate() {
                        dx[*src] += g[o];
                    }
                    dx
                }
                LayerSpec::GlobalAvgPool => {
                    let plane = s_in.plane();
                    let scale = 1.0 / plane as f64;
                    g.iter()
                        .flat_map(|gc| std::iter::repeat_n(gc * scale, plane))
                        .collect()
                }
                LayerSpec::Dense { in_dim, out_dim } => {
                    let p = &self.params[i];
                    let acc = &mut grads[i];
                    let mut dx = vec![0.0; in_dim];
                    for (j, &gj) in g.iter().enumerate().take(out_dim) {
                        acc.bias[j] += gj;
                        let w = &p.weights[j * in_dim..(j + 1) * in_dim];
                        let dw = &mut acc.weights[j * in_dim..(j + 1) * in_dim];
                        for k in 0..in_dim {
                            dw[k] += gj * x[k];
                            dx[k] += gj * w[k];
                        }
                    }
                    dx
                }
                LayerSpec::Dropout { .. } => match &cache.aux[i] {
                    Aux::Mask(mask) => g.iter().zip(mask).map(|(g, m)| g * m).collect(),
                    _ => g,
                },
            };
        }
    }
}

fn dropout_seed(mode: Mode, index: usize) -> Option<u64> {
    match mode {
        Mode::Inference => None,
        Mode::Train { seed } => Some(derive_seed(&[seed, index as u64])),
    }
}

/// `(weights, biases, fan_in)` for a layer.
fn param_counts(spec: &LayerSpec) -> (usize, usize, usize) {
    match *spec {
        LayerSpec::Conv2d {
            kernel_size,
            in_channels,
            out_channels,
            ..
        } => {
            let fan_in = in_channels * kernel_size * kernel_size;
            (out_channels * fan_in, out_channels, fan_in)
        }
        LayerSpec::Dense { in_dim, out_dim } => (in_dim * out_dim, out_dim, in_dim),
        _ => (0, 0, 0),
    }
}

fn chain_shapes(input: Shape, specs: &[LayerSpec]) -> Result<Vec<Shape>> {
    let mismatch = |i: usize, msg: String| Error::ShapeMismatch(format!("layer {i}: {msg}"));
    if input.is_empty() {
        return Err(Error::ShapeMismatch("empty input shape".into()));
    }
    let mut shapes = vec![input];
    let mut cur = input;
    for (i, spec) in specs.iter().enumerate() {
        cur = match *spec {
            LayerSpec::Conv2d {
                kernel_size,
                in_channels,
                out_channels,
                stride,
            } => {
                if in_channels != cur.channels {
                    return Err(mismatch(i, format!("expects {in_channels} channels, got {}", cur.channels)));
                }
                if kernel_size == 0 || stride == 0 || out_channels == 0 {
                    return Err(mismatch(i, "zero kernel, stride or channel count".into()));
                }
                if kernel_size > cur.height || kernel_size > cur.width {
                    return Err(mismatch(i, format!("kernel {kernel_size} larger than {cur:?}")));
                }
                Shape::new(
                    out_channels,
                    (cur.height - kernel_size) / stride + 1,
                    (cur.width - kernel_size) / stride + 1,
                )
            }
            LayerSpec::Relu => cur,
            LayerSpec::MaxPool { size } => {
                if size == 0 || size > cur.height || size > cur.width {
                    return Err(mismatch(i, format!("pool size {size} for {cur:?}")));
                }
                Shape::new(cur.channels, cur.height / size, cur.width / size)
            }
            LayerSpec::GlobalAvgPool => Shape::flat(cur.channels),
            LayerSpec::Dense { in_dim, out_dim } => {
                if in_dim != cur.len() || out_dim == 0 {
                    return Err(mismatch(i, format!("dense expects {in_dim} inputs, got {}", cur.len())));
                }
                Shape::flat(out_dim)
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(mismatch(i, format!("dropout rate {rate} outside [0, 1)")));
                }
                cur
            }
        };
        shapes.push(cur);
    }
    match specs.last() {
        Some(LayerSpec::Dense { out_dim, .. }) if *out_dim == NUM_CLASSES => Ok(shapes),
        _ => Err(Error::ShapeMismatch(format!(
            "network must end in a dense layer with {NUM_CLASSES} outputs"
        ))),
    }
}

fn conv_forward(x: &[f64], s_in: Shape, s_out: Shape, p: &LayerParams, k: usize, stride: usize) -> Vec<f64> {
    let (ow, oplane) = (s_out.width, s_out.plane());
    let (ic_n, iw, iplane) = (s_in.channels, s_in.width, s_in.plane());
    let mut out = vec![0.0; s_out.len()];
    for (oc, o) in out.chunks_exact_mut(oplane).enumerate() {
        o.fill(p.bias[oc]);
        for ic in 0..ic_n {
            let xin = &x[ic * iplane..(ic + 1) * iplane];
            for ky in 0..k {
                for kx in 0..k {
                    let w = p.weights[((oc * ic_n + ic) * k + ky) * k + kx];
                    for (oy, orow) in o.chunks_exact_mut(ow).enumerate() {
                        let base = (oy * stride + ky) * iw + kx;
                        if stride == 1 {
                            let row = &xin[base..base + ow];
                            for (o, v) in orow.iter_mut().zip(row) {
                                *o += w * v;
                            }
                        } else {
                            for (ox, o) in orow.iter_mut().enumerate() {
                                *o += w * xin[base + ox * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    g: &[f64],
    s_in: Shape,
    s_out: Shape,
    p: &LayerParams,
    acc: &mut LayerParams,
    k: usize,
    stride: usize,
    need_dx: bool,
) -> Vec<f64> {
    let (ow, oplane) = (s_out.width, s_out.plane());
    let (ic_n, iw, iplane) = (s_in.channels, s_in.width, s_in.plane());
    let mut dx = if need_dx { vec![0.0; s_in.len()] } else { Vec::new() };
    for (oc, go) in g.chunks_exact(oplane).enumerate() {
        acc.bias[oc] += go.iter().sum::<f64>();
        for ic in 0..ic_n {
            let xin = &x[ic * iplane..(ic + 1) * iplane];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((oc * ic_n + ic) * k + ky) * k + kx;
                    let w = p.weights[widx];
                    let mut dw = 0.0;
                    for (oy, grow) in go.chunks_exact(ow).enumerate() {
                        let base = (oy * stride + ky) * iw + kx;
                        if stride == 1 {
                            dw += grow.iter().zip(&xin[base..base + ow]).map(|(g, v)| g * v).sum::<f64>();
                            if need_dx {
                                let drow = &mut dx[ic * iplane + base..ic * iplane + base + ow];
                                for (d, g) in drow.iter_mut().zip(grow) {
                                    *d += w * g;
                                }
                            }
                        } else {
                            for (ox, gv) in grow.iter().enumerate() {
                                dw += gv * xin[base + ox * stride];
                                if need_dx {
                                    dx[ic * iplane + base + ox * stride] += w * gv;
                                }
                            }
                        }
                    }
                    acc.weights[widx] += dw;
                }
            }
        }
    }
    dx
}

fn pool_forward(x: &[f64], s_in: Shape, s_out: Shape, size: usize) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(s_out.len());
    let mut idx = Vec::with_capacity(s_out.len());
    for c in 0..s_in.channels {
        let base = c * s_in.plane();
        for oy in 0..s_out.height {
            for ox in 0..s_out.width {
                let mut best = base + oy * size * s_in.width + ox * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let j = base + (oy * size + dy) * s_in.width + ox * size + dx;
                        if x[j] > x[best] {
                            best = j;
                        }
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    (out, idx)
}
