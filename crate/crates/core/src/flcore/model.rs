//! Model parameters, forward pass and manual backpropagation.
//!
//! Hidden layers apply the configured activation; the head is a linear layer
//! followed by log-softmax with cross-entropy loss, so the output error is
//! `delta = p - y`. Convolutions are stride-1 with optional zero padding and
//! every convolution is followed by its activation and a 2x2 max-pool.
//!
//! Everything is generic over the scalar so the same network runs in f32
//! for training and in f64 for finite-difference checks.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flcore::data::Sample;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
}

impl Activation {
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Self::Sigmoid => T::one() / (T::one() + (-z).exp()),
            Self::Relu => z.max(T::zero()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative<T: Scalar>(self, z: T, a: T) -> T {
        match self {
            Self::Sigmoid => a * (T::one() - a),
            Self::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub kernel: usize,
    #[serde(default)]
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Architecture {
    Mlp {
        input: usize,
        hidden: Vec<usize>,
    },
    Cnn {
        channels: usize,
        height: usize,
        width: usize,
        conv: Vec<ConvLayer>,
        hidden: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub activation: Activation,
    pub classes: usize,
}

pub const POOL: usize = 2;

/// Shape bookkeeping of one convolution block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvGeom {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    k: usize,
    pad: usize,
    /// Convolution output size (before pooling).
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn pooled(&self) -> (usize, usize) {
        (self.out_h / POOL, self.out_w / POOL)
    }
}

impl ModelSpec {
    pub fn mlp(input: usize, hidden: &[usize], classes: usize, activation: Activation) -> Self {
        Self {
            architecture: Architecture::Mlp {
                input,
                hidden: hidden.to_vec(),
            },
            activation,
            classes,
        }
    }

    /// Two 3x3 same-padded conv blocks (8 and 16 channels) and a 32-unit
    /// hidden layer, sized for 8x8 single-channel digits.
    pub fn desk_cnn() -> Self {
        Self {
            architecture: Architecture::Cnn {
                channels: 1,
                height: 8,
                width: 8,
                conv: vec![
                    ConvLayer {
                        out_channels: 8,
                        kernel: 3,
                        padding: 1,
                    },
                    ConvLayer {
                        out_channels: 16,
                        kernel: 3,
                        padding: 1,
                    },
                ],
                hidden: vec![32],
            },
            activation: Activation::Relu,
            classes: 10,
        }
    }

    pub fn desk_mlp() -> Self {
        Self::mlp(64, &[32], 10, Activation::Relu)
    }

    /// Two 5x5 conv blocks (10 and 20 channels) and a 50-unit hidden layer
    /// for 28x28 MNIST.
    pub fn mnist_cnn() -> Self {
        Self {
            architecture: Architecture::Cnn {
                channels: 1,
                height: 28,
                width: 28,
                conv: vec![
                    ConvLayer {
                        out_channels: 10,
                        kernel: 5,
                        padding: 0,
                    },
                    ConvLayer {
                        out_channels: 20,
                        kernel: 5,
                        padding: 0,
                    },
                ],
                hidden: vec![50],
            },
            activation: Activation::Relu,
            classes: 10,
        }
    }

    pub fn input_len(&self) -> usize {
        match &self.architecture {
            Architecture::Mlp { input, .. } => *input,
            Architecture::Cnn {
                channels,
                height,
                width,
                ..
            } => channels * height * width,
        }
    }

    fn conv_geometry(&self) -> Result<(Vec<ConvGeom>, usize)> {
        match &self.architecture {
            Architecture::Mlp { input, .. } => Ok((Vec::new(), *input)),
            Architecture::Cnn {
                channels,
                height,
                width,
                conv,
                ..
            } => {
                let (mut c, mut h, mut w) = (*channels, *height, *width);
                let mut geoms = Vec::with_capacity(conv.len());
                for (i, layer) in conv.iter().enumerate() {
                    if layer.kernel == 0 || layer.out_channels == 0 {
                        return Err(Error::Spec(format!("conv layer {i} has zero size")));
                    }
                    let (ph, pw) = (h + 2 * layer.padding, w + 2 * layer.padding);
                    if ph < layer.kernel || pw < layer.kernel {
                        return Err(Error::Spec(format!(
                            "conv layer {i}: kernel larger than input"
                        )));
                    }
                    let (out_h, out_w) = (ph - layer.kernel + 1, pw - layer.kernel + 1);
                    if out_h % POOL != 0 || out_w % POOL != 0 {
                        return Err(Error::Spec(format!(
                            "conv layer {i}: {out_h}x{out_w} not divisible by pool size {POOL}"
                        )));
                    }
                    let g = ConvGeom {
                        in_c: c,
                        in_h: h,
                        in_w: w,
                        out_c: layer.out_channels,
                        k: layer.kernel,
                        pad: layer.padding,
                        out_h,
                        out_w,
                    };
                    (c, h, w) = (g.out_c, out_h / POOL, out_w / POOL);
                    geoms.push(g);
                }
                Ok((geoms, c * h * w))
            }
        }
    }

    fn hidden(&self) -> &[usize] {
        match &self.architecture {
            Architecture::Mlp { hidden, .. } | Architecture::Cnn { hidden, .. } => hidden,
        }
    }

    /// Widths of the fully connected stack, input first, classes last.
    fn fc_widths(&self) -> Result<Vec<usize>> {
        let (_, flat) = self.conv_geometry()?;
        let mut widths = vec![flat];
        widths.extend_from_slice(self.hidden());
        widths.push(self.classes);
        if widths.contains(&0) {
            return Err(Error::Spec("zero-width layer".into()));
        }
        Ok(widths)
    }

    /// Neuron counts of each fully connected layer (hidden layers and output).
    pub fn fc_layer_sizes(&self) -> Result<Vec<usize>> {
        Ok(self.fc_widths()?[1..].to_vec())
    }

    pub fn is_cnn(&self) -> bool {
        matches!(self.architecture, Architecture::Cnn { .. })
    }

    pub fn layout(&self) -> Result<Layout> {
        Layout::new(self.clone())
    }
}

/// A named contiguous slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Flat layout of all weights and biases: conv blocks first, then the fully
/// connected stack, each layer as `weight` followed by `bias`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub spec: ModelSpec,
    pub blocks: Vec<ParamBlock>,
    conv: Vec<ConvGeom>,
    fc: Vec<usize>,
    total: usize,
}

impl Layout {
    fn new(spec: ModelSpec) -> Result<Self> {
        if spec.classes < 2 {
            return Err(Error::Spec("need at least two classes".into()));
        }
        let (conv, _) = spec.conv_geometry()?;
        let fc = spec.fc_widths()?;
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let len = shape.iter().product();
            blocks.push(ParamBlock {
                name,
                shape,
                offset,
                len,
            });
            offset += len;
        };
        for (i, g) in conv.iter().enumerate() {
            push(format!("conv{i}.weight"), vec![g.out_c, g.in_c, g.k, g.k]);
            push(format!("conv{i}.bias"), vec![g.out_c]);
        }
        for (i, w) in fc.windows(2).enumerate() {
            push(format!("fc{i}.weight"), vec![w[1], w[0]]);
            push(format!("fc{i}.bias"), vec![w[1]]);
        }
        Ok(Self {
            spec,
            blocks,
            conv,
            fc,
            total: offset,
        })
    }

    pub fn num_params(&self) -> usize {
        self.total
    }

    /// Index of the first fully connected block in `blocks`.
    fn fc_block_start(&self) -> usize {
        2 * self.conv.len()
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

/// Model weights and biases, flat, in [`Layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub layout: Arc<Layout>,
    pub values: Vec<T>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        let layout = Arc::new(spec.layout()?);
        let values = vec![T::zero(); layout.num_params()];
        Ok(Self { layout, values })
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(spec)?;
        for b in p.layout.clone().blocks.iter().filter(|b| b.shape.len() > 1) {
            let fan_in: usize = b.shape[1..].iter().product();
            let lim = 1.0 / (fan_in as f64).sqrt();
            for v in &mut p.values[b.offset..b.offset + b.len] {
                *v = T::from_f64(rng.random_range(-lim..lim)).unwrap();
            }
        }
        Ok(p)
    }

    /// Weights uniform in `(-limit, limit)`, biases too.
    pub fn uniform<R: Rng + ?Sized>(spec: &ModelSpec, limit: f64, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(spec)?;
        for v in &mut p.values {
            *v = T::from_f64(rng.random_range(-limit..limit)).unwrap();
        }
        Ok(p)
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            layout: self.layout.clone(),
            values: self
                .values
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }

    pub fn block(&self, name: &str) -> Option<&[T]> {
        self.layout
            .block(name)
            .map(|b| &self.values[b.offset..b.offset + b.len])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Gradient aligned with a [`Params`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub values: Vec<T>,
    pub client_id: Option<usize>,
    pub round: usize,
}

impl<T: Scalar> Gradient<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self {
            values,
            client_id: None,
            round: 0,
        }
    }

    pub fn tagged(mut self, client_id: usize, round: usize) -> Self {
        self.client_id = Some(client_id);
        self.round = round;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-sample intermediate quantities recorded during backpropagation.
#[derive(Debug, Clone, Default)]
pub struct Trace<T> {
    /// Output error `p - y` of every sample.
    pub output_delta: Vec<Vec<T>>,
    /// Per sample, per conv block: gradient w.r.t. the conv activations
    /// (the pre-pool map), laid out `[channel][row][col]`.
    pub conv_activation_grad: Vec<Vec<Vec<T>>>,
    /// Per sample, per conv block: the pre-activation error `delta` map.
    pub conv_delta: Vec<Vec<Vec<T>>>,
}

struct ConvCache<T> {
    /// Zero-padded input to the convolution, `[c][h + 2p][w + 2p]`.
    input: Vec<T>,
    z: Vec<T>,
    a: Vec<T>,
    /// For each pooled cell, the flat index into `a` of its maximum.
    argmax: Vec<usize>,
}

fn pad_input<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    if g.pad == 0 {
        return x.to_vec();
    }
    let (ph, pw) = (g.in_h + 2 * g.pad, g.in_w + 2 * g.pad);
    let mut out = vec![T::zero(); g.in_c * ph * pw];
    for c in 0..g.in_c {
        for i in 0..g.in_h {
            let src = &x[(c * g.in_h + i) * g.in_w..][..g.in_w];
            out[(c * ph + i + g.pad) * pw + g.pad..][..g.in_w].copy_from_slice(src);
        }
    }
    out
}

fn conv_forward<T: Scalar>(
    x: &[T],
    g: &ConvGeom,
    w: &[T],
    b: &[T],
    act: Activation,
) -> (ConvCache<T>, Vec<T>) {
    let input = pad_input(x, g);
    let (ph, pw) = (g.in_h + 2 * g.pad, g.in_w + 2 * g.pad);
    let (oh, ow, k) = (g.out_h, g.out_w, g.k);
    let mut z = vec![T::zero(); g.out_c * oh * ow];
    for o in 0..g.out_c {
        let zo = &mut z[o * oh * ow..][..oh * ow];
        zo.iter_mut().for_each(|v| *v = b[o]);
        for c in 0..g.in_c {
            let xc = &input[c * ph * pw..][..ph * pw];
            let wk = &w[(o * g.in_c + c) * k * k..][..k * k];
            for p in 0..k {
                for q in 0..k {
                    let wv = wk[p * k + q];
                    for j in 0..oh {
                        let row = &xc[(j + p) * pw + q..][..ow];
                        let zrow = &mut zo[j * ow..][..ow];
                        for (zv, &xv) in zrow.iter_mut().zip(row) {
                            *zv = *zv + wv * xv;
                        }
                    }
                }
            }
        }
    }
    let a: Vec<T> = z.iter().map(|&v| act.apply(v)).collect();
    let (hh, hw) = g.pooled();
    let mut pooled = Vec::with_capacity(g.out_c * hh * hw);
    let mut argmax = Vec::with_capacity(g.out_c * hh * hw);
    for o in 0..g.out_c {
        for s in 0..hh {
            for t in 0..hw {
                let mut best = o * oh * ow + (POOL * s) * ow + POOL * t;
                for di in 0..POOL {
                    for dj in 0..POOL {
                        let idx = o * oh * ow + (POOL * s + di) * ow + POOL * t + dj;
                        if a[idx] > a[best] {
                            best = idx;
                        }
                    }
                }
                pooled.push(a[best]);
                argmax.push(best);
            }
        }
    }
    (
        ConvCache {
            input,
            z,
            a,
            argmax,
        },
        pooled,
    )
}

/// Activation-gradient and delta maps recorded by [`conv_backward`].
type TraceSink<'a, T> = (&'a mut Vec<Vec<T>>, &'a mut Vec<Vec<T>>);

/// Back through pool, activation and convolution. `grad_pooled` is dC/d(pooled
/// output). Accumulates parameter gradients; returns dC/d(block input) when
/// `need_input_grad`.
#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    cache: &ConvCache<T>,
    g: &ConvGeom,
    w: &[T],
    act: Activation,
    grad_pooled: &[T],
    gw: &mut [T],
    gb: &mut [T],
    need_input_grad: bool,
    trace: Option<TraceSink<'_, T>>,
) -> Option<Vec<T>> {
    let (ph, pw) = (g.in_h + 2 * g.pad, g.in_w + 2 * g.pad);
    let (oh, ow, k) = (g.out_h, g.out_w, g.k);
    // Pool routes the gradient to the argmax cell only.
    let mut grad_a = vec![T::zero(); cache.a.len()];
    for (cell, &idx) in cache.argmax.iter().enumerate() {
        grad_a[idx] = grad_a[idx] + grad_pooled[cell];
    }
    let delta: Vec<T> = grad_a
        .iter()
        .zip(cache.z.iter().zip(&cache.a))
        .map(|(&ga, (&z, &a))| ga * act.derivative(z, a))
        .collect();
    if let Some((ga_trace, d_trace)) = trace {
        ga_trace.push(grad_a);
        d_trace.push(delta.clone());
    }
    let mut grad_in = need_input_grad.then(|| vec![T::zero(); g.in_c * ph * pw]);
    for o in 0..g.out_c {
        let d_o = &delta[o * oh * ow..][..oh * ow];
        gb[o] = gb[o] + d_o.iter().copied().fold(T::zero(), |s, v| s + v);
        for c in 0..g.in_c {
            let xc = &cache.input[c * ph * pw..][..ph * pw];
            let base = (o * g.in_c + c) * k * k;
            for p in 0..k {
                for q in 0..k {
                    let mut acc = T::zero();
                    for j in 0..oh {
                        let row = &xc[(j + p) * pw + q..][..ow];
                        let drow = &d_o[j * ow..][..ow];
                        for (&dv, &xv) in drow.iter().zip(row) {
                            acc = acc + dv * xv;
                        }
                    }
                    gw[base + p * k + q] = gw[base + p * k + q] + acc;
                    if let Some(gi) = grad_in.as_mut() {
                        let wv = w[base + p * k + q];
                        let gic = &mut gi[c * ph * pw..][..ph * pw];
                        for j in 0..oh {
                            let drow = &d_o[j * ow..][..ow];
                            let girow = &mut gic[(j + p) * pw + q..][..ow];
                            for (gv, &dv) in girow.iter_mut().zip(drow) {
                                *gv = *gv + wv * dv;
                            }
                        }
                    }
                }
            }
        }
    }
    grad_in.map(|gi| {
        if g.pad == 0 {
            return gi;
        }
        let mut out = Vec::with_capacity(g.in_c * g.in_h * g.in_w);
        for c in 0..g.in_c {
            for i in 0..g.in_h {
                out.extend_from_slice(&gi[(c * ph + i + g.pad) * pw + g.pad..][..g.in_w]);
            }
        }
        out
    })
}

fn log_softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + z
        .iter()
        .map(|&v| (v - m).exp())
        .fold(T::zero(), |s, v| s + v)
        .ln();
    z.iter().map(|&v| v - lse).collect()
}

struct Forward<T> {
    conv: Vec<ConvCache<T>>,
    /// Inputs to each fully connected layer (`fc[0]` is the flattened features).
    fc_in: Vec<Vec<T>>,
    /// Pre-activations of each fully connected layer.
    fc_z: Vec<Vec<T>>,
    log_probs: Vec<T>,
}

fn forward<T: Scalar>(params: &Params<T>, x: &[T]) -> Forward<T> {
    let layout = &params.layout;
    let act = layout.spec.activation;
    let v = &params.values;
    let mut conv = Vec::with_capacity(layout.conv.len());
    let mut h = x.to_vec();
    for (i, g) in layout.conv.iter().enumerate() {
        let (wb, bb) = (&layout.blocks[2 * i], &layout.blocks[2 * i + 1]);
        let (cache, pooled) = conv_forward(
            &h,
            g,
            &v[wb.offset..][..wb.len],
            &v[bb.offset..][..bb.len],
            act,
        );
        conv.push(cache);
        h = pooled;
    }
    let n_fc = layout.fc.len() - 1;
    let mut fc_in = Vec::with_capacity(n_fc);
    let mut fc_z = Vec::with_capacity(n_fc);
    for l in 0..n_fc {
        let (wb, bb) = (
            &layout.blocks[layout.fc_block_start() + 2 * l],
            &layout.blocks[layout.fc_block_start() + 2 * l + 1],
        );
        let (n_in, n_out) = (layout.fc[l], layout.fc[l + 1]);
        let w = &v[wb.offset..][..wb.len];
        let b = &v[bb.offset..][..bb.len];
        let z: Vec<T> = (0..n_out)
            .map(|j| {
                w[j * n_in..][..n_in]
                    .iter()
                    .zip(&h)
                    .fold(b[j], |s, (&wv, &hv)| s + wv * hv)
            })
            .collect();
        let next = if l + 1 < n_fc {
            z.iter().map(|&v| act.apply(v)).collect()
        } else {
            Vec::new()
        };
        fc_in.push(std::mem::replace(&mut h, next));
        fc_z.push(z);
    }
    let log_probs = log_softmax(fc_z.last().unwrap());
    Forward {
        conv,
        fc_in,
        fc_z,
        log_probs,
    }
}

fn check_batch<T: Scalar>(params: &Params<T>, batch: &[Sample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Spec("empty batch".into()));
    }
    let spec = &params.layout.spec;
    if params.values.len() != params.layout.num_params() {
        return Err(Error::Spec("parameter vector does not match layout".into()));
    }
    for s in batch {
        if s.x.len() != spec.input_len() {
            return Err(Error::Spec(format!(
                "sample has {} features, model expects {}",
                s.x.len(),
                spec.input_len()
            )));
        }
        if s.label >= spec.classes {
            return Err(Error::Spec(format!("label {} out of range", s.label)));
        }
    }
    Ok(())
}

/// Class log-probabilities for one input.
pub fn predict_log_probs<T: Scalar>(params: &Params<T>, x: &[f32]) -> Vec<T> {
    let x: Vec<T> = x.iter().map(|&v| T::from_f32(v).unwrap()).collect();
    forward(params, &x).log_probs
}

/// Mean cross-entropy over `batch`.
pub fn loss<T: Scalar>(params: &Params<T>, batch: &[Sample]) -> Result<T> {
    check_batch(params, batch)?;
    let total = batch.iter().fold(T::zero(), |acc, s| {
        acc - predict_log_probs(params, &s.x)[s.label]
    });
    Ok(total / T::from_usize(batch.len()).unwrap())
}

/// Mean loss and its gradient over `batch`, for either architecture.
pub fn forward_backward<T: Scalar>(
    params: &Params<T>,
    batch: &[Sample],
) -> Result<(T, Gradient<T>)> {
    run_backprop(params, batch, None)
}

/// Like [`forward_backward`], additionally recording per-sample internals.
pub fn forward_backward_traced<T: Scalar>(
    params: &Params<T>,
    batch: &[Sample],
) -> Result<(T, Gradient<T>, Trace<T>)> {
    let mut trace = Trace::default();
    let (l, g) = run_backprop(params, batch, Some(&mut trace))?;
    Ok((l, g, trace))
}

/// Backprop for a fully connected network.
pub fn forward_backward_fc<T: Scalar>(
    params: &Params<T>,
    batch: &[Sample],
) -> Result<(T, Gradient<T>)> {
    if params.layout.spec.is_cnn() {
        return Err(Error::Spec("expected an MLP spec".into()));
    }
    forward_backward(params, batch)
}

/// Backprop for a convolutional network.
pub fn forward_backward_cnn<T: Scalar>(
    params: &Params<T>,
    batch: &[Sample],
) -> Result<(T, Gradient<T>)> {
    if !params.layout.spec.is_cnn() {
        return Err(Error::Spec("expected a CNN spec".into()));
    }
    forward_backward(params, batch)
}

fn run_backprop<T: Scalar>(
    params: &Params<T>,
    batch: &[Sample],
    mut trace: Option<&mut Trace<T>>,
) -> Result<(T, Gradient<T>)> {
    check_batch(params, batch)?;
    let layout = &params.layout;
    let act = layout.spec.activation;
    let v = &params.values;
    let mut grad = vec![T::zero(); layout.num_params()];
    let mut total_loss = T::zero();
    let n_fc = layout.fc.len() - 1;
    let fc0 = layout.fc_block_start();
    for sample in batch {
        let x: Vec<T> = sample.x.iter().map(|&v| T::from_f32(v).unwrap()).collect();
        let fwd = forward(params, &x);
        total_loss = total_loss - fwd.log_probs[sample.label];
        // delta^L = p - y
        let mut delta: Vec<T> = fwd.log_probs.iter().map(|&lp| lp.exp()).collect();
        delta[sample.label] = delta[sample.label] - T::one();
        if let Some(t) = trace.as_deref_mut() {
            t.output_delta.push(delta.clone());
        }
        for l in (0..n_fc).rev() {
            let (wb, bb) = (&layout.blocks[fc0 + 2 * l], &layout.blocks[fc0 + 2 * l + 1]);
            let (n_in, n_out) = (layout.fc[l], layout.fc[l + 1]);
            let a_prev = &fwd.fc_in[l];
            {
                let gw = &mut grad[wb.offset..][..wb.len];
                for j in 0..n_out {
                    let row = &mut gw[j * n_in..][..n_in];
                    for (g, &a) in row.iter_mut().zip(a_prev) {
                        *g = *g + delta[j] * a;
                    }
                }
            }
            for j in 0..n_out {
                grad[bb.offset + j] = grad[bb.offset + j] + delta[j];
            }
            if l == 0 && layout.conv.is_empty() {
                break;
            }
            // dC/d(a_prev) = W^T delta
            let w = &v[wb.offset..][..wb.len];
            let mut back = vec![T::zero(); n_in];
            for j in 0..n_out {
                for (bk, &wv) in back.iter_mut().zip(&w[j * n_in..][..n_in]) {
                    *bk = *bk + delta[j] * wv;
                }
            }
            if l > 0 {
                let z_prev = &fwd.fc_z[l - 1];
                delta = back
                    .iter()
                    .zip(z_prev.iter().zip(a_prev))
                    .map(|(&bk, (&z, &a))| bk * act.derivative(z, a))
                    .collect();
            } else {
                // Flattened pooled features carry no activation of their own.
                delta = back;
            }
        }
        if !layout.conv.is_empty() {
            let mut ga_s = Vec::new();
            let mut d_s = Vec::new();
            let mut grad_pooled = delta;
            for (i, g) in layout.conv.iter().enumerate().rev() {
                let (wb, bb) = (&layout.blocks[2 * i], &layout.blocks[2 * i + 1]);
                let (gw_part, rest) = grad.split_at_mut(bb.offset);
                let gw = &mut gw_part[wb.offset..][..wb.len];
                let gb = &mut rest[..bb.len];
                let tr = trace.is_some().then_some((&mut ga_s, &mut d_s));
                match conv_backward(
                    &fwd.conv[i],
                    g,
                    &v[wb.offset..][..wb.len],
                    act,
                    &grad_pooled,
                    gw,
                    gb,
                    i > 0,
                    tr,
                ) {
                    Some(gi) => grad_pooled = gi,
                    None => break,
                }
            }
            if let Some(t) = trace.as_deref_mut() {
                ga_s.reverse();
                d_s.reverse();
                t.conv_activation_grad.push(ga_s);
                t.conv_delta.push(d_s);
            }
        }
    }
    let n = T::from_usize(batch.len()).unwrap();
    grad.iter_mut().for_each(|g| *g = *g / n);
    Ok((total_loss / n, Gradient::new(grad)))
}
