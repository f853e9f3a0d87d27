//! Minimal differentiable network engine.
//!
//! Supports dense and 2-D convolutional classifiers built from a fixed set of
//! layer kinds, with exact reverse-mode gradients with respect to both the
//! input and the parameters. All arithmetic is 64-bit; parameters are frozen
//! during any gradient-to-input computation (the API takes `&Network`).

use crate::error::{Error, Result};
use crate::rng::{child_seed, rng_from_seed};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    Tanh,
    Flatten,
    MaxPool2d {
        size: usize,
        stride: usize,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Tanh => "tanh",
            LayerSpec::Flatten => "flatten",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    /// Output shape for the given input shape, or an error when the layer
    /// cannot consume it.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => {
                if input != [in_dim] {
                    return Err(format!("expects input [{in_dim}], got {input:?}"));
                }
                Ok(vec![out_dim])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if kernel == 0 || stride == 0 {
                    return Err("kernel and stride must be positive".into());
                }
                match input {
                    &[c, h, w] if c == in_channels && h >= kernel && w >= kernel => Ok(vec![
                        out_channels,
                        (h - kernel) / stride + 1,
                        (w - kernel) / stride + 1,
                    ]),
                    _ => Err(format!(
                        "expects input [{in_channels}, h>={kernel}, w>={kernel}], got {input:?}"
                    )),
                }
            }
            LayerSpec::Relu | LayerSpec::Tanh => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::MaxPool2d { size, stride } => {
                if size == 0 || stride == 0 {
                    return Err("size and stride must be positive".into());
                }
                match input {
                    &[c, h, w] if h >= size && w >= size => {
                        Ok(vec![c, (h - size) / stride + 1, (w - size) / stride + 1])
                    }
                    _ => Err(format!("expects input [c, h>={size}, w>={size}], got {input:?}")),
                }
            }
        }
    }
}

/// Weight and bias of one parametric layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<LayerSpec>,
    /// One entry per layer; `None` for parameter-free layers.
    params: Vec<Option<LayerParams>>,
    /// `shapes[i]` is the input shape of layer `i`; `shapes[len]` the output.
    shapes: Vec<Vec<usize>>,
    input_shape: Vec<usize>,
    num_classes: usize,
    init_seed: u64,
}

impl Network {
    /// Validate the layer chain against `input_shape`, require a final logit
    /// vector of length `num_classes`, and initialize parameters uniformly in
    /// `±1/sqrt(fan_in)` from `seed`.
    pub fn new(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut shapes = vec![input_shape.clone()];
        for (index, layer) in layers.iter().enumerate() {
            let out = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|msg| Error::LayerConfig {
                    index,
                    kind: layer.name(),
                    msg,
                })?;
            shapes.push(out);
        }
        if shapes.last().unwrap() != &[num_classes] {
            return Err(Error::LayerConfig {
                index: layers.len().saturating_sub(1),
                kind: "output",
                msg: format!(
                    "network output shape {:?} != logit vector [{num_classes}]",
                    shapes.last().unwrap()
                ),
            });
        }

        let mut params = Vec::with_capacity(layers.len());
        for (index, layer) in layers.iter().enumerate() {
            params.push(match *layer {
                LayerSpec::Dense { in_dim, out_dim } => Some(init_params(
                    &[out_dim, in_dim],
                    &[out_dim],
                    in_dim,
                    child_seed(seed, index as u64),
                )),
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => Some(init_params(
                    &[out_channels, in_channels, kernel, kernel],
                    &[out_channels],
                    in_channels * kernel * kernel,
                    child_seed(seed, index as u64),
                )),
                _ => None,
            });
        }

        Ok(Network {
            layers,
            params,
            shapes,
            input_shape,
            num_classes,
            init_seed: seed,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Option<LayerParams>] {
        &self.params
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    /// Input shape of layer `i` (the cached shape chain).
    pub fn layer_input_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    /// Replace all parameters; shapes must match the existing ones.
    pub fn set_params(&mut self, params: Vec<Option<LayerParams>>) -> Result<()> {
        if params.len() != self.layers.len() {
            return Err(Error::config("params", "layer count mismatch"));
        }
        for (i, (new, old)) in params.iter().zip(&self.params).enumerate() {
            match (new, old) {
                (None, None) => {}
                (Some(n), Some(o))
                    if n.weight.shape() == o.weight.shape() && n.bias.shape() == o.bias.shape() => {}
                _ => {
                    return Err(Error::LayerConfig {
                        index: i,
                        kind: self.layers[i].name(),
                        msg: "parameter shape mismatch".into(),
                    })
                }
            }
        }
        self.params = params;
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Option<LayerParams>] {
        &mut self.params
    }

    /// Forward pass returning the logit vector.
    pub fn forward_logits(&self, x: &Tensor) -> Result<Tensor> {
        x.check_shape(&self.input_shape)?;
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = apply_layer(layer, self.params[i].as_ref(), &cur, &self.shapes[i + 1]);
        }
        Ok(cur)
    }

    /// Forward pass that keeps every layer input for a later backward pass.
    pub fn forward_cached(&self, x: &Tensor) -> Result<ForwardCache> {
        x.check_shape(&self.input_shape)?;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let next = apply_layer(layer, self.params[i].as_ref(), &cur, &self.shapes[i + 1]);
            layer_inputs.push(cur);
            cur = next;
        }
        Ok(ForwardCache {
            layer_inputs,
            logits: cur,
        })
    }

    /// Reverse pass from a logit-space seed gradient down to the input.
    pub fn backward_input(&self, cache: &ForwardCache, dlogits: &Tensor) -> Tensor {
        self.backward(cache, dlogits, false).0
    }

    /// Reverse pass returning both the input gradient and per-layer parameter
    /// gradients (shaped like the parameters themselves).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dlogits: &Tensor,
        want_param_grads: bool,
    ) -> (Tensor, Vec<Option<LayerParams>>) {
        debug_assert_eq!(dlogits.shape(), [self.num_classes]);
        let mut grad = dlogits.clone();
        let mut param_grads: Vec<Option<LayerParams>> = vec![None; self.layers.len()];
        for i in (0..self.layers.len()).rev() {
            let x = &cache.layer_inputs[i];
            let (dx, dparams) = backward_layer(
                &self.layers[i],
                self.params[i].as_ref(),
                x,
                &grad,
                &self.shapes[i],
                want_param_grads,
            );
            grad = dx;
            param_grads[i] = dparams;
        }
        (grad, param_grads)
    }
}

fn init_params(weight_shape: &[usize], bias_shape: &[usize], fan_in: usize, seed: u64) -> LayerParams {
    let mut rng = rng_from_seed(seed);
    let bound = 1.0 / (fan_in as f64).sqrt();
    let mut draw = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    };
    LayerParams {
        weight: draw(weight_shape),
        bias: draw(bias_shape),
    }
}

pub(crate) fn apply_layer(
    layer: &LayerSpec,
    params: Option<&LayerParams>,
    x: &Tensor,
    out_shape: &[usize],
) -> Tensor {
    match *layer {
        LayerSpec::Dense { in_dim, out_dim } => {
            let p = params.unwrap();
            let mut out = vec![0.0; out_dim];
            dense_forward(x.data(), p.weight.data(), Some(p.bias.data()), in_dim, out_dim, &mut out);
            Tensor::new(out_shape.to_vec(), out).unwrap()
        }
        LayerSpec::Conv2d { in_channels, out_channels, kernel, stride } => {
            let p = params.unwrap();
            let (h, w) = (x.shape()[1], x.shape()[2]);
            let (oh, ow) = (out_shape[1], out_shape[2]);
            let mut out = vec![0.0; out_channels * oh * ow];
            conv2d_forward(
                x.data(),
                p.weight.data(),
                Some(p.bias.data()),
                ConvDims { in_channels, out_channels, kernel, stride, h, w, oh, ow },
                &mut out,
            );
            Tensor::new(out_shape.to_vec(), out).unwrap()
        }
        LayerSpec::Relu => {
            let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
            Tensor::new(out_shape.to_vec(), data).unwrap()
        }
        LayerSpec::Tanh => {
            let data = x.data().iter().map(|v| v.tanh()).collect();
            Tensor::new(out_shape.to_vec(), data).unwrap()
        }
        LayerSpec::Flatten => x.reshaped(out_shape).unwrap(),
        LayerSpec::MaxPool2d { size, stride } => {
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (oh, ow) = (out_shape[1], out_shape[2]);
            let mut out = vec![0.0; c * oh * ow];
            maxpool_forward(x.data(), c, h, w, size, stride, oh, ow, &mut out);
            Tensor::new(out_shape.to_vec(), out).unwrap()
        }
    }
}

fn backward_layer(
    layer: &LayerSpec,
    params: Option<&LayerParams>,
    x: &Tensor,
    dy: &Tensor,
    in_shape: &[usize],
    want_param_grads: bool,
) -> (Tensor, Option<LayerParams>) {
    match *layer {
        LayerSpec::Dense { in_dim, out_dim } => {
            let p = params.unwrap();
            let mut dx = vec![0.0; in_dim];
            dense_backward_input(dy.data(), p.weight.data(), in_dim, out_dim, &mut dx);
            let dparams = want_param_grads.then(|| {
                let mut dw = vec![0.0; out_dim * in_dim];
                let mut db = vec![0.0; out_dim];
                for o in 0..out_dim {
                    let g = dy.data()[o];
                    db[o] = g;
                    let row = &mut dw[o * in_dim..(o + 1) * in_dim];
                    for (dwi, xi) in row.iter_mut().zip(x.data()) {
                        *dwi = g * xi;
                    }
                }
                LayerParams {
                    weight: Tensor::new(vec![out_dim, in_dim], dw).unwrap(),
                    bias: Tensor::new(vec![out_dim], db).unwrap(),
                }
            });
            (Tensor::new(in_shape.to_vec(), dx).unwrap(), dparams)
        }
        LayerSpec::Conv2d { in_channels, out_channels, kernel, stride } => {
            let p = params.unwrap();
            let (h, w) = (x.shape()[1], x.shape()[2]);
            let (oh, ow) = (dy.shape()[1], dy.shape()[2]);
            let dims = ConvDims { in_channels, out_channels, kernel, stride, h, w, oh, ow };
            let mut dx = vec![0.0; in_channels * h * w];
            conv2d_backward_input(dy.data(), p.weight.data(), dims, &mut dx);
            let dparams = want_param_grads.then(|| {
                let mut dw = vec![0.0; out_channels * in_channels * kernel * kernel];
                let mut db = vec![0.0; out_channels];
                conv2d_backward_params(dy.data(), x.data(), dims, &mut dw, &mut db);
                LayerParams {
                    weight: Tensor::new(
                        vec![out_channels, in_channels, kernel, kernel],
                        dw,
                    )
                    .unwrap(),
                    bias: Tensor::new(vec![out_channels], db).unwrap(),
                }
            });
            (Tensor::new(in_shape.to_vec(), dx).unwrap(), dparams)
        }
        LayerSpec::Relu => {
            let data = x
                .data()
                .iter()
                .zip(dy.data())
                .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
                .collect();
            (Tensor::new(in_shape.to_vec(), data).unwrap(), None)
        }
        LayerSpec::Tanh => {
            let data = x
                .data()
                .iter()
                .zip(dy.data())
                .map(|(&xi, &g)| {
                    let t = xi.tanh();
                    g * (1.0 - t * t)
                })
                .collect();
            (Tensor::new(in_shape.to_vec(), data).unwrap(), None)
        }
        LayerSpec::Flatten => (dy.reshaped(in_shape).unwrap(), None),
        LayerSpec::MaxPool2d { size, stride } => {
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (oh, ow) = (dy.shape()[1], dy.shape()[2]);
            let mut dx = vec![0.0; c * h * w];
            maxpool_backward(x.data(), dy.data(), c, h, w, size, stride, oh, ow, &mut dx);
            (Tensor::new(in_shape.to_vec(), dx).unwrap(), None)
        }
    }
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardCache {
    pub layer_inputs: Vec<Tensor>,
    pub logits: Tensor,
}

#[derive(Copy, Clone)]
pub(crate) struct ConvDims {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
}

pub(crate) fn dense_forward(
    x: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    in_dim: usize,
    out_dim: usize,
    out: &mut [f64],
) {
    for o in 0..out_dim {
        let row = &weight[o * in_dim..(o + 1) * in_dim];
        let mut acc = bias.map_or(0.0, |b| b[o]);
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        out[o] = acc;
    }
}

pub(crate) fn dense_backward_input(
    dy: &[f64],
    weight: &[f64],
    in_dim: usize,
    out_dim: usize,
    dx: &mut [f64],
) {
    for o in 0..out_dim {
        let g = dy[o];
        if g == 0.0 {
            continue;
        }
        let row = &weight[o * in_dim..(o + 1) * in_dim];
        for (dxi, wi) in dx.iter_mut().zip(row) {
            *dxi += g * wi;
        }
    }
}

pub(crate) fn conv2d_forward(
    x: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    d: ConvDims,
    out: &mut [f64],
) {
    let k = d.kernel;
    for oc in 0..d.out_channels {
        let b = bias.map_or(0.0, |b| b[oc]);
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                let mut acc = b;
                for ic in 0..d.in_channels {
                    let wbase = ((oc * d.in_channels + ic) * k) * k;
                    let xbase = ic * d.h * d.w;
                    for ky in 0..k {
                        let xrow = xbase + (oy * d.stride + ky) * d.w + ox * d.stride;
                        let wrow = wbase + ky * k;
                        for kx in 0..k {
                            acc += weight[wrow + kx] * x[xrow + kx];
                        }
                    }
                }
                out[(oc * d.oh + oy) * d.ow + ox] = acc;
            }
        }
    }
}

pub(crate) fn conv2d_backward_input(dy: &[f64], weight: &[f64], d: ConvDims, dx: &mut [f64]) {
    let k = d.kernel;
    for oc in 0..d.out_channels {
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                let g = dy[(oc * d.oh + oy) * d.ow + ox];
                if g == 0.0 {
                    continue;
                }
                for ic in 0..d.in_channels {
                    let wbase = ((oc * d.in_channels + ic) * k) * k;
                    let xbase = ic * d.h * d.w;
                    for ky in 0..k {
                        let xrow = xbase + (oy * d.stride + ky) * d.w + ox * d.stride;
                        let wrow = wbase + ky * k;
                        for kx in 0..k {
                            dx[xrow + kx] += g * weight[wrow + kx];
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_backward_params(dy: &[f64], x: &[f64], d: ConvDims, dw: &mut [f64], db: &mut [f64]) {
    let k = d.kernel;
    for oc in 0..d.out_channels {
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                let g = dy[(oc * d.oh + oy) * d.ow + ox];
                if g == 0.0 {
                    continue;
                }
                db[oc] += g;
                for ic in 0..d.in_channels {
                    let wbase = ((oc * d.in_channels + ic) * k) * k;
                    let xbase = ic * d.h * d.w;
                    for ky in 0..k {
                        let xrow = xbase + (oy * d.stride + ky) * d.w + ox * d.stride;
                        let wrow = wbase + ky * k;
                        for kx in 0..k {
                            dw[wrow + kx] += g * x[xrow + kx];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn maxpool_forward(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    size: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    out: &mut [f64],
) {
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for ky in 0..size {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..size {
                        let v = x[row + kx];
                        if v > best {
                            best = v;
                        }
                    }
                }
                out[(ch * oh + oy) * ow + ox] = best;
            }
        }
    }
}

/// Routes each pooled gradient to the first maximum in its window (row-major
/// scan), the same element `maxpool_forward` selected.
#[allow(clippy::too_many_arguments)]
fn maxpool_backward(
    x: &[f64],
    dy: &[f64],
    c: usize,
    h: usize,
    w: usize,
    size: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    dx: &mut [f64],
) {
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for ky in 0..size {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..size {
                        let v = x[row + kx];
                        if v > best {
                            best = v;
                            best_idx = row + kx;
                        }
                    }
                }
                dx[best_idx] += dy[(ch * oh + oy) * ow + ox];
            }
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[y]` via log-sum-exp with max subtraction.
pub fn cross_entropy(logits: &Tensor, y: usize) -> f64 {
    let z = logits.data();
    assert!(y < z.len(), "class {y} out of range for {} logits", z.len());
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    lse - z[y]
}

/// Gradient of `cross_entropy` with respect to the logits: `softmax - onehot`.
pub fn cross_entropy_grad(logits: &Tensor, y: usize) -> Tensor {
    let mut p = softmax(logits.data());
    p[y] -= 1.0;
    Tensor::new(logits.shape().to_vec(), p).unwrap()
}

/// Gradient of the cross-entropy loss at `(x, y)` with respect to `x`.
pub fn input_gradient(net: &Network, x: &Tensor, y: usize) -> Result<Tensor> {
    let cache = net.forward_cached(x)?;
    let seed = cross_entropy_grad(&cache.logits, y);
    Ok(net.backward_input(&cache, &seed))
}

/// Gradient of an arbitrary logit-space functional: backpropagates the given
/// `dlogits` seed to the input.
pub fn logit_gradient(net: &Network, x: &Tensor, dlogits: &Tensor) -> Result<Tensor> {
    let cache = net.forward_cached(x)?;
    Ok(net.backward_input(&cache, dlogits))
}
