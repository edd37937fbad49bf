//! Layers with explicit forward/backward passes over `f32` tensors.
//!
//! Convolutional activations are `N × C × H × W`, dense activations `N × F`,
//! both in standard (row-major) layout.

use ndarray::{Array2, ArrayD, Axis, Ix2, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Tensor = ArrayD<f32>;

/// How the optimiser treats a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    /// Normalisation scale/shift.
    Norm,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: String, kind: ParamKind, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.raw_dim());
        Self { name, kind, value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Weights and biases of normalisation layers are excluded from layer-wise
    /// adaptation and weight decay.
    pub fn is_excluded_from_adaptation(&self) -> bool {
        !matches!(self.kind, ParamKind::Weight)
    }
}

/// Named non-trainable state such as running statistics.
pub struct Buffer<'a> {
    pub name: &'a str,
    pub value: &'a mut Tensor,
}

pub trait Layer: Send + Sync {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor>;

    /// Propagates `grad` (gradient w.r.t. the last training-mode output),
    /// accumulating parameter gradients. Returns the gradient w.r.t. the input.
    fn backward(&mut self, grad: &Tensor) -> Result<Tensor>;

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        Vec::new()
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        Vec::new()
    }

    /// Drops activations cached for the backward pass.
    fn clear_cache(&mut self) {}

    fn clone_box(&self) -> Box<dyn Layer>;
}

impl Clone for Box<dyn Layer> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

pub(crate) fn no_cache(layer: &str) -> Error {
    Error::InvalidArgument(format!("{layer}: backward called without a training-mode forward"))
}

pub(crate) fn expect_rank(x: &Tensor, rank: usize, layer: &str) -> Result<()> {
    if x.ndim() != rank {
        return Err(Error::Shape { expected: format!("{layer}: rank {rank}"), actual: format!("{:?}", x.shape()) });
    }
    Ok(())
}

/// Fully connected layer, `y = x Wᵀ + b`.
#[derive(Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    input: Option<Array2<f32>>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f32).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        let w = Tensor::from_shape_fn(IxDyn(&[outputs, inputs]), |_| dist.sample(rng));
        let b = Tensor::from_shape_fn(IxDyn(&[outputs]), |_| dist.sample(rng));
        Self {
            weight: Param::new(format!("{name}.weight"), ParamKind::Weight, w),
            bias: Param::new(format!("{name}.bias"), ParamKind::Bias, b),
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        expect_rank(x, 2, "linear")?;
        if x.shape()[1] != self.in_features() {
            return Err(Error::Shape {
                expected: format!("linear: {} input features", self.in_features()),
                actual: format!("{:?}", x.shape()),
            });
        }
        let x2 = x.view().into_dimensionality::<Ix2>().expect("rank checked");
        let w = self.weight.value.view().into_dimensionality::<Ix2>().expect("rank 2");
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().expect("rank 1");
        let y = x2.dot(&w.t()) + &b;
        if train {
            self.input = Some(x2.to_owned());
        }
        Ok(y.into_dyn())
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.input.as_ref().ok_or_else(|| no_cache("linear"))?;
        let g = grad.view().into_dimensionality::<Ix2>().map_err(|_| no_cache("linear"))?;
        let w = self.weight.value.view().into_dimensionality::<Ix2>().expect("rank 2");
        let dw = g.t().dot(x);
        self.weight.grad += &dw.into_dyn();
        self.bias.grad += &g.sum_axis(Axis(0)).into_dyn();
        Ok(g.dot(&w).into_dyn())
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn clear_cache(&mut self) {
        self.input = None;
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

#[derive(Clone, Default)]
pub struct Relu {
    output: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = x.mapv(|v| v.max(0.0));
        if train {
            self.output = Some(y.clone());
        }
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let y = self.output.as_ref().ok_or_else(|| no_cache("relu"))?;
        let mut g = grad.clone();
        ndarray::Zip::from(&mut g).and(y).for_each(|g, &y| {
            if y <= 0.0 {
                *g = 0.0;
            }
        });
        Ok(g)
    }

    fn clear_cache(&mut self) {
        self.output = None;
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// Mean over spatial dimensions: `N × C × H × W → N × C`.
#[derive(Clone, Default)]
pub struct GlobalAvgPool {
    input_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        expect_rank(x, 4, "global_avg_pool")?;
        let s = x.shape();
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let data = x.as_standard_layout();
        let flat = data.as_slice().expect("standard layout");
        let mut out = Array2::<f32>::zeros((n, c));
        for (i, v) in out.iter_mut().enumerate() {
            *v = flat[i * hw..(i + 1) * hw].iter().sum::<f32>() / hw as f32;
        }
        if train {
            self.input_shape = Some(s.to_vec());
        }
        Ok(out.into_dyn())
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let s = self.input_shape.as_ref().ok_or_else(|| no_cache("global_avg_pool"))?;
        let hw = s[2] * s[3];
        let g = grad.as_standard_layout();
        let gs = g.as_slice().expect("standard layout");
        let mut out = vec![0.0f32; s.iter().product()];
        for (i, &gv) in gs.iter().enumerate() {
            let v = gv / hw as f32;
            out[i * hw..(i + 1) * hw].iter_mut().for_each(|o| *o = v);
        }
        Ok(Tensor::from_shape_vec(IxDyn(s), out).expect("shape"))
    }

    fn clear_cache(&mut self) {
        self.input_shape = None;
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// Max pooling with square window, stride and zero padding (padding never wins).
#[derive(Clone)]
pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    pad: usize,
    cache: Option<(Vec<usize>, Vec<u32>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self { kernel, stride, pad, cache: None }
    }
}

impl Layer for MaxPool2d {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        expect_rank(x, 4, "max_pool")?;
        let s = x.shape().to_vec();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let ho = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let wo = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        let data = x.as_standard_layout();
        let src = data.as_slice().expect("standard layout");
        let mut out = vec![0.0f32; n * c * ho * wo];
        let mut arg = vec![0u32; out.len()];
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = 0usize;
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = iy as usize * w + ix as usize;
                            if src[base + i] > best {
                                best = src[base + i];
                                best_i = i;
                            }
                        }
                    }
                    let o = (plane * ho + oy) * wo + ox;
                    out[o] = best;
                    arg[o] = best_i as u32;
                }
            }
        }
        if train {
            self.cache = Some((s, arg));
        }
        Ok(Tensor::from_shape_vec(IxDyn(&[n, c, ho, wo]), out).expect("shape"))
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (s, arg) = self.cache.as_ref().ok_or_else(|| no_cache("max_pool"))?;
        let (h, w) = (s[2], s[3]);
        let g = grad.as_standard_layout();
        let gs = g.as_slice().expect("standard layout");
        let per_plane = gs.len() / (s[0] * s[1]);
        let mut dx = vec![0.0f32; s.iter().product()];
        for (o, &gv) in gs.iter().enumerate() {
            let plane = o / per_plane;
            dx[plane * h * w + arg[o] as usize] += gv;
        }
        Ok(Tensor::from_shape_vec(IxDyn(s), dx).expect("shape"))
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// Batch normalisation over axis 1 for `N × C` or `N × C × H × W` inputs.
#[derive(Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    name: String,
    momentum: f32,
    eps: f32,
    cache: Option<(Vec<f32>, Vec<f32>, Vec<usize>)>,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), ParamKind::Norm, Tensor::ones(IxDyn(&[channels]))),
            beta: Param::new(format!("{name}.beta"), ParamKind::Norm, Tensor::zeros(IxDyn(&[channels]))),
            running_mean: Tensor::zeros(IxDyn(&[channels])),
            running_var: Tensor::ones(IxDyn(&[channels])),
            name: name.to_string(),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    /// Zero-initialised scale, used on the last normalisation of residual branches.
    pub fn zero_gamma(mut self) -> Self {
        self.gamma.value.fill(0.0);
        self
    }

    fn dims(x: &Tensor) -> Result<(usize, usize, usize)> {
        match x.shape() {
            [n, c] => Ok((*n, *c, 1)),
            [n, c, h, w] => Ok((*n, *c, h * w)),
            s => Err(Error::Shape { expected: "batch_norm: rank 2 or 4".into(), actual: format!("{s:?}") }),
        }
    }
}

impl Layer for BatchNorm {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (n, c, hw) = Self::dims(x)?;
        if c != self.gamma.value.len() {
            return Err(Error::Shape {
                expected: format!("batch_norm: {} channels", self.gamma.value.len()),
                actual: format!("{:?}", x.shape()),
            });
        }
        let data = x.as_standard_layout();
        let src = data.as_slice().expect("standard layout");
        let gamma = self.gamma.value.as_slice().expect("contiguous");
        let beta = self.beta.value.as_slice().expect("contiguous");
        let mut out = vec![0.0f32; src.len()];
        let m = (n * hw) as f64;
        if train {
            if n * hw < 2 {
                return Err(Error::InvalidArgument("batch_norm: training needs more than one value per channel".into()));
            }
            let mut xhat = vec![0.0f32; src.len()];
            let mut inv_std = vec![0.0f32; c];
            for ch in 0..c {
                let (mut sum, mut sq) = (0.0f64, 0.0f64);
                for b in 0..n {
                    for &v in &src[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                        sum += v as f64;
                        sq += (v as f64) * (v as f64);
                    }
                }
                let mean = sum / m;
                let var = (sq / m - mean * mean).max(0.0);
                let istd = 1.0 / (var + self.eps as f64).sqrt();
                inv_std[ch] = istd as f32;
                for b in 0..n {
                    let r = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                    for i in r {
                        let xh = ((src[i] as f64 - mean) * istd) as f32;
                        xhat[i] = xh;
                        out[i] = gamma[ch] * xh + beta[ch];
                    }
                }
                let mom = self.momentum;
                let rm = &mut self.running_mean.as_slice_mut().expect("contiguous")[ch];
                *rm = (1.0 - mom) * *rm + mom * mean as f32;
                let rv = &mut self.running_var.as_slice_mut().expect("contiguous")[ch];
                *rv = (1.0 - mom) * *rv + mom * (var * m / (m - 1.0)) as f32;
            }
            self.cache = Some((xhat, inv_std, x.shape().to_vec()));
        } else {
            let rm = self.running_mean.as_slice().expect("contiguous");
            let rv = self.running_var.as_slice().expect("contiguous");
            for ch in 0..c {
                let istd = 1.0 / (rv[ch] + self.eps).sqrt();
                let (scale, shift) = (gamma[ch] * istd, beta[ch] - gamma[ch] * istd * rm[ch]);
                for b in 0..n {
                    for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                        out[i] = scale * src[i] + shift;
                    }
                }
            }
        }
        Ok(Tensor::from_shape_vec(x.raw_dim(), out).expect("shape"))
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (xhat, inv_std, shape) = self.cache.as_ref().ok_or_else(|| no_cache("batch_norm"))?;
        let (n, c, hw) = Self::dims(grad)?;
        let g = grad.as_standard_layout();
        let gs = g.as_slice().expect("standard layout");
        let gamma = self.gamma.value.as_slice().expect("contiguous").to_vec();
        let dgamma = self.gamma.grad.as_slice_mut().expect("contiguous");
        let m = (n * hw) as f32;
        let mut dx = vec![0.0f32; gs.len()];
        let mut dbeta_v = vec![0.0f32; c];
        for ch in 0..c {
            let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
            for b in 0..n {
                for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                    sum_g += gs[i] as f64;
                    sum_gx += (gs[i] * xhat[i]) as f64;
                }
            }
            dgamma[ch] += sum_gx as f32;
            dbeta_v[ch] = sum_g as f32;
            let k = gamma[ch] * inv_std[ch] / m;
            let (sg, sgx) = (sum_g as f32, sum_gx as f32);
            for b in 0..n {
                for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                    dx[i] = k * (m * gs[i] - sg - xhat[i] * sgx);
                }
            }
        }
        for (d, v) in self.beta.grad.as_slice_mut().expect("contiguous").iter_mut().zip(dbeta_v) {
            *d += v;
        }
        Ok(Tensor::from_shape_vec(IxDyn(shape), dx).expect("shape"))
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{}.running_mean", self.name), &mut self.running_mean),
            (format!("{}.running_var", self.name), &mut self.running_var),
        ]
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{}.running_mean", self.name), &self.running_mean),
            (format!("{}.running_var", self.name), &self.running_var),
        ]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// Layers applied in order.
#[derive(Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: impl Layer + 'static) -> &mut Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn with(mut self, layer: impl Layer + 'static) -> Self {
        self.layers.push(Box::new(layer));
        self
    }
}

impl Layer for Sequential {
    fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut cur: Option<Tensor> = None;
        for l in &mut self.layers {
            let next = l.forward(cur.as_ref().unwrap_or(x), train)?;
            cur = Some(next);
        }
        Ok(cur.unwrap_or_else(|| x.clone()))
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut cur: Option<Tensor> = None;
        for l in self.layers.iter_mut().rev() {
            let next = l.backward(cur.as_ref().unwrap_or(grad))?;
            cur = Some(next);
        }
        Ok(cur.unwrap_or_else(|| grad.clone()))
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }

    fn buffers(&self) -> Vec<(String, &Tensor)> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(|l| l.clear_cache());
    }

    fn clone_box(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// He-normal initialisation with the given fan.
pub(crate) fn he_normal<R: Rng + ?Sized>(shape: &[usize], fan: usize, rng: &mut R) -> Tensor {
    let std = (2.0 / fan as f32).sqrt();
    let dist = Normal::new(0.0f32, std).expect("valid std");
    Tensor::from_shape_fn(IxDyn(shape), |_| dist.sample(rng))
}
