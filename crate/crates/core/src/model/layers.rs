//! Layers with hand-written forward and backward passes over NCHW `f64` tensors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::NormMode;
use crate::tensor::{ImageShape, Tensor};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Trainable values with their accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(value: Vec<f64>) -> Self {
        let grad = vec![0.0; value.len()];
        Self { value, grad }
    }

    fn uniform(n: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Self::new((0..n).map(|_| rng.gen_range(-bound..bound)).collect())
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub weight: Param,
    pub bias: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub mode: NormMode,
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param,
    pub bias: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv),
    Norm(Norm),
    Relu,
    MaxPool { kernel: usize, stride: usize },
    GlobalAvgPool,
    Linear(Linear),
}

/// What a training forward pass keeps for the backward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Tensor),
    Norm { xhat: Vec<f64>, inv_std: Vec<f64> },
    Mask(Vec<bool>),
    Argmax(Vec<usize>, usize),
    Shape(ImageShape, usize),
}

fn out_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    (input + 2 * padding).checked_sub(kernel).map(|v| v / stride + 1)
}

impl Conv {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels / groups * kernel * kernel;
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups,
            weight: Param::uniform(out_channels * fan_in, fan_in, rng),
            bias: Param::uniform(out_channels, fan_in, rng),
        }
    }

    pub fn output_shape(&self, s: ImageShape) -> Option<ImageShape> {
        Some(ImageShape::new(
            self.out_channels,
            out_size(s.height, self.kernel, self.stride, self.padding)?,
            out_size(s.width, self.kernel, self.stride, self.padding)?,
        ))
    }

    /// Valid output range along one axis for kernel offset `k`.
    fn span(&self, k: usize, input: usize, output: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.padding as isize);
        let k = k as isize;
        // o*s + k - p >= 0  and  o*s + k - p < input
        let lo = ((p - k).max(0) + s - 1) / s;
        let hi = ((input as isize + p - k + s - 1) / s).clamp(0, output as isize);
        (lo as usize, (hi.max(lo)) as usize)
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let os = self.output_shape(x.image_shape()).expect("shape checked at build");
        let mut out = Tensor::zeros(x.n, os.channels, os.height, os.width);
        let (cig, cog) = (self.in_channels / self.groups, self.out_channels / self.groups);
        let (ip, op) = (x.h * x.w, os.plane());
        let k = self.kernel;
        for n in 0..x.n {
            for co in 0..self.out_channels {
                let g = co / cog;
                let o = &mut out.data[(n * os.channels + co) * op..(n * os.channels + co + 1) * op];
                o.iter_mut().for_each(|v| *v = self.bias.value[co]);
                for cil in 0..cig {
                    let ci = g * cig + cil;
                    let inp = &x.data[(n * x.c + ci) * ip..(n * x.c + ci + 1) * ip];
                    for ky in 0..k {
                        let (y0, y1) = self.span(ky, x.h, os.height);
                        for kx in 0..k {
                            let (x0, x1) = self.span(kx, x.w, os.width);
                            let wv = self.weight.value[((co * cig + cil) * k + ky) * k + kx];
                            for oy in y0..y1 {
                                let iy = oy * self.stride + ky - self.padding;
                                let row = &inp[iy * x.w..(iy + 1) * x.w];
                                let orow = &mut o[oy * os.width..(oy + 1) * os.width];
                                for ox in x0..x1 {
                                    orow[ox] += wv * row[ox * self.stride + kx - self.padding];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        let (cig, cog) = (self.in_channels / self.groups, self.out_channels / self.groups);
        let (ip, op) = (x.h * x.w, dy.h * dy.w);
        let k = self.kernel;
        for n in 0..x.n {
            for co in 0..self.out_channels {
                let g = co / cog;
                let d = &dy.data[(n * dy.c + co) * op..(n * dy.c + co + 1) * op];
                self.bias.grad[co] += d.iter().sum::<f64>();
                for cil in 0..cig {
                    let ci = g * cig + cil;
                    let base = (n * x.c + ci) * ip;
                    for ky in 0..k {
                        let (y0, y1) = self.span(ky, x.h, dy.h);
                        for kx in 0..k {
                            let (x0, x1) = self.span(kx, x.w, dy.w);
                            let wi = ((co * cig + cil) * k + ky) * k + kx;
                            let wv = self.weight.value[wi];
                            let mut gw = 0.0;
                            for oy in y0..y1 {
                                let iy = oy * self.stride + ky - self.padding;
                                for ox in x0..x1 {
                                    let ii = base + iy * x.w + ox * self.stride + kx - self.padding;
                                    let g = d[oy * dy.w + ox];
                                    gw += g * x.data[ii];
                                    dx.data[ii] += g * wv;
                                }
                            }
                            self.weight.grad[wi] += gw;
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn macs(&self, s: ImageShape) -> u64 {
        let o = self.output_shape(s).expect("shape checked");
        (o.plane() * o.channels * self.kernel * self.kernel * (self.in_channels / self.groups)) as u64
    }
}

impl Norm {
    pub fn new(mode: NormMode, channels: usize) -> Self {
        Self {
            mode,
            channels,
            gamma: Param::new(vec![1.0; channels]),
            beta: Param::new(vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    /// Train-mode forward; batch norm also updates running statistics.
    fn forward_train(&mut self, x: &Tensor) -> (Tensor, Cache) {
        let p = x.h * x.w;
        let mut y = x.clone();
        let mut xhat = vec![0.0; x.data.len()];
        let inv_std;
        match self.mode {
            NormMode::Batch => {
                let m = (x.n * p) as f64;
                let mut istd = vec![0.0; x.c];
                for c in 0..x.c {
                    let idx = |n: usize| (n * x.c + c) * p;
                    let mean = (0..x.n)
                        .map(|n| x.data[idx(n)..idx(n) + p].iter().sum::<f64>())
                        .sum::<f64>()
                        / m;
                    let var = (0..x.n)
                        .map(|n| {
                            x.data[idx(n)..idx(n) + p]
                                .iter()
                                .map(|v| (v - mean).powi(2))
                                .sum::<f64>()
                        })
                        .sum::<f64>()
                        / m;
                    istd[c] = 1.0 / (var + NORM_EPS).sqrt();
                    for n in 0..x.n {
                        for i in idx(n)..idx(n) + p {
                            xhat[i] = (x.data[i] - mean) * istd[c];
                            y.data[i] = self.gamma.value[c] * xhat[i] + self.beta.value[c];
                        }
                    }
                    let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
                    self.running_mean[c] = (1.0 - BN_MOMENTUM) * self.running_mean[c] + BN_MOMENTUM * mean;
                    self.running_var[c] = (1.0 - BN_MOMENTUM) * self.running_var[c] + BN_MOMENTUM * unbiased;
                }
                inv_std = istd;
            }
            NormMode::Layer => {
                let (yv, xh, istd) = self.layer_forward(x);
                y.data = yv;
                xhat = xh;
                inv_std = istd;
            }
        }
        (y, Cache::Norm { xhat, inv_std })
    }

    fn layer_forward(&self, x: &Tensor) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let l = x.sample_len();
        let p = x.h * x.w;
        let mut y = vec![0.0; x.data.len()];
        let mut xhat = vec![0.0; x.data.len()];
        let mut istd = vec![0.0; x.n];
        for n in 0..x.n {
            let s = &x.data[n * l..(n + 1) * l];
            let mean = s.iter().sum::<f64>() / l as f64;
            let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / l as f64;
            istd[n] = 1.0 / (var + NORM_EPS).sqrt();
            for i in 0..l {
                let c = i / p;
                xhat[n * l + i] = (s[i] - mean) * istd[n];
                y[n * l + i] = self.gamma.value[c] * xhat[n * l + i] + self.beta.value[c];
            }
        }
        (y, xhat, istd)
    }

    fn forward_eval(&self, x: &Tensor) -> Tensor {
        match self.mode {
            NormMode::Batch => {
                let p = x.h * x.w;
                let mut y = x.clone();
                for n in 0..x.n {
                    for c in 0..x.c {
                        let istd = 1.0 / (self.running_var[c] + NORM_EPS).sqrt();
                        let (g, b, m) = (self.gamma.value[c], self.beta.value[c], self.running_mean[c]);
                        for v in &mut y.data[(n * x.c + c) * p..(n * x.c + c + 1) * p] {
                            *v = g * (*v - m) * istd + b;
                        }
                    }
                }
                y
            }
            NormMode::Layer => {
                let mut y = x.clone();
                y.data = self.layer_forward(x).0;
                y
            }
        }
    }

    fn backward(&mut self, dy: &Tensor, xhat: &[f64], inv_std: &[f64]) -> Tensor {
        let p = dy.h * dy.w;
        let mut dx = dy.clone();
        for c in 0..dy.c {
            for n in 0..dy.n {
                for i in (n * dy.c + c) * p..(n * dy.c + c + 1) * p {
                    self.gamma.grad[c] += dy.data[i] * xhat[i];
                    self.beta.grad[c] += dy.data[i];
                }
            }
        }
        // dxhat = dy * gamma; dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
        let dxhat: Vec<f64> = dy
            .data
            .iter()
            .enumerate()
            .map(|(i, g)| g * self.gamma.value[(i / p) % dy.c])
            .collect();
        match self.mode {
            NormMode::Batch => {
                let m = (dy.n * p) as f64;
                for c in 0..dy.c {
                    let range = |n: usize| (n * dy.c + c) * p..(n * dy.c + c + 1) * p;
                    let (mut s1, mut s2) = (0.0, 0.0);
                    for n in 0..dy.n {
                        for i in range(n) {
                            s1 += dxhat[i];
                            s2 += dxhat[i] * xhat[i];
                        }
                    }
                    for n in 0..dy.n {
                        for i in range(n) {
                            dx.data[i] = inv_std[c] * (dxhat[i] - s1 / m - xhat[i] * s2 / m);
                        }
                    }
                }
            }
            NormMode::Layer => {
                let l = dy.sample_len();
                for n in 0..dy.n {
                    let r = n * l..(n + 1) * l;
                    let s1: f64 = dxhat[r.clone()].iter().sum();
                    let s2: f64 = r.clone().map(|i| dxhat[i] * xhat[i]).sum();
                    for i in r {
                        dx.data[i] = inv_std[n] * (dxhat[i] - s1 / l as f64 - xhat[i] * s2 / l as f64);
                    }
                }
            }
        }
        dx
    }
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            in_features,
            out_features,
            weight: Param::uniform(in_features * out_features, in_features, rng),
            bias: Param::uniform(out_features, in_features, rng),
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let f = x.sample_len();
        debug_assert_eq!(f, self.in_features);
        let mut out = Tensor::zeros(x.n, self.out_features, 1, 1);
        for n in 0..x.n {
            let xs = x.sample(n);
            for o in 0..self.out_features {
                let w = &self.weight.value[o * f..(o + 1) * f];
                out.data[n * self.out_features + o] =
                    self.bias.value[o] + w.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }

    fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let f = self.in_features;
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        for n in 0..x.n {
            let xs = x.sample(n);
            for o in 0..self.out_features {
                let g = dy.data[n * self.out_features + o];
                self.bias.grad[o] += g;
                let w = &self.weight.value[o * f..(o + 1) * f];
                let gw = &mut self.weight.grad[o * f..(o + 1) * f];
                let dxs = &mut dx.data[n * f..(n + 1) * f];
                for i in 0..f {
                    gw[i] += g * xs[i];
                    dxs[i] += g * w[i];
                }
            }
        }
        dx
    }
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv(c) if c.groups > 1 => "depthwise_conv",
            Layer::Conv(_) => "conv",
            Layer::Norm(n) if n.mode == NormMode::Batch => "batch_norm",
            Layer::Norm(_) => "layer_norm",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "max_pool",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::Linear(_) => "linear",
        }
    }

    /// Output shape, or a message when the input does not fit.
    pub fn output_shape(&self, s: ImageShape) -> std::result::Result<ImageShape, String> {
        match self {
            Layer::Conv(c) => {
                if s.channels != c.in_channels {
                    return Err(format!("expects {} input channels, got {}", c.in_channels, s.channels));
                }
                c.output_shape(s)
                    .filter(|o| o.height > 0 && o.width > 0)
                    .ok_or_else(|| format!("kernel {} does not fit a {}x{} input", c.kernel, s.height, s.width))
            }
            Layer::Norm(n) => {
                if s.channels != n.channels {
                    return Err(format!("expects {} channels, got {}", n.channels, s.channels));
                }
                Ok(s)
            }
            Layer::Relu => Ok(s),
            Layer::MaxPool { kernel, stride } => match (
                out_size(s.height, *kernel, *stride, 0),
                out_size(s.width, *kernel, *stride, 0),
            ) {
                (Some(h), Some(w)) if h > 0 && w > 0 => Ok(ImageShape::new(s.channels, h, w)),
                _ => Err(format!("pool {kernel} does not fit a {}x{} input", s.height, s.width)),
            },
            Layer::GlobalAvgPool => Ok(ImageShape::new(s.channels, 1, 1)),
            Layer::Linear(l) => {
                if s.len() != l.in_features {
                    return Err(format!(
                        "expects {} input features, got {} ({s})",
                        l.in_features,
                        s.len()
                    ));
                }
                Ok(ImageShape::new(l.out_features, 1, 1))
            }
        }
    }

    /// FLOPs for one image of shape `s`: 2 per multiply-accumulate, 2 per
    /// element for norms and activations, 1 per input element for pools.
    pub fn flops(&self, s: ImageShape) -> u64 {
        match self {
            Layer::Conv(c) => 2 * c.macs(s),
            Layer::Norm(_) | Layer::Relu => 2 * s.len() as u64,
            Layer::MaxPool { .. } | Layer::GlobalAvgPool => s.len() as u64,
            Layer::Linear(l) => 2 * (l.in_features * l.out_features) as u64,
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Norm(n) => vec![&mut n.gamma, &mut n.beta],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            _ => vec![],
        }
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Conv(c) => c.forward(x),
            Layer::Norm(n) => n.forward_eval(x),
            Layer::Relu => {
                let mut y = x.clone();
                y.data.iter_mut().for_each(|v| *v = v.max(0.0));
                y
            }
            Layer::MaxPool { kernel, stride } => max_pool(x, *kernel, *stride).0,
            Layer::GlobalAvgPool => gap(x),
            Layer::Linear(l) => l.forward(x),
        }
    }

    pub fn forward_train(&mut self, x: &Tensor) -> (Tensor, Cache) {
        match self {
            Layer::Norm(n) => n.forward_train(x),
            Layer::Relu => {
                let y = self.forward_eval(x);
                (y, Cache::Mask(x.data.iter().map(|&v| v > 0.0).collect()))
            }
            Layer::MaxPool { kernel, stride } => {
                let (y, arg) = max_pool(x, *kernel, *stride);
                (y, Cache::Argmax(arg, x.data.len()))
            }
            Layer::GlobalAvgPool => (gap(x), Cache::Shape(x.image_shape(), x.n)),
            Layer::Conv(_) | Layer::Linear(_) => (self.forward_eval(x), Cache::Input(x.clone())),
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &Cache, dy: &Tensor, input_shape: ImageShape) -> Tensor {
        match (self, cache) {
            (Layer::Conv(c), Cache::Input(x)) => c.backward(x, dy),
            (Layer::Linear(l), Cache::Input(x)) => l.backward(x, dy),
            (Layer::Norm(n), Cache::Norm { xhat, inv_std }) => n.backward(dy, xhat, inv_std),
            (Layer::Relu, Cache::Mask(m)) => {
                let mut dx = dy.clone();
                dx.data.iter_mut().zip(m).for_each(|(g, &on)| {
                    if !on {
                        *g = 0.0
                    }
                });
                dx
            }
            (Layer::MaxPool { .. }, Cache::Argmax(arg, len)) => {
                let mut dx = vec![0.0; *len];
                for (o, &i) in arg.iter().enumerate() {
                    dx[i] += dy.data[o];
                }
                Tensor {
                    n: dy.n,
                    c: input_shape.channels,
                    h: input_shape.height,
                    w: input_shape.width,
                    data: dx,
                }
            }
            (Layer::GlobalAvgPool, Cache::Shape(s, n)) => {
                let p = s.plane();
                let mut dx = Tensor::zeros(*n, s.channels, s.height, s.width);
                for (i, chunk) in dx.data.chunks_mut(p).enumerate() {
                    let g = dy.data[i] / p as f64;
                    chunk.iter_mut().for_each(|v| *v = g);
                }
                dx
            }
            _ => unreachable!("cache does not match layer"),
        }
    }
}

fn max_pool(x: &Tensor, k: usize, s: usize) -> (Tensor, Vec<usize>) {
    let (oh, ow) = ((x.h - k) / s + 1, (x.w - k) / s + 1);
    let mut out = Tensor::zeros(x.n, x.c, oh, ow);
    let mut arg = vec![0; out.data.len()];
    for nc in 0..x.n * x.c {
        let base = nc * x.h * x.w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * s * x.w + ox * s;
                for ky in 0..k {
                    for kx in 0..k {
                        let i = base + (oy * s + ky) * x.w + ox * s + kx;
                        if x.data[i] > x.data[best] {
                            best = i;
                        }
                    }
                }
                let o = (nc * oh + oy) * ow + ox;
                out.data[o] = x.data[best];
                arg[o] = best;
            }
        }
    }
    (out, arg)
}

fn gap(x: &Tensor) -> Tensor {
    let p = x.h * x.w;
    let mut out = Tensor::zeros(x.n, x.c, 1, 1);
    for (o, chunk) in out.data.iter_mut().zip(x.data.chunks(p)) {
        *o = chunk.iter().sum::<f64>() / p as f64;
    }
    out
}
