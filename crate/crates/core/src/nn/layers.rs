use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor::{axpy, dot, gemm, Batch, MatRef, Shape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d { filters: usize, kernel: usize, stride: usize },
    MaxPool1d { window: usize },
    BatchNorm { eps: f64, momentum: f64 },
    Dropout { rate: f64 },
    Flatten,
    Dense { units: usize },
    /// A dense layer whose outputs are read through a softmax.
    SoftmaxOutput { classes: usize },
}

impl LayerSpec {
    pub fn conv(filters: usize, kernel: usize) -> Self {
        LayerSpec::Conv1d { filters, kernel, stride: 1 }
    }

    pub fn batch_norm() -> Self {
        LayerSpec::BatchNorm { eps: 1e-5, momentum: 0.99 }
    }

    pub fn out_shape(&self, input: Shape) -> Result<Shape, String> {
        match *self {
            LayerSpec::Conv1d { filters, kernel, stride } => {
                if filters == 0 || kernel == 0 || stride == 0 {
                    return Err("filters, kernel and stride must be positive".into());
                }
                if kernel > input.len {
                    return Err(format!("kernel {kernel} longer than input length {}", input.len));
                }
                Ok(Shape::new(filters, (input.len - kernel) / stride + 1))
            }
            LayerSpec::MaxPool1d { window } => {
                if window == 0 {
                    return Err("window must be at least 1".into());
                }
                if window > input.len {
                    return Err(format!("window {window} longer than input length {}", input.len));
                }
                Ok(Shape::new(input.channels, input.len / window))
            }
            LayerSpec::BatchNorm { eps, momentum } => {
                if !(eps > 0.0) || !(0.0..1.0).contains(&momentum) {
                    return Err("eps must be positive and momentum in [0, 1)".into());
                }
                Ok(input)
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(format!("rate {rate} outside [0, 1)"));
                }
                Ok(input)
            }
            LayerSpec::Flatten => Ok(Shape::new(input.size(), 1)),
            LayerSpec::Dense { units } | LayerSpec::SoftmaxOutput { classes: units } => {
                if units == 0 {
                    return Err("layer needs at least one unit".into());
                }
                Ok(Shape::new(units, 1))
            }
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv1d { filters, kernel, stride } => {
                write!(f, "Conv1d({filters}, {kernel}")?;
                if *stride != 1 {
                    write!(f, ", stride={stride}")?;
                }
                f.write_str(")")
            }
            LayerSpec::MaxPool1d { window } => write!(f, "MaxPool1d({window})"),
            LayerSpec::BatchNorm { .. } => f.write_str("BatchNorm"),
            LayerSpec::Dropout { rate } => write!(f, "Dropout({rate})"),
            LayerSpec::Flatten => f.write_str("Flatten"),
            LayerSpec::Dense { units } => write!(f, "Dense({units})"),
            LayerSpec::SoftmaxOutput { classes } => write!(f, "SoftmaxOutput({classes})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and dropout masks; `seed` drives the masks.
    Train { seed: u64 },
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<S> {
    pub in_channels: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `[filters][in_channels][kernel]`
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S> {
    pub inputs: usize,
    pub units: usize,
    /// `[units][inputs]`
    pub weight: Vec<S>,
    pub bias: Vec<S>,
}

/// Per-channel normalization; statistics are taken over the batch and the time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<S> {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<S> {
    Conv1d(Conv1d<S>),
    MaxPool1d { window: usize },
    BatchNorm(BatchNorm<S>),
    Dropout { rate: f64 },
    Flatten,
    Dense(Dense<S>),
}

/// What a layer keeps from its forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum Aux<S> {
    None,
    Argmax(Vec<usize>),
    Norm {
        inv_std: Vec<S>,
        /// Normalized activations, train mode only.
        xhat: Option<Vec<S>>,
        /// Batch mean and biased variance, train mode only.
        stats: Option<(Vec<S>, Vec<S>)>,
    },
    Mask(Vec<S>),
}

/// Without rectifiers the stack is close to linear and full-scale output weights give
/// confident predictions before any training; a small output layer starts near uniform.
pub const OUTPUT_INIT_SCALE: f64 = 0.1;

fn uniform<S: Scalar>(rng: &mut impl Rng, n: usize, limit: f64) -> Vec<S> {
    (0..n).map(|_| S::lit(rng.gen_range(-limit..limit))).collect()
}

impl<S: Scalar> Layer<S> {
    /// Builds a layer for `input`, drawing weights uniformly in `±sqrt(6 / fan_in)`, shrunk by
    /// [`OUTPUT_INIT_SCALE`] for the softmax output layer.
    pub fn init(spec: &LayerSpec, input: Shape, seed: u64) -> Result<Self, String> {
        spec.out_shape(input)?;
        let mut rng = seed::rng(seed);
        Ok(match *spec {
            LayerSpec::Conv1d { filters, kernel, stride } => {
                let fan_in = input.channels * kernel;
                Layer::Conv1d(Conv1d {
                    in_channels: input.channels,
                    filters,
                    kernel,
                    stride,
                    weight: uniform(&mut rng, filters * fan_in, (6.0 / fan_in as f64).sqrt()),
                    bias: vec![S::zero(); filters],
                })
            }
            LayerSpec::MaxPool1d { window } => Layer::MaxPool1d { window },
            LayerSpec::BatchNorm { eps, momentum } => Layer::BatchNorm(BatchNorm {
                channels: input.channels,
                eps,
                momentum,
                gamma: vec![S::one(); input.channels],
                beta: vec![S::zero(); input.channels],
                running_mean: vec![S::zero(); input.channels],
                running_var: vec![S::one(); input.channels],
            }),
            LayerSpec::Dropout { rate } => Layer::Dropout { rate },
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Dense { units } | LayerSpec::SoftmaxOutput { classes: units } => {
                let fan_in = input.size();
                let mut limit = (6.0 / fan_in as f64).sqrt();
                if matches!(spec, LayerSpec::SoftmaxOutput { .. }) {
                    limit *= OUTPUT_INIT_SCALE;
                }
                Layer::Dense(Dense {
                    inputs: fan_in,
                    units,
                    weight: uniform(&mut rng, units * fan_in, limit),
                    bias: vec![S::zero(); units],
                })
            }
        })
    }

    pub fn params(&self) -> Vec<&[S]> {
        match self {
            Layer::Conv1d(c) => vec![&c.weight, &c.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [S]> {
        match self {
            Layer::Conv1d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => vec![],
        }
    }

    pub fn forward(&self, x: &Batch<S>, out_shape: Shape, mode: Mode) -> Result<(Batch<S>, Aux<S>)> {
        match self {
            Layer::Conv1d(c) => Ok((c.forward(x, out_shape), Aux::None)),
            Layer::MaxPool1d { window } => {
                let (y, idx) = maxpool_batch(x, *window, out_shape);
                Ok((y, Aux::Argmax(idx)))
            }
            Layer::BatchNorm(b) => b.forward(x, mode),
            Layer::Dropout { rate } => Ok(dropout_forward(x, *rate, mode)),
            Layer::Flatten => Ok((Batch { n: x.n, shape: out_shape, data: x.data.clone() }, Aux::None)),
            Layer::Dense(d) => Ok((d.forward(x, out_shape), Aux::None)),
        }
    }

    /// Backpropagates `dy` through the layer. Parameter gradients are added into `grads`
    /// when given; the input gradient is computed only when `want_dx` is set.
    pub fn backward(
        &self,
        x: &Batch<S>,
        aux: &Aux<S>,
        dy: &Batch<S>,
        want_dx: bool,
        grads: Option<&mut [Vec<S>]>,
    ) -> Option<Batch<S>> {
        match (self, aux) {
            (Layer::Conv1d(c), _) => {
                if let Some(g) = grads {
                    c.param_grads(x, dy, g);
                }
                want_dx.then(|| c.input_grad(x.shape, dy))
            }
            (Layer::MaxPool1d { .. }, Aux::Argmax(idx)) => want_dx.then(|| {
                let mut dx = Batch::zeros(x.n, x.shape);
                let (isz, osz) = (x.shape.size(), dy.shape.size());
                dx.data.par_chunks_mut(isz).enumerate().for_each(|(n, d)| {
                    let g = &dy.data[n * osz..(n + 1) * osz];
                    let ix = &idx[n * osz..(n + 1) * osz];
                    for (&i, &v) in ix.iter().zip(g) {
                        d[i] += v;
                    }
                });
                dx
            }),
            (Layer::BatchNorm(b), Aux::Norm { inv_std, xhat, .. }) => {
                b.backward(x, inv_std, xhat.as_deref(), dy, want_dx, grads)
            }
            (Layer::Dropout { .. }, Aux::Mask(mask)) => want_dx.then(|| Batch {
                n: dy.n,
                shape: dy.shape,
                data: dy.data.iter().zip(mask).map(|(&g, &m)| g * m).collect(),
            }),
            (Layer::Dropout { .. }, _) => want_dx.then(|| dy.clone()),
            (Layer::Flatten, _) => {
                want_dx.then(|| Batch { n: dy.n, shape: x.shape, data: dy.data.clone() })
            }
            (Layer::Dense(d), _) => {
                if let Some(g) = grads {
                    d.param_grads(x, dy, g);
                }
                want_dx.then(|| d.input_grad(x.shape, dy))
            }
            _ => unreachable!("auxiliary data does not belong to this layer"),
        }
    }
}

impl<S: Scalar> Conv1d<S> {
    pub fn forward_one(&self, x: &[S], len: usize, out: &mut [S]) {
        let out_len = out.len() / self.filters;
        for f in 0..self.filters {
            let o = &mut out[f * out_len..(f + 1) * out_len];
            o.fill(self.bias[f]);
            for c in 0..self.in_channels {
                let xr = &x[c * len..(c + 1) * len];
                let w = &self.weight[(f * self.in_channels + c) * self.kernel..][..self.kernel];
                for (k, &wk) in w.iter().enumerate() {
                    if self.stride == 1 {
                        axpy(wk, &xr[k..k + out_len], o);
                    } else {
                        for (t, ot) in o.iter_mut().enumerate() {
                            *ot += wk * xr[t * self.stride + k];
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &Batch<S>, out_shape: Shape) -> Batch<S> {
        let mut y = Batch::zeros(x.n, out_shape);
        y.data
            .par_chunks_mut(out_shape.size())
            .zip(x.data.par_chunks(x.shape.size()))
            .for_each(|(o, xs)| self.forward_one(xs, x.shape.len, o));
        y
    }

    /// Unrolls one sample into `[in_channels * kernel, out_len]` columns.
    fn im2col(&self, x: &[S], len: usize, out_len: usize, cols: &mut [S]) {
        for c in 0..self.in_channels {
            let xr = &x[c * len..(c + 1) * len];
            for k in 0..self.kernel {
                let row = &mut cols[(c * self.kernel + k) * out_len..][..out_len];
                if self.stride == 1 {
                    row.copy_from_slice(&xr[k..k + out_len]);
                } else {
                    for (t, v) in row.iter_mut().enumerate() {
                        *v = xr[t * self.stride + k];
                    }
                }
            }
        }
    }

    fn param_grads(&self, x: &Batch<S>, dy: &Batch<S>, grads: &mut [Vec<S>]) {
        let (len, out_len) = (x.shape.len, dy.shape.len);
        let ck = self.in_channels * self.kernel;
        let mut cols = vec![S::zero(); ck * out_len];
        let (gw, gb) = grads.split_at_mut(1);
        for n in 0..x.n {
            self.im2col(x.sample(n), len, out_len, &mut cols);
            let g = dy.sample(n);
            gemm(MatRef::new(g, self.filters, out_len), MatRef::new(&cols, ck, out_len).t(), S::one(), &mut gw[0]);
            for (f, b) in gb[0].iter_mut().enumerate() {
                *b += g[f * out_len..(f + 1) * out_len].iter().copied().sum::<S>();
            }
        }
    }

    fn input_grad(&self, in_shape: Shape, dy: &Batch<S>) -> Batch<S> {
        let (len, out_len) = (in_shape.len, dy.shape.len);
        let ck = self.in_channels * self.kernel;
        let mut dx = Batch::zeros(dy.n, in_shape);
        dx.data.par_chunks_mut(in_shape.size()).zip(dy.data.par_chunks(dy.shape.size())).for_each(
            |(d, g)| {
                let mut cols = vec![S::zero(); ck * out_len];
                let w = MatRef::new(&self.weight[..], self.filters, ck).t();
                gemm(w, MatRef::new(g, self.filters, out_len), S::zero(), &mut cols);
                for c in 0..self.in_channels {
                    let dr = &mut d[c * len..(c + 1) * len];
                    for k in 0..self.kernel {
                        let row = &cols[(c * self.kernel + k) * out_len..][..out_len];
                        if self.stride == 1 {
                            dr[k..k + out_len].iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                        } else {
                            for (t, &v) in row.iter().enumerate() {
                                dr[t * self.stride + k] += v;
                            }
                        }
                    }
                }
            },
        );
        dx
    }
}

impl<S: Scalar> Dense<S> {
    fn forward(&self, x: &Batch<S>, out_shape: Shape) -> Batch<S> {
        let mut y = Batch::zeros(x.n, out_shape);
        y.data.par_chunks_mut(self.units).zip(x.data.par_chunks(self.inputs)).for_each(|(o, xs)| {
            for (u, ou) in o.iter_mut().enumerate() {
                *ou = self.bias[u] + dot(&self.weight[u * self.inputs..(u + 1) * self.inputs], xs);
            }
        });
        y
    }

    fn param_grads(&self, x: &Batch<S>, dy: &Batch<S>, grads: &mut [Vec<S>]) {
        let (gw, gb) = grads.split_at_mut(1);
        let dyt = MatRef::new(&dy.data[..], x.n, self.units).t();
        gemm(dyt, MatRef::new(&x.data[..], x.n, self.inputs), S::one(), &mut gw[0]);
        for g in dy.samples() {
            gb[0].iter_mut().zip(g).for_each(|(b, &v)| *b += v);
        }
    }

    fn input_grad(&self, in_shape: Shape, dy: &Batch<S>) -> Batch<S> {
        let mut dx = Batch::zeros(dy.n, in_shape);
        let w = MatRef::new(&self.weight[..], self.units, self.inputs);
        gemm(MatRef::new(&dy.data[..], dy.n, self.units), w, S::zero(), &mut dx.data);
        dx
    }
}

impl<S: Scalar> BatchNorm<S> {
    /// Train mode normalizes by batch statistics, infer mode by the running ones.
    pub fn forward(&self, x: &Batch<S>, mode: Mode) -> Result<(Batch<S>, Aux<S>)> {
        let shape = x.shape;
        let eps = S::lit(self.eps);
        let (mean, var, train) = match mode {
            Mode::Train { .. } => {
                if x.n < 2 {
                    return Err(Error::InvalidArgument(
                        "batch normalization in train mode needs a batch of at least 2".into(),
                    ));
                }
                let (m, v) = channel_stats(x);
                (m, v, true)
            }
            Mode::Infer => (self.running_mean.clone(), self.running_var.clone(), false),
        };
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![S::zero(); x.data.len()];
        xhat.par_chunks_mut(shape.size()).zip(x.data.par_chunks(shape.size())).for_each(|(h, xs)| {
            for c in 0..shape.channels {
                let r = c * shape.len..(c + 1) * shape.len;
                for (hv, &xv) in h[r.clone()].iter_mut().zip(&xs[r]) {
                    *hv = (xv - mean[c]) * inv_std[c];
                }
            }
        });
        let mut y = Batch::zeros(x.n, shape);
        y.data.par_chunks_mut(shape.size()).zip(xhat.par_chunks(shape.size())).for_each(|(o, h)| {
            for c in 0..shape.channels {
                let r = c * shape.len..(c + 1) * shape.len;
                for (ov, &hv) in o[r.clone()].iter_mut().zip(&h[r]) {
                    *ov = self.gamma[c] * hv + self.beta[c];
                }
            }
        });
        let aux = if train {
            Aux::Norm { inv_std, xhat: Some(xhat), stats: Some((mean, var)) }
        } else {
            Aux::Norm { inv_std, xhat: None, stats: None }
        };
        Ok((y, aux))
    }

    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update_running(&mut self, mean: &[S], var: &[S]) {
        let m = S::lit(self.momentum);
        let one_m = S::one() - m;
        for c in 0..self.channels {
            self.running_mean[c] = m * self.running_mean[c] + one_m * mean[c];
            self.running_var[c] = m * self.running_var[c] + one_m * var[c];
        }
    }

    fn backward(
        &self,
        x: &Batch<S>,
        inv_std: &[S],
        xhat: Option<&[S]>,
        dy: &Batch<S>,
        want_dx: bool,
        grads: Option<&mut [Vec<S>]>,
    ) -> Option<Batch<S>> {
        let shape = x.shape;
        let size = shape.size();
        let Some(xhat) = xhat else {
            // Infer mode: an affine map per channel.
            return want_dx.then(|| {
                let mut dx = dy.clone();
                dx.data.par_chunks_mut(size).for_each(|d| {
                    for c in 0..shape.channels {
                        let s = self.gamma[c] * inv_std[c];
                        d[c * shape.len..(c + 1) * shape.len].iter_mut().for_each(|v| *v *= s);
                    }
                });
                dx
            });
        };
        // Per channel: sum(dy) and sum(dy * xhat).
        let sums: Vec<(S, S)> = (0..shape.channels)
            .into_par_iter()
            .map(|c| {
                let (mut s1, mut s2) = (S::zero(), S::zero());
                for n in 0..x.n {
                    let r = n * size + c * shape.len..n * size + (c + 1) * shape.len;
                    for (&g, &h) in dy.data[r.clone()].iter().zip(&xhat[r]) {
                        s1 += g;
                        s2 += g * h;
                    }
                }
                (s1, s2)
            })
            .collect();
        if let Some(g) = grads {
            for (c, &(s1, s2)) in sums.iter().enumerate() {
                g[0][c] += s2;
                g[1][c] += s1;
            }
        }
        want_dx.then(|| {
            let m = S::from_usize_lossy(x.n * shape.len);
            let mut dx = Batch::zeros(x.n, shape);
            dx.data
                .par_chunks_mut(size)
                .zip(dy.data.par_chunks(size).zip(xhat.par_chunks(size)))
                .for_each(|(d, (g, h))| {
                    for c in 0..shape.channels {
                        let (s1, s2) = sums[c];
                        let k = self.gamma[c] * inv_std[c] / m;
                        let r = c * shape.len..(c + 1) * shape.len;
                        for ((dv, &gv), &hv) in d[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&h[r]) {
                            *dv = k * (m * gv - s1 - hv * s2);
                        }
                    }
                });
            dx
        })
    }
}

/// Per-channel mean and biased variance over batch and time.
fn channel_stats<S: Scalar>(x: &Batch<S>) -> (Vec<S>, Vec<S>) {
    let shape = x.shape;
    let size = shape.size();
    let m = S::from_usize_lossy(x.n * shape.len);
    let stats: Vec<(S, S)> = (0..shape.channels)
        .into_par_iter()
        .map(|c| {
            let row = |n: usize| &x.data[n * size + c * shape.len..n * size + (c + 1) * shape.len];
            let mut sum = S::zero();
            for n in 0..x.n {
                sum += row(n).iter().copied().sum::<S>();
            }
            let mean = sum / m;
            let mut sq = S::zero();
            for n in 0..x.n {
                sq += row(n).iter().map(|&v| (v - mean) * (v - mean)).sum::<S>();
            }
            (mean, sq / m)
        })
        .collect();
    stats.into_iter().unzip()
}

fn maxpool_batch<S: Scalar>(x: &Batch<S>, window: usize, out_shape: Shape) -> (Batch<S>, Vec<usize>) {
    let mut y = Batch::zeros(x.n, out_shape);
    let mut idx = vec![0usize; y.data.len()];
    y.data
        .par_chunks_mut(out_shape.size())
        .zip(idx.par_chunks_mut(out_shape.size()))
        .zip(x.data.par_chunks(x.shape.size()))
        .for_each(|((o, ix), xs)| maxpool_one(xs, x.shape, window, o, ix));
    (y, idx)
}

fn maxpool_one<S: Scalar>(x: &[S], shape: Shape, window: usize, out: &mut [S], idx: &mut [usize]) {
    let out_len = shape.len / window;
    for c in 0..shape.channels {
        for t in 0..out_len {
            let start = c * shape.len + t * window;
            let mut best = start;
            for i in start + 1..start + window {
                if x[i] > x[best] {
                    best = i;
                }
            }
            out[c * out_len + t] = x[best];
            idx[c * out_len + t] = best;
        }
    }
}

fn dropout_forward<S: Scalar>(x: &Batch<S>, rate: f64, mode: Mode) -> (Batch<S>, Aux<S>) {
    match mode {
        Mode::Infer => (x.clone(), Aux::None),
        Mode::Train { seed } => {
            let keep = S::lit(1.0 / (1.0 - rate));
            let mut mask = vec![S::zero(); x.data.len()];
            mask.par_chunks_mut(x.shape.size()).enumerate().for_each(|(n, m)| {
                let mut rng = seed::rng(seed::mix(seed, n as u64));
                for v in m.iter_mut() {
                    if rng.gen::<f64>() >= rate {
                        *v = keep;
                    }
                }
            });
            let data = x.data.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            (Batch { n: x.n, shape: x.shape, data }, Aux::Mask(mask))
        }
    }
}

/// Valid cross-correlation of a `[channels, len]` input with `[filters, channels, kernel]`
/// kernels.
pub fn conv1d<S: Scalar>(
    input: &Tensor<S>,
    kernels: &Tensor<S>,
    bias: &[S],
    stride: usize,
) -> Result<Tensor<S>> {
    let (&[channels, len], &[filters, kc, kernel]) = (input.shape(), kernels.shape()) else {
        return Err(Error::Shape("conv1d expects [channels, len] input and 3-d kernels".into()));
    };
    if kc != channels || bias.len() != filters {
        return Err(Error::Shape(format!(
            "kernels {:?} and {} biases for {channels} input channels",
            kernels.shape(),
            bias.len()
        )));
    }
    let spec = LayerSpec::Conv1d { filters, kernel, stride };
    let out = spec.out_shape(Shape::new(channels, len)).map_err(Error::Shape)?;
    let conv = Conv1d {
        in_channels: channels,
        filters,
        kernel,
        stride,
        weight: kernels.data().to_vec(),
        bias: bias.to_vec(),
    };
    let mut data = vec![S::zero(); out.size()];
    conv.forward_one(input.data(), len, &mut data);
    Tensor::new(vec![filters, out.len], data)
}

/// Non-overlapping max pooling over `[channels, len]` with floor semantics. Returns the
/// pooled tensor and the flat input index of each maximum (first on ties).
pub fn maxpool1d<S: Scalar>(input: &Tensor<S>, window: usize) -> Result<(Tensor<S>, Vec<usize>)> {
    let &[channels, len] = input.shape() else {
        return Err(Error::Shape("maxpool1d expects a [channels, len] input".into()));
    };
    let shape = Shape::new(channels, len);
    let out = LayerSpec::MaxPool1d { window }.out_shape(shape).map_err(Error::InvalidArgument)?;
    let mut data = vec![S::zero(); out.size()];
    let mut idx = vec![0; out.size()];
    maxpool_one(input.data(), shape, window, &mut data, &mut idx);
    Ok((Tensor::new(vec![channels, out.len], data)?, idx))
}
