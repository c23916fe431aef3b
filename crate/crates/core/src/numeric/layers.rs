use serde::{Deserialize, Serialize};

use super::{Parameter, RngStream, Tensor};
use crate::error::{Error, Result};

/// Train mode enables dropout and stochastic attention sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    /// `y = W x + b`, `W` is `[outputs, inputs]`. Any input whose element
    /// count equals `inputs` is accepted (implicit flatten).
    Dense { inputs: usize, outputs: usize },
    /// Direct 2-D convolution over `[C, H, W]` inputs.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Non-overlapping max pooling, `size x size` windows, floor on the edges.
    MaxPool { size: usize },
    Relu,
    Sigmoid,
    Tanh,
    /// Softmax over all elements of the input.
    Softmax,
    /// Inverted dropout: survivors are scaled by `1 / (1 - rate)` at train time.
    Dropout { rate: f64 },
}

impl LayerKind {
    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Tanh => "tanh",
            LayerKind::Softmax => "softmax",
            LayerKind::Dropout { .. } => "dropout",
        }
    }

    /// Output shape for a given input shape, or the offending dimension.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            LayerKind::Dense { inputs, outputs } => {
                let n: usize = input.iter().product();
                if n != inputs {
                    return Err(format!("input features expected {inputs}, got {n}"));
                }
                Ok(vec![outputs])
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if input.len() != 3 {
                    return Err(format!("input rank expected 3 ([C, H, W]), got {}", input.len()));
                }
                if input[0] != in_channels {
                    return Err(format!(
                        "input channels expected {in_channels}, got {}",
                        input[0]
                    ));
                }
                let (h, w) = (input[1] + 2 * padding, input[2] + 2 * padding);
                if h < kernel {
                    return Err(format!("input height {} too small for kernel {kernel}", input[1]));
                }
                if w < kernel {
                    return Err(format!("input width {} too small for kernel {kernel}", input[2]));
                }
                Ok(vec![
                    out_channels,
                    (h - kernel) / stride + 1,
                    (w - kernel) / stride + 1,
                ])
            }
            LayerKind::MaxPool { size } => {
                if input.len() != 3 {
                    return Err(format!("input rank expected 3 ([C, H, W]), got {}", input.len()));
                }
                if input[1] < size {
                    return Err(format!("input height {} smaller than pool {size}", input[1]));
                }
                if input[2] < size {
                    return Err(format!("input width {} smaller than pool {size}", input[2]));
                }
                Ok(vec![input[0], input[1] / size, input[2] / size])
            }
            _ => Ok(input.to_vec()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal(0, 2 / fan_in).
    He,
    /// Normal(0, std^2).
    Normal(f64),
    /// Uniform(-a, a).
    Uniform(f64),
    Zeros,
}

/// Everything backward needs from one forward call.
#[derive(Clone, Debug)]
pub struct LayerContext {
    layer: String,
    input: Tensor,
    output: Tensor,
    /// Pool argmax offsets or dropout multipliers.
    aux: Vec<f64>,
    argmax: Vec<usize>,
    versions: Vec<u64>,
}

impl LayerContext {
    pub fn output(&self) -> &Tensor {
        &self.output
    }

    pub fn input(&self) -> &Tensor {
        &self.input
    }
}

#[derive(Clone, Debug)]
pub struct Layer {
    name: String,
    kind: LayerKind,
    params: Vec<Parameter>,
}

impl Layer {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Result<Self> {
        let name = name.into();
        let params = match kind {
            LayerKind::Dense { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err(Error::shape(&name, "dense extents must be positive"));
                }
                vec![
                    Parameter::weight(format!("{name}.weight"), Tensor::zeros(&[outputs, inputs])),
                    Parameter::bias(format!("{name}.bias"), Tensor::zeros(&[outputs])),
                ]
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::shape(&name, "conv extents must be positive"));
                }
                vec![
                    Parameter::weight(
                        format!("{name}.weight"),
                        Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
                    ),
                    Parameter::bias(format!("{name}.bias"), Tensor::zeros(&[out_channels])),
                ]
            }
            LayerKind::MaxPool { size } => {
                if size == 0 {
                    return Err(Error::shape(&name, "pool size must be positive"));
                }
                vec![]
            }
            LayerKind::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::InvalidArgument(format!(
                        "{name}: dropout rate {rate} outside [0, 1)"
                    )));
                }
                vec![]
            }
            _ => vec![],
        };
        Ok(Layer { name, kind, params })
    }

    pub fn dense(name: impl Into<String>, inputs: usize, outputs: usize) -> Result<Self> {
        Self::new(name, LayerKind::Dense { inputs, outputs })
    }

    pub fn activation(name: impl Into<String>, kind: LayerKind) -> Self {
        Self::new(name, kind).expect("parameter-free layer")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &LayerKind {
        &self.kind
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<Parameter> {
        self.params
    }

    /// Initialise weights with `init`; biases are set to zero.
    pub fn init(&mut self, init: Init, rng: &mut RngStream) {
        let fan_in = match self.kind {
            LayerKind::Dense { inputs, .. } => inputs,
            LayerKind::Conv2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            _ => return,
        };
        let (weight, bias) = self.params.split_at_mut(1);
        for w in weight[0].value_mut().data_mut() {
            *w = match init {
                Init::He => rng.normal(0.0, (2.0 / fan_in as f64).sqrt()),
                Init::Normal(std) => rng.normal(0.0, std),
                Init::Uniform(a) => rng.uniform_range(-a, a),
                Init::Zeros => 0.0,
            };
        }
        bias[0].value_mut().fill(0.0);
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.kind
            .output_shape(input)
            .map_err(|detail| Error::shape(&self.name, detail))
    }

    pub fn forward(
        &self,
        input: &Tensor,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(Tensor, LayerContext)> {
        let out_shape = self.output_shape(input.shape())?;
        if !input.is_finite() {
            return Err(Error::NonFinite(format!("{} input", self.name)));
        }
        let x = input.data();
        let mut aux = Vec::new();
        let mut argmax = Vec::new();
        let out: Vec<f64> = match self.kind {
            LayerKind::Dense { inputs, outputs } => {
                let w = self.params[0].value().data();
                let b = self.params[1].value().data();
                (0..outputs)
                    .map(|o| dot(&w[o * inputs..(o + 1) * inputs], x) + b[o])
                    .collect()
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let geom = ConvGeom {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    in_h: input.shape()[1],
                    in_w: input.shape()[2],
                    out_h: out_shape[1],
                    out_w: out_shape[2],
                };
                conv_forward(
                    &geom,
                    x,
                    self.params[0].value().data(),
                    self.params[1].value().data(),
                )
            }
            LayerKind::MaxPool { size } => {
                let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let mut out = Vec::with_capacity(c * oh * ow);
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_idx = 0;
                            for dy in 0..size {
                                for dx in 0..size {
                                    let idx = (ch * h + oy * size + dy) * w + ox * size + dx;
                                    if x[idx] > best {
                                        best = x[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                            out.push(best);
                            argmax.push(best_idx);
                        }
                    }
                }
                out
            }
            LayerKind::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            LayerKind::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
            LayerKind::Tanh => x.iter().map(|&v| v.tanh()).collect(),
            LayerKind::Softmax => softmax(x),
            LayerKind::Dropout { rate } => match mode {
                Mode::Eval => x.to_vec(),
                Mode::Train => {
                    let keep = 1.0 / (1.0 - rate);
                    aux = (0..x.len())
                        .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep })
                        .collect();
                    x.iter().zip(&aux).map(|(v, m)| v * m).collect()
                }
            },
        };
        let output = Tensor::new(out_shape, out)?;
        let ctx = LayerContext {
            layer: self.name.clone(),
            input: input.clone(),
            output: output.clone(),
            aux,
            argmax,
            versions: self.params.iter().map(Parameter::version).collect(),
        };
        Ok((output, ctx))
    }

    /// Backpropagate `grad_out`; parameter gradients are added into each
    /// parameter's accumulator. Returns the gradient with respect to the input.
    pub fn backward(&mut self, ctx: &LayerContext, grad_out: &Tensor) -> Result<Tensor> {
        if ctx.layer != self.name
            || ctx.versions.len() != self.params.len()
            || ctx
                .versions
                .iter()
                .zip(&self.params)
                .any(|(v, p)| *v != p.version())
        {
            return Err(Error::StaleContext(self.name.clone()));
        }
        if grad_out.shape() != ctx.output.shape() {
            return Err(Error::shape(
                &self.name,
                format!(
                    "upstream gradient {:?} vs output {:?}",
                    grad_out.shape(),
                    ctx.output.shape()
                ),
            ));
        }
        let x = ctx.input.data();
        let y = ctx.output.data();
        let dy = grad_out.data();
        let dx: Vec<f64> = match self.kind {
            LayerKind::Dense { inputs, outputs } => {
                let mut dx = vec![0.0; inputs];
                let (wp, bp) = self.params.split_at_mut(1);
                let w = wp[0].value().data().to_vec();
                {
                    let dw = wp[0].grad_mut().data_mut();
                    for o in 0..outputs {
                        let g = dy[o];
                        if g == 0.0 {
                            continue;
                        }
                        axpy(g, x, &mut dw[o * inputs..(o + 1) * inputs]);
                        axpy(g, &w[o * inputs..(o + 1) * inputs], &mut dx);
                    }
                }
                bp[0]
                    .grad_mut()
                    .data_mut()
                    .iter_mut()
                    .zip(dy)
                    .for_each(|(b, g)| *b += g);
                dx
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let geom = ConvGeom {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    in_h: ctx.input.shape()[1],
                    in_w: ctx.input.shape()[2],
                    out_h: ctx.output.shape()[1],
                    out_w: ctx.output.shape()[2],
                };
                let (wp, bp) = self.params.split_at_mut(1);
                let w = wp[0].value().data().to_vec();
                let dx = conv_backward(&geom, x, &w, dy, wp[0].grad_mut().data_mut());
                let plane = geom.out_h * geom.out_w;
                let db = bp[0].grad_mut().data_mut();
                for oc in 0..out_channels {
                    db[oc] += dy[oc * plane..(oc + 1) * plane].iter().sum::<f64>();
                }
                dx
            }
            LayerKind::MaxPool { .. } => {
                let mut dx = vec![0.0; x.len()];
                for (g, &idx) in dy.iter().zip(&ctx.argmax) {
                    dx[idx] += g;
                }
                dx
            }
            LayerKind::Relu => x
                .iter()
                .zip(dy)
                .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                .collect(),
            LayerKind::Sigmoid => y.iter().zip(dy).map(|(&s, &g)| g * s * (1.0 - s)).collect(),
            LayerKind::Tanh => y.iter().zip(dy).map(|(&t, &g)| g * (1.0 - t * t)).collect(),
            LayerKind::Softmax => {
                let inner = dot(y, dy);
                y.iter().zip(dy).map(|(&s, &g)| s * (g - inner)).collect()
            }
            LayerKind::Dropout { .. } => {
                if ctx.aux.is_empty() {
                    dy.to_vec()
                } else {
                    dy.iter().zip(&ctx.aux).map(|(g, m)| g * m).collect()
                }
            }
        };
        Tensor::new(ctx.input.shape().to_vec(), dx)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorise the reduction.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

struct ConvGeom {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    /// Output index range `[lo, hi)` along one axis for which the input
    /// coordinate `o * stride + k - padding` lies inside `[0, extent)`.
    fn valid_range(&self, k: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let p = self.padding as isize;
        let s = self.stride as isize;
        let k = k as isize;
        let lo = if p > k { (p - k + s - 1) / s } else { 0 };
        let hi_num = extent as isize - 1 + p - k;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s + 1).min(out_extent as isize);
        (lo as usize, hi.max(lo) as usize)
    }
}

fn conv_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let plane = g.out_h * g.out_w;
    let mut out = vec![0.0; g.out_channels * plane];
    let k = g.kernel;
    for oc in 0..g.out_channels {
        let out_c = &mut out[oc * plane..(oc + 1) * plane];
        out_c.iter_mut().for_each(|v| *v = b[oc]);
        for ic in 0..g.in_channels {
            let in_c = &x[ic * g.in_h * g.in_w..(ic + 1) * g.in_h * g.in_w];
            for ky in 0..k {
                let (oy0, oy1) = g.valid_range(ky, g.in_h, g.out_h);
                for kx in 0..k {
                    let wv = w[((oc * g.in_channels + ic) * k + ky) * k + kx];
                    let (ox0, ox1) = g.valid_range(kx, g.in_w, g.out_w);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.padding;
                        let row = &in_c[iy * g.in_w..(iy + 1) * g.in_w];
                        let orow = &mut out_c[oy * g.out_w..(oy + 1) * g.out_w];
                        let ix0 = ox0 * g.stride + kx - g.padding;
                        if g.stride == 1 {
                            let n = ox1 - ox0;
                            axpy(wv, &row[ix0..ix0 + n], &mut orow[ox0..ox1]);
                        } else {
                            for (j, o) in orow[ox0..ox1].iter_mut().enumerate() {
                                *o += wv * row[ix0 + j * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns the input gradient; adds the weight gradient into `dw`.
fn conv_backward(g: &ConvGeom, x: &[f64], w: &[f64], dy: &[f64], dw: &mut [f64]) -> Vec<f64> {
    let plane = g.out_h * g.out_w;
    let in_plane = g.in_h * g.in_w;
    let mut dx = vec![0.0; g.in_channels * in_plane];
    let k = g.kernel;
    for oc in 0..g.out_channels {
        let dy_c = &dy[oc * plane..(oc + 1) * plane];
        for ic in 0..g.in_channels {
            let in_c = &x[ic * in_plane..(ic + 1) * in_plane];
            let dx_c = &mut dx[ic * in_plane..(ic + 1) * in_plane];
            for ky in 0..k {
                let (oy0, oy1) = g.valid_range(ky, g.in_h, g.out_h);
                for kx in 0..k {
                    let widx = ((oc * g.in_channels + ic) * k + ky) * k + kx;
                    let wv = w[widx];
                    let (ox0, ox1) = g.valid_range(kx, g.in_w, g.out_w);
                    if ox0 >= ox1 {
                        continue;
                    }
                    let mut acc = 0.0;
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.padding;
                        let ix0 = ox0 * g.stride + kx - g.padding;
                        let drow = &dy_c[oy * g.out_w..(oy + 1) * g.out_w];
                        if g.stride == 1 {
                            let n = ox1 - ox0;
                            let row = &in_c[iy * g.in_w + ix0..iy * g.in_w + ix0 + n];
                            acc += dot(&drow[ox0..ox1], row);
                            axpy(
                                wv,
                                &drow[ox0..ox1],
                                &mut dx_c[iy * g.in_w + ix0..iy * g.in_w + ix0 + n],
                            );
                        } else {
                            for (j, &d) in drow[ox0..ox1].iter().enumerate() {
                                let idx = iy * g.in_w + ix0 + j * g.stride;
                                acc += d * in_c[idx];
                                dx_c[idx] += wv * d;
                            }
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    dx
}
