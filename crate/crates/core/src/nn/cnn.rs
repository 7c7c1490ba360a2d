//! A small convolutional classifier trained from scratch.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cross_entropy, dropout_mask, softmax, Model, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    /// Fully connected; flattens its input.
    Dense {
        out: usize,
    },
    Dropout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    /// (channels, height, width)
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
    pub dropout: f64,
}

impl CnnConfig {
    /// Three conv+pool blocks and two dense layers for a square RGB input.
    /// A 256-pixel input gets a strided 5x5 first convolution.
    pub fn small(size: usize, classes: usize) -> Self {
        let mut layers = Vec::new();
        let mut s = size;
        if size >= 128 {
            layers.push(LayerSpec::Conv { out: 8, kernel: 5, stride: 2, pad: 2 });
            s = (s + 4 - 5) / 2 + 1;
        } else {
            layers.push(LayerSpec::Conv { out: 8, kernel: 3, stride: 1, pad: 1 });
        }
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::MaxPool { window: 2, stride: 2 });
        s /= 2;
        layers.push(LayerSpec::Conv { out: 16, kernel: 3, stride: 1, pad: 1 });
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::MaxPool { window: 2, stride: 2 });
        s /= 2;
        layers.push(LayerSpec::Conv { out: 16, kernel: 3, stride: 1, pad: 1 });
        layers.push(LayerSpec::Relu);
        let w = (s / 8).max(1);
        if w > 1 {
            layers.push(LayerSpec::MaxPool { window: w, stride: w });
        }
        layers.extend([
            LayerSpec::Dense { out: 64 },
            LayerSpec::Relu,
            LayerSpec::Dropout,
            LayerSpec::Dense { out: classes },
        ]);
        CnnConfig {
            input: [3, size, size],
            layers,
            classes,
            dropout: 0.5,
        }
    }

    /// Output shape of every layer; errors when dimensions do not chain.
    pub fn shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            let [c, h, w] = shape;
            shape = match *spec {
                LayerSpec::Conv { out, kernel, stride, pad } => {
                    if kernel == 0 || stride == 0 || h + 2 * pad < kernel || w + 2 * pad < kernel {
                        return Err(Error::shape(format!("layer {i}: conv does not fit {h}x{w}")));
                    }
                    [out, (h + 2 * pad - kernel) / stride + 1, (w + 2 * pad - kernel) / stride + 1]
                }
                LayerSpec::MaxPool { window, stride } => {
                    if window == 0 || stride == 0 || h < window || w < window {
                        return Err(Error::shape(format!("layer {i}: pool does not fit {h}x{w}")));
                    }
                    [c, (h - window) / stride + 1, (w - window) / stride + 1]
                }
                LayerSpec::Dense { out } => [out, 1, 1],
                LayerSpec::Relu | LayerSpec::Dropout => shape,
            };
            if shape.iter().any(|&d| d == 0) {
                return Err(Error::shape(format!("layer {i} has an empty output")));
            }
            out.push(shape);
        }
        if shape != [self.classes, 1, 1] {
            return Err(Error::shape(format!(
                "network ends in {shape:?}, expected {} logits",
                self.classes
            )));
        }
        Ok(out)
    }
}

/// A `[C][H][W]` image in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageInput {
    pub shape: [usize; 3],
    pub data: Vec<f64>,
}

impl From<&crate::maps::TextureMap> for ImageInput {
    fn from(m: &crate::maps::TextureMap) -> Self {
        ImageInput {
            shape: [3, m.height, m.width],
            data: m.to_tensor(),
        }
    }
}

enum Cache {
    Conv { input: Vec<f64> },
    Relu { input: Vec<f64> },
    Pool { argmax: Vec<usize> },
    Dense { input: Vec<f64> },
    Dropout { mask: Option<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnnClassifier {
    pub config: CnnConfig,
    params: ParamStore,
    /// Parameter segment of each layer (weight, bias), if any.
    slots: Vec<Option<(usize, usize)>>,
    shapes: Vec<[usize; 3]>,
}

impl CnnClassifier {
    pub fn zeros(config: CnnConfig) -> Result<Self> {
        let shapes = config.shapes()?;
        let mut params = ParamStore::default();
        let mut slots = Vec::with_capacity(config.layers.len());
        let mut prev = config.input;
        for (i, spec) in config.layers.iter().enumerate() {
            let slot = match *spec {
                LayerSpec::Conv { out, kernel, .. } => Some((
                    params.add(format!("conv{i}.w"), &[out, prev[0], kernel, kernel]),
                    params.add(format!("conv{i}.b"), &[out]),
                )),
                LayerSpec::Dense { out } => Some((
                    params.add(format!("dense{i}.w"), &[out, prev.iter().product()]),
                    params.add(format!("dense{i}.b"), &[out]),
                )),
                _ => None,
            };
            slots.push(slot);
            prev = shapes[i];
        }
        Ok(CnnClassifier {
            config,
            params,
            slots,
            shapes,
        })
    }

    pub fn new(config: CnnConfig, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        m.params.init_uniform(seed);
        Ok(m)
    }

    pub fn from_params(config: CnnConfig, data: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        if data.len() != m.params.len() {
            return Err(Error::shape(format!(
                "{} parameters supplied, model needs {}",
                data.len(),
                m.params.len()
            )));
        }
        m.params.data = data;
        Ok(m)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn in_shape(&self, i: usize) -> [usize; 3] {
        if i == 0 {
            self.config.input
        } else {
            self.shapes[i - 1]
        }
    }

    /// Output of layer `i` for `input`.
    pub fn conv_layer_output(&self, i: usize, input: &[f64]) -> Result<Vec<f64>> {
        match self.config.layers.get(i) {
            Some(&LayerSpec::Conv { stride, pad, kernel, .. }) => {
                let (w, b) = self.slots[i].expect("conv has params");
                Ok(conv_forward(
                    input,
                    self.in_shape(i),
                    self.params.get(w),
                    self.params.get(b),
                    self.shapes[i],
                    kernel,
                    stride,
                    pad,
                ))
            }
            _ => Err(Error::config(format!("layer {i} is not a convolution"))),
        }
    }

    fn run(&self, x: &ImageInput, mut rng: Option<&mut ChaCha8Rng>) -> Result<(Vec<f64>, Vec<Cache>)> {
        if x.shape != self.config.input || x.data.len() != x.shape.iter().product::<usize>() {
            return Err(Error::shape(format!(
                "image {:?} does not match network input {:?}",
                x.shape, self.config.input
            )));
        }
        let mut act = x.data.clone();
        let mut caches = Vec::with_capacity(self.config.layers.len());
        for (i, spec) in self.config.layers.iter().enumerate() {
            let in_shape = self.in_shape(i);
            let out_shape = self.shapes[i];
            let (next, cache) = match *spec {
                LayerSpec::Conv { kernel, stride, pad, .. } => {
                    let (w, b) = self.slots[i].unwrap();
                    let y = conv_forward(
                        &act,
                        in_shape,
                        self.params.get(w),
                        self.params.get(b),
                        out_shape,
                        kernel,
                        stride,
                        pad,
                    );
                    (y, Cache::Conv { input: act })
                }
                LayerSpec::Relu => {
                    let y = act.iter().map(|&v| v.max(0.0)).collect();
                    (y, Cache::Relu { input: act })
                }
                LayerSpec::MaxPool { window, stride } => {
                    let (y, argmax) = pool_forward(&act, in_shape, out_shape, window, stride);
                    (y, Cache::Pool { argmax })
                }
                LayerSpec::Dense { out } => {
                    let (w, b) = self.slots[i].unwrap();
                    let (w, b) = (self.params.get(w), self.params.get(b));
                    let n = act.len();
                    let y = (0..out)
                        .map(|o| b[o] + w[o * n..(o + 1) * n].iter().zip(&act).map(|(a, v)| a * v).sum::<f64>())
                        .collect();
                    (y, Cache::Dense { input: act })
                }
                LayerSpec::Dropout => {
                    let mask = dropout_mask(act.len(), self.config.dropout, rng.as_deref_mut());
                    if let Some(m) = &mask {
                        for (v, mv) in act.iter_mut().zip(m) {
                            *v *= mv;
                        }
                    }
                    (act, Cache::Dropout { mask })
                }
            };
            act = next;
            caches.push(cache);
        }
        Ok((act, caches))
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &[f64],
    [ci, h, w]: [usize; 3],
    weight: &[f64],
    bias: &[f64],
    [co, oh, ow]: [usize; 3],
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.iter_mut().for_each(|v| *v = bias[o]);
        for c in 0..ci {
            let src = &input[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight[((o * ci + c) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in 0..oh {
                        let iy = (y * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let orow = &mut plane[y * ow..(y + 1) * ow];
                        for (x, ov) in orow.iter_mut().enumerate() {
                            let ix = (x * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *ov += wv * row[ix as usize];
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
    input: &[f64],
    [ci, h, w]: [usize; 3],
    weight: &[f64],
    [co, oh, ow]: [usize; 3],
    k: usize,
    stride: usize,
    pad: usize,
    dout: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
) -> Vec<f64> {
    let mut din = vec![0.0; ci * h * w];
    for o in 0..co {
        let dplane = &dout[o * oh * ow..(o + 1) * oh * ow];
        gb[o] += dplane.iter().sum::<f64>();
        for c in 0..ci {
            let src = &input[c * h * w..(c + 1) * h * w];
            let dsrc = &mut din[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((o * ci + c) * k + ky) * k + kx;
                    let wv = weight[widx];
                    let mut acc = 0.0;
                    for y in 0..oh {
                        let iy = (y * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = iy as usize * w;
                        for x in 0..ow {
                            let ix = (x * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                let d = dplane[y * ow + x];
                                acc += d * src[base + ix as usize];
                                dsrc[base + ix as usize] += d * wv;
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    din
}

fn pool_forward(
    input: &[f64],
    [c, h, w]: [usize; 3],
    [_, oh, ow]: [usize; 3],
    window: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = usize::MAX;
                let mut best_v = f64::NEG_INFINITY;
                for dy in 0..window {
                    for dx in 0..window {
                        let idx = (ch * h + y * stride + dy) * w + x * stride + dx;
                        if input[idx] > best_v {
                            best_v = input[idx];
                            best = idx;
                        }
                    }
                }
                out.push(best_v);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

impl Model for CnnClassifier {
    type Input = ImageInput;

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn classes(&self) -> usize {
        self.config.classes
    }

    fn set_dropout(&mut self, rate: f64) {
        self.config.dropout = rate;
    }

    fn logits(&self, x: &ImageInput) -> Result<Vec<f64>> {
        Ok(self.run(x, None)?.0)
    }

    fn accumulate_gradient(
        &self,
        x: &ImageInput,
        label: usize,
        dropout: Option<&mut ChaCha8Rng>,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        if label >= self.config.classes {
            return Err(Error::validation(format!("label {label} out of range")));
        }
        let (logits, caches) = self.run(x, dropout)?;
        let loss = cross_entropy(&logits, label);
        let mut d = softmax(&logits);
        d[label] -= 1.0;
        for v in &mut d {
            *v *= scale;
        }
        for (i, (spec, cache)) in self.config.layers.iter().zip(caches).enumerate().rev() {
            d = match (spec, cache) {
                (&LayerSpec::Conv { kernel, stride, pad, .. }, Cache::Conv { input }) => {
                    let (ws, bs) = self.slots[i].unwrap();
                    let (wr, br) = (self.params.segments[ws].range(), self.params.segments[bs].range());
                    let (gw, rest) = grad.split_at_mut(br.start);
                    conv_backward(
                        &input,
                        self.in_shape(i),
                        self.params.get(ws),
                        self.shapes[i],
                        kernel,
                        stride,
                        pad,
                        &d,
                        &mut gw[wr],
                        &mut rest[..br.len()],
                    )
                }
                (LayerSpec::Relu, Cache::Relu { input }) => d
                    .iter()
                    .zip(&input)
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect(),
                (LayerSpec::MaxPool { .. }, Cache::Pool { argmax }) => {
                    let mut din = vec![0.0; self.in_shape(i).iter().product()];
                    for (g, idx) in d.iter().zip(argmax) {
                        din[idx] += g;
                    }
                    din
                }
                (LayerSpec::Dense { .. }, Cache::Dense { input }) => {
                    let (ws, bs) = self.slots[i].unwrap();
                    let (wr, br) = (self.params.segments[ws].range(), self.params.segments[bs].range());
                    let w = self.params.get(ws);
                    let n = input.len();
                    let mut din = vec![0.0; n];
                    for (o, &g) in d.iter().enumerate() {
                        grad[br.start + o] += g;
                        if g == 0.0 {
                            continue;
                        }
                        let grow = &mut grad[wr.start + o * n..wr.start + (o + 1) * n];
                        let row = &w[o * n..(o + 1) * n];
                        for j in 0..n {
                            grow[j] += g * input[j];
                            din[j] += g * row[j];
                        }
                    }
                    din
                }
                (LayerSpec::Dropout, Cache::Dropout { mask }) => match mask {
                    Some(m) => d.iter().zip(&m).map(|(g, mv)| g * mv).collect(),
                    None => d,
                },
                _ => unreachable!("cache matches layer"),
            };
        }
        Ok(loss)
    }
}
