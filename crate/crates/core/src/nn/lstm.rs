//! Stacked LSTM classifier.
//!
//! Each layer holds a single weight matrix `W` of shape `4H x (D + H)` that
//! maps the stacked `(x_t, h_{t-1})` to the four gate pre-activations in the
//! order input, forget, output, modulation:
//!
//! ```text
//! (i, f, o, u) = (sigmoid, sigmoid, sigmoid, tanh)(W [x_t; h_{t-1}] + b)
//! c_t = i * u + f * c_{t-1}
//! h_t = o * tanh(c_t)
//! ```
//!
//! The top layer's last hidden state feeds a dense layer and softmax.
//! Dropout sits between layers (and before the dense layer), never inside
//! the recurrence.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cross_entropy, dropout_mask, sigmoid, softmax, Model, ParamStore};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Borrowed view of one layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LstmLayer<'a> {
    pub input: usize,
    pub hidden: usize,
    /// `4H x (D + H)`, row-major.
    pub w: &'a [f64],
    /// `4H`
    pub b: &'a [f64],
}

/// Everything the backward pass needs from one step.
#[derive(Clone, Debug)]
struct StepCache {
    z: Vec<f64>,
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmLayer<'_> {
    fn check(&self, x: &[f64], h: &[f64], c: &[f64]) -> Result<()> {
        let (d, hd) = (self.input, self.hidden);
        if self.w.len() != 4 * hd * (d + hd) || self.b.len() != 4 * hd {
            return Err(Error::shape(format!(
                "layer weights {} / bias {} do not fit D={d}, H={hd}",
                self.w.len(),
                self.b.len()
            )));
        }
        if x.len() != d || h.len() != hd || c.len() != hd {
            return Err(Error::shape(format!(
                "cell inputs x={}, h={}, c={} for D={d}, H={hd}",
                x.len(),
                h.len(),
                c.len()
            )));
        }
        Ok(())
    }

    fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>, StepCache) {
        let hd = self.hidden;
        let cols = self.input + hd;
        let mut z = Vec::with_capacity(cols);
        z.extend_from_slice(x);
        z.extend_from_slice(h_prev);
        let mut gates: Vec<f64> = self
            .w
            .chunks_exact(cols)
            .zip(self.b)
            .map(|(row, b)| b + row.iter().zip(&z).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        for (g, v) in gates.iter_mut().enumerate() {
            *v = if g < 3 * hd { sigmoid(*v) } else { v.tanh() };
        }
        let mut c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        for k in 0..hd {
            let (i, f, o, u) = (gates[k], gates[hd + k], gates[2 * hd + k], gates[3 * hd + k]);
            c[k] = i * u + f * c_prev[k];
            tanh_c[k] = c[k].tanh();
            h[k] = o * tanh_c[k];
        }
        let cache = StepCache {
            z,
            gates,
            c_prev: c_prev.to_vec(),
            tanh_c,
        };
        (h, c, cache)
    }

    /// Backward through one step. Accumulates into `gw`/`gb`, returns
    /// `(dx, dh_prev, dc_prev)`.
    fn step_backward(
        &self,
        cache: &StepCache,
        dh: &[f64],
        dc_next: &[f64],
        gw: &mut [f64],
        gb: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let cols = self.input + hd;
        let g = &cache.gates;
        let mut da = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for k in 0..hd {
            let (i, f, o, u) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
            let tc = cache.tanh_c[k];
            let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
            da[k] = dc * u * i * (1.0 - i);
            da[hd + k] = dc * cache.c_prev[k] * f * (1.0 - f);
            da[2 * hd + k] = dh[k] * tc * o * (1.0 - o);
            da[3 * hd + k] = dc * i * (1.0 - u * u);
            dc_prev[k] = dc * f;
        }
        let mut dz = vec![0.0; cols];
        for (r, &d) in da.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            gb[r] += d;
            let row = &self.w[r * cols..(r + 1) * cols];
            let grow = &mut gw[r * cols..(r + 1) * cols];
            for c in 0..cols {
                grow[c] += d * cache.z[c];
                dz[c] += d * row[c];
            }
        }
        let dh_prev = dz.split_off(self.input);
        (dz, dh_prev, dc_prev)
    }
}

/// One LSTM step: returns `(h_t, c_t)`. Inputs are not modified.
pub fn lstm_cell_forward(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    layer: &LstmLayer<'_>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    layer.check(x, h_prev, c_prev)?;
    let (h, c, _) = layer.step(x, h_prev, c_prev);
    Ok((h, c))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    pub classes: usize,
    pub time_steps: usize,
    pub dropout: f64,
}

impl LstmConfig {
    pub fn new(input: usize, hidden: usize, classes: usize) -> Self {
        LstmConfig {
            input,
            hidden,
            layers: 3,
            classes,
            time_steps: 20,
            dropout: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmClassifier {
    pub config: LstmConfig,
    params: ParamStore,
}

impl LstmClassifier {
    /// All-zero parameters.
    pub fn zeros(config: LstmConfig) -> Result<Self> {
        if config.layers == 0 || config.hidden == 0 || config.classes == 0 || config.input == 0 {
            return Err(Error::config("LSTM dimensions must be positive"));
        }
        let mut params = ParamStore::default();
        for l in 0..config.layers {
            let d = if l == 0 { config.input } else { config.hidden };
            let h = config.hidden;
            params.add(format!("lstm{l}.w"), &[4 * h, d + h]);
            params.add(format!("lstm{l}.b"), &[4 * h]);
        }
        params.add("out.w", &[config.classes, config.hidden]);
        params.add("out.b", &[config.classes]);
        Ok(LstmClassifier { config, params })
    }

    pub fn new(config: LstmConfig, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        m.params.init_uniform(seed);
        Ok(m)
    }

    pub fn from_params(config: LstmConfig, data: Vec<f64>) -> Result<Self> {
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

    pub fn layer(&self, l: usize) -> LstmLayer<'_> {
        LstmLayer {
            input: if l == 0 { self.config.input } else { self.config.hidden },
            hidden: self.config.hidden,
            w: self.params.get(2 * l),
            b: self.params.get(2 * l + 1),
        }
    }

    fn check_input(&self, x: &FeatureMatrix) -> Result<()> {
        if x.cols != self.config.input {
            return Err(Error::shape(format!(
                "features have {} columns, LSTM expects {}",
                x.cols, self.config.input
            )));
        }
        if x.rows == 0 || (self.config.time_steps > 0 && x.rows != self.config.time_steps) {
            return Err(Error::shape(format!(
                "features have {} rows, LSTM unrolls {} steps",
                x.rows, self.config.time_steps
            )));
        }
        Ok(())
    }

    /// Runs all layers. Returns per-layer caches, the dropout masks applied
    /// to each layer's outputs, and the (dropped-out) final top state.
    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        x: &FeatureMatrix,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Vec<Vec<StepCache>>, Vec<Option<Vec<f64>>>, Vec<f64>) {
        let (steps, hd) = (x.rows, self.config.hidden);
        let mut inputs: Vec<Vec<f64>> = (0..steps).map(|t| x.row(t).to_vec()).collect();
        let mut caches = Vec::with_capacity(self.config.layers);
        let mut masks = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let layer = self.layer(l);
            let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
            let mut layer_cache = Vec::with_capacity(steps);
            let mut outputs = Vec::with_capacity(steps);
            for input in &inputs {
                let (h2, c2, cache) = layer.step(input, &h, &c);
                h = h2;
                c = c2;
                outputs.push(h.clone());
                layer_cache.push(cache);
            }
            let top = l + 1 == self.config.layers;
            // The top layer only passes its last state upward.
            let width = if top { hd } else { steps * hd };
            let mask = dropout_mask(width, self.config.dropout, rng.as_deref_mut());
            if let Some(m) = &mask {
                let targets = if top { &mut outputs[steps - 1..] } else { &mut outputs[..] };
                for (v, mv) in targets.iter_mut().flatten().zip(m) {
                    *v *= mv;
                }
            }
            caches.push(layer_cache);
            masks.push(mask);
            inputs = outputs;
        }
        let top = inputs.pop().expect("at least one step");
        (caches, masks, top)
    }

    fn head(&self, h: &[f64]) -> Vec<f64> {
        let l = self.config.layers;
        let (w, b) = (self.params.get(2 * l), self.params.get(2 * l + 1));
        w.chunks_exact(self.config.hidden)
            .zip(b)
            .map(|(row, b)| b + row.iter().zip(h).map(|(a, v)| a * v).sum::<f64>())
            .collect()
    }
}

impl Model for LstmClassifier {
    type Input = FeatureMatrix;

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

    fn logits(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let (_, _, top) = self.run(x, None);
        Ok(self.head(&top))
    }

    fn accumulate_gradient(
        &self,
        x: &FeatureMatrix,
        label: usize,
        dropout: Option<&mut ChaCha8Rng>,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_input(x)?;
        if label >= self.config.classes {
            return Err(Error::validation(format!("label {label} out of range")));
        }
        let cfg = &self.config;
        let (steps, hd, layers) = (x.rows, cfg.hidden, cfg.layers);
        let (caches, masks, top) = self.run(x, dropout);
        let logits = self.head(&top);
        let loss = cross_entropy(&logits, label);

        let mut dlogits = softmax(&logits);
        dlogits[label] -= 1.0;
        for v in &mut dlogits {
            *v *= scale;
        }
        let segs = &self.params.segments;
        let (ow, ob) = (segs[2 * layers].range(), segs[2 * layers + 1].range());
        let out_w = self.params.get(2 * layers);
        let mut dtop = vec![0.0; hd];
        for (c, &d) in dlogits.iter().enumerate() {
            grad[ob.start + c] += d;
            for k in 0..hd {
                grad[ow.start + c * hd + k] += d * top[k];
                dtop[k] += d * out_w[c * hd + k];
            }
        }
        if let Some(m) = &masks[layers - 1] {
            for (v, mv) in dtop.iter_mut().zip(m) {
                *v *= mv;
            }
        }
        // Gradient w.r.t. each layer's (post-dropout) outputs, time-major.
        let mut d_out = vec![vec![0.0; hd]; steps];
        d_out[steps - 1] = dtop;
        for l in (0..layers).rev() {
            let layer = self.layer(l);
            let (wr, br) = (segs[2 * l].range(), segs[2 * l + 1].range());
            let (gw, rest) = grad.split_at_mut(br.start);
            let gw = &mut gw[wr];
            let gb = &mut rest[..br.len()];
            let mut dh_next = vec![0.0; hd];
            let mut dc_next = vec![0.0; hd];
            let mut d_in = vec![Vec::new(); steps];
            for t in (0..steps).rev() {
                let dh: Vec<f64> = d_out[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
                let (dx, dh_prev, dc_prev) = layer.step_backward(&caches[l][t], &dh, &dc_next, gw, gb);
                d_in[t] = dx;
                dh_next = dh_prev;
                dc_next = dc_prev;
            }
            if l > 0 {
                if let Some(m) = &masks[l - 1] {
                    for (v, mv) in d_in.iter_mut().flatten().zip(m) {
                        *v *= mv;
                    }
                }
                d_out = d_in;
            }
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_layer<'a>(w: &'a [f64], b: &'a [f64]) -> LstmLayer<'a> {
        LstmLayer {
            input: 3,
            hidden: 2,
            w,
            b,
        }
    }

    #[test]
    fn zero_weights_freeze_gates() {
        let w = vec![0.0; 8 * 5];
        let b = vec![0.0; 8];
        let layer = zero_layer(&w, &b);
        let (h, c) = lstm_cell_forward(&[1.0, -2.0, 3.0], &[0.4, 0.1], &[0.0, 0.0], &layer).unwrap();
        assert_eq!(c, vec![0.0, 0.0]);
        assert_eq!(h, vec![0.0, 0.0]);

        let c_prev = [0.8, -1.2];
        let (h, c) = lstm_cell_forward(&[0.0; 3], &[0.0; 2], &c_prev, &layer).unwrap();
        for k in 0..2 {
            assert!((c[k] - 0.5 * c_prev[k]).abs() < 1e-15);
            assert!((h[k] - 0.5 * (0.5 * c_prev[k]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn cell_rejects_bad_shapes() {
        let w = vec![0.0; 8 * 5];
        let b = vec![0.0; 8];
        let layer = zero_layer(&w, &b);
        assert!(matches!(
            lstm_cell_forward(&[0.0; 2], &[0.0; 2], &[0.0; 2], &layer),
            Err(Error::Shape(_))
        ));
    }

    fn features(rows: usize, cols: usize, f: impl Fn(usize) -> f64) -> FeatureMatrix {
        FeatureMatrix {
            rows,
            cols,
            channel: crate::features::FeatureChannel::J,
            topology_id: "t".into(),
            data: (0..rows * cols).map(f).collect(),
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = LstmClassifier::zeros(LstmConfig::new(4, 3, 5)).unwrap();
        let p = m.forward(&features(20, 4, |i| i as f64)).unwrap();
        for v in p {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn random_model_normalized_and_pure() {
        let m = LstmClassifier::new(LstmConfig::new(6, 8, 3), 11).unwrap();
        let x = features(20, 6, |i| (i as f64 * 0.37).sin());
        let p = m.forward(&x).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(p, m.forward(&x).unwrap());
    }

    #[test]
    fn wrong_row_count_is_shape_error() {
        let m = LstmClassifier::zeros(LstmConfig::new(4, 3, 2)).unwrap();
        assert!(matches!(m.logits(&features(7, 4, |_| 0.0)), Err(Error::Shape(_))));
    }
}
