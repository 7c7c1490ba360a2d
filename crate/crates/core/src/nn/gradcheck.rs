//! Central finite-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::cnn::{CnnClassifier, CnnConfig, ImageInput, LayerSpec};
use super::lstm::{LstmClassifier, LstmConfig};
use super::Model;
use crate::error::Result;
use crate::features::{FeatureChannel, FeatureMatrix};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Denominator floor for the relative error. Central differences at
/// `eps = 1e-5` carry about `1e-11` absolute noise, so gradients below this
/// are compared on an absolute scale instead.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Segment name and offset of the worst parameter.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Mean batch loss, re-drawing dropout masks from the same seed on every
/// call so the objective is a fixed function of the parameters.
fn batch_loss<M: Model>(
    model: &M,
    batch: &[(M::Input, usize)],
    dropout_seed: Option<u64>,
    grad: &mut [f64],
) -> Result<f64> {
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (x, label) in batch {
        loss += model.accumulate_gradient(x, *label, rng.as_mut(), scale, grad)? * scale;
    }
    Ok(loss)
}

/// Compares every parameter's analytic gradient against central differences.
/// `filter` restricts which segments are checked.
pub fn check_model<M: Model + Clone>(
    model: &M,
    batch: &[(M::Input, usize)],
    dropout_seed: Option<u64>,
    eps: f64,
    filter: impl Fn(&str) -> bool,
) -> Result<GradCheck> {
    let n = model.params().len();
    let mut analytic = vec![0.0; n];
    batch_loss(model, batch, dropout_seed, &mut analytic)?;

    let mut probe = model.clone();
    let mut scratch = vec![0.0; n];
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for seg in model.params().segments.clone() {
        if !filter(&seg.name) {
            continue;
        }
        for i in seg.range() {
            let orig = probe.params().data[i];
            probe.params_mut().data[i] = orig + eps;
            let plus = batch_loss(&probe, batch, dropout_seed, &mut scratch)?;
            probe.params_mut().data[i] = orig - eps;
            let minus = batch_loss(&probe, batch, dropout_seed, &mut scratch)?;
            probe.params_mut().data[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((seg.name.clone(), i - seg.offset));
                }
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Lstm,
    Cnn,
}

impl std::str::FromStr for ModelKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(ModelKind::Lstm),
            "cnn" => Ok(ModelKind::Cnn),
            _ => Err(crate::Error::config(format!("unknown model kind `{s}`"))),
        }
    }
}

/// Desk-sized LSTM: 3 layers, H = 4, 5 inputs, 3 classes, 6 steps.
pub fn small_lstm(seed: u64) -> Result<(LstmClassifier, Vec<(FeatureMatrix, usize)>)> {
    let mut cfg = LstmConfig::new(5, 4, 3);
    cfg.time_steps = 6;
    cfg.dropout = 0.5;
    let model = LstmClassifier::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let batch = (0..3)
        .map(|label| {
            let x = FeatureMatrix {
                rows: 6,
                cols: 5,
                channel: FeatureChannel::R,
                topology_id: "gradcheck".into(),
                data: (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            };
            (x, label)
        })
        .collect();
    Ok((model, batch))
}

/// Desk-sized CNN on 3x12x12 images, with a strided padded conv and dropout.
pub fn small_cnn(seed: u64) -> Result<(CnnClassifier, Vec<(ImageInput, usize)>)> {
    let cfg = CnnConfig {
        input: [3, 12, 12],
        layers: vec![
            LayerSpec::Conv { out: 4, kernel: 3, stride: 1, pad: 1 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { window: 2, stride: 2 },
            LayerSpec::Conv { out: 6, kernel: 3, stride: 2, pad: 1 },
            LayerSpec::Relu,
            LayerSpec::Dense { out: 8 },
            LayerSpec::Relu,
            LayerSpec::Dropout,
            LayerSpec::Dense { out: 3 },
        ],
        classes: 3,
        dropout: 0.5,
    };
    let mut model = CnnClassifier::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5A5A);
    // Non-zero biases so ReLUs are not pinned at their kink.
    for seg in model.params().segments.clone() {
        if seg.name.ends_with(".b") {
            for v in &mut model.params_mut().data[seg.range()] {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
    }
    let batch = (0..3)
        .map(|label| {
            let x = ImageInput {
                shape: [3, 12, 12],
                data: (0..432).map(|_| rng.gen::<f64>()).collect(),
            };
            (x, label)
        })
        .collect();
    Ok((model, batch))
}

/// Max relative error over every parameter of a desk-sized model of `kind`.
pub fn gradient_check(kind: ModelKind, seed: u64) -> Result<f64> {
    let dropout_seed = Some(seed.wrapping_add(1));
    let report = match kind {
        ModelKind::Lstm => {
            let (m, batch) = small_lstm(seed)?;
            check_model(&m, &batch, dropout_seed, DEFAULT_EPS, |_| true)?
        }
        ModelKind::Cnn => {
            let (m, batch) = small_cnn(seed)?;
            check_model(&m, &batch, dropout_seed, DEFAULT_EPS, |_| true)?
        }
    };
    Ok(report.max_rel_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-12, 0.0) < 1e-5);
    }

    #[test]
    fn zero_model_bias_gradients_vanish_for_balanced_batch() {
        let mut cfg = LstmConfig::new(3, 4, 2);
        cfg.time_steps = 4;
        cfg.dropout = 0.0;
        let m = LstmClassifier::zeros(cfg).unwrap();
        let x = |v: f64| FeatureMatrix {
            rows: 4,
            cols: 3,
            channel: FeatureChannel::J,
            topology_id: "t".into(),
            data: vec![v; 12],
        };
        let batch = vec![(x(0.3), 0), (x(-0.7), 1)];
        let r = check_model(&m, &batch, None, DEFAULT_EPS, |n| n.ends_with(".b")).unwrap();
        assert!(r.checked > 0);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
