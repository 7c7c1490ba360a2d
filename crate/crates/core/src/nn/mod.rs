//! From-scratch networks for the classifier channels.
//!
//! Parameters of a model live in one flat [`ParamStore`] so optimizers,
//! gradient checks and checkpoints all work on plain `&[f64]`.

pub mod checkpoint;
pub mod cnn;
pub mod gradcheck;
pub mod lstm;
pub mod optim;
pub mod params;
pub mod train;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use cnn::{CnnClassifier, CnnConfig, ImageInput, LayerSpec};
pub use gradcheck::{gradient_check, GradCheck, ModelKind};
pub use lstm::{lstm_cell_forward, LstmClassifier, LstmConfig, LstmLayer};
pub use optim::{Optimizer, OptimizerKind, Rmsprop, Sgd};
pub use params::ParamStore;
pub use train::{train, TrainConfig, TrainOverride, TrainReport};

use crate::error::Result;

/// A classifier trained with softmax cross-entropy.
pub trait Model {
    type Input;

    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn classes(&self) -> usize;
    fn set_dropout(&mut self, rate: f64);

    /// Pre-softmax scores with dropout disabled.
    fn logits(&self, x: &Self::Input) -> Result<Vec<f64>>;

    /// Cross-entropy loss for one sample; adds `scale * dloss/dparams` into
    /// `grad`. Dropout masks are drawn from `dropout` when given.
    fn accumulate_gradient(
        &self,
        x: &Self::Input,
        label: usize,
        dropout: Option<&mut ChaCha8Rng>,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64>;

    /// Class probabilities with dropout disabled.
    fn forward(&self, x: &Self::Input) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
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

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]`, computed via log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Inverted-dropout mask: entries are 0 or `1 / (1 - rate)`.
pub(crate) fn dropout_mask(len: usize, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    Some(
        (0..len)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect(),
    )
}
