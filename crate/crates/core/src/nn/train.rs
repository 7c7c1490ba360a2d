use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, Optimizer, OptimizerKind, Rmsprop, Sgd};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Only used by SGD.
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub seed: u64,
    pub time_steps: usize,
}

/// Partial training settings layered over a base [`TrainConfig`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverride {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_steps: Option<usize>,
}

impl TrainOverride {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer.unwrap_or(base.optimizer),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            momentum: self.momentum.unwrap_or(base.momentum),
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            dropout: self.dropout.unwrap_or(base.dropout),
            seed: self.seed.unwrap_or(base.seed),
            time_steps: self.time_steps.unwrap_or(base.time_steps),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::lstm()
    }
}

impl TrainConfig {
    /// RMSprop at 0.001.
    pub fn lstm() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Rmsprop,
            learning_rate: 0.001,
            momentum: 0.0,
            epochs: 50,
            batch_size: 16,
            dropout: 0.5,
            seed: 0,
            time_steps: 20,
        }
    }

    /// SGD at 0.01 with momentum 0.9.
    pub fn cnn() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 30,
            batch_size: 16,
            dropout: 0.5,
            seed: 0,
            time_steps: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout rate must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Mini-batch training on mean cross-entropy. Deterministic for a fixed
/// config: batch order and dropout masks come from seeded ChaCha streams.
pub fn train<M: Model>(model: &mut M, data: &[(M::Input, usize)], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    if let Some((_, l)) = data.iter().find(|(_, l)| *l >= model.classes()) {
        return Err(Error::validation(format!(
            "label {l} outside [0, {})",
            model.classes()
        )));
    }
    model.set_dropout(cfg.dropout);
    let mut optimizer: Box<dyn Optimizer> = match cfg.optimizer {
        OptimizerKind::Rmsprop => Box::new(Rmsprop::new(cfg.learning_rate)),
        OptimizerKind::Sgd => Box::new(Sgd::new(cfg.learning_rate, cfg.momentum)),
    };
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; model.params().len()];
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / idx.len() as f64;
            let mut batch_loss = 0.0;
            for &i in idx {
                let (x, label) = &data[i];
                batch_loss += model.accumulate_gradient(x, *label, Some(&mut dropout_rng), scale, &mut grad)?;
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                let max_grad = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch,
                    max_grad,
                });
            }
            total += batch_loss;
            optimizer.step(&mut model.params_mut().data, &grad);
        }
        history.push(total / data.len() as f64);
    }
    Ok(TrainReport {
        loss_history: history,
    })
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn accuracy<M: Model>(model: &M, data: &[(M::Input, usize)]) -> Result<f64> {
    let mut correct = 0;
    for (x, label) in data {
        let p = model.forward(x)?;
        if crate::fusion::predict_label(&p) == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}
