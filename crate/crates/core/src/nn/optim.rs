use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Rmsprop,
    Sgd,
}

pub trait Optimizer {
    fn step(&mut self, params: &mut [f64], grad: &[f64]);
}

/// `v <- decay v + (1 - decay) g^2; p <- p - lr g / (sqrt(v) + eps)`
#[derive(Clone, Debug)]
pub struct Rmsprop {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    cache: Vec<f64>,
}

impl Rmsprop {
    pub fn new(learning_rate: f64) -> Self {
        Rmsprop {
            learning_rate,
            decay: 0.9,
            epsilon: 1e-8,
            cache: Vec::new(),
        }
    }
}

impl Optimizer for Rmsprop {
    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        if self.cache.len() != params.len() {
            self.cache = vec![0.0; params.len()];
        }
        for ((p, &g), v) in params.iter_mut().zip(grad).zip(&mut self.cache) {
            *v = self.decay * *v + (1.0 - self.decay) * g * g;
            *p -= self.learning_rate * g / (v.sqrt() + self.epsilon);
        }
    }
}

/// Plain SGD with optional classical momentum.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        if self.velocity.len() != params.len() {
            self.velocity = vec![0.0; params.len()];
        }
        for ((p, &g), v) in params.iter_mut().zip(grad).zip(&mut self.velocity) {
            *v = self.momentum * *v - self.learning_rate * g;
            *p += *v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmsprop_zero_gradient_is_noop() {
        let mut opt = Rmsprop::new(0.001);
        let mut p = vec![1.0, -2.0, 3.5];
        for _ in 0..5 {
            opt.step(&mut p, &[0.0; 3]);
        }
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn rmsprop_first_two_steps() {
        let mut opt = Rmsprop::new(0.1);
        let mut p = vec![1.0];
        opt.step(&mut p, &[2.0]);
        let v1: f64 = 0.1 * 4.0;
        let p1 = 1.0 - 0.1 * 2.0 / (v1.sqrt() + 1e-8);
        assert!((p[0] - p1).abs() < 1e-15);
        opt.step(&mut p, &[-1.0]);
        let v2 = 0.9 * v1 + 0.1;
        assert!((p[0] - (p1 + 0.1 / (v2.sqrt() + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum() {
        let mut opt = Sgd::new(0.5, 0.9);
        let mut p = vec![0.0];
        opt.step(&mut p, &[1.0]);
        assert_eq!(p, vec![-0.5]);
        opt.step(&mut p, &[1.0]);
        assert!((p[0] - (-0.5 - 0.45 - 0.5)).abs() < 1e-15);
    }
}
