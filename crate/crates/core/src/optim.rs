//! Optimizers used in the alternating search loop: SGD with momentum
//! for the shared weights, Adam for the architecture logits, and the
//! cosine learning-rate schedule.

use std::f64::consts::PI;

use crate::tensor::Tensor;

/// Cosine annealing from `lr_max` down to `lr_min` over `total` steps.
pub fn cosine_lr(step: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_min;
    }
    let t = (step.min(total)) as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * t).cos())
}

/// SGD with classical momentum and L2 weight decay folded into the
/// gradient (decay applied before the momentum update).
pub struct Sgd {
    params: Vec<Tensor>,
    velocity: Vec<Vec<f64>>,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    pub fn new(params: Vec<Tensor>, lr: f64, momentum: f64, weight_decay: f64) -> Sgd {
        let velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Sgd {
            params,
            velocity,
            lr,
            momentum,
            weight_decay,
        }
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    pub fn step(&mut self) {
        let lr = self.lr;
        let mu = self.momentum;
        let wd = self.weight_decay;
        for (p, v) in self.params.iter().zip(self.velocity.iter_mut()) {
            p.apply_update(|data, grad| {
                for i in 0..data.len() {
                    let g = grad[i] + wd * data[i];
                    v[i] = mu * v[i] + g;
                    data[i] -= lr * v[i];
                }
            });
        }
    }
}

/// Adam with L2 weight decay folded into the gradient.
pub struct Adam {
    params: Vec<Tensor>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Adam {
    pub fn new(params: Vec<Tensor>, lr: f64, weight_decay: f64) -> Adam {
        let m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Adam {
            params,
            m,
            v,
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    pub fn step(&mut self) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let lr = self.lr;
        let eps = self.eps;
        let wd = self.weight_decay;
        for ((p, m), v) in self.params.iter().zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            p.apply_update(|data, grad| {
                for i in 0..data.len() {
                    let g = grad[i] + wd * data[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            });
        }
    }
}
