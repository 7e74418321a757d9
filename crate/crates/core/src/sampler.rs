//! Differentiable categorical sampling over edge candidates: softmax
//! probabilities from logits, Gumbel-Max hard samples, the
//! temperature-controlled softmax relaxation, and the linear
//! temperature schedule.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// softmax of an edge's logit vector. Rejects non-finite input.
pub fn edge_probabilities(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("edge_probabilities".into()));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&a| (a - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// K i.i.d. Gumbel(0,1) draws: -log(-log(u)), u clamped away from
/// {0, 1} so the double log never produces an infinity.
pub fn sample_gumbel(k: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..k)
        .map(|_| {
            let u: f64 = rng.gen::<f64>().clamp(1e-12, 1.0 - 1e-12);
            -(-u.ln()).ln()
        })
        .collect()
}

/// Index of the largest perturbed logit; ties go to the lowest index.
pub fn gumbel_argmax(logits: &[f64], noise: &[f64]) -> usize {
    debug_assert_eq!(logits.len(), noise.len());
    let mut best = 0;
    for k in 1..logits.len() {
        if logits[k] + noise[k] > logits[best] + noise[best] {
            best = k;
        }
    }
    best
}

pub fn one_hot(k: usize, len: usize) -> Vec<f64> {
    let mut h = vec![0.0; len];
    h[k] = 1.0;
    h
}

/// Plain-number relaxation: softmax((log p + o) / tau) with
/// p = softmax(logits).
pub fn gumbel_softmax(logits: &[f64], noise: &[f64], tau: f64) -> Result<Vec<f64>> {
    if tau <= 0.0 {
        return Err(Error::InvalidTemperature(tau));
    }
    let p = edge_probabilities(logits)?;
    let scores: Vec<f64> = p
        .iter()
        .zip(noise)
        .map(|(&pk, &o)| (pk.ln() + o) / tau)
        .collect();
    edge_probabilities(&scores)
}

/// Graph-building relaxation over a logit tensor: gradients flow
/// through the full chain soft -> log p -> logits.
pub fn gumbel_softmax_t(logits: &Tensor, noise: &[f64], tau: f64) -> Result<Tensor> {
    if tau <= 0.0 {
        return Err(Error::InvalidTemperature(tau));
    }
    let logp = logits.log_softmax();
    let scored = logp.add_const_vec(noise)?.mul_const(1.0 / tau);
    Ok(scored.softmax())
}

/// Straight-through sample: forward value is the hard one-hot picked by
/// Gumbel-Max on the same noise; the gradient w.r.t. the logits is the
/// relaxed softmax gradient.
pub fn straight_through_select(logits: &Tensor, noise: &[f64], tau: f64) -> Result<(usize, Tensor)> {
    let soft = gumbel_softmax_t(logits, noise, tau)?;
    let hard = gumbel_argmax(&logits.to_vec(), noise);
    Ok((hard, soft.straight_through_onehot(hard)))
}

/// Linear temperature decay over a fixed number of steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureSchedule {
    pub tau_start: f64,
    pub tau_end: f64,
    pub total_steps: u64,
}

impl TemperatureSchedule {
    pub fn new(tau_start: f64, tau_end: f64, total_steps: u64) -> TemperatureSchedule {
        TemperatureSchedule {
            tau_start,
            tau_end,
            total_steps,
        }
    }

    /// tau at `step`; out-of-range steps clamp with a warning.
    pub fn at(&self, step: u64) -> f64 {
        let step = if step > self.total_steps {
            eprintln!(
                "warning: temperature step {step} beyond schedule end {}; clamping",
                self.total_steps
            );
            self.total_steps
        } else {
            step
        };
        let frac = if self.total_steps == 0 {
            1.0
        } else {
            step as f64 / self.total_steps as f64
        };
        self.tau_start + (self.tau_end - self.tau_start) * frac
    }
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        TemperatureSchedule::new(10.0, 0.1, 1)
    }
}
