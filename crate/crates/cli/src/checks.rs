//! Self-checks behind `gdas validate`: sampler marginals, temperature
//! schedule sanity, architecture-gradient finite differences, and the
//! accelerated-pass equivalences. Each check returns an error message
//! on failure; the command exits nonzero if any fails.

use rand::Rng;

use gdas_core::config::RunConfig;
use gdas_core::engine::classification_loss;
use gdas_core::net::Supernet;
use gdas_core::ops::{op_eval_count, reset_op_eval_count};
use gdas_core::oracle::validate_marginals;
use gdas_core::rng::{noise_rng, subsystem_rng};
use gdas_core::sampler::{gumbel_softmax_t, sample_gumbel, TemperatureSchedule};
use gdas_core::space::{edge_list, ArchParams, SelectionMode};
use gdas_core::tensor::Tensor;
use gdas_core::{Error, Result};

fn fail(msg: impl Into<String>) -> Error {
    Error::Config {
        field: "validate".into(),
        message: msg.into(),
    }
}

pub fn run_all(cfg: &RunConfig) -> Vec<(&'static str, Result<()>)> {
    vec![
        ("sampler-marginals", check_marginals(cfg.seed)),
        ("temperature-schedule", check_schedule(cfg)),
        ("arch-gradient-fd", check_arch_gradient(cfg.seed)),
        ("acceleration-equivalence", check_acceleration(cfg)),
    ]
}

/// Gumbel-Max selection frequencies must match softmax of the logits.
fn check_marginals(seed: u64) -> Result<()> {
    let mut rng = subsystem_rng(seed, "validate-marginals");
    for trial in 0..3 {
        let logits: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let report = validate_marginals(&logits, 100_000, seed.wrapping_add(trial))?;
        if report.p_value <= 0.01 {
            return Err(fail(format!(
                "chi-square p = {:.5} <= 0.01 for logits {logits:?}",
                report.p_value
            )));
        }
    }
    Ok(())
}

/// Linear anneal with the configured endpoints, positive throughout.
fn check_schedule(cfg: &RunConfig) -> Result<()> {
    let s = cfg.search_settings()?;
    let total = 1000;
    let sched = TemperatureSchedule::new(s.tau_start, s.tau_end, total);
    for step in 0..=total {
        let tau = sched.at(step);
        if !(tau > 0.0) {
            return Err(fail(format!("tau = {tau} at step {step} is not positive")));
        }
    }
    if (sched.at(0) - s.tau_start).abs() > 1e-12 || (sched.at(total) - s.tau_end).abs() > 1e-12 {
        return Err(fail("schedule endpoints do not match config"));
    }
    Ok(())
}

/// d(loss)/d(logits) of the relaxed sampler against central finite
/// differences.
fn check_arch_gradient(seed: u64) -> Result<()> {
    let k = 4;
    let tau = 1.3;
    let mut rng = subsystem_rng(seed, "validate-fd");
    for _ in 0..10 {
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let coeff: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let noise = sample_gumbel(k, &mut rng);

        let loss_at = |values: &[f64]| -> Result<f64> {
            let logits = Tensor::param(values.to_vec(), vec![k])?;
            let soft = gumbel_softmax_t(&logits, &noise, tau)?;
            let c = Tensor::from_vec(coeff.clone(), vec![k])?;
            Ok(soft.mul(&c)?.sum().item())
        };

        let logits = Tensor::param(raw.clone(), vec![k])?;
        let soft = gumbel_softmax_t(&logits, &noise, tau)?;
        let c = Tensor::from_vec(coeff.clone(), vec![k])?;
        soft.mul(&c)?.sum().backward()?;
        let grad = logits.grad().expect("leaf gradient");

        let eps = 1e-5;
        for i in 0..k {
            let mut plus = raw.clone();
            plus[i] += eps;
            let mut minus = raw.clone();
            minus[i] -= eps;
            let fd = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * eps);
            let denom = fd.abs().max(grad[i].abs()).max(1e-8);
            if (fd - grad[i]).abs() / denom > 1e-4 {
                return Err(fail(format!(
                    "grad[{i}] = {} vs finite difference {fd}",
                    grad[i]
                )));
            }
        }
    }
    Ok(())
}

/// Accelerated forward must equal the hard-sampled forward bit-for-bit
/// in loss, while evaluating K times fewer candidate ops.
fn check_acceleration(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.space_spec()?;
    let plan = cfg.plan();
    let net = Supernet::new(&spec, &plan, false, cfg.seed);
    let arch = ArchParams::init(&spec, cfg.seed, true);
    let data = gdas_core::data::synthetic_edges(8, cfg.dataset.image_size, cfg.dataset.noise, cfg.seed)?;
    let (x, labels) = data.batch(&(0..8).collect::<Vec<_>>())?;

    let k = spec.k();
    let n_edges = edge_list(&spec).len();
    let noises: Vec<Vec<Vec<f64>>> = (0..net.num_cells())
        .map(|cell| {
            (0..n_edges)
                .map(|edge| {
                    let mut r = noise_rng(cfg.seed, 0, cell as u64, edge as u64);
                    sample_gumbel(k, &mut r)
                })
                .collect()
        })
        .collect();

    reset_op_eval_count();
    let hard = net.forward(&x, &arch, &noises, 5.0, SelectionMode::HardSampled)?;
    let hard_loss = classification_loss(&hard, &labels)?.item();
    let hard_evals = op_eval_count();

    reset_op_eval_count();
    let fast = net.forward(&x, &arch, &noises, 5.0, SelectionMode::Accelerated)?;
    let fast_loss = classification_loss(&fast, &labels)?.item();
    let fast_evals = op_eval_count();

    if (hard_loss - fast_loss).abs() > 1e-12 {
        return Err(fail(format!(
            "accelerated loss {fast_loss} != hard loss {hard_loss}"
        )));
    }
    if hard_evals != fast_evals * k as u64 {
        return Err(fail(format!(
            "op evaluations: hard {hard_evals}, accelerated {fast_evals}, expected factor {k}"
        )));
    }
    Ok(())
}
