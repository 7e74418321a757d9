//! Acceptance gate: one test per release criterion. Each test prints a
//! single PASS/FAIL line (visible under `--nocapture`; the harness line
//! per test carries the same verdict) and asserts the criterion.

mod common;

use std::time::Instant;

use rand::Rng;

use gdas_core::data::synthetic_edges;
use gdas_core::derive::{derive_cell, full_omega};
use gdas_core::engine::{
    classification_loss, metrics_csv, run_search, SearchSettings, TrainSettings,
};
use gdas_core::net::{NetworkPlan, Supernet};
use gdas_core::ops::{op_eval_count, reset_op_eval_count, CandidateOpKind, OpInstance};
use gdas_core::oracle::{enumerate_cells, rank_all, validate_marginals};
use gdas_core::rng::{noise_rng, subsystem_rng};
use gdas_core::sampler::{
    edge_probabilities, gumbel_argmax, gumbel_softmax, gumbel_softmax_t, one_hot, sample_gumbel,
    straight_through_select, TemperatureSchedule,
};
use gdas_core::space::{
    count_subgraphs, edge_list, ArchParams, CellType, SearchSpaceSpec, SelectionMode,
};
use gdas_core::tensor::{avg_pool2d, concat_channels, max_pool2d, Conv2dSpec};
use gdas_core::Tensor;

fn verdict(criterion: &str, ok: bool, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("[{tag}] {criterion}: {detail}");
    assert!(ok, "{criterion}: {detail}");
}

fn rand_param(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = subsystem_rng(seed, "acceptance");
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::param(data, shape.to_vec()).unwrap()
}

fn tiny_plan() -> NetworkPlan {
    NetworkPlan {
        in_channels: 1,
        num_classes: 4,
        init_channels: 2,
        cells_per_block: 1,
    }
}

/// Gumbel noise for every (cell, edge) slot of a supernet.
fn all_noises(net: &Supernet, spec: &SearchSpaceSpec, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let n_edges = edge_list(spec).len();
    (0..net.num_cells())
        .map(|cell| {
            (0..n_edges)
                .map(|edge| {
                    let mut r = noise_rng(seed, 0, cell as u64, edge as u64);
                    sample_gumbel(spec.k(), &mut r)
                })
                .collect()
        })
        .collect()
}

/// Criterion 1 — gradient correctness: 100 randomized central
/// finite-difference cases spanning every primitive and the full
/// relaxed supernet loss, relative error < 1e-4, under two minutes.
#[test]
fn criterion_01_gradient_correctness() {
    const EPS: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let clock = Instant::now();
    let mut worst = 0.0_f64;
    let mut cases = 0usize;
    let mut track = |w: f64| {
        worst = worst.max(w);
        cases += 1;
    };

    // 20 cases: elementwise and reduction primitives
    for seed in 0..20u64 {
        let a = rand_param(&[6], -2.0, 2.0, seed);
        let b = rand_param(&[6], -2.0, 2.0, seed + 100);
        let loss = || {
            let s = a.add(&b).unwrap();
            let d = s.sub(&a.mul_const(0.3)).unwrap();
            let m = d.mul(&b.add_const_vec(&[0.1; 6]).unwrap()).unwrap();
            let r = m.add_const_vec(&[4.0; 6]).unwrap().relu(); // away from the kink
            let lg = r.add_const_vec(&[1.0; 6]).unwrap().log();
            lg.mean().add(&lg.select(2)).unwrap().sum()
        };
        track(common::finite_diff_worst(
            &[a.clone(), b.clone()],
            &loss,
            EPS,
        ));
    }

    // 20 cases: matmul, linear, softmax, log-softmax, nll
    for seed in 0..20u64 {
        let x = rand_param(&[3, 4], -1.0, 1.0, seed + 200);
        let m = rand_param(&[4, 5], -1.0, 1.0, seed + 250);
        let w = rand_param(&[2, 5], -1.0, 1.0, seed + 300);
        let bias = rand_param(&[2], -0.5, 0.5, seed + 350);
        let labels = [0usize, 1, 0];
        let loss = || {
            let logits = x.matmul(&m).unwrap().linear(&w, &bias).unwrap();
            let soft_term = logits.softmax().select(0);
            classification_loss(&logits, &labels)
                .unwrap()
                .add(&soft_term.mul_const(0.1))
                .unwrap()
        };
        track(common::finite_diff_worst(
            &[x.clone(), m.clone(), w.clone(), bias.clone()],
            &loss,
            EPS,
        ));
    }

    // 20 cases: convolution variants (stride, dilation, groups, 1x1)
    let conv_specs = [
        Conv2dSpec::simple(3, 1, 1),
        Conv2dSpec::simple(3, 2, 1),
        Conv2dSpec::simple(1, 1, 0),
        Conv2dSpec::simple(3, 1, 2).with_dilation(2),
        Conv2dSpec::simple(3, 1, 1).with_groups(2),
    ];
    for case in 0..20u64 {
        let spec = conv_specs[case as usize % conv_specs.len()];
        let x = rand_param(&[1, 2, 5, 5], -1.0, 1.0, case + 400);
        let w = rand_param(&[2, 2 / spec.groups, spec.kernel.0, spec.kernel.1], -0.8, 0.8, case + 450);
        let loss = || {
            let y = x.conv2d(&w, spec).unwrap();
            y.mul(&y).unwrap().mean()
        };
        track(common::finite_diff_worst(&[x.clone(), w.clone()], &loss, EPS));
    }

    // 15 cases: normalization, pooling, shift, concatenation
    for seed in 0..15u64 {
        let x = rand_param(&[2, 3, 4, 4], -1.5, 1.5, seed + 500);
        let loss = || {
            let n = x.channel_norm(None).unwrap();
            let a = avg_pool2d(&n, 3, 1, 1).unwrap();
            let m = max_pool2d(&x, 3, 2, 1).unwrap();
            let s = x.shift_up_left().unwrap();
            let g = concat_channels(&[a, s]).unwrap().global_avg_pool().unwrap();
            g.sum().add(&m.mean()).unwrap()
        };
        track(common::finite_diff_worst(&[x.clone()], &loss, EPS));
    }

    // 10 cases: pooling candidate ops, gradient through the input
    for seed in 0..10u64 {
        let kind = if seed % 2 == 0 {
            CandidateOpKind::AvgPool3x3
        } else {
            CandidateOpKind::MaxPool3x3
        };
        let stride = 1 + (seed as usize / 2) % 2;
        let mut rng = subsystem_rng(seed + 600, "acceptance-op");
        let op = OpInstance::new(kind, 2, stride, false, &mut rng);
        let x = rand_param(&[1, 2, 6, 6], -1.0, 1.0, seed + 650);
        let loss = || op.apply(&x).unwrap().sum();
        track(common::finite_diff_worst(&[x.clone()], &loss, EPS));
    }

    // 10 cases: relaxed Gumbel-softmax sample against mixing coefficients
    for seed in 0..10u64 {
        let k = 2 + (seed as usize % 5);
        let a = rand_param(&[k], -2.0, 2.0, seed + 700);
        let mut rng = subsystem_rng(seed + 750, "acceptance-gumbel");
        let noise = sample_gumbel(k, &mut rng);
        let coeff: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tau = rng.gen_range(0.5..4.0);
        let loss = || {
            let h = gumbel_softmax_t(&a, &noise, tau).unwrap();
            let c = Tensor::from_vec(coeff.clone(), vec![k]).unwrap();
            h.mul(&c).unwrap().sum()
        };
        track(common::finite_diff_worst(&[a.clone()], &loss, EPS));
    }

    // 5 cases: the full relaxed supernet loss through every A logit
    let spec = SearchSpaceSpec::new(
        2,
        vec![CandidateOpKind::Identity, CandidateOpKind::SepConv3x3],
        1,
    );
    for seed in 0..5u64 {
        let net = Supernet::new(&spec, &tiny_plan(), false, seed + 800);
        let arch = ArchParams::init(&spec, seed + 800, true);
        let data = synthetic_edges(4, 8, 0.3, seed + 800).unwrap();
        let (x, labels) = data.batch(&[0, 1, 2, 3]).unwrap();
        let noises = all_noises(&net, &spec, seed + 800);
        let loss = || {
            let logits = net
                .forward(&x, &arch, &noises, 2.0, SelectionMode::Relaxed)
                .unwrap();
            classification_loss(&logits, &labels).unwrap()
        };
        track(common::finite_diff_worst(&arch.all(), &loss, EPS));
    }

    let elapsed = clock.elapsed().as_secs_f64();
    let ok = cases == 100 && worst < TOL && elapsed < 120.0;
    verdict(
        "criterion 1 (gradient correctness)",
        ok,
        &format!("{cases} cases, worst relative error {worst:.3e}, {elapsed:.1}s"),
    );
}

/// Criterion 2 — sampler marginal law: Gumbel-Max frequencies match
/// softmax(A) by chi-square (p > 0.01) over 1e5 draws for 20 random A
/// vectors, in under a minute.
#[test]
fn criterion_02_sampler_marginals() {
    let clock = Instant::now();
    let mut rng = subsystem_rng(2025, "acceptance-marginals");
    let mut min_p = 1.0_f64;
    for i in 0..20u64 {
        let k = 2 + (i as usize % 7);
        let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let report = validate_marginals(&logits, 100_000, 3000 + i).unwrap();
        min_p = min_p.min(report.p_value);
    }
    let elapsed = clock.elapsed().as_secs_f64();
    let ok = min_p > 0.01 && elapsed < 60.0;
    verdict(
        "criterion 2 (sampler marginal law)",
        ok,
        &format!("minimum chi-square p-value {min_p:.4} over 20 vectors, {elapsed:.1}s"),
    );
}

/// Criterion 3 — relaxation limits: tau=1e6 gives the uniform vector
/// within 1e-4, tau=1e-3 gives the hard one-hot within 1e-6, and the
/// argmax is invariant over the annealing grid 10 -> 0.1.
#[test]
fn criterion_03_relaxation_limits() {
    let mut rng = subsystem_rng(333, "acceptance-limits");
    let mut worst_uniform = 0.0_f64;
    let mut worst_onehot = 0.0_f64;
    let mut argmax_invariant = true;
    for i in 0..20 {
        let k = 2 + (i % 7);
        let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let noise = sample_gumbel(k, &mut rng);
        let hard = gumbel_argmax(&logits, &noise);

        let high = gumbel_softmax(&logits, &noise, 1e6).unwrap();
        for h in &high {
            worst_uniform = worst_uniform.max((h - 1.0 / k as f64).abs());
        }

        let low = gumbel_softmax(&logits, &noise, 1e-3).unwrap();
        for (h, o) in low.iter().zip(one_hot(hard, k)) {
            worst_onehot = worst_onehot.max((h - o).abs());
        }

        let schedule = TemperatureSchedule::new(10.0, 0.1, 200);
        for step in 0..=200u64 {
            let h = gumbel_softmax(&logits, &noise, schedule.at(step)).unwrap();
            let soft_arg = h
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            argmax_invariant &= soft_arg == hard;
        }
    }
    let ok = worst_uniform <= 1e-4 && worst_onehot <= 1e-6 && argmax_invariant;
    verdict(
        "criterion 3 (relaxation limits)",
        ok,
        &format!(
            "uniform deviation {worst_uniform:.2e}, one-hot deviation {worst_onehot:.2e}, argmax invariant {argmax_invariant}"
        ),
    );
}

/// Criterion 4 — straight-through contract: the hard-mode forward loss
/// equals the masked full mixture within 1e-12 across 50 seeds, both at
/// the single-edge level and through the whole supernet.
#[test]
fn criterion_04_straight_through_contract() {
    let spec = SearchSpaceSpec::new(
        2,
        vec![
            CandidateOpKind::Identity,
            CandidateOpKind::SepConv3x3,
            CandidateOpKind::AvgPool3x3,
        ],
        1,
    );
    let plan = tiny_plan();
    let mut worst_net = 0.0_f64;
    let mut worst_edge = 0.0_f64;
    for seed in 0..50u64 {
        // single edge: hard straight-through mixture vs explicit masking
        let mut rng = subsystem_rng(seed, "acceptance-st");
        let ops: Vec<OpInstance> = spec
            .candidates
            .iter()
            .map(|&k| OpInstance::new(k, 2, 1, false, &mut rng))
            .collect();
        let x = rand_param(&[1, 2, 4, 4], -1.0, 1.0, seed + 40);
        let a = rand_param(&[3], -1.5, 1.5, seed + 90);
        let noise = sample_gumbel(3, &mut rng);
        let tau = rng.gen_range(0.5..4.0);

        let (chosen, st) = straight_through_select(&a, &noise, tau).unwrap();
        let mut hard_mix: Option<Tensor> = None;
        for (k, op) in ops.iter().enumerate() {
            let y = op.apply(&x).unwrap().scale(&st.select(k)).unwrap();
            hard_mix = Some(match hard_mix {
                Some(t) => t.add(&y).unwrap(),
                None => y,
            });
        }
        let hard_mix = hard_mix.unwrap().to_vec();
        let masked: Vec<f64> = {
            let onehot = one_hot(gumbel_argmax(&a.to_vec(), &noise), 3);
            let branches: Vec<Vec<f64>> = ops.iter().map(|op| op.apply(&x).unwrap().to_vec()).collect();
            (0..hard_mix.len())
                .map(|i| (0..3).map(|k| onehot[k] * branches[k][i]).sum())
                .collect()
        };
        assert_eq!(chosen, gumbel_argmax(&a.to_vec(), &noise));
        for (h, m) in hard_mix.iter().zip(&masked) {
            worst_edge = worst_edge.max((h - m).abs());
        }

        // whole supernet: hard mode vs the collapsed masked mixture
        let net = Supernet::new(&spec, &plan, false, seed);
        let arch = ArchParams::init(&spec, seed, true);
        let data = synthetic_edges(4, 8, 0.3, seed).unwrap();
        let (xb, labels) = data.batch(&[0, 1, 2, 3]).unwrap();
        let noises = all_noises(&net, &spec, seed);
        let loss_at = |mode| {
            let logits = net.forward(&xb, &arch, &noises, 1.5, mode).unwrap();
            classification_loss(&logits, &labels).unwrap().item()
        };
        let diff = (loss_at(SelectionMode::HardSampled) - loss_at(SelectionMode::Accelerated)).abs();
        worst_net = worst_net.max(diff);
    }
    let ok = worst_edge <= 1e-12 && worst_net <= 1e-12;
    verdict(
        "criterion 4 (straight-through contract)",
        ok,
        &format!("edge-level deviation {worst_edge:.2e}, supernet loss deviation {worst_net:.2e}, 50 seeds"),
    );
}

/// Criterion 5 — acceleration equivalence: accelerated forward equals
/// the hard forward within 1e-12, the accelerated dL/dA equals the
/// argmax-masked analytic gradient within 1e-10, and candidate-op
/// evaluations drop by exactly a factor of K.
#[test]
fn criterion_05_acceleration_equivalence() {
    // analytic masked gradient at the edge level
    let mut worst_grad = 0.0_f64;
    let mut rng = subsystem_rng(555, "acceptance-accel");
    for _ in 0..30 {
        let k = 2 + rng.gen_range(0..4usize);
        let dim = 5;
        let a_data: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let a = Tensor::param(a_data.clone(), vec![k]).unwrap();
        let noise = sample_gumbel(k, &mut rng);
        let tau: f64 = rng.gen_range(0.5..4.0);
        let branches: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let coeff: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // accelerated loss: only the argmax branch is evaluated
        let c = gumbel_argmax(&a_data, &noise);
        let soft = gumbel_softmax_t(&a, &noise, tau).unwrap();
        let gate = soft.straight_through_unit(c);
        let f_c = Tensor::from_vec(branches[c].clone(), vec![dim]).unwrap();
        let r = Tensor::from_vec(coeff.clone(), vec![dim]).unwrap();
        a.zero_grad();
        f_c.scale(&gate)
            .unwrap()
            .mul(&r)
            .unwrap()
            .sum()
            .backward()
            .unwrap();
        let auto = a.grad().unwrap();

        // analytic: full mixture gradient with dL/dh masked to argmax
        let p = edge_probabilities(&a_data).unwrap();
        let z: Vec<f64> = (0..k).map(|m| (p[m].ln() + noise[m]) / tau).collect();
        let h = {
            let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
            let s: f64 = exps.iter().sum();
            exps.iter().map(|e| e / s).collect::<Vec<f64>>()
        };
        let g_c: f64 = branches[c].iter().zip(&coeff).map(|(b, r)| b * r).sum();
        for j in 0..k {
            let mut dh_da = 0.0;
            for m in 0..k {
                let dh_dz = h[c] * (if m == c { 1.0 } else { 0.0 } - h[m]);
                let dz_da = (if m == j { 1.0 } else { 0.0 } - p[j]) / tau;
                dh_da += dh_dz * dz_da;
            }
            let analytic = g_c * dh_da;
            worst_grad = worst_grad.max((auto[j] - analytic).abs());
        }
    }

    // forward equality and the factor-K evaluation count on a supernet
    let spec = SearchSpaceSpec::new(
        2,
        vec![
            CandidateOpKind::Identity,
            CandidateOpKind::SepConv3x3,
            CandidateOpKind::AvgPool3x3,
        ],
        1,
    );
    let k = spec.k() as u64;
    let plan = tiny_plan();
    let mut worst_fwd = 0.0_f64;
    let mut factor_exact = true;
    for seed in 0..10u64 {
        let net = Supernet::new(&spec, &plan, false, seed + 7000);
        let arch = ArchParams::init(&spec, seed + 7000, true);
        let data = synthetic_edges(4, 8, 0.3, seed + 7000).unwrap();
        let (xb, labels) = data.batch(&[0, 1, 2, 3]).unwrap();
        let noises = all_noises(&net, &spec, seed + 7000);
        let run = |mode| {
            reset_op_eval_count();
            let logits = net.forward(&xb, &arch, &noises, 1.5, mode).unwrap();
            let loss = classification_loss(&logits, &labels).unwrap().item();
            (loss, op_eval_count())
        };
        let (hard_loss, hard_evals) = run(SelectionMode::HardSampled);
        let (fast_loss, fast_evals) = run(SelectionMode::Accelerated);
        worst_fwd = worst_fwd.max((hard_loss - fast_loss).abs());
        factor_exact &= fast_evals > 0 && hard_evals == k * fast_evals;
    }

    let ok = worst_fwd <= 1e-12 && worst_grad <= 1e-10 && factor_exact;
    verdict(
        "criterion 5 (acceleration equivalence)",
        ok,
        &format!(
            "forward deviation {worst_fwd:.2e}, masked-gradient deviation {worst_grad:.2e}, factor-K evaluation savings {factor_exact}"
        ),
    );
}

/// Criterion 6 — derivation correctness: derive_cell matches the
/// brute-force per-node maximizer on 1000 random instances, including
/// deliberately tied probabilities.
#[test]
fn criterion_06_derivation_correctness() {
    let ops = [
        CandidateOpKind::Zeroize,
        CandidateOpKind::Identity,
        CandidateOpKind::SepConv3x3,
        CandidateOpKind::AvgPool3x3,
    ];
    let mut rng = subsystem_rng(77, "acceptance-derive");
    let mut agree = 0usize;
    let trials = 1000;
    for trial in 0..trials {
        let b = rng.gen_range(1..=3usize);
        let k = rng.gen_range(2..=4usize);
        let t = rng.gen_range(1..=2usize);
        let spec = SearchSpaceSpec::new(b, ops[..k].to_vec(), t);
        let n_edges = edge_list(&spec).len();
        let tie_heavy = trial % 4 == 0;
        let logits: Vec<Vec<f64>> = (0..n_edges)
            .map(|_| {
                (0..k)
                    .map(|_| {
                        if tie_heavy {
                            rng.gen_range(0..3) as f64 * 0.5
                        } else {
                            rng.gen_range(-2.0..2.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let probs: Vec<Vec<f64>> = logits
            .iter()
            .map(|a| edge_probabilities(a).unwrap())
            .collect();
        let omega = full_omega(k);
        let derived = derive_cell(&logits, &spec, &omega, CellType::Normal).unwrap();
        let oracle = common::brute_force_derive(&probs, &spec, &omega);
        if serde_json::to_string(&derived).unwrap() == serde_json::to_string(&oracle).unwrap() {
            agree += 1;
        }
    }
    let ok = agree == trials;
    verdict(
        "criterion 6 (derivation correctness)",
        ok,
        &format!("{agree}/{trials} brute-force agreements"),
    );
}

/// Criterion 7 — combinatorics: the closed-form sub-graph count matches
/// the published scale (B=4, K=8, T=2 -> 3,019,898,880) and exhaustive
/// enumeration reproduces the formula on every capped instance.
#[test]
fn criterion_07_combinatorics() {
    let spec_for = |b: usize, k: usize, t: usize| {
        SearchSpaceSpec::new(b, CandidateOpKind::DEFAULT_SET[..k].to_vec(), t)
    };
    let headline = count_subgraphs(&spec_for(4, 8, 2)).unwrap();
    let mut enumeration_matches = true;
    for (b, k, t) in [(1, 2, 1), (2, 2, 1), (2, 3, 1), (2, 2, 2), (3, 2, 1)] {
        let spec = spec_for(b, k, t);
        let cells = enumerate_cells(&spec, 10_000).unwrap();
        enumeration_matches &= cells.len() as u128 == count_subgraphs(&spec).unwrap();
    }
    let ok = headline == 3_019_898_880 && enumeration_matches;
    verdict(
        "criterion 7 (combinatorics)",
        ok,
        &format!("count(B=4,K=8,T=2) = {headline}, enumeration matches formula {enumeration_matches}"),
    );
}

/// Criterion 8 — end-to-end efficacy: on the 54-architecture benchmark,
/// search derives a cell in the oracle's top quartile for at least 4 of
/// 5 seeds, and the whole run stays under 30 minutes.
#[test]
fn criterion_08_end_to_end_efficacy() {
    let clock = Instant::now();
    let spec = SearchSpaceSpec::new(
        2,
        vec![
            CandidateOpKind::Zeroize,
            CandidateOpKind::Identity,
            CandidateOpKind::SepConv3x3,
        ],
        1,
    );
    // Lean scaffold so the cell's op and wiring choices, not the stem,
    // carry the task; noise level sized so conv vs identity vs zeroize
    // genuinely separate in the oracle table.
    let plan = NetworkPlan {
        init_channels: 2,
        ..NetworkPlan::desk_scale()
    };
    let data = synthetic_edges(128, 8, 0.5, 9).unwrap();

    // ground truth: every architecture trained under the oracle budget
    let cells = enumerate_cells(&spec, 10_000).unwrap();
    assert_eq!(cells.len(), 54);
    let (train, val) = data.split(0.5, 9).unwrap();
    let budget = TrainSettings {
        epochs: 100,
        batch_size: 32,
        seed: 1,
        ..TrainSettings::default()
    };
    let ranking = rank_all(&cells, &plan, &train, &val, &budget).unwrap();
    let quartile = ranking.len() / 4; // rank <= 13 of 54

    let omega = full_omega(spec.k());
    let mut hits = 0usize;
    let mut ranks = Vec::new();
    for seed in 101..=105u64 {
        // Default schedules scaled to the tiny regime: 400 epochs over 64
        // search samples is ~1600 architecture steps, so lr_A scales up
        // from its full-size default to cover a comparable logit range.
        let settings = SearchSettings {
            epochs: 400,
            batch_size: 16,
            lr_a: 0.005,
            seed,
            fixed_reduction: true,
            ..SearchSettings::default()
        };
        let out = run_search(&spec, &plan, &settings, &data).unwrap();
        let snap = out.snapshots.last().unwrap();
        let derived = derive_cell(&snap.normal, &spec, &omega, CellType::Normal).unwrap();
        let derived_json = serde_json::to_string(&derived).unwrap();
        let rank = ranking
            .iter()
            .find(|r| serde_json::to_string(&r.cell).unwrap() == derived_json)
            .expect("derived cell present in full enumeration")
            .rank;
        ranks.push(rank);
        if rank <= quartile {
            hits += 1;
        }
    }
    let elapsed = clock.elapsed().as_secs_f64();
    let ok = hits >= 4 && elapsed < 1800.0;
    verdict(
        "criterion 8 (end-to-end efficacy)",
        ok,
        &format!("derived ranks {ranks:?} (top quartile = {quartile} of 54), {hits}/5 hits, {elapsed:.0}s"),
    );
}

/// Criterion 9 — determinism: an identical config and seed reproduces
/// the metrics table byte for byte.
#[test]
fn criterion_09_determinism() {
    let spec = SearchSpaceSpec::new(
        2,
        vec![
            CandidateOpKind::Zeroize,
            CandidateOpKind::Identity,
            CandidateOpKind::SepConv3x3,
        ],
        1,
    );
    let plan = NetworkPlan::desk_scale();
    let data = synthetic_edges(64, 8, 0.3, 12).unwrap();
    let run = || {
        let settings = SearchSettings {
            epochs: 5,
            batch_size: 16,
            seed: 12,
            fixed_reduction: true,
            ..SearchSettings::default()
        };
        let out = run_search(&spec, &plan, &settings, &data).unwrap();
        metrics_csv(&out.metrics)
    };
    let first = run();
    let second = run();
    let ok = first.as_bytes() == second.as_bytes();
    verdict(
        "criterion 9 (determinism)",
        ok,
        &format!("metrics tables byte-identical: {ok} ({} bytes)", first.len()),
    );
}

/// Criterion 10 — fixed-reduction mode: the architecture-parameter
/// count drops by exactly the reduction-cell share, and forward shapes
/// follow the halving/doubling law of the network plan.
#[test]
fn criterion_10_fixed_reduction_mode() {
    let spec = SearchSpaceSpec::new(
        2,
        vec![
            CandidateOpKind::Zeroize,
            CandidateOpKind::Identity,
            CandidateOpKind::SepConv3x3,
        ],
        1,
    );
    let n_edges = edge_list(&spec).len();
    let with_reduction = ArchParams::init(&spec, 0, true);
    let frc_only = ArchParams::init(&spec, 0, false);
    let count = |a: &ArchParams| a.all().iter().map(Tensor::len).sum::<usize>();
    let full = count(&with_reduction);
    let frc = count(&frc_only);
    let share_exact = full == 2 * n_edges * spec.k() && frc == n_edges * spec.k();

    let plan = NetworkPlan::desk_scale();
    let net = Supernet::new(&spec, &plan, true, 3);
    let arch = ArchParams::init(&spec, 3, false);
    let data = synthetic_edges(2, 8, 0.3, 3).unwrap();
    let (x, _) = data.batch(&[0, 1]).unwrap();
    let noises = net.zero_noises();
    let (_, shapes) = net
        .forward_trace(&x, &arch, &noises, 1.0, SelectionMode::Accelerated)
        .unwrap();
    // stem emits B*C = 8 channels at 8x8; each reduction halves the grid
    // and doubles the per-node width
    let expected = vec![
        vec![2, 8, 8, 8],
        vec![2, 16, 4, 4],
        vec![2, 16, 4, 4],
        vec![2, 32, 2, 2],
        vec![2, 32, 2, 2],
    ];
    let shape_law = shapes == expected;

    let ok = share_exact && shape_law;
    verdict(
        "criterion 10 (fixed reduction mode)",
        ok,
        &format!(
            "A-parameter scalars {full} -> {frc} (edges {n_edges}, K {}), shape law {shape_law}",
            spec.k()
        ),
    );
}
