//! Shared test oracles: central finite differences against reverse-mode
//! gradients, and an exhaustive cell-derivation maximizer.

#![allow(dead_code)]

use gdas_core::derive::{DerivedCell, DerivedEdge};
use gdas_core::space::{edge_list, CellType, SearchSpaceSpec, CELL_INPUTS};
use gdas_core::Tensor;

/// Worst relative error between the autodiff gradient of `loss_fn` at
/// the current parameter values and central finite differences,
/// coordinate by coordinate. `loss_fn` must rebuild the graph from the
/// parameters' current data on every call.
pub fn finite_diff_worst(params: &[Tensor], loss_fn: &dyn Fn() -> Tensor, eps: f64) -> f64 {
    for p in params {
        p.zero_grad();
    }
    loss_fn().backward().expect("backward on scalar loss");
    let grads: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().expect("parameter gradient"))
        .collect();

    let mut worst = 0.0_f64;
    for (p, grad) in params.iter().zip(&grads) {
        for i in 0..p.len() {
            let nudge = |delta: f64| {
                p.apply_update(|data, _| data[i] += delta);
            };
            nudge(eps);
            let plus = loss_fn().item();
            nudge(-2.0 * eps);
            let minus = loss_fn().item();
            nudge(eps); // restore
            let fd = (plus - minus) / (2.0 * eps);
            let denom = fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max((fd - grad[i]).abs() / denom);
        }
    }
    worst
}

/// As `finite_diff_worst`, but asserts the worst relative error stays
/// within `tol`.
pub fn finite_diff_check(
    params: &[Tensor],
    loss_fn: &dyn Fn() -> Tensor,
    eps: f64,
    tol: f64,
) -> f64 {
    let worst = finite_diff_worst(params, loss_fn, eps);
    assert!(
        worst <= tol,
        "worst finite-difference relative error {worst:.3e} exceeds tolerance {tol:.1e}"
    );
    worst
}

/// Exhaustive per-node maximization: over all T-subsets of predecessors
/// and all op assignments from omega, pick the choice maximizing the
/// product of the chosen ops' probabilities; ties resolved toward
/// lexicographically smaller (sources, ops) — matching the documented
/// tie-breaking (lower source, then lower candidate index).
pub fn brute_force_derive(
    probs: &[Vec<f64>],
    spec: &SearchSpaceSpec,
    omega: &[usize],
) -> DerivedCell {
    let edges = edge_list(spec);
    let edge_index = |i: usize, j: usize| edges.iter().position(|&e| e == (i, j)).unwrap();

    let mut nodes = Vec::new();
    for node in 0..spec.num_nodes {
        let i = CELL_INPUTS + node;
        let preds: Vec<usize> = (0..i).collect();
        let t = spec.retained_inputs;

        let mut best: Option<(f64, Vec<DerivedEdge>)> = None;
        let mut consider = |srcs: &[usize]| {
            // per source, the best omega candidate (ties to lower index)
            let mut score = 1.0;
            let mut picks = Vec::with_capacity(t);
            for &src in srcs {
                let p = &probs[edge_index(i, src)];
                let (best_k, best_p) = omega
                    .iter()
                    .map(|&k| (k, p[k]))
                    .fold(None::<(usize, f64)>, |acc, (k, pk)| match acc {
                        Some((_, bp)) if pk <= bp => acc,
                        _ => Some((k, pk)),
                    })
                    .unwrap();
                score *= best_p;
                picks.push(DerivedEdge {
                    src,
                    op: spec.candidates[best_k],
                });
            }
            let better = match &best {
                None => true,
                Some((bs, _)) => score > *bs, // exact ties keep the earlier (lexicographic) subset
            };
            if better {
                best = Some((score, picks));
            }
        };

        // lexicographic subsets of predecessors, size t
        fn subsets(
            start: usize,
            n: usize,
            t: usize,
            cur: &mut Vec<usize>,
            f: &mut dyn FnMut(&[usize]),
        ) {
            if cur.len() == t {
                f(cur);
                return;
            }
            for s in start..n {
                cur.push(s);
                subsets(s + 1, n, t, cur, f);
                cur.pop();
            }
        }
        let mut cur = Vec::new();
        subsets(0, preds.len(), t, &mut cur, &mut consider);
        nodes.push(best.unwrap().1);
    }
    DerivedCell {
        cell_type: CellType::Normal,
        num_nodes: spec.num_nodes,
        retained: spec.retained_inputs,
        nodes,
    }
}
