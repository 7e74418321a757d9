//! Ground truth by exhaustion: enumerate every derivable cell in a tiny
//! search space, train each one under an identical budget, and rank
//! them by validation loss. Also hosts the chi-square check of the
//! sampler's marginal law.

use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::Dataset;
use crate::derive::{DerivedCell, DerivedEdge};
use crate::engine::{train_derived, TrainSettings};
use crate::error::{Error, Result};
use crate::net::{DerivedNet, NetworkPlan};
use crate::rng::subsystem_rng;
use crate::sampler::{gumbel_argmax, sample_gumbel};
use crate::space::{count_subgraphs, CellType, SearchSpaceSpec, CELL_INPUTS};

pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000;

/// Lexicographic T-combinations of 0..n.
fn combinations(n: usize, t: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(t);
    fn rec(start: usize, n: usize, t: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == t {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, t, cur, out);
            cur.pop();
        }
    }
    rec(0, n, t, &mut cur, &mut out);
    out
}

/// Complete, duplicate-free enumeration of every derivable cell, in
/// deterministic order (per node: sources lexicographic, then op tuples
/// in base-K counter order).
pub fn enumerate_cells(spec: &SearchSpaceSpec, cap: u128) -> Result<Vec<DerivedCell>> {
    let total = count_subgraphs(spec)?;
    if total > cap {
        return Err(Error::EnumerationCapExceeded { count: total, cap });
    }
    let k = spec.k();
    let t = spec.retained_inputs;

    // per computational node: all (sources, ops) assignments
    let mut per_node: Vec<Vec<Vec<DerivedEdge>>> = Vec::new();
    for node in 0..spec.num_nodes {
        let preds = CELL_INPUTS + node;
        let mut choices = Vec::new();
        for combo in combinations(preds, t) {
            let mut ops = vec![0usize; t];
            loop {
                choices.push(
                    combo
                        .iter()
                        .zip(&ops)
                        .map(|(&src, &op)| DerivedEdge {
                            src,
                            op: spec.candidates[op],
                        })
                        .collect::<Vec<_>>(),
                );
                // increment the base-K op counter
                let mut pos = t;
                loop {
                    if pos == 0 {
                        break;
                    }
                    pos -= 1;
                    ops[pos] += 1;
                    if ops[pos] < k {
                        break;
                    }
                    ops[pos] = 0;
                }
                if ops.iter().all(|&o| o == 0) {
                    break;
                }
            }
        }
        per_node.push(choices);
    }

    // cartesian product across nodes
    let mut cells = Vec::with_capacity(total as usize);
    let mut idx = vec![0usize; spec.num_nodes];
    loop {
        let nodes: Vec<Vec<DerivedEdge>> = idx
            .iter()
            .enumerate()
            .map(|(n, &c)| per_node[n][c].clone())
            .collect();
        cells.push(DerivedCell {
            cell_type: CellType::Normal,
            num_nodes: spec.num_nodes,
            retained: t,
            nodes,
        });
        let mut pos = spec.num_nodes;
        loop {
            if pos == 0 {
                return Ok(cells);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < per_node[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
        if idx.iter().all(|&c| c == 0) {
            return Ok(cells);
        }
    }
}

#[derive(Debug, Clone)]
pub struct RankedCell {
    /// Index into the enumeration order.
    pub cell_id: usize,
    pub cell: DerivedCell,
    pub val_loss: f64,
    pub val_acc: f64,
    /// 1-based, ascending validation loss.
    pub rank: usize,
}

/// Train every cell from an identical init policy for the fixed budget
/// on `train`, evaluate on `val`, and sort ascending by validation
/// loss (ties broken by enumeration index). Training divergence is
/// recorded as infinite loss, not a failure. Cells train in parallel;
/// results merge deterministically by index.
pub fn rank_all(
    cells: &[DerivedCell],
    plan: &NetworkPlan,
    train: &Dataset,
    val: &Dataset,
    budget: &TrainSettings,
) -> Result<Vec<RankedCell>> {
    let mut results: Vec<(usize, DerivedCell, f64, f64)> = cells
        .par_iter()
        .enumerate()
        .map(|(id, cell)| {
            let outcome = DerivedNet::build(cell, None, plan, true, budget.seed)
                .and_then(|net| train_derived(&net, train, Some(val), budget));
            let (loss, acc) = match outcome {
                Ok(report) => (report.final_val_loss, report.final_val_acc),
                Err(Error::NonFiniteLoss { .. }) => (f64::INFINITY, 0.0),
                Err(e) => return Err(e),
            };
            Ok((id, cell.clone(), loss, acc))
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    Ok(results
        .into_iter()
        .enumerate()
        .map(|(i, (cell_id, cell, val_loss, val_acc))| RankedCell {
            cell_id,
            cell,
            val_loss,
            val_acc,
            rank: i + 1,
        })
        .collect())
}

pub const RANKING_HEADER: &str = "cell_id,cell_json,val_loss,val_acc,rank";

fn csv_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

pub fn ranking_csv(ranking: &[RankedCell]) -> Result<String> {
    let mut out = String::from(RANKING_HEADER);
    out.push('\n');
    for r in ranking {
        let json = serde_json::to_string(&r.cell)?;
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{}\n",
            r.cell_id,
            csv_quote(&json),
            r.val_loss,
            r.val_acc,
            r.rank
        ));
    }
    Ok(out)
}

/// Chi-square comparison of empirical Gumbel-Max selection frequencies
/// against softmax of the logits.
#[derive(Debug, Clone)]
pub struct ChiSquareReport {
    pub counts: Vec<u64>,
    pub expected: Vec<f64>,
    pub statistic: f64,
    pub p_value: f64,
}

pub fn validate_marginals(logits: &[f64], draws: u64, seed: u64) -> Result<ChiSquareReport> {
    let k = logits.len();
    let probs = crate::sampler::edge_probabilities(logits)?;
    let mut rng = subsystem_rng(seed, "marginal-check");
    let mut counts = vec![0u64; k];
    for _ in 0..draws {
        let noise = sample_gumbel(k, &mut rng);
        counts[gumbel_argmax(logits, &noise)] += 1;
    }
    let expected: Vec<f64> = probs.iter().map(|p| p * draws as f64).collect();
    let statistic: f64 = counts
        .iter()
        .zip(&expected)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&c, &e)| (c as f64 - e).powi(2) / e)
        .sum();
    let p_value = if k > 1 {
        let dist = ChiSquared::new((k - 1) as f64).expect("positive dof");
        1.0 - dist.cdf(statistic)
    } else {
        1.0
    };
    Ok(ChiSquareReport {
        counts,
        expected,
        statistic,
        p_value,
    })
}

/// Spearman rank correlation between two equal-length score vectors.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &p in &idx[i..=j] {
                r[p] = avg;
            }
            i = j + 1;
        }
        r
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}
