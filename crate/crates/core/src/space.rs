//! DAG cell bookkeeping: node/edge enumeration, the learnable per-edge
//! logit vectors, and the size of the derivable-architecture space.
//!
//! Node indexing convention (0-based): nodes 0 and 1 are the two cell
//! inputs, nodes 2..2+B are the computational nodes, and the cell output
//! is the channel concatenation of the computational nodes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::CandidateOpKind;
use crate::rng::subsystem_rng;
use crate::tensor::Tensor;

pub const CELL_INPUTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpaceSpec {
    /// B: computational nodes per cell.
    pub num_nodes: usize,
    /// Candidate operations eligible on every edge.
    pub candidates: Vec<CandidateOpKind>,
    /// T: retained inputs per node in the derived cell.
    pub retained_inputs: usize,
}

impl SearchSpaceSpec {
    pub fn new(
        num_nodes: usize,
        candidates: Vec<CandidateOpKind>,
        retained_inputs: usize,
    ) -> SearchSpaceSpec {
        SearchSpaceSpec {
            num_nodes,
            candidates,
            retained_inputs,
        }
    }

    /// K: candidate count.
    pub fn k(&self) -> usize {
        self.candidates.len()
    }

    /// Total node count including the two inputs and the output node.
    pub fn total_nodes(&self) -> usize {
        self.num_nodes + CELL_INPUTS + 1
    }

    /// Predecessors of computational node `i` (absolute index >= 2).
    pub fn predecessors(&self, i: usize) -> usize {
        i
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellType {
    Normal,
    Reduction,
}

/// How an edge combines its candidates during a supernet forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Straight-through hard sample: every candidate is evaluated, the
    /// one-hot mask keeps exactly one in the forward value.
    HardSampled,
    /// Full softmax mixture weighted by the relaxed sample.
    Relaxed,
    /// Hard sample where only the selected candidate is evaluated and
    /// only its gradient coordinate reaches the logits.
    Accelerated,
}

impl SelectionMode {
    pub fn parse(s: &str) -> Result<SelectionMode> {
        match s {
            "hard_sampled" => Ok(SelectionMode::HardSampled),
            "relaxed" => Ok(SelectionMode::Relaxed),
            "accelerated" => Ok(SelectionMode::Accelerated),
            other => Err(Error::UnknownMode(other.to_string())),
        }
    }
}

/// Deterministic edge ordering: lexicographic by (target, source).
/// Edge (i, j) feeds node i from node j.
pub fn edge_list(spec: &SearchSpaceSpec) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in CELL_INPUTS..CELL_INPUTS + spec.num_nodes {
        for j in 0..i {
            edges.push((i, j));
        }
    }
    edges
}

pub fn num_edges(num_nodes: usize) -> usize {
    (CELL_INPUTS..CELL_INPUTS + num_nodes).sum()
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}

/// Number of distinct derivable cells: per computational node, choose T
/// of its predecessors and one of K ops per chosen edge.
pub fn count_subgraphs(spec: &SearchSpaceSpec) -> Result<u128> {
    let k = spec.k() as u128;
    let t = spec.retained_inputs as u128;
    let mut total: u128 = 1;
    for i in CELL_INPUTS..CELL_INPUTS + spec.num_nodes {
        let p = spec.predecessors(i) as u128;
        if t > p {
            return Err(Error::RetainTooLarge {
                t: spec.retained_inputs,
                preds: p as usize,
                node: i,
            });
        }
        total *= binomial(p, t) * k.pow(t as u32);
    }
    Ok(total)
}

/// The learnable architecture logits: one K-vector per edge per cell
/// type, shared by every cell instance of that type in the network.
pub struct ArchParams {
    pub normal: Vec<Tensor>,
    /// Absent when the reduction cell is fixed (FRC mode).
    pub reduction: Option<Vec<Tensor>>,
    pub k: usize,
}

impl ArchParams {
    /// Small random init so derivation on an untrained A has no exact ties.
    pub fn init(spec: &SearchSpaceSpec, seed: u64, with_reduction: bool) -> ArchParams {
        let mut rng = subsystem_rng(seed, "arch-params");
        let k = spec.k();
        let n_edges = edge_list(spec).len();
        let mut make = |tag: f64| -> Vec<Tensor> {
            (0..n_edges)
                .map(|_| {
                    let data: Vec<f64> =
                        (0..k).map(|_| rng.gen_range(-1e-3..1e-3) * tag).collect();
                    Tensor::param(data, vec![k]).expect("shape")
                })
                .collect()
        };
        ArchParams {
            normal: make(1.0),
            reduction: if with_reduction { Some(make(1.0)) } else { None },
            k,
        }
    }

    pub fn for_type(&self, ty: CellType) -> Option<&[Tensor]> {
        match ty {
            CellType::Normal => Some(&self.normal),
            CellType::Reduction => self.reduction.as_deref(),
        }
    }

    /// All logit tensors, normal first; what the A-optimizer updates.
    pub fn all(&self) -> Vec<Tensor> {
        let mut v = self.normal.clone();
        if let Some(r) = &self.reduction {
            v.extend(r.iter().cloned());
        }
        v
    }

    pub fn zero_grads(&self) {
        for t in self.all() {
            t.zero_grad();
        }
    }

    pub fn snapshot(&self) -> ArchSnapshot {
        ArchSnapshot {
            k: self.k,
            normal: self.normal.iter().map(|t| t.to_vec()).collect(),
            reduction: self
                .reduction
                .as_ref()
                .map(|r| r.iter().map(|t| t.to_vec()).collect()),
        }
    }

    pub fn from_snapshot(s: &ArchSnapshot) -> Result<ArchParams> {
        let lift = |vs: &Vec<Vec<f64>>| -> Result<Vec<Tensor>> {
            vs.iter()
                .map(|v| Tensor::param(v.clone(), vec![v.len()]))
                .collect()
        };
        Ok(ArchParams {
            normal: lift(&s.normal)?,
            reduction: s.reduction.as_ref().map(lift).transpose()?,
            k: s.k,
        })
    }
}

/// Plain-data image of the logits, for JSON snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSnapshot {
    pub k: usize,
    pub normal: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reduction: Option<Vec<Vec<f64>>>,
}
