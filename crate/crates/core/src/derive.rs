//! Discrete architecture extraction from learned logits, plus JSON/DOT
//! export of derived cells.
//!
//! Derivation: per edge, importance = max over the allowed candidate
//! index set of its probability; per node, keep the T most important
//! incoming edges; per kept edge, use the argmax candidate. Ties break
//! to the lower source index, then the lower candidate index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::CandidateOpKind;
use crate::sampler::edge_probabilities;
use crate::space::{edge_list, CellType, SearchSpaceSpec, CELL_INPUTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedEdge {
    /// Source node (absolute index; 0 and 1 are the cell inputs).
    pub src: usize,
    pub op: CandidateOpKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedCell {
    #[serde(rename = "type")]
    pub cell_type: CellType,
    #[serde(rename = "B")]
    pub num_nodes: usize,
    #[serde(rename = "T")]
    pub retained: usize,
    /// Per computational node, exactly T (source, op) pairs.
    pub nodes: Vec<Vec<DerivedEdge>>,
}

impl DerivedCell {
    pub fn validate(&self) -> Result<()> {
        if self.nodes.len() != self.num_nodes {
            return Err(Error::Config {
                field: "nodes".into(),
                message: format!(
                    "expected {} computational nodes, got {}",
                    self.num_nodes,
                    self.nodes.len()
                ),
            });
        }
        for (n, picks) in self.nodes.iter().enumerate() {
            let node_idx = n + CELL_INPUTS;
            if picks.len() != self.retained {
                return Err(Error::Config {
                    field: "nodes".into(),
                    message: format!(
                        "node {node_idx} has {} edges, expected T={}",
                        picks.len(),
                        self.retained
                    ),
                });
            }
            for e in picks {
                if e.src >= node_idx {
                    return Err(Error::Config {
                        field: "nodes".into(),
                        message: format!(
                            "node {node_idx} uses non-preceding source {}",
                            e.src
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Derive the discrete cell from per-edge probability vectors given in
/// `edge_list` order. `omega` is the allowed candidate index set.
pub fn derive_cell_from_probs(
    probs: &[Vec<f64>],
    spec: &SearchSpaceSpec,
    omega: &[usize],
    cell_type: CellType,
) -> Result<DerivedCell> {
    let t = spec.retained_inputs;
    assert!(!omega.is_empty(), "omega must be non-empty");
    let expected = edge_list(spec).len();
    if probs.len() != expected {
        return Err(Error::Config {
            field: "arch_params".into(),
            message: format!(
                "expected {expected} edge probability vectors for this space, got {}",
                probs.len()
            ),
        });
    }
    if let Some(bad) = probs.iter().find(|p| p.len() != spec.k()) {
        return Err(Error::Config {
            field: "arch_params".into(),
            message: format!("edge vector has {} entries, expected K={}", bad.len(), spec.k()),
        });
    }
    let mut nodes = Vec::with_capacity(spec.num_nodes);
    let mut offset = 0;
    for i in CELL_INPUTS..CELL_INPUTS + spec.num_nodes {
        let preds = spec.predecessors(i);
        if t > preds {
            return Err(Error::RetainTooLarge { t, preds, node: i });
        }
        let edge_probs = &probs[offset..offset + preds];
        offset += preds;

        // (importance, source) per incoming edge
        let mut scored: Vec<(f64, usize)> = edge_probs
            .iter()
            .enumerate()
            .map(|(src, p)| {
                let imp = omega
                    .iter()
                    .map(|&k| p[k])
                    .fold(f64::NEG_INFINITY, f64::max);
                (imp, src)
            })
            .collect();
        // descending importance; stable sort keeps lower src first on ties
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut kept: Vec<usize> = scored[..t].iter().map(|&(_, src)| src).collect();
        kept.sort_unstable();

        let mut picks = Vec::with_capacity(t);
        for src in kept {
            let p = &edge_probs[src];
            let mut best = omega[0];
            for &k in omega {
                if p[k] > p[best] {
                    best = k;
                }
            }
            picks.push(DerivedEdge {
                src,
                op: spec.candidates[best],
            });
        }
        if picks.iter().all(|e| e.op == CandidateOpKind::Zeroize) {
            eprintln!(
                "warning: derived node {i} retains only zeroize; its output is constant zero"
            );
        }
        nodes.push(picks);
    }
    Ok(DerivedCell {
        cell_type,
        num_nodes: spec.num_nodes,
        retained: t,
        nodes,
    })
}

/// Derive from raw logit vectors (one per edge, `edge_list` order).
pub fn derive_cell(
    logits: &[Vec<f64>],
    spec: &SearchSpaceSpec,
    omega: &[usize],
    cell_type: CellType,
) -> Result<DerivedCell> {
    let probs: Result<Vec<Vec<f64>>> =
        logits.iter().map(|a| edge_probabilities(a)).collect();
    derive_cell_from_probs(&probs?, spec, omega, cell_type)
}

/// All candidate indices: the default Omega.
pub fn full_omega(k: usize) -> Vec<usize> {
    (0..k).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Dot,
}

impl ExportFormat {
    pub fn parse(s: &str) -> Result<ExportFormat> {
        match s {
            "json" => Ok(ExportFormat::Json),
            "dot" => Ok(ExportFormat::Dot),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

/// Render a derived cell. JSON round-trips through `import_cell`; DOT is
/// a digraph with one node per feature tensor and one labeled edge per
/// retained connection.
pub fn export_cell(cell: &DerivedCell, format: ExportFormat) -> Result<String> {
    match format {
        ExportFormat::Json => Ok(format!("{}\n", serde_json::to_string_pretty(cell)?)),
        ExportFormat::Dot => {
            let b = cell.num_nodes;
            let total = b + CELL_INPUTS + 1;
            let mut out = String::new();
            out.push_str("digraph cell {\n  rankdir=LR;\n");
            for i in 0..total {
                let (label, shape) = if i < CELL_INPUTS {
                    (format!("I{} (input)", i + 1), "box")
                } else if i < total - 1 {
                    (format!("I{}", i + 1), "ellipse")
                } else {
                    (format!("I{} (concat)", i + 1), "box")
                };
                out.push_str(&format!("  n{i} [label=\"{label}\", shape={shape}];\n"));
            }
            for (n, picks) in cell.nodes.iter().enumerate() {
                let dst = n + CELL_INPUTS;
                for e in picks {
                    out.push_str(&format!(
                        "  n{} -> n{dst} [label=\"{}\"];\n",
                        e.src,
                        e.op.name()
                    ));
                }
                out.push_str(&format!("  n{dst} -> n{} [style=dashed];\n", total - 1));
            }
            out.push_str("}\n");
            Ok(out)
        }
    }
}

pub fn import_cell(json: &str) -> Result<DerivedCell> {
    let cell: DerivedCell = serde_json::from_str(json)?;
    cell.validate()?;
    Ok(cell)
}
