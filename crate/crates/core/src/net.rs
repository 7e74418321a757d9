//! Cell-to-network assembly: the weight-sharing supernet used during
//! search, networks built from derived cells for final training, and
//! the hand-designed fixed reduction block.
//!
//! Stacking follows the CIFAR-style plan: a 3x3 conv head, three blocks
//! of N normal cells with a reduction cell between blocks, then global
//! average pooling and an affine classifier. Every cell receives the
//! outputs of the two preceding cells; per-node channels double at each
//! reduction stage while the spatial size halves.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::derive::DerivedCell;
use crate::error::{Error, Result};
use crate::ops::OpInstance;
use crate::sampler::{gumbel_argmax, gumbel_softmax_t, straight_through_select};
use crate::space::{edge_list, ArchParams, CellType, SearchSpaceSpec, SelectionMode, CELL_INPUTS};
use crate::tensor::{concat_channels, max_pool2d, Conv2dSpec, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkPlan {
    pub in_channels: usize,
    pub num_classes: usize,
    /// C: per-node channels in the first stage.
    pub init_channels: usize,
    /// N: normal cells per block (three blocks total).
    pub cells_per_block: usize,
}

impl NetworkPlan {
    pub fn desk_scale() -> NetworkPlan {
        NetworkPlan {
            in_channels: 1,
            num_classes: 4,
            init_channels: 4,
            cells_per_block: 1,
        }
    }
}

fn init_weight(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha12Rng) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::param(data, shape).expect("consistent shape")
}

fn affine_pair(c: usize, affine: bool) -> Option<(Tensor, Tensor)> {
    affine.then(|| {
        (
            Tensor::param(vec![1.0; c], vec![c]).expect("shape"),
            Tensor::param(vec![0.0; c], vec![c]).expect("shape"),
        )
    })
}

fn norm(x: &Tensor, affine: &Option<(Tensor, Tensor)>) -> Result<Tensor> {
    match affine {
        Some((g, b)) => x.channel_norm(Some((g, b))),
        None => x.channel_norm(None),
    }
}

fn push_affine(ps: &mut Vec<Tensor>, affine: &Option<(Tensor, Tensor)>) {
    if let Some((g, b)) = affine {
        ps.push(g.clone());
        ps.push(b.clone());
    }
}

/// Adapts a cell input to the cell's node channel count (1x1 conv), or
/// additionally halves its spatial size (factorized reduce) when the
/// input predates the latest reduction.
enum Preprocess {
    Conv1x1 {
        w: Tensor,
        affine: Option<(Tensor, Tensor)>,
    },
    FactorizedReduce {
        w_even: Tensor,
        w_odd: Tensor,
        affine: Option<(Tensor, Tensor)>,
    },
}

impl Preprocess {
    fn new(c_in: usize, c_out: usize, reduce: bool, affine: bool, rng: &mut ChaCha12Rng) -> Self {
        if reduce {
            let half = c_out / 2;
            Preprocess::FactorizedReduce {
                w_even: init_weight(vec![half.max(1), c_in, 1, 1], c_in, rng),
                w_odd: init_weight(vec![c_out - half, c_in, 1, 1], c_in, rng),
                affine: affine_pair(c_out, affine),
            }
        } else {
            Preprocess::Conv1x1 {
                w: init_weight(vec![c_out, c_in, 1, 1], c_in, rng),
                affine: affine_pair(c_out, affine),
            }
        }
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Preprocess::Conv1x1 { w, affine } => {
                let y = x.relu().conv2d(w, Conv2dSpec::simple(1, 1, 0))?;
                norm(&y, affine)
            }
            Preprocess::FactorizedReduce { w_even, w_odd, affine } => {
                let spec = Conv2dSpec::simple(1, 2, 0);
                let a = x.relu();
                let even = a.conv2d(w_even, spec)?;
                let odd = a.shift_up_left()?.conv2d(w_odd, spec)?;
                norm(&concat_channels(&[even, odd])?, affine)
            }
        }
    }

    fn parameters(&self) -> Vec<Tensor> {
        let mut ps = Vec::new();
        match self {
            Preprocess::Conv1x1 { w, affine } => {
                ps.push(w.clone());
                push_affine(&mut ps, affine);
            }
            Preprocess::FactorizedReduce { w_even, w_odd, affine } => {
                ps.push(w_even.clone());
                ps.push(w_odd.clone());
                push_affine(&mut ps, affine);
            }
        }
        ps
    }
}

/// One supernet cell: every candidate op instantiated on every edge.
pub struct SupernetCell {
    pub cell_type: CellType,
    pre0: Preprocess,
    pre1: Preprocess,
    /// edge_list order; inner vec holds the K candidates.
    edges: Vec<Vec<OpInstance>>,
    num_nodes: usize,
}

impl SupernetCell {
    #[allow(clippy::too_many_arguments)]
    fn new(
        spec: &SearchSpaceSpec,
        cell_type: CellType,
        c_pp: usize,
        c_p: usize,
        c_node: usize,
        reduce_pp: bool,
        rng: &mut ChaCha12Rng,
    ) -> SupernetCell {
        let pre0 = Preprocess::new(c_pp, c_node, reduce_pp, false, rng);
        let pre1 = Preprocess::new(c_p, c_node, false, false, rng);
        let edges = edge_list(spec)
            .into_iter()
            .map(|(_, j)| {
                let stride = if cell_type == CellType::Reduction && j < CELL_INPUTS {
                    2
                } else {
                    1
                };
                spec.candidates
                    .iter()
                    .map(|&k| OpInstance::new(k, c_node, stride, false, rng))
                    .collect()
            })
            .collect();
        SupernetCell {
            cell_type,
            pre0,
            pre1,
            edges,
            num_nodes: spec.num_nodes,
        }
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut ps = self.pre0.parameters();
        ps.extend(self.pre1.parameters());
        for edge in &self.edges {
            for op in edge {
                ps.extend(op.parameters());
            }
        }
        ps
    }

    /// One forward pass under sampled/relaxed candidate selection.
    /// `arch[e]` and `noises[e]` index edges in `edge_list` order.
    pub fn forward(
        &self,
        s0: &Tensor,
        s1: &Tensor,
        arch: &[Tensor],
        noises: &[Vec<f64>],
        tau: f64,
        mode: SelectionMode,
    ) -> Result<Tensor> {
        let mut nodes: Vec<Tensor> = vec![self.pre0.apply(s0)?, self.pre1.apply(s1)?];
        let mut edge_idx = 0;
        for i in CELL_INPUTS..CELL_INPUTS + self.num_nodes {
            let mut acc: Option<Tensor> = None;
            for j in 0..i {
                let contrib = self.edge_output(
                    edge_idx,
                    &nodes[j],
                    &arch[edge_idx],
                    &noises[edge_idx],
                    tau,
                    mode,
                )?;
                acc = Some(match acc {
                    Some(a) => a.add(&contrib)?,
                    None => contrib,
                });
                edge_idx += 1;
            }
            nodes.push(acc.expect("every node has predecessors"));
        }
        concat_channels(&nodes[CELL_INPUTS..])
    }

    fn edge_output(
        &self,
        edge: usize,
        x: &Tensor,
        a: &Tensor,
        noise: &[f64],
        tau: f64,
        mode: SelectionMode,
    ) -> Result<Tensor> {
        let ops = &self.edges[edge];
        match mode {
            SelectionMode::Relaxed => {
                let soft = gumbel_softmax_t(a, noise, tau)?;
                let mut acc: Option<Tensor> = None;
                for (k, op) in ops.iter().enumerate() {
                    let y = op.apply(x)?.scale(&soft.select(k))?;
                    acc = Some(match acc {
                        Some(t) => t.add(&y)?,
                        None => y,
                    });
                }
                Ok(acc.expect("non-empty candidate set"))
            }
            SelectionMode::HardSampled => {
                let (_, st) = straight_through_select(a, noise, tau)?;
                let mut acc: Option<Tensor> = None;
                for (k, op) in ops.iter().enumerate() {
                    let y = op.apply(x)?.scale(&st.select(k))?;
                    acc = Some(match acc {
                        Some(t) => t.add(&y)?,
                        None => y,
                    });
                }
                Ok(acc.expect("non-empty candidate set"))
            }
            SelectionMode::Accelerated => {
                // single candidate evaluated; gradient reaches the logits
                // only through the argmax coordinate of the relaxed sample
                let soft = gumbel_softmax_t(a, noise, tau)?;
                let chosen = gumbel_argmax(&a.to_vec(), noise);
                let gate = soft.straight_through_unit(chosen);
                ops[chosen].apply(x)?.scale(&gate)
            }
        }
    }
}

/// The hand-designed reduction block: a 1x3-then-3x1 strided conv branch
/// in parallel with a 3x3 stride-2 max pool, concatenated and projected
/// to the target width by a 1x1 conv.
pub struct FixedReductionCell {
    w_1x3: Tensor,
    w_3x1: Tensor,
    w_proj: Tensor,
    affine_mid: Option<(Tensor, Tensor)>,
    affine_out: Option<(Tensor, Tensor)>,
    pub c_in: usize,
    pub c_out: usize,
}

impl FixedReductionCell {
    pub fn new(c_in: usize, c_out: usize, affine: bool, rng: &mut ChaCha12Rng) -> Self {
        let c_mid = c_out / 2;
        FixedReductionCell {
            w_1x3: init_weight(vec![c_mid, c_in, 1, 3], c_in * 3, rng),
            w_3x1: init_weight(vec![c_mid, c_mid, 3, 1], c_mid * 3, rng),
            w_proj: init_weight(vec![c_out, c_mid + c_in, 1, 1], c_mid + c_in, rng),
            affine_mid: affine_pair(c_mid, affine),
            affine_out: affine_pair(c_out, affine),
            c_in,
            c_out,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let a = x.relu();
        let conv = a.conv2d(
            &self.w_1x3,
            Conv2dSpec {
                kernel: (1, 3),
                stride: (1, 2),
                padding: (0, 1),
                dilation: (1, 1),
                groups: 1,
            },
        )?;
        let conv = conv.conv2d(
            &self.w_3x1,
            Conv2dSpec {
                kernel: (3, 1),
                stride: (2, 1),
                padding: (1, 0),
                dilation: (1, 1),
                groups: 1,
            },
        )?;
        let conv = norm(&conv, &self.affine_mid)?;
        let pooled = max_pool2d(x, 3, 2, 1)?;
        let y = concat_channels(&[conv, pooled])?;
        let y = y.conv2d(&self.w_proj, Conv2dSpec::simple(1, 1, 0))?;
        norm(&y, &self.affine_out)
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut ps = vec![self.w_1x3.clone(), self.w_3x1.clone(), self.w_proj.clone()];
        push_affine(&mut ps, &self.affine_mid);
        push_affine(&mut ps, &self.affine_out);
        ps
    }
}

/// One derived (discrete) cell instance with its own weights.
pub struct DerivedCellInstance {
    pub cell_type: CellType,
    pre0: Preprocess,
    pre1: Preprocess,
    /// Per computational node: T (source, op) pairs.
    node_ops: Vec<Vec<(usize, OpInstance)>>,
}

impl DerivedCellInstance {
    fn new(
        cell: &DerivedCell,
        c_pp: usize,
        c_p: usize,
        c_node: usize,
        reduce_pp: bool,
        affine: bool,
        rng: &mut ChaCha12Rng,
    ) -> DerivedCellInstance {
        let pre0 = Preprocess::new(c_pp, c_node, reduce_pp, affine, rng);
        let pre1 = Preprocess::new(c_p, c_node, false, affine, rng);
        let node_ops = cell
            .nodes
            .iter()
            .map(|picks| {
                picks
                    .iter()
                    .map(|e| {
                        let stride = if cell.cell_type == CellType::Reduction
                            && e.src < CELL_INPUTS
                        {
                            2
                        } else {
                            1
                        };
                        (e.src, OpInstance::new(e.op, c_node, stride, affine, rng))
                    })
                    .collect()
            })
            .collect();
        DerivedCellInstance {
            cell_type: cell.cell_type,
            pre0,
            pre1,
            node_ops,
        }
    }

    pub fn forward(&self, s0: &Tensor, s1: &Tensor) -> Result<Tensor> {
        let mut nodes: Vec<Tensor> = vec![self.pre0.apply(s0)?, self.pre1.apply(s1)?];
        for picks in &self.node_ops {
            let mut acc: Option<Tensor> = None;
            for (src, op) in picks {
                let y = op.apply(&nodes[*src])?;
                acc = Some(match acc {
                    Some(t) => t.add(&y)?,
                    None => y,
                });
            }
            nodes.push(acc.expect("derived node has at least one edge"));
        }
        concat_channels(&nodes[CELL_INPUTS..])
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut ps = self.pre0.parameters();
        ps.extend(self.pre1.parameters());
        for picks in &self.node_ops {
            for (_, op) in picks {
                ps.extend(op.parameters());
            }
        }
        ps
    }
}

enum NetCell<C> {
    Searchable(C),
    Fixed(FixedReductionCell),
}

/// Shared stem + cell chain + classifier scaffolding.
struct Scaffold<C> {
    stem_w: Tensor,
    stem_affine: Option<(Tensor, Tensor)>,
    cells: Vec<NetCell<C>>,
    fc_w: Tensor,
    fc_b: Tensor,
}

/// Per-cell channel layout computed from a plan.
struct CellLayout {
    cell_type: CellType,
    c_pp: usize,
    c_p: usize,
    c_node: usize,
    reduce_pp: bool,
    fixed: bool,
}

fn layout(plan: &NetworkPlan, num_nodes: usize, fixed_reduction: bool) -> (usize, Vec<CellLayout>) {
    let b = num_nodes;
    let stem_out = b * plan.init_channels;
    let mut layouts = Vec::new();
    let mut c_node = plan.init_channels;
    let (mut c_pp, mut c_p) = (stem_out, stem_out);
    let mut reduce_prev = false;
    for stage in 0..3 {
        if stage > 0 {
            c_node *= 2;
            layouts.push(CellLayout {
                cell_type: CellType::Reduction,
                c_pp,
                c_p,
                c_node,
                reduce_pp: reduce_prev,
                fixed: fixed_reduction,
            });
            c_pp = c_p;
            c_p = b * c_node;
            reduce_prev = true;
        }
        for _ in 0..plan.cells_per_block {
            layouts.push(CellLayout {
                cell_type: CellType::Normal,
                c_pp,
                c_p,
                c_node,
                reduce_pp: reduce_prev,
                fixed: false,
            });
            c_pp = c_p;
            c_p = b * c_node;
            reduce_prev = false;
        }
    }
    (c_p, layouts)
}

impl<C> Scaffold<C> {
    fn build(
        plan: &NetworkPlan,
        num_nodes: usize,
        fixed_reduction: bool,
        affine: bool,
        rng: &mut ChaCha12Rng,
        mut make_cell: impl FnMut(&CellLayout, &mut ChaCha12Rng) -> C,
    ) -> Scaffold<C> {
        let b = num_nodes;
        let stem_out = b * plan.init_channels;
        let stem_w = init_weight(
            vec![stem_out, plan.in_channels, 3, 3],
            plan.in_channels * 9,
            rng,
        );
        let stem_affine = affine_pair(stem_out, affine);
        let (c_final, layouts) = layout(plan, num_nodes, fixed_reduction);
        let cells = layouts
            .iter()
            .map(|l| {
                if l.fixed {
                    NetCell::Fixed(FixedReductionCell::new(l.c_p, b * l.c_node, affine, rng))
                } else {
                    NetCell::Searchable(make_cell(l, rng))
                }
            })
            .collect();
        let fc_w = init_weight(vec![plan.num_classes, c_final], c_final, rng);
        let fc_b = Tensor::param(vec![0.0; plan.num_classes], vec![plan.num_classes])
            .expect("shape");
        Scaffold {
            stem_w,
            stem_affine,
            cells,
            fc_w,
            fc_b,
        }
    }

    fn stem(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.stem_w, Conv2dSpec::simple(3, 1, 1))?;
        norm(&y, &self.stem_affine)
    }

    fn classify(&self, features: &Tensor) -> Result<Tensor> {
        features.global_avg_pool()?.linear(&self.fc_w, &self.fc_b)
    }

    fn base_parameters(&self) -> Vec<Tensor> {
        let mut ps = vec![self.stem_w.clone()];
        push_affine(&mut ps, &self.stem_affine);
        for c in &self.cells {
            if let NetCell::Fixed(f) = c {
                ps.extend(f.parameters());
            }
        }
        ps.push(self.fc_w.clone());
        ps.push(self.fc_b.clone());
        ps
    }
}

fn with_cell_context(e: Error, idx: usize) -> Error {
    Error::ShapeMismatch {
        op: format!("cell {idx}"),
        details: e.to_string(),
    }
}

/// The over-parameterized search network: every candidate on every edge.
pub struct Supernet {
    pub spec: SearchSpaceSpec,
    pub plan: NetworkPlan,
    pub fixed_reduction: bool,
    scaffold: Scaffold<SupernetCell>,
}

impl Supernet {
    pub fn new(
        spec: &SearchSpaceSpec,
        plan: &NetworkPlan,
        fixed_reduction: bool,
        seed: u64,
    ) -> Supernet {
        let mut rng = crate::rng::subsystem_rng(seed, "supernet-weights");
        let scaffold = Scaffold::build(
            plan,
            spec.num_nodes,
            fixed_reduction,
            false,
            &mut rng,
            |l, rng| SupernetCell::new(spec, l.cell_type, l.c_pp, l.c_p, l.c_node, l.reduce_pp, rng),
        );
        Supernet {
            spec: spec.clone(),
            plan: plan.clone(),
            fixed_reduction,
            scaffold,
        }
    }

    pub fn num_cells(&self) -> usize {
        self.scaffold.cells.len()
    }

    pub fn num_searchable_cells(&self) -> usize {
        self.scaffold
            .cells
            .iter()
            .filter(|c| matches!(c, NetCell::Searchable(_)))
            .count()
    }

    /// All shared network weights W (excludes the architecture logits).
    pub fn parameters(&self) -> Vec<Tensor> {
        let mut ps = self.scaffold.base_parameters();
        for c in &self.scaffold.cells {
            if let NetCell::Searchable(cell) = c {
                ps.extend(cell.parameters());
            }
        }
        ps
    }

    /// Forward under per-cell Gumbel noise. `noises[cell][edge]` must
    /// cover every cell index, searched or fixed.
    pub fn forward(
        &self,
        x: &Tensor,
        arch: &ArchParams,
        noises: &[Vec<Vec<f64>>],
        tau: f64,
        mode: SelectionMode,
    ) -> Result<Tensor> {
        Ok(self.forward_trace(x, arch, noises, tau, mode)?.0)
    }

    /// Forward pass that also reports each cell's output shape.
    pub fn forward_trace(
        &self,
        x: &Tensor,
        arch: &ArchParams,
        noises: &[Vec<Vec<f64>>],
        tau: f64,
        mode: SelectionMode,
    ) -> Result<(Tensor, Vec<Vec<usize>>)> {
        let mut shapes = Vec::new();
        let mut s0 = self.scaffold.stem(x)?;
        let mut s1 = s0.clone();
        for (idx, cell) in self.scaffold.cells.iter().enumerate() {
            let out = match cell {
                NetCell::Fixed(f) => f.forward(&s1).map_err(|e| with_cell_context(e, idx))?,
                NetCell::Searchable(c) => {
                    let a = arch.for_type(c.cell_type).ok_or_else(|| Error::Config {
                        field: "arch_params".into(),
                        message: format!("no logits for {:?} cell {idx}", c.cell_type),
                    })?;
                    c.forward(&s0, &s1, a, &noises[idx], tau, mode)
                        .map_err(|e| with_cell_context(e, idx))?
                }
            };
            shapes.push(out.shape());
            s0 = s1;
            s1 = out;
        }
        Ok((self.scaffold.classify(&s1)?, shapes))
    }

    /// Zero-noise Gumbel draws for deterministic argmax evaluation.
    pub fn zero_noises(&self) -> Vec<Vec<Vec<f64>>> {
        let n_edges = edge_list(&self.spec).len();
        vec![vec![vec![0.0; self.spec.k()]; n_edges]; self.num_cells()]
    }
}

/// A trainable network assembled from derived cells.
pub struct DerivedNet {
    pub plan: NetworkPlan,
    scaffold: Scaffold<DerivedCellInstance>,
}

impl DerivedNet {
    /// `cell_reduction = None` uses the fixed reduction block.
    pub fn build(
        cell_normal: &DerivedCell,
        cell_reduction: Option<&DerivedCell>,
        plan: &NetworkPlan,
        affine: bool,
        seed: u64,
    ) -> Result<DerivedNet> {
        cell_normal.validate()?;
        if let Some(r) = cell_reduction {
            r.validate()?;
            if r.num_nodes != cell_normal.num_nodes {
                return Err(Error::Config {
                    field: "cell".into(),
                    message: "normal and reduction cells must have equal node counts".into(),
                });
            }
        }
        let mut rng = crate::rng::subsystem_rng(seed, "derived-weights");
        let scaffold = Scaffold::build(
            plan,
            cell_normal.num_nodes,
            cell_reduction.is_none(),
            affine,
            &mut rng,
            |l, rng| {
                let cell = match l.cell_type {
                    CellType::Normal => cell_normal,
                    CellType::Reduction => cell_reduction.expect("fixed handled by scaffold"),
                };
                DerivedCellInstance::new(cell, l.c_pp, l.c_p, l.c_node, l.reduce_pp, affine, rng)
            },
        );
        Ok(DerivedNet {
            plan: plan.clone(),
            scaffold,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(x)?.0)
    }

    /// Forward pass that also reports each cell's output shape.
    pub fn forward_trace(&self, x: &Tensor) -> Result<(Tensor, Vec<Vec<usize>>)> {
        let mut shapes = Vec::new();
        let mut s0 = self.scaffold.stem(x)?;
        let mut s1 = s0.clone();
        for (idx, cell) in self.scaffold.cells.iter().enumerate() {
            let out = match cell {
                NetCell::Fixed(f) => f.forward(&s1).map_err(|e| with_cell_context(e, idx))?,
                NetCell::Searchable(c) => c
                    .forward(&s0, &s1)
                    .map_err(|e| with_cell_context(e, idx))?,
            };
            shapes.push(out.shape());
            s0 = s1;
            s1 = out;
        }
        Ok((self.scaffold.classify(&s1)?, shapes))
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut ps = self.scaffold.base_parameters();
        for c in &self.scaffold.cells {
            if let NetCell::Searchable(cell) = c {
                ps.extend(cell.parameters());
            }
        }
        ps
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }
}
