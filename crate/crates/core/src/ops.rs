//! The candidate function set applied on DAG edges.
//!
//! Eight operations by default: identity, zeroize, 3x3/5x5 depthwise
//! separable convs, their dilation-2 variants, and 3x3 average/max
//! pooling. Separable convs are ReLU -> depthwise -> pointwise ->
//! channel norm; dilated variants pad so a stride-1 output keeps the
//! input size. Identity at stride 2 is a factorized reduce (two 1x1
//! stride-2 convs on offset pixel grids, channel-concatenated).

use std::cell::Cell;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{avg_pool2d, concat_channels, max_pool2d, Conv2dSpec, Tensor};

thread_local! {
    /// Counts candidate-op forward evaluations on this thread; the
    /// acceleration trick is verified by comparing it across modes.
    static OP_EVALS: Cell<u64> = const { Cell::new(0) };
}

pub fn op_eval_count() -> u64 {
    OP_EVALS.with(|c| c.get())
}

pub fn reset_op_eval_count() {
    OP_EVALS.with(|c| c.set(0));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CandidateOpKind {
    #[serde(rename = "identity")]
    Identity,
    #[serde(rename = "zeroize")]
    Zeroize,
    #[serde(rename = "sep_conv_3x3")]
    SepConv3x3,
    #[serde(rename = "dil_sep_conv_3x3")]
    DilSepConv3x3,
    #[serde(rename = "sep_conv_5x5")]
    SepConv5x5,
    #[serde(rename = "dil_sep_conv_5x5")]
    DilSepConv5x5,
    #[serde(rename = "avg_pool_3x3")]
    AvgPool3x3,
    #[serde(rename = "max_pool_3x3")]
    MaxPool3x3,
}

impl CandidateOpKind {
    pub const DEFAULT_SET: [CandidateOpKind; 8] = [
        CandidateOpKind::Identity,
        CandidateOpKind::Zeroize,
        CandidateOpKind::SepConv3x3,
        CandidateOpKind::DilSepConv3x3,
        CandidateOpKind::SepConv5x5,
        CandidateOpKind::DilSepConv5x5,
        CandidateOpKind::AvgPool3x3,
        CandidateOpKind::MaxPool3x3,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CandidateOpKind::Identity => "identity",
            CandidateOpKind::Zeroize => "zeroize",
            CandidateOpKind::SepConv3x3 => "sep_conv_3x3",
            CandidateOpKind::DilSepConv3x3 => "dil_sep_conv_3x3",
            CandidateOpKind::SepConv5x5 => "sep_conv_5x5",
            CandidateOpKind::DilSepConv5x5 => "dil_sep_conv_5x5",
            CandidateOpKind::AvgPool3x3 => "avg_pool_3x3",
            CandidateOpKind::MaxPool3x3 => "max_pool_3x3",
        }
    }

    pub fn parse(s: &str) -> Result<CandidateOpKind> {
        Self::DEFAULT_SET
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| Error::UnknownOp(s.to_string()))
    }

    /// (kernel, dilation, stride-1 padding) of the depthwise stage.
    pub(crate) fn conv_geometry(&self) -> Option<(usize, usize, usize)> {
        match self {
            CandidateOpKind::SepConv3x3 => Some((3, 1, 1)),
            CandidateOpKind::DilSepConv3x3 => Some((3, 2, 2)),
            CandidateOpKind::SepConv5x5 => Some((5, 1, 2)),
            CandidateOpKind::DilSepConv5x5 => Some((5, 2, 4)),
            _ => None,
        }
    }

    pub fn is_parametric(&self, stride: usize) -> bool {
        match self {
            CandidateOpKind::Identity => stride == 2,
            CandidateOpKind::Zeroize
            | CandidateOpKind::AvgPool3x3
            | CandidateOpKind::MaxPool3x3 => false,
            _ => true,
        }
    }
}

fn init_weight(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha12Rng) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::param(data, shape).expect("consistent shape")
}

fn affine_params(c: usize) -> (Tensor, Tensor) {
    let gamma = Tensor::param(vec![1.0; c], vec![c]).expect("shape");
    let beta = Tensor::param(vec![0.0; c], vec![c]).expect("shape");
    (gamma, beta)
}

/// One instantiated candidate op on one edge: kind + its private weights.
pub struct OpInstance {
    pub kind: CandidateOpKind,
    pub stride: usize,
    pub channels: usize,
    weights: Vec<Tensor>,
    norm_affine: Option<(Tensor, Tensor)>,
}

impl OpInstance {
    /// `affine` enables learnable scale/shift in the trailing norm
    /// (final training); search keeps plain batch statistics.
    pub fn new(
        kind: CandidateOpKind,
        channels: usize,
        stride: usize,
        affine: bool,
        rng: &mut ChaCha12Rng,
    ) -> OpInstance {
        let mut weights = Vec::new();
        let mut norm_affine = None;
        if let Some((k, _d, _p)) = kind.conv_geometry() {
            // depthwise [c,1,k,k] then pointwise [c,c,1,1]
            weights.push(init_weight(vec![channels, 1, k, k], k * k, rng));
            weights.push(init_weight(vec![channels, channels, 1, 1], channels, rng));
            if affine {
                norm_affine = Some(affine_params(channels));
            }
        } else if kind == CandidateOpKind::Identity && stride == 2 {
            let half = channels / 2;
            let rest = channels - half;
            weights.push(init_weight(vec![half.max(1), channels, 1, 1], channels, rng));
            weights.push(init_weight(vec![rest, channels, 1, 1], channels, rng));
            if affine {
                norm_affine = Some(affine_params(channels));
            }
        }
        OpInstance {
            kind,
            stride,
            channels,
            weights,
            norm_affine,
        }
    }

    /// All trainable tensors of this instance (conv weights + norm affine).
    pub fn parameters(&self) -> Vec<Tensor> {
        let mut ps = self.weights.clone();
        if let Some((g, b)) = &self.norm_affine {
            ps.push(g.clone());
            ps.push(b.clone());
        }
        ps
    }

    fn norm(&self, x: &Tensor) -> Result<Tensor> {
        match &self.norm_affine {
            Some((g, b)) => x.channel_norm(Some((g, b))),
            None => x.channel_norm(None),
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::ChannelMismatch {
                op: self.kind.name().into(),
                expected: self.channels,
                got: *s.get(1).unwrap_or(&0),
            });
        }
        OP_EVALS.with(|c| c.set(c.get() + 1));
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        match self.kind {
            CandidateOpKind::Zeroize => {
                let (oh, ow) = if self.stride == 2 {
                    (h.div_ceil(2), w.div_ceil(2))
                } else {
                    (h, w)
                };
                Ok(Tensor::zeros(vec![n, c, oh, ow]))
            }
            CandidateOpKind::Identity => {
                if self.stride == 1 {
                    Ok(x.clone())
                } else {
                    self.factorized_reduce(x)
                }
            }
            CandidateOpKind::AvgPool3x3 => avg_pool2d(x, 3, self.stride, 1),
            CandidateOpKind::MaxPool3x3 => max_pool2d(x, 3, self.stride, 1),
            _ => {
                let (k, d, p) = self.kind.conv_geometry().expect("conv kind");
                let dw_spec = Conv2dSpec {
                    kernel: (k, k),
                    stride: (self.stride, self.stride),
                    padding: (p, p),
                    dilation: (d, d),
                    groups: c,
                };
                let y = x.relu().conv2d(&self.weights[0], dw_spec)?;
                let y = y.conv2d(&self.weights[1], Conv2dSpec::simple(1, 1, 0))?;
                self.norm(&y)
            }
        }
    }

    /// Identity at stride 2: two parallel 1x1 stride-2 convs, the second
    /// on the one-pixel-shifted grid, channel-concatenated and normed.
    fn factorized_reduce(&self, x: &Tensor) -> Result<Tensor> {
        let spec = Conv2dSpec::simple(1, 2, 0);
        let a = x.relu();
        let even = a.conv2d(&self.weights[0], spec)?;
        let odd = a.shift_up_left()?.conv2d(&self.weights[1], spec)?;
        let y = concat_channels(&[even, odd])?;
        self.norm(&y)
    }
}

/// Output spatial size shared by every candidate at the given stride.
pub fn candidate_out_size(stride: usize, h: usize, w: usize) -> (usize, usize) {
    if stride == 2 {
        (h.div_ceil(2), w.div_ceil(2))
    } else {
        (h, w)
    }
}
