//! Dense f64 tensor with reverse-mode automatic differentiation.
//!
//! Graphs are built implicitly: every op output keeps handles to its
//! inputs plus a closure that scatters the upstream gradient into them.
//! `backward` on a scalar loss walks the graph once in reverse
//! topological order. Leaf gradients accumulate across calls; the caller
//! zeroes them between optimizer steps.
//!
//! A graph and its tensors are confined to one thread. Distinct graphs
//! (e.g. independent oracle trainings) may live on distinct threads.

mod conv;

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{Error, Result};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

type BackFn = Box<dyn Fn(&[f64])>;

pub(crate) struct Inner {
    id: u64,
    pub(crate) data: Vec<f64>,
    shape: Vec<usize>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    prev: Vec<Tensor>,
    backward: Option<BackFn>,
}

#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let b = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &b.shape)
            .field("requires_grad", &b.requires_grad)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn from_vec(data: Vec<f64>, shape: Vec<usize>) -> Result<Tensor> {
        if data.len() != numel(&shape) {
            return Err(Error::ShapeMismatch {
                op: "from_vec".into(),
                details: format!("data length {} vs shape {:?}", data.len(), shape),
            });
        }
        Ok(Tensor::raw(data, shape, false))
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::raw(vec![v], vec![1], false)
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        Tensor::raw(vec![0.0; numel(&shape)], shape, false)
    }

    /// Leaf that participates in gradient computation.
    pub fn param(data: Vec<f64>, shape: Vec<usize>) -> Result<Tensor> {
        if data.len() != numel(&shape) {
            return Err(Error::ShapeMismatch {
                op: "param".into(),
                details: format!("data length {} vs shape {:?}", data.len(), shape),
            });
        }
        Ok(Tensor::raw(data, shape, true))
    }

    fn raw(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        let grad = if requires_grad {
            Some(vec![0.0; data.len()])
        } else {
            None
        };
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                id: fresh_id(),
                data,
                shape,
                grad,
                requires_grad,
                prev: Vec::new(),
                backward: None,
            })),
        }
    }

    /// Op-output constructor: requires_grad iff any input does.
    pub(crate) fn make(
        data: Vec<f64>,
        shape: Vec<usize>,
        prev: Vec<Tensor>,
        backward: BackFn,
    ) -> Tensor {
        let requires_grad = prev.iter().any(|t| t.requires_grad());
        let mut t = Tensor::raw(data, shape, requires_grad);
        if requires_grad {
            let inner = Rc::get_mut(&mut t.inner).expect("fresh tensor");
            let inner = inner.get_mut();
            inner.prev = prev;
            inner.backward = Some(backward);
        }
        t
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn data(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |i| i.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    pub fn item(&self) -> f64 {
        let b = self.inner.borrow();
        debug_assert_eq!(b.data.len(), 1);
        b.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        if let Some(g) = self.inner.borrow_mut().grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// In-place update hook for optimizers: f(data, grad).
    pub fn apply_update(&self, f: impl FnOnce(&mut [f64], &[f64])) {
        let mut b = self.inner.borrow_mut();
        let Inner { data, grad, .. } = &mut *b;
        let g = grad.as_deref().unwrap_or(&[]);
        f(data, g);
    }

    pub fn set_data(&self, data: Vec<f64>) {
        let mut b = self.inner.borrow_mut();
        assert_eq!(b.data.len(), data.len());
        b.data = data;
    }

    fn id(&self) -> u64 {
        self.inner.borrow().id
    }

    /// Accumulate `f`'s writes into this tensor's gradient buffer,
    /// if it participates in the graph.
    pub(crate) fn accumulate_grad(&self, f: impl FnOnce(&mut [f64])) {
        let mut b = self.inner.borrow_mut();
        if !b.requires_grad {
            return;
        }
        let n = b.data.len();
        let g = b.grad.get_or_insert_with(|| vec![0.0; n]);
        f(g);
    }

    /// Reverse-mode sweep from a scalar loss. Gradients accumulate into
    /// every reachable `requires_grad` leaf; repeated calls keep adding.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::NonScalarLoss(self.shape()));
        }
        // Iterative DFS post-order: each node exactly once.
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        seen.insert(self.id());
        while let Some((node, child)) = stack.pop() {
            let next = {
                let b = node.inner.borrow();
                b.prev.get(child).cloned()
            };
            match next {
                Some(c) => {
                    stack.push((node, child + 1));
                    if seen.insert(c.id()) {
                        stack.push((c, 0));
                    }
                }
                None => order.push(node),
            }
        }
        self.accumulate_grad(|g| g[0] += 1.0);
        for node in order.iter().rev() {
            let (grad_out, has_fn) = {
                let b = node.inner.borrow();
                if !b.requires_grad || b.backward.is_none() {
                    continue;
                }
                (b.grad.clone().unwrap_or_default(), true)
            };
            debug_assert!(has_fn);
            let b = node.inner.borrow();
            if let Some(f) = b.backward.as_ref() {
                f(&grad_out);
            }
        }
        Ok(())
    }

    // ---- elementwise and linear-algebra primitives ----

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_same_shape("add", other, |a, b| a + b, |_a, _b, g| (g, g))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_same_shape("sub", other, |a, b| a - b, |_a, _b, g| (g, -g))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_same_shape("mul", other, |a, b| a * b, |a, b, g| (g * b, g * a))
    }

    fn binary_same_shape(
        &self,
        name: &str,
        other: &Tensor,
        fwd: impl Fn(f64, f64) -> f64,
        bwd: impl Fn(f64, f64, f64) -> (f64, f64) + 'static,
    ) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op: name.into(),
                details: format!("{:?} vs {:?}", self.shape(), other.shape()),
            });
        }
        let (a, b) = (self.to_vec(), other.to_vec());
        let out: Vec<f64> = a.iter().zip(&b).map(|(&x, &y)| fwd(x, y)).collect();
        let (ta, tb) = (self.clone(), other.clone());
        let shape = self.shape();
        Ok(Tensor::make(
            out,
            shape,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                ta.accumulate_grad(|ga| {
                    for i in 0..g.len() {
                        ga[i] += bwd(a[i], b[i], g[i]).0;
                    }
                });
                tb.accumulate_grad(|gb| {
                    for i in 0..g.len() {
                        gb[i] += bwd(a[i], b[i], g[i]).1;
                    }
                });
            }),
        ))
    }

    pub fn mul_const(&self, c: f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|&x| x * c).collect();
        let t = self.clone();
        Tensor::make(
            out,
            self.shape(),
            vec![self.clone()],
            Box::new(move |g| {
                t.accumulate_grad(|gt| {
                    for i in 0..g.len() {
                        gt[i] += g[i] * c;
                    }
                })
            }),
        )
    }

    /// Elementwise addition of a constant vector (no gradient to it).
    pub fn add_const_vec(&self, c: &[f64]) -> Result<Tensor> {
        if c.len() != self.len() {
            return Err(Error::ShapeMismatch {
                op: "add_const_vec".into(),
                details: format!("tensor len {} vs const len {}", self.len(), c.len()),
            });
        }
        let out: Vec<f64> = self.data().iter().zip(c).map(|(&x, &y)| x + y).collect();
        let t = self.clone();
        Ok(Tensor::make(
            out,
            self.shape(),
            vec![self.clone()],
            Box::new(move |g| {
                t.accumulate_grad(|gt| {
                    for i in 0..g.len() {
                        gt[i] += g[i];
                    }
                })
            }),
        ))
    }

    pub fn relu(&self) -> Tensor {
        let a = self.to_vec();
        let out: Vec<f64> = a.iter().map(|&x| x.max(0.0)).collect();
        let t = self.clone();
        Tensor::make(
            out,
            self.shape(),
            vec![self.clone()],
            Box::new(move |g| {
                t.accumulate_grad(|gt| {
                    for i in 0..g.len() {
                        if a[i] > 0.0 {
                            gt[i] += g[i];
                        }
                    }
                })
            }),
        )
    }

    pub fn log(&self) -> Tensor {
        let a = self.to_vec();
        let out: Vec<f64> = a.iter().map(|&x| x.ln()).collect();
        let t = self.clone();
        Tensor::make(
            out,
            self.shape(),
            vec![self.clone()],
            Box::new(move |g| {
                t.accumulate_grad(|gt| {
                    for i in 0..g.len() {
                        gt[i] += g[i] / a[i];
                    }
                })
            }),
        )
    }

    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let t = self.clone();
        let n = self.len();
        Tensor::make(
            vec![s],
            vec![1],
            vec![self.clone()],
            Box::new(move |g| {
                t.accumulate_grad(|gt| {
                    for gi in gt.iter_mut().take(n) {
                        *gi += g[0];
                    }
                })
            }),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.len() as f64;
        self.sum().mul_const(1.0 / n)
    }

    /// Matrix product: [m,k] x [k,n] -> [m,n].
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul".into(),
                details: format!("{sa:?} x {sb:?}"),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (a, b) = (self.to_vec(), other.to_vec());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for l in 0..k {
                let av = a[i * k + l];
                for j in 0..n {
                    out[i * n + j] += av * b[l * n + j];
                }
            }
        }
        let (ta, tb) = (self.clone(), other.clone());
        Ok(Tensor::make(
            out,
            vec![m, n],
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                ta.accumulate_grad(|ga| {
                    for i in 0..m {
                        for l in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * b[l * n + j];
                            }
                            ga[i * k + l] += acc;
                        }
                    }
                });
                tb.accumulate_grad(|gb| {
                    for l in 0..k {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for i in 0..m {
                                acc += a[i * k + l] * g[i * n + j];
                            }
                            gb[l * n + j] += acc;
                        }
                    }
                });
            }),
        ))
    }

    /// Affine layer: x [n,f] -> x w^T + b, with w [c,f] and b [c].
    pub fn linear(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (sx, sw, sb) = (self.shape(), weight.shape(), bias.shape());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] || sb != vec![sw[0]] {
            return Err(Error::ShapeMismatch {
                op: "linear".into(),
                details: format!("x {sx:?}, w {sw:?}, b {sb:?}"),
            });
        }
        let (n, f, c) = (sx[0], sx[1], sw[0]);
        let (x, w, b) = (self.to_vec(), weight.to_vec(), bias.to_vec());
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            for j in 0..c {
                let mut acc = b[j];
                for l in 0..f {
                    acc += x[i * f + l] * w[j * f + l];
                }
                out[i * c + j] = acc;
            }
        }
        let (tx, tw, tb) = (self.clone(), weight.clone(), bias.clone());
        Ok(Tensor::make(
            out,
            vec![n, c],
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |g| {
                tx.accumulate_grad(|gx| {
                    for i in 0..n {
                        for l in 0..f {
                            let mut acc = 0.0;
                            for j in 0..c {
                                acc += g[i * c + j] * w[j * f + l];
                            }
                            gx[i * f + l] += acc;
                        }
                    }
                });
                tw.accumulate_grad(|gw| {
                    for j in 0..c {
                        for l in 0..f {
                            let mut acc = 0.0;
                            for i in 0..n {
                                acc += g[i * c + j] * x[i * f + l];
                            }
                            gw[j * f + l] += acc;
                        }
                    }
                });
                tb.accumulate_grad(|gb| {
                    for j in 0..c {
                        for i in 0..n {
                            gb[j] += g[i * c + j];
                        }
                    }
                });
            }),
        ))
    }

    /// Row-wise softmax over the last axis of a [n,c] (or [c]) tensor.
    pub fn softmax(&self) -> Tensor {
        let shape = self.shape();
        let c = *shape.last().expect("non-empty shape");
        let rows = self.len() / c;
        let x = self.to_vec();
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * c..(r + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                let e = (row[j] - m).exp();
                out[r * c + j] = e;
                z += e;
            }
            for j in 0..c {
                out[r * c + j] /= z;
            }
        }
        let s = out.clone();
        let t = self.clone();
        Tensor::make(
            out,
            shape,
            vec![self.clone()],
            Box::new(move |g| {
                t.accumulate_grad(|gt| {
                    for r in 0..rows {
                        let base = r * c;
                        let dot: f64 = (0..c).map(|j| g[base + j] * s[base + j]).sum();
                        for j in 0..c {
                            gt[base + j] += s[base + j] * (g[base + j] - dot);
                        }
                    }
                })
            }),
        )
    }

    /// Row-wise log-softmax: x - logsumexp(x) per row.
    pub fn log_softmax(&self) -> Tensor {
        let shape = self.shape();
        let c = *shape.last().expect("non-empty shape");
        let rows = self.len() / c;
        let x = self.to_vec();
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * c..(r + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            for j in 0..c {
                out[r * c + j] = row[j] - lse;
            }
        }
        let logp = out.clone();
        let t = self.clone();
        Tensor::make(
            out,
            shape,
            vec![self.clone()],
            Box::new(move |g| {
                t.accumulate_grad(|gt| {
                    for r in 0..rows {
                        let base = r * c;
                        let gsum: f64 = (0..c).map(|j| g[base + j]).sum();
                        for j in 0..c {
                            gt[base + j] += g[base + j] - logp[base + j].exp() * gsum;
                        }
                    }
                })
            }),
        )
    }

    /// Mean negative log likelihood from log-probabilities [n,c].
    pub fn nll_mean(&self, labels: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "nll_mean".into(),
                details: format!("log-probs {shape:?} vs {} labels", labels.len()),
            });
        }
        let (n, c) = (shape[0], shape[1]);
        for &y in labels {
            if y >= c {
                return Err(Error::LabelOutOfRange { label: y, classes: c });
            }
        }
        let logp = self.to_vec();
        let loss = -labels
            .iter()
            .enumerate()
            .map(|(i, &y)| logp[i * c + y])
            .sum::<f64>()
            / n as f64;
        let t = self.clone();
        let labels = labels.to_vec();
        Ok(Tensor::make(
            vec![loss],
            vec![1],
            vec![self.clone()],
            Box::new(move |g| {
                t.accumulate_grad(|gt| {
                    for (i, &y) in labels.iter().enumerate() {
                        gt[i * c + y] -= g[0] / n as f64;
                    }
                })
            }),
        ))
    }

    /// Extract coordinate k of a vector as a scalar tensor.
    pub fn select(&self, k: usize) -> Tensor {
        let v = self.data()[k];
        let t = self.clone();
        Tensor::make(
            vec![v],
            vec![1],
            vec![self.clone()],
            Box::new(move |g| t.accumulate_grad(|gt| gt[k] += g[0])),
        )
    }

    /// Multiply every entry by a scalar tensor (grad flows to both).
    pub fn scale(&self, s: &Tensor) -> Result<Tensor> {
        if s.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "scale".into(),
                details: format!("scale factor has shape {:?}", s.shape()),
            });
        }
        let sv = s.item();
        let x = self.to_vec();
        let out: Vec<f64> = x.iter().map(|&v| v * sv).collect();
        let (tx, ts) = (self.clone(), s.clone());
        Ok(Tensor::make(
            out,
            self.shape(),
            vec![self.clone(), s.clone()],
            Box::new(move |g| {
                tx.accumulate_grad(|gx| {
                    for i in 0..g.len() {
                        gx[i] += g[i] * sv;
                    }
                });
                ts.accumulate_grad(|gs| {
                    let mut acc = 0.0;
                    for i in 0..g.len() {
                        acc += g[i] * x[i];
                    }
                    gs[0] += acc;
                });
            }),
        ))
    }

    /// Straight-through one-hot: forward value is `one_hot(hard_idx)`,
    /// backward passes the upstream gradient to the soft input unchanged.
    pub fn straight_through_onehot(&self, hard_idx: usize) -> Tensor {
        let k = self.len();
        let mut out = vec![0.0; k];
        out[hard_idx] = 1.0;
        let t = self.clone();
        Tensor::make(
            out,
            self.shape(),
            vec![self.clone()],
            Box::new(move |g| {
                t.accumulate_grad(|gt| {
                    for i in 0..g.len() {
                        gt[i] += g[i];
                    }
                })
            }),
        )
    }

    /// Straight-through scalar gate: forward value 1, backward routes the
    /// upstream gradient into coordinate `idx` of the soft input only.
    pub fn straight_through_unit(&self, idx: usize) -> Tensor {
        let t = self.clone();
        Tensor::make(
            vec![1.0],
            vec![1],
            vec![self.clone()],
            Box::new(move |g| t.accumulate_grad(|gt| gt[idx] += g[0])),
        )
    }
}

pub use conv::{avg_pool2d, concat_channels, max_pool2d, Conv2dSpec};
