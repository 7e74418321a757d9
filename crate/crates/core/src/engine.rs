//! The alternating search loop: weights W update on the training split,
//! architecture logits A update on the validation split, with cosine lr
//! annealing for W and a linear temperature schedule for the sampler.
//! Also hosts the plain training loop reused for final training of
//! derived networks and for the enumeration oracle.

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{DerivedNet, NetworkPlan, Supernet};
use crate::optim::{cosine_lr, Adam, Sgd};
use crate::rng::{noise_rng, subsystem_rng};
use crate::sampler::{sample_gumbel, TemperatureSchedule};
use crate::space::{edge_list, ArchParams, ArchSnapshot, SearchSpaceSpec, SelectionMode};
use crate::tensor::Tensor;

/// Hyper-parameters of one search run.
#[derive(Debug, Clone)]
pub struct SearchSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub train_fraction: f64,
    pub lr_w_max: f64,
    pub lr_w_min: f64,
    pub momentum: f64,
    pub weight_decay_w: f64,
    pub lr_a: f64,
    pub weight_decay_a: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    pub mode: SelectionMode,
    pub fixed_reduction: bool,
    pub seed: u64,
}

impl Default for SearchSettings {
    fn default() -> SearchSettings {
        SearchSettings {
            epochs: 240,
            batch_size: 64,
            train_fraction: 0.5,
            lr_w_max: 0.025,
            lr_w_min: 1e-3,
            momentum: 0.9,
            weight_decay_w: 3e-4,
            lr_a: 3e-4,
            weight_decay_a: 1e-3,
            tau_start: 10.0,
            tau_end: 0.1,
            mode: SelectionMode::Accelerated,
            fixed_reduction: false,
            seed: 0,
        }
    }
}

impl SearchSettings {
    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, f64); 6] = [
            ("search.lr_w_max", self.lr_w_max),
            ("search.lr_w_min", self.lr_w_min),
            ("search.lr_a", self.lr_a),
            ("search.tau_start", self.tau_start),
            ("search.tau_end", self.tau_end),
            ("search.batch_size", self.batch_size as f64),
        ];
        for (field, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config {
                    field: field.into(),
                    message: format!("must be positive, got {v}"),
                });
            }
        }
        if self.epochs < 1 {
            return Err(Error::Config {
                field: "search.epochs".into(),
                message: "must be at least 1".into(),
            });
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config {
                field: "search.train_fraction".into(),
                message: format!("must lie in (0, 1), got {}", self.train_fraction),
            });
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub iter: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub tau: f64,
    pub lr_w: f64,
    pub lr_a: f64,
}

pub const METRICS_HEADER: &str = "epoch,iter,split,loss,accuracy,tau,lr_W,lr_A";

impl MetricsRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.iter, self.split, self.loss, self.accuracy, self.tau, self.lr_w,
            self.lr_a
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Everything a finished search run produces in memory.
pub struct SearchOutcome {
    pub arch: ArchParams,
    pub metrics: Vec<MetricsRow>,
    /// One logits snapshot per epoch, in epoch order.
    pub snapshots: Vec<ArchSnapshot>,
}

/// Mean NLL of the softmax classifier output over the batch.
pub fn classification_loss(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    logits.log_softmax().nll_mean(labels)
}

fn batch_accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let data = logits.to_vec();
    let classes = logits.shape()[1];
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let row = &data[i * classes..(i + 1) * classes];
        let pred = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(k, _)| k)
            .unwrap();
        if pred == label {
            correct += 1;
        }
    }
    correct as f64 / labels.len() as f64
}

fn check_finite(loss: f64, iter: u64, context: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            iter,
            context: context.to_string(),
        })
    }
}

/// Fresh Gumbel noise for every (cell, edge) of the supernet, shared by
/// all examples in the batch; reproducible from (seed, iteration).
fn draw_noises(net: &Supernet, seed: u64, iteration: u64) -> Vec<Vec<Vec<f64>>> {
    let n_edges = edge_list(&net.spec).len();
    let k = net.spec.k();
    (0..net.num_cells())
        .map(|cell| {
            (0..n_edges)
                .map(|edge| {
                    let mut rng = noise_rng(seed, iteration, cell as u64, edge as u64);
                    sample_gumbel(k, &mut rng)
                })
                .collect()
        })
        .collect()
}

/// Noiseless evaluation of the supernet under argmax selection.
pub fn evaluate_supernet(
    net: &Supernet,
    arch: &ArchParams,
    data: &Dataset,
    batch_size: usize,
    tau: f64,
) -> Result<(f64, f64)> {
    let noises = net.zero_noises();
    let mut loss_sum = 0.0;
    let mut acc_sum = 0.0;
    let mut seen = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size) {
        let (x, labels) = data.batch(chunk)?;
        let logits = net.forward(&x, arch, &noises, tau, SelectionMode::Accelerated)?;
        let loss = classification_loss(&logits, &labels)?.item();
        loss_sum += loss * chunk.len() as f64;
        acc_sum += batch_accuracy(&logits, &labels) * chunk.len() as f64;
        seen += chunk.len();
    }
    Ok((loss_sum / seen as f64, acc_sum / seen as f64))
}

/// Algorithm: alternate one W update on D_T with one A update on D_V
/// per iteration, annealing temperature and W learning rate per
/// iteration over the whole run.
pub fn run_search(
    spec: &SearchSpaceSpec,
    plan: &NetworkPlan,
    settings: &SearchSettings,
    dataset: &Dataset,
) -> Result<SearchOutcome> {
    settings.validate()?;
    let (d_train, d_val) = dataset.split(settings.train_fraction, settings.seed)?;
    if d_train.is_empty() || d_val.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let net = Supernet::new(spec, plan, settings.fixed_reduction, settings.seed);
    let arch = ArchParams::init(spec, settings.seed, !settings.fixed_reduction);
    let mut opt_w = Sgd::new(
        net.parameters(),
        settings.lr_w_max,
        settings.momentum,
        settings.weight_decay_w,
    );
    let mut opt_a = Adam::new(arch.all(), settings.lr_a, settings.weight_decay_a);

    let iters_per_epoch = d_train.len().div_ceil(settings.batch_size);
    let total_iters = settings.epochs * iters_per_epoch;
    let schedule = TemperatureSchedule::new(settings.tau_start, settings.tau_end, total_iters as u64);

    let mut order_rng = subsystem_rng(settings.seed, "batch-order");
    let mut train_order: Vec<usize> = (0..d_train.len()).collect();
    let mut val_order: Vec<usize> = (0..d_val.len()).collect();

    let mut metrics = Vec::new();
    let mut snapshots = Vec::new();
    let mut iter = 0usize;
    for epoch in 0..settings.epochs {
        train_order.shuffle(&mut order_rng);
        val_order.shuffle(&mut order_rng);
        let mut val_cursor = 0usize;
        let mut lr_w = settings.lr_w_max;
        let mut tau = settings.tau_start;
        for chunk in train_order.chunks(settings.batch_size) {
            tau = schedule.at(iter as u64);
            lr_w = cosine_lr(iter, total_iters, settings.lr_w_max, settings.lr_w_min);

            // W step on a training batch
            let (x, labels) = d_train.batch(chunk)?;
            let noises = draw_noises(&net, settings.seed, 2 * iter as u64);
            opt_w.zero_grads();
            let logits = net.forward(&x, &arch, &noises, tau, settings.mode)?;
            let loss = classification_loss(&logits, &labels)?;
            check_finite(loss.item(), iter as u64, "W step")?;
            loss.backward()?;
            opt_w.lr = lr_w;
            opt_w.step();
            arch.zero_grads(); // partition: discard A adjoints from the W pass

            // A step on a validation batch
            let val_chunk: Vec<usize> = (0..settings.batch_size.min(d_val.len()))
                .map(|j| val_order[(val_cursor + j) % d_val.len()])
                .collect();
            val_cursor = (val_cursor + settings.batch_size) % d_val.len();
            let (xv, labels_v) = d_val.batch(&val_chunk)?;
            let noises = draw_noises(&net, settings.seed, 2 * iter as u64 + 1);
            opt_a.zero_grads();
            let logits_v = net.forward(&xv, &arch, &noises, tau, settings.mode)?;
            let loss_v = classification_loss(&logits_v, &labels_v)?;
            check_finite(loss_v.item(), iter as u64, "A step")?;
            loss_v.backward()?;
            opt_a.step();
            opt_w.zero_grads(); // partition: discard W adjoints from the A pass

            iter += 1;
        }

        let (tr_loss, tr_acc) =
            evaluate_supernet(&net, &arch, &d_train, settings.batch_size, tau)?;
        let (va_loss, va_acc) = evaluate_supernet(&net, &arch, &d_val, settings.batch_size, tau)?;
        for (split, loss, acc) in [("train", tr_loss, tr_acc), ("val", va_loss, va_acc)] {
            metrics.push(MetricsRow {
                epoch,
                iter,
                split: split.to_string(),
                loss,
                accuracy: acc,
                tau,
                lr_w,
                lr_a: settings.lr_a,
            });
        }
        snapshots.push(arch.snapshot());
    }

    Ok(SearchOutcome {
        arch,
        metrics,
        snapshots,
    })
}

/// Hyper-parameters for plain (derived-network) training.
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> TrainSettings {
        TrainSettings {
            epochs: 100,
            batch_size: 64,
            lr_max: 0.025,
            lr_min: 1e-3,
            momentum: 0.9,
            weight_decay: 3e-4,
            seed: 0,
        }
    }
}

pub struct TrainReport {
    pub rows: Vec<MetricsRow>,
    pub final_train_loss: f64,
    pub final_train_acc: f64,
    pub final_val_loss: f64,
    pub final_val_acc: f64,
}

/// Evaluate a derived network without updating it.
pub fn evaluate_derived(
    net: &DerivedNet,
    data: &Dataset,
    batch_size: usize,
) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut acc_sum = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size) {
        let (x, labels) = data.batch(chunk)?;
        let logits = net.forward(&x)?;
        let loss = classification_loss(&logits, &labels)?.item();
        loss_sum += loss * chunk.len() as f64;
        acc_sum += batch_accuracy(&logits, &labels) * chunk.len() as f64;
    }
    Ok((loss_sum / data.len() as f64, acc_sum / data.len() as f64))
}

/// SGD training of a derived network on `train`, with optional held-out
/// evaluation per epoch; errors on non-finite loss.
pub fn train_derived(
    net: &DerivedNet,
    train: &Dataset,
    eval: Option<&Dataset>,
    settings: &TrainSettings,
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut opt = Sgd::new(
        net.parameters(),
        settings.lr_max,
        settings.momentum,
        settings.weight_decay,
    );
    let iters_per_epoch = train.len().div_ceil(settings.batch_size);
    let total_iters = settings.epochs * iters_per_epoch;
    let mut order_rng = subsystem_rng(settings.seed, "train-batch-order");
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut rows = Vec::new();
    let mut iter = 0usize;
    for epoch in 0..settings.epochs {
        order.shuffle(&mut order_rng);
        let mut lr = settings.lr_max;
        for chunk in order.chunks(settings.batch_size) {
            lr = cosine_lr(iter, total_iters, settings.lr_max, settings.lr_min);
            let (x, labels) = train.batch(chunk)?;
            opt.zero_grads();
            let logits = net.forward(&x)?;
            let loss = classification_loss(&logits, &labels)?;
            check_finite(loss.item(), iter as u64, "train step")?;
            loss.backward()?;
            opt.lr = lr;
            opt.step();
            iter += 1;
        }
        let (tr_loss, tr_acc) = evaluate_derived(net, train, settings.batch_size)?;
        rows.push(MetricsRow {
            epoch,
            iter,
            split: "train".to_string(),
            loss: tr_loss,
            accuracy: tr_acc,
            tau: 0.0,
            lr_w: lr,
            lr_a: 0.0,
        });
        if let Some(ev) = eval {
            let (ev_loss, ev_acc) = evaluate_derived(net, ev, settings.batch_size)?;
            rows.push(MetricsRow {
                epoch,
                iter,
                split: "val".to_string(),
                loss: ev_loss,
                accuracy: ev_acc,
                tau: 0.0,
                lr_w: lr,
                lr_a: 0.0,
            });
        }
    }

    let (final_train_loss, final_train_acc) = evaluate_derived(net, train, settings.batch_size)?;
    let (final_val_loss, final_val_acc) = match eval {
        Some(ev) => evaluate_derived(net, ev, settings.batch_size)?,
        None => (final_train_loss, final_train_acc),
    };
    Ok(TrainReport {
        rows,
        final_train_loss,
        final_train_acc,
        final_val_loss,
        final_val_acc,
    })
}
