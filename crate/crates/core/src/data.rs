//! Deterministic synthetic image classification data.
//!
//! The generator draws small single-channel images of oriented edges
//! (horizontal, vertical, diagonal, anti-diagonal splits). Every class
//! template has zero total pixel mass and each sample's polarity is
//! flipped at random, so global average intensity carries no label
//! information: a classifier must look at spatial structure to beat
//! chance.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::subsystem_rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Flat image buffer, `n * channels * height * width`.
    images: Vec<f64>,
    labels: Vec<usize>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
}

pub const NUM_EDGE_CLASSES: usize = 4;

/// Template value for class `label` at pixel (r, c) of an s x s grid.
fn template(label: usize, r: usize, c: usize, s: usize) -> f64 {
    let half = |lo: bool| if lo { 1.0 } else { -1.0 };
    match label {
        0 => half(r < s / 2),                       // horizontal edge
        1 => half(c < s / 2),                       // vertical edge
        2 => match r.cmp(&c) {                      // main diagonal
            std::cmp::Ordering::Less => 1.0,
            std::cmp::Ordering::Greater => -1.0,
            std::cmp::Ordering::Equal => 0.0,
        },
        3 => match (r + c).cmp(&(s - 1)) {          // anti-diagonal
            std::cmp::Ordering::Less => 1.0,
            std::cmp::Ordering::Greater => -1.0,
            std::cmp::Ordering::Equal => 0.0,
        },
        _ => unreachable!("only four edge classes"),
    }
}

/// Generate `n` samples of `size` x `size` oriented-edge images with
/// uniform per-pixel noise in [-noise_amp, noise_amp]. Classes are
/// exactly balanced (up to remainder) and sample order is shuffled.
pub fn synthetic_edges(n: usize, size: usize, noise_amp: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if size < 2 {
        return Err(Error::Config {
            field: "dataset.image_size".into(),
            message: "image size must be at least 2".into(),
        });
    }
    let mut rng = subsystem_rng(seed, "synthetic-edges");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut images = vec![0.0; n * size * size];
    let mut labels = vec![0; n];
    for (slot, &i) in order.iter().enumerate() {
        let label = i % NUM_EDGE_CLASSES;
        let polarity = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let base = slot * size * size;
        for r in 0..size {
            for c in 0..size {
                let noise = rng.gen_range(-noise_amp..=noise_amp);
                images[base + r * size + c] = polarity * template(label, r, c, size) + noise;
            }
        }
        labels[slot] = label;
    }
    Ok(Dataset {
        images,
        labels,
        channels: 1,
        height: size,
        width: size,
        num_classes: NUM_EDGE_CLASSES,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Assemble the samples at `idx` into a `[n, c, h, w]` input tensor
    /// plus their labels.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        if idx.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let sl = self.sample_len();
        let mut data = Vec::with_capacity(idx.len() * sl);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(&self.images[i * sl..(i + 1) * sl]);
            labels.push(self.labels[i]);
        }
        let x = Tensor::from_vec(
            data,
            vec![idx.len(), self.channels, self.height, self.width],
        )?;
        Ok((x, labels))
    }

    /// Deterministic split into two disjoint parts covering the whole
    /// set; the first part holds `round(fraction * n)` samples.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Config {
                field: "search.train_fraction".into(),
                message: format!("fraction {fraction} outside [0, 1]"),
            });
        }
        let n = self.len();
        let n_first = ((fraction * n as f64).round() as usize).min(n);
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = subsystem_rng(seed, "dataset-split");
        order.shuffle(&mut rng);
        let take = |idxs: &[usize]| -> Dataset {
            let sl = self.sample_len();
            let mut images = Vec::with_capacity(idxs.len() * sl);
            let mut labels = Vec::with_capacity(idxs.len());
            for &i in idxs {
                images.extend_from_slice(&self.images[i * sl..(i + 1) * sl]);
                labels.push(self.labels[i]);
            }
            Dataset {
                images,
                labels,
                channels: self.channels,
                height: self.height,
                width: self.width,
                num_classes: self.num_classes,
            }
        };
        Ok((take(&order[..n_first]), take(&order[n_first..])))
    }
}
