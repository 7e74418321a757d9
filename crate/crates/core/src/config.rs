//! Run configuration: one TOML file covering dataset, search space,
//! model plan, search loop, final training, and oracle settings. Every
//! run writes back its fully resolved form so it can be replayed.

use serde::{Deserialize, Serialize};

use crate::engine::{SearchSettings, TrainSettings};
use crate::error::{Error, Result};
use crate::net::NetworkPlan;
use crate::ops::CandidateOpKind;
use crate::space::{SearchSpaceSpec, SelectionMode};

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "d_num_samples")]
    pub num_samples: usize,
    #[serde(default = "d_image_size")]
    pub image_size: usize,
    #[serde(default = "d_noise")]
    pub noise: f64,
}

fn d_num_samples() -> usize {
    512
}
fn d_image_size() -> usize {
    8
}
fn d_noise() -> f64 {
    0.3
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            num_samples: d_num_samples(),
            image_size: d_image_size(),
            noise: d_noise(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    /// B: computational nodes per cell.
    #[serde(default = "d_num_nodes")]
    pub num_nodes: usize,
    /// Candidate operation names.
    #[serde(default = "d_candidates")]
    pub candidates: Vec<String>,
    /// T: retained inputs per node at derivation.
    #[serde(default = "d_retained")]
    pub retained_inputs: usize,
}

fn d_num_nodes() -> usize {
    2
}
fn d_candidates() -> Vec<String> {
    ["zeroize", "identity", "sep_conv_3x3", "avg_pool_3x3"]
        .map(String::from)
        .to_vec()
}
fn d_retained() -> usize {
    1
}

impl Default for SpaceConfig {
    fn default() -> Self {
        SpaceConfig {
            num_nodes: d_num_nodes(),
            candidates: d_candidates(),
            retained_inputs: d_retained(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "d_init_channels")]
    pub init_channels: usize,
    #[serde(default = "d_cells_per_block")]
    pub cells_per_block: usize,
}

fn d_init_channels() -> usize {
    4
}
fn d_cells_per_block() -> usize {
    1
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            init_channels: d_init_channels(),
            cells_per_block: d_cells_per_block(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default = "d_search_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_fraction")]
    pub train_fraction: f64,
    #[serde(default = "d_lr_w_max")]
    pub lr_w_max: f64,
    #[serde(default = "d_lr_w_min")]
    pub lr_w_min: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_wd_w")]
    pub weight_decay_w: f64,
    #[serde(default = "d_lr_a")]
    pub lr_a: f64,
    #[serde(default = "d_wd_a")]
    pub weight_decay_a: f64,
    #[serde(default = "d_tau_start")]
    pub tau_start: f64,
    #[serde(default = "d_tau_end")]
    pub tau_end: f64,
    /// One of: accelerated, hard_sampled, relaxed.
    #[serde(default = "d_mode")]
    pub mode: String,
    /// Fix the reduction cell; search only the normal cell.
    #[serde(default)]
    pub fixed_reduction: bool,
}

fn d_search_epochs() -> usize {
    240
}
fn d_batch() -> usize {
    64
}
fn d_fraction() -> f64 {
    0.5
}
fn d_lr_w_max() -> f64 {
    0.025
}
fn d_lr_w_min() -> f64 {
    1e-3
}
fn d_momentum() -> f64 {
    0.9
}
fn d_wd_w() -> f64 {
    3e-4
}
fn d_lr_a() -> f64 {
    3e-4
}
fn d_wd_a() -> f64 {
    1e-3
}
fn d_tau_start() -> f64 {
    10.0
}
fn d_tau_end() -> f64 {
    0.1
}
fn d_mode() -> String {
    "accelerated".to_string()
}

impl Default for SearchConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields defaulted")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_train_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr_w_max")]
    pub lr_max: f64,
    #[serde(default = "d_lr_w_min")]
    pub lr_min: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_wd_w")]
    pub weight_decay: f64,
    /// Held-out fraction used for evaluation during final training.
    #[serde(default = "d_fraction")]
    pub train_fraction: f64,
}

fn d_train_epochs() -> usize {
    100
}

impl Default for TrainConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields defaulted")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Refuse enumeration beyond this many cells.
    #[serde(default = "d_cap")]
    pub cap: u64,
    #[serde(default = "d_train_epochs")]
    pub budget_epochs: usize,
}

fn d_cap() -> u64 {
    10_000
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            cap: d_cap(),
            budget_epochs: d_train_epochs(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_out_dir")]
    pub out_dir: String,
    // required section: a run must state its data source explicitly
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub space: SpaceConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

fn d_out_dir() -> String {
    "runs/out".to_string()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg = RunConfig::parse_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse without validating, so callers can apply overrides first.
    pub fn parse_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let field = if msg.contains("dataset") {
                "dataset"
            } else {
                "config"
            };
            config_err(field, msg)
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        let mut s = toml::to_string_pretty(self).map_err(|e| config_err("config", e.to_string()))?;
        if !s.ends_with('\n') {
            s.push('\n');
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.num_samples == 0 {
            return Err(config_err("dataset.num_samples", "must be positive"));
        }
        if self.dataset.image_size < 4 {
            return Err(config_err("dataset.image_size", "must be at least 4"));
        }
        if self.space.num_nodes == 0 {
            return Err(config_err("space.num_nodes", "must be at least 1"));
        }
        if self.space.retained_inputs == 0 {
            return Err(config_err("space.retained_inputs", "must be at least 1"));
        }
        let kinds = self.candidate_kinds()?;
        let has = |k: CandidateOpKind| kinds.contains(&k);
        if !has(CandidateOpKind::Identity) || !has(CandidateOpKind::Zeroize) {
            return Err(config_err(
                "space.candidates",
                "must include at least identity and zeroize",
            ));
        }
        if !kinds.iter().any(|k| k.conv_geometry().is_some()) {
            return Err(config_err(
                "space.candidates",
                "must include at least one parametric (conv) operation",
            ));
        }
        if self.model.init_channels == 0 {
            return Err(config_err("model.init_channels", "must be positive"));
        }
        if self.model.cells_per_block == 0 {
            return Err(config_err("model.cells_per_block", "must be positive"));
        }
        SelectionMode::parse(&self.search.mode)
            .map_err(|_| config_err("search.mode", format!("unknown mode {:?}", self.search.mode)))?;
        self.search_settings()?.validate()?;
        for (field, v) in [
            ("train.lr_max", self.train.lr_max),
            ("train.lr_min", self.train.lr_min),
            ("train.batch_size", self.train.batch_size as f64),
            ("train.epochs", self.train.epochs as f64),
        ] {
            if !(v > 0.0) {
                return Err(config_err(field, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn candidate_kinds(&self) -> Result<Vec<CandidateOpKind>> {
        self.space
            .candidates
            .iter()
            .map(|name| {
                CandidateOpKind::parse(name)
                    .map_err(|_| config_err("space.candidates", format!("unknown op {name:?}")))
            })
            .collect()
    }

    pub fn space_spec(&self) -> Result<SearchSpaceSpec> {
        Ok(SearchSpaceSpec::new(
            self.space.num_nodes,
            self.candidate_kinds()?,
            self.space.retained_inputs,
        ))
    }

    pub fn plan(&self) -> NetworkPlan {
        NetworkPlan {
            in_channels: 1,
            num_classes: crate::data::NUM_EDGE_CLASSES,
            init_channels: self.model.init_channels,
            cells_per_block: self.model.cells_per_block,
        }
    }

    pub fn search_settings(&self) -> Result<SearchSettings> {
        Ok(SearchSettings {
            epochs: self.search.epochs,
            batch_size: self.search.batch_size,
            train_fraction: self.search.train_fraction,
            lr_w_max: self.search.lr_w_max,
            lr_w_min: self.search.lr_w_min,
            momentum: self.search.momentum,
            weight_decay_w: self.search.weight_decay_w,
            lr_a: self.search.lr_a,
            weight_decay_a: self.search.weight_decay_a,
            tau_start: self.search.tau_start,
            tau_end: self.search.tau_end,
            mode: SelectionMode::parse(&self.search.mode)?,
            fixed_reduction: self.search.fixed_reduction,
            seed: self.seed,
        })
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr_max: self.train.lr_max,
            lr_min: self.train.lr_min,
            momentum: self.train.momentum,
            weight_decay: self.train.weight_decay,
            seed: self.seed,
        }
    }

    /// Oracle per-cell budget: identical init seed per cell.
    pub fn oracle_budget(&self) -> TrainSettings {
        TrainSettings {
            epochs: self.oracle.budget_epochs,
            ..self.train_settings()
        }
    }

    pub fn dataset(&self) -> Result<crate::data::Dataset> {
        crate::data::synthetic_edges(
            self.dataset.num_samples,
            self.dataset.image_size,
            self.dataset.noise,
            self.seed,
        )
    }
}
