//! `gdas` — search, derive, train, and verify cell architectures from
//! the command line. Every command reads one TOML config (flags win on
//! conflict), writes newline-terminated UTF-8 artifacts into the
//! configured output directory, and re-emits its resolved config so a
//! run can be replayed exactly.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 config/validation error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use gdas_core::config::RunConfig;
use gdas_core::derive::{derive_cell, export_cell, full_omega, import_cell, ExportFormat};
use gdas_core::engine::{metrics_csv, run_search, train_derived};
use gdas_core::net::DerivedNet;
use gdas_core::ops::CandidateOpKind;
use gdas_core::oracle::{enumerate_cells, rank_all, ranking_csv};
use gdas_core::space::{ArchSnapshot, CellType};
use gdas_core::{Error, Result};

mod checks;

#[derive(Parser)]
#[command(name = "gdas", version, about = "Differentiable architecture search at desk scale")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Path to the run config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out_dir: Option<String>,
    /// Override the relevant epoch budget of this command.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the selection mode (accelerated, hard_sampled, relaxed).
    #[arg(long)]
    mode: Option<String>,
    /// Fix the reduction cell; search only the normal cell.
    #[arg(long)]
    frc: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the alternating search loop and save metrics + learned logits.
    Search(Common),
    /// Extract discrete cells from learned architecture logits.
    Derive {
        #[command(flatten)]
        common: Common,
        /// Logits snapshot to derive from (default: <out_dir>/arch_params_final.json).
        #[arg(long)]
        arch_params: Option<PathBuf>,
        /// Exclude zeroize from the candidate pool Omega at derivation.
        #[arg(long)]
        exclude_zeroize: bool,
    },
    /// Train a network built from a derived cell.
    Train {
        #[command(flatten)]
        common: Common,
        /// Normal cell JSON (default: <out_dir>/cell.json).
        #[arg(long)]
        cell: Option<PathBuf>,
        /// Reduction cell JSON; omitted = fixed reduction block.
        #[arg(long)]
        reduction_cell: Option<PathBuf>,
    },
    /// Enumerate every derivable cell, train each, and rank them.
    Oracle(Common),
    /// Run sampler/gradient/acceleration self-checks; nonzero on failure.
    Validate(Common),
    /// Render a cell JSON file as Graphviz DOT.
    ExportDot {
        /// Cell JSON file.
        #[arg(long)]
        cell: PathBuf,
        /// Output path (default: input with .dot extension).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Config { field, message }) => {
            eprintln!("config error in `{field}`: {message}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Search(common) => cmd_search(&load_config(&common)?),
        Cmd::Derive {
            common,
            arch_params,
            exclude_zeroize,
        } => cmd_derive(&load_config(&common)?, arch_params, exclude_zeroize),
        Cmd::Train {
            common,
            cell,
            reduction_cell,
        } => cmd_train(&load_config(&common)?, cell, reduction_cell),
        Cmd::Oracle(common) => cmd_oracle(&load_config(&common)?),
        Cmd::Validate(common) => cmd_validate(&load_config(&common)?),
        Cmd::ExportDot { cell, out } => cmd_export_dot(&cell, out),
    }
}

/// Load the config and apply flag overrides (flags win), then validate.
fn load_config(common: &Common) -> Result<RunConfig> {
    let text = std::fs::read_to_string(&common.config)?;
    let mut cfg = RunConfig::parse_toml(&text)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &common.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(epochs) = common.epochs {
        cfg.search.epochs = epochs;
        cfg.train.epochs = epochs;
        cfg.oracle.budget_epochs = epochs;
    }
    if let Some(mode) = &common.mode {
        cfg.search.mode = mode.clone();
    }
    if common.frc {
        cfg.search.fixed_reduction = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Write a newline-terminated UTF-8 text file.
fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut text = text.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

/// Wall-clock lives in its own sidecar so every other artifact is
/// byte-identical across reruns of the same config.
fn write_timing(dir: &Path, command: &str, start: Instant) -> Result<()> {
    let secs = start.elapsed().as_secs_f64();
    write_text(
        &dir.join("timing.json"),
        &format!("{{\"command\": \"{command}\", \"wall_clock_seconds\": {secs:.3}}}"),
    )
}

fn prepare_out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&dir)?;
    write_text(&dir.join("resolved_config.toml"), &cfg.to_toml()?)?;
    Ok(dir)
}

fn cmd_search(cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let dir = prepare_out_dir(cfg)?;
    let spec = cfg.space_spec()?;
    let dataset = cfg.dataset()?;
    let outcome = run_search(&spec, &cfg.plan(), &cfg.search_settings()?, &dataset)?;

    write_text(&dir.join("metrics.csv"), &metrics_csv(&outcome.metrics))?;
    for (epoch, snap) in outcome.snapshots.iter().enumerate() {
        write_json(&dir.join(format!("arch_params_epoch_{epoch:04}.json")), snap)?;
    }
    write_json(&dir.join("arch_params_final.json"), &outcome.arch.snapshot())?;
    write_timing(&dir, "search", start)?;

    let last = outcome.metrics.last().expect("at least one epoch");
    println!(
        "search done: {} epochs, final val loss {:.4}, val acc {:.4}",
        cfg.search.epochs, last.loss, last.accuracy
    );
    Ok(())
}

fn omega_for(cfg: &RunConfig, exclude_zeroize: bool) -> Result<Vec<usize>> {
    let kinds = cfg.candidate_kinds()?;
    if exclude_zeroize {
        Ok(kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k != CandidateOpKind::Zeroize)
            .map(|(i, _)| i)
            .collect())
    } else {
        Ok(full_omega(kinds.len()))
    }
}

fn cmd_derive(
    cfg: &RunConfig,
    arch_params: Option<PathBuf>,
    exclude_zeroize: bool,
) -> Result<()> {
    let dir = prepare_out_dir(cfg)?;
    let path = arch_params.unwrap_or_else(|| dir.join("arch_params_final.json"));
    let snap: ArchSnapshot = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    let spec = cfg.space_spec()?;
    let omega = omega_for(cfg, exclude_zeroize)?;

    let normal = derive_cell(&snap.normal, &spec, &omega, CellType::Normal)?;
    write_text(&dir.join("cell.json"), &export_cell(&normal, ExportFormat::Json)?)?;
    write_text(&dir.join("cell.dot"), &export_cell(&normal, ExportFormat::Dot)?)?;
    println!("derived normal cell -> {}", dir.join("cell.json").display());

    if let Some(reduction) = &snap.reduction {
        let cell = derive_cell(reduction, &spec, &omega, CellType::Reduction)?;
        write_text(
            &dir.join("reduction_cell.json"),
            &export_cell(&cell, ExportFormat::Json)?,
        )?;
        write_text(
            &dir.join("reduction_cell.dot"),
            &export_cell(&cell, ExportFormat::Dot)?,
        )?;
        println!(
            "derived reduction cell -> {}",
            dir.join("reduction_cell.json").display()
        );
    }
    Ok(())
}

fn cmd_train(
    cfg: &RunConfig,
    cell: Option<PathBuf>,
    reduction_cell: Option<PathBuf>,
) -> Result<()> {
    let start = Instant::now();
    let dir = prepare_out_dir(cfg)?;
    let cell_path = cell.unwrap_or_else(|| dir.join("cell.json"));
    let load_cell = |path: &Path, field: &str| {
        std::fs::read_to_string(path)
            .map_err(Error::from)
            .and_then(|text| import_cell(&text))
            .map_err(|e| Error::Config {
                field: field.into(),
                message: e.to_string(),
            })
    };
    let normal = load_cell(&cell_path, "cell")?;
    let reduction = match reduction_cell {
        Some(p) => Some(load_cell(&p, "reduction_cell")?),
        None => None,
    };

    let net = DerivedNet::build(&normal, reduction.as_ref(), &cfg.plan(), true, cfg.seed)?;
    println!("parameter count: {}", net.param_count());

    let dataset = cfg.dataset()?;
    let (train, eval) = dataset.split(cfg.train.train_fraction, cfg.seed)?;
    let report = train_derived(&net, &train, Some(&eval), &cfg.train_settings())?;
    write_text(&dir.join("train_metrics.csv"), &metrics_csv(&report.rows))?;
    write_timing(&dir, "train", start)?;
    println!(
        "train done: {} epochs, train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4}",
        cfg.train.epochs,
        report.final_train_loss,
        report.final_train_acc,
        report.final_val_loss,
        report.final_val_acc
    );
    Ok(())
}

fn cmd_oracle(cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let dir = prepare_out_dir(cfg)?;
    let spec = cfg.space_spec()?;
    let cells = enumerate_cells(&spec, cfg.oracle.cap as u128)?;
    println!("enumerated {} cells; training each...", cells.len());

    let dataset = cfg.dataset()?;
    let (train, val) = dataset.split(cfg.search.train_fraction, cfg.seed)?;
    let ranking = rank_all(&cells, &cfg.plan(), &train, &val, &cfg.oracle_budget())?;
    write_text(&dir.join("ranking.csv"), &ranking_csv(&ranking)?)?;
    write_timing(&dir, "oracle", start)?;

    let best = &ranking[0];
    println!(
        "oracle done: best cell id {} (val loss {:.4}, acc {:.4}) -> {}",
        best.cell_id,
        best.val_loss,
        best.val_acc,
        dir.join("ranking.csv").display()
    );
    Ok(())
}

fn cmd_validate(cfg: &RunConfig) -> Result<()> {
    let mut failures = 0usize;
    for (name, outcome) in checks::run_all(cfg) {
        match outcome {
            Ok(()) => println!("check {name}: pass"),
            Err(e) => {
                failures += 1;
                println!("check {name}: FAIL ({e})");
            }
        }
    }
    if failures > 0 {
        return Err(Error::Config {
            field: "validate".into(),
            message: format!("{failures} check(s) failed"),
        });
    }
    println!("all checks passed");
    Ok(())
}

fn cmd_export_dot(cell_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let cell = import_cell(&std::fs::read_to_string(cell_path)?)?;
    let dot = export_cell(&cell, ExportFormat::Dot)?;
    let out = out.unwrap_or_else(|| cell_path.with_extension("dot"));
    write_text(&out, &dot)?;
    println!("wrote {}", out.display());
    Ok(())
}
