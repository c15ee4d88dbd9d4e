//! `tcs`: runs semiclassical and reference computations from a JSON
//! configuration and writes tables plus a manifest.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 numerical
//! failure.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod output;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{ExperimentConfig, Mode};
use run::{pretty, run_all, RunError};

#[derive(Parser)]
#[command(name = "tcs", version, about = "Trajectory-coherent semiclassical runs and grid reference solutions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split-step grid solution with moment tables.
    Simulate(Common),
    /// Moment trajectory and semiclassical wavefunctions.
    Semiclassical(Common),
    /// Variational frame with its invariant-drift report.
    Variations(Common),
    /// Zero-order kernel applied to the initial state.
    Green(Common),
    /// Coordinate variance and fidelity against the grid solution.
    Compare(Common),
    /// Frame-consistent versus naive superposition (gauss model).
    Superpose(Common),
    /// `compare` over all ħ values with log-log fits.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// ħ value; repeat to give several. Replaces the config list.
    #[arg(long, allow_negative_numbers = true)]
    hbar: Vec<f64>,
    /// Recorded in the manifest only; every computation is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

fn execute(mode: Mode, args: &Common) -> Result<(), RunError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if !args.hbar.is_empty() {
        cfg.hbar = args.hbar.clone();
    }
    let base = args.config.parent().unwrap_or(Path::new("")).to_path_buf();
    cfg.validate(&base, mode)?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(|d| base.join(d)))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).map_err(|source| RunError::Io { path: out.clone(), source })?;
    let results = run_all(&cfg, &base, &out, mode)?;
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "mode": mode.name(),
        "config": cfg,
        "hbar": cfg.hbar,
        "tolerances": cfg.tolerances,
        "fixed_settings": run::fixed_settings(&cfg),
        "seed": args.seed,
        "results": results,
    });
    output::write_text(&out.join("manifest.json"), &pretty(&manifest))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match &cli.command {
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::Semiclassical(a) => (Mode::Semiclassical, a),
        Command::Variations(a) => (Mode::Variations, a),
        Command::Green(a) => (Mode::Green, a),
        Command::Compare(a) => (Mode::Compare, a),
        Command::Superpose(a) => (Mode::Superpose, a),
        Command::Sweep(a) => (Mode::Sweep, a),
    };
    match execute(mode, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
