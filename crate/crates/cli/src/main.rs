//! `hermflow`: run flows from a TOML config, check principal symbols, and
//! measure convergence against exact solutions.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 the flow broke
//! down (partial outputs are kept), 3 a verification verdict failed.

mod config;
mod convergence;

use clap::{Parser, Subcommand};
use config::{ConfigError, RunConfig};
use hermflow::flows::{self, Diagnostics, FlowError};
use hermflow::symbols;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 1;
const EXIT_BREAKDOWN: u8 = 2;
const EXIT_VERDICT: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "hermflow", version, about = "Almost Hermitian flows on flat tori")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a flow described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for random presets (overrides `seed` in the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads. The solver currently runs on one thread; the
        /// value is validated and recorded in the summary.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Write ω and J snapshots every this many steps.
        #[arg(long)]
        snapshot_every: Option<usize>,
    },
    /// Random-point principal symbol checks.
    CheckSymbols {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [2, 4, 6])]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Restrict to these operators (default: all).
        #[arg(long, value_delimiter = ',')]
        operators: Vec<String>,
        /// Print the rows as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Grid-refinement study against an exact solution.
    Convergence {
        /// t4_warped or product_f.
        scenario: String,
        #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 64])]
        grids: Vec<usize>,
        #[arg(long, default_value_t = 0.5)]
        t_end: f64,
        #[arg(long, default_value_t = 1.8)]
        min_order: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, out, seed, threads, snapshot_every } => {
            cmd_run(&config, out, seed, threads, snapshot_every)
        }
        Command::CheckSymbols { trials, dims, seed, operators, json } => {
            cmd_check_symbols(trials, &dims, seed, &operators, json)
        }
        Command::Convergence { scenario, grids, t_end, min_order } => {
            cmd_convergence(&scenario, &grids, t_end, min_order)
        }
    };
    ExitCode::from(code)
}

fn config_error(e: impl std::fmt::Display) -> u8 {
    eprintln!("error: {e}");
    EXIT_CONFIG
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    exit_reason: &'static str,
    exit_code: u8,
    error: Option<String>,
    flow: &'static str,
    final_t: f64,
    steps: usize,
    final_diagnostics: Diagnostics,
    threads: usize,
    seed: u64,
    csv: Option<&'a Path>,
}

fn cmd_run(
    path: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    threads: usize,
    snapshot_every: Option<usize>,
) -> u8 {
    let mut cfg = match RunConfig::load(path) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if snapshot_every.is_some() {
        cfg.flow.snapshot_every = snapshot_every;
    }
    if threads == 0 {
        return config_error(ConfigError::Invalid { field: "threads".into(), reason: "must be at least 1".into() });
    }
    if let Err(e) = cfg.validate() {
        return config_error(e);
    }
    let Some(out_dir) = out.or_else(|| cfg.output_dir.clone()) else {
        return config_error("no output directory: set `output_dir` or pass --out");
    };
    let pair = match cfg.initial_pair() {
        Ok(p) => p,
        Err(e) => return config_error(e),
    };
    let outcome = match flows::run(pair, &cfg.flow, Some(&out_dir)) {
        Ok(o) => o,
        Err(e) if e.is_breakdown() => {
            eprintln!("error: {e} (no step was taken)");
            return EXIT_BREAKDOWN;
        }
        Err(e) => return config_error(e),
    };
    let (exit_reason, exit_code) = match &outcome.error {
        None => ("completed", 0),
        Some(e) if e.is_breakdown() => ("breakdown", EXIT_BREAKDOWN),
        Some(_) => ("error", EXIT_CONFIG),
    };
    let summary = RunSummary {
        exit_reason,
        exit_code,
        error: outcome.error.as_ref().map(FlowError::to_string),
        flow: cfg.flow.kind.name(),
        final_t: outcome.state.t,
        steps: outcome.state.step,
        final_diagnostics: outcome.state.diagnostics,
        threads,
        seed: cfg.seed,
        csv: outcome.csv_path.as_deref(),
    };
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    if let Err(e) = std::fs::write(out_dir.join("summary.json"), &text) {
        eprintln!("error: cannot write summary: {e}");
        return EXIT_CONFIG;
    }
    println!("{text}");
    if let Some(e) = &outcome.error {
        eprintln!("error: {e}; last valid t = {}", outcome.state.t);
    }
    exit_code
}

fn cmd_check_symbols(trials: usize, dims: &[usize], seed: u64, operators: &[String], json: bool) -> u8 {
    if let Some(&d) = dims.iter().find(|&&d| !matches!(d, 2 | 4 | 6)) {
        let why = if d % 2 == 1 { "odd dimensions carry no almost complex structure" } else { "supported dimensions are 2, 4 and 6" };
        return config_error(format!("invalid dimension {d}: {why}"));
    }
    if trials == 0 {
        return config_error("--trials must be at least 1");
    }
    if let Some(op) = operators.iter().find(|op| !symbols::OPERATORS.contains(&op.as_str())) {
        return config_error(format!("unknown operator `{op}`; known: {}", symbols::OPERATORS.join(", ")));
    }
    let rows = match symbols::check_symbols(trials, dims, seed) {
        Ok(r) => r,
        Err(e) => return config_error(e),
    };
    let rows: Vec<_> =
        rows.into_iter().filter(|r| operators.is_empty() || operators.iter().any(|op| op == r.operator)).collect();
    if json {
        println!("{}", serde_json::to_string_pretty(&rows).expect("rows serialize"));
    } else {
        println!("{:<13} {:>3} {:>9} {:>10} {:>12}  {:<7} failed checks", "operator", "dim", "passed", "null dims", "min eig", "verdict");
        for r in &rows {
            let nulls = r.null_dims.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("/");
            println!(
                "{:<13} {:>3} {:>9} {:>10} {:>12.3e}  {:<7} {}",
                r.operator,
                r.dim,
                format!("{}/{}", r.passed, r.trials),
                nulls,
                r.min_eigenvalue,
                if r.verdict { "PASS" } else { "FAIL" },
                r.failed.join(",")
            );
        }
    }
    if rows.iter().all(|r| r.verdict) {
        0
    } else {
        EXIT_VERDICT
    }
}

fn cmd_convergence(scenario: &str, grids: &[usize], t_end: f64, min_order: f64) -> u8 {
    let scenario = match scenario.parse::<convergence::Scenario>() {
        Ok(s) => s,
        Err(e) => return config_error(e),
    };
    let rows = match convergence::study(scenario, grids, t_end) {
        Ok(r) => r,
        Err(convergence::StudyError::Flow(e)) if e.is_breakdown() => {
            eprintln!("error: {e}");
            return EXIT_BREAKDOWN;
        }
        Err(e) => return config_error(e),
    };
    println!("{:>5} {:>12} {:>12} {:>8}", "N", "h", "error", "order");
    for r in &rows {
        let order = r.order.map(|o| format!("{o:.3}")).unwrap_or_else(|| "-".into());
        println!("{:>5} {:>12.4e} {:>12.4e} {:>8}", r.n, r.h, r.error, order);
    }
    let worst = rows.iter().filter_map(|r| r.order).fold(f64::INFINITY, f64::min);
    if worst >= min_order {
        println!("observed order {worst:.3} >= {min_order}: PASS");
        0
    } else {
        println!("observed order {worst:.3} < {min_order}: FAIL");
        EXIT_VERDICT
    }
}
