//! `mcompress`: build, select, compress, verify, simulate and report.
//!
//! Every subcommand writes `<output>/<command>.json` with the effective
//! configuration, its hash, the library version and a list of checks. The
//! process exits 0 when every enabled check passes, 1 when some check fails
//! and 2 when the run could not complete; in the latter two cases a JSON
//! failure record is printed to stderr.

mod commands;
mod config;
mod summary;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use markov_compress::compress::NormMethod;
use serde_json::json;

use crate::config::{FileFormat, Mode, RunConfig, Synthetic};

/// Environment variable overriding the worker thread count.
const THREADS_ENV: &str = "MCOMPRESS_THREADS";

#[derive(Parser, Debug)]
#[command(name = "mcompress", version, about = "Compress reversible Markov chains onto selected states and verify the error bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    args: Overrides,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Load and validate a chain, then cache it as Matrix Market rates.
    Build,
    /// Greedy state selection with error curves.
    Select,
    /// Bound report and reduced-subspace curves for the selected set.
    Compress,
    /// Identity and invariant suites.
    Verify,
    /// Monte-Carlo corroboration of committors, hitting times, cycles and reduced dynamics.
    Simulate,
    /// Merge the summaries in the output directory.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Build => "build",
            Command::Select => "select",
            Command::Compress => "compress",
            Command::Verify => "verify",
            Command::Simulate => "simulate",
            Command::Report => "report",
        }
    }
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// JSON configuration file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Chain file (Matrix Market or edge-list CSV).
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<FileFormat>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Generated chain instead of a file: `webgraph:N[:SEED]` or `random:N[:SEED]`.
    #[arg(long, global = true)]
    synthetic: Option<Synthetic>,
    /// Number of states to select.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Comma-separated 0-based states; overrides greedy selection.
    #[arg(long, global = true, value_delimiter = ',')]
    set: Option<Vec<usize>>,
    /// First time of the grid; defaults to 1e-2·Tr K/n.
    #[arg(long, global = true)]
    t_min: Option<f64>,
    /// Last time of the grid; defaults to 1e3·Tr K/n.
    #[arg(long, global = true)]
    t_max: Option<f64>,
    /// Grid size (default 64).
    #[arg(long, global = true)]
    t_points: Option<usize>,
    /// Linear instead of logarithmic time spacing.
    #[arg(long, global = true)]
    linear_t: bool,
    /// Killing rate for the integrated checks; defaults to 1/(10·Tr K).
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Seed for the Monte-Carlo runs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default `mcompress-out`).
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    /// `dense`, `lowrank` or `auto` (dense up to 256 states).
    #[arg(long, global = true, value_parser = parse_norm_method)]
    norm_method: Option<NormMethod>,
    /// Monte-Carlo trajectories per estimate (default 10000).
    #[arg(long, global = true)]
    trajectories: Option<usize>,
    /// Times in the reduced-subspace and Monte-Carlo curves (default 8).
    #[arg(long, global = true)]
    curve_points: Option<usize>,
    /// Suites to turn off (repeatable).
    #[arg(long = "disable", global = true)]
    disable: Vec<String>,
    /// Suites to turn on (repeatable).
    #[arg(long = "enable", global = true)]
    enable: Vec<String>,
}

fn parse_norm_method(s: &str) -> Result<NormMethod, String> {
    match s {
        "dense" => Ok(NormMethod::Dense),
        "lowrank" | "low-rank" => Ok(NormMethod::LowRank),
        "auto" => Ok(NormMethod::Auto),
        other => Err(format!("unknown norm method '{other}' (dense, lowrank, auto)")),
    }
}

impl Overrides {
    fn resolve(self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.input {
            cfg.input = Some(v);
            cfg.synthetic = None;
        }
        if let Some(v) = self.synthetic {
            cfg.synthetic = Some(v);
            cfg.input = None;
        }
        if let Some(v) = self.format {
            cfg.format = v;
        }
        if let Some(v) = self.mode {
            cfg.mode = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = self.set {
            cfg.set = Some(v);
        }
        if let Some(v) = self.t_min {
            cfg.t_grid.min = Some(v);
        }
        if let Some(v) = self.t_max {
            cfg.t_grid.max = Some(v);
        }
        if let Some(v) = self.t_points {
            cfg.t_grid.points = v;
        }
        if self.linear_t {
            cfg.t_grid.log = false;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = Some(v);
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.output {
            cfg.output = v;
        }
        if let Some(v) = self.norm_method {
            cfg.norm_method = v;
        }
        if let Some(v) = self.trajectories {
            cfg.trajectories = v;
        }
        if let Some(v) = self.curve_points {
            cfg.curve_points = v;
        }
        for name in &self.disable {
            cfg.suites.set(name, false)?;
        }
        for name in &self.enable {
            cfg.suites.set(name, true)?;
        }
        Ok(cfg)
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let threads: usize = v.trim().parse().map_err(|_| anyhow::anyhow!("{THREADS_ENV} must be a positive integer, got '{v}'"))?;
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    Ok(())
}

fn run(command: Command, overrides: Overrides) -> anyhow::Result<summary::Summary> {
    configure_threads()?;
    let cfg = overrides.resolve()?;
    std::fs::create_dir_all(&cfg.output)?;
    let summary = if let Command::Report = command {
        commands::report(&cfg)?
    } else {
        cfg.validate()?;
        let ctx = commands::Context::load(cfg)?;
        match command {
            Command::Build => commands::build(&ctx)?,
            Command::Select => commands::select(&ctx)?,
            Command::Compress => commands::compress(&ctx)?,
            Command::Verify => commands::verify(&ctx)?,
            Command::Simulate => commands::simulate(&ctx)?,
            Command::Report => unreachable!(),
        }
    };
    markov_compress::io::write_json(&summary.config.output.join(format!("{}.json", command.name())), &summary)?;
    Ok(summary)
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    if let Some(e) = err.downcast_ref::<markov_compress::Error>() {
        return e.kind();
    }
    if err.downcast_ref::<serde_json::Error>().is_some() || err.chain().any(|c| c.is::<serde_json::Error>()) {
        return "Config";
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return "Io";
    }
    "InvalidArgument"
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match run(cli.command, cli.args) {
        Ok(summary) if summary.passed => {
            println!("{name}: ok ({} checks, config {})", summary.checks.len(), &summary.config_hash[..12]);
            ExitCode::SUCCESS
        }
        Ok(summary) => {
            let record = json!({ "command": name, "status": "failed", "failures": summary.failures });
            eprintln!("{record}");
            ExitCode::from(1)
        }
        Err(err) => {
            let record = json!({ "command": name, "status": "error", "kind": error_kind(&err), "message": format!("{err:#}") });
            eprintln!("{record}");
            ExitCode::from(2)
        }
    }
}
