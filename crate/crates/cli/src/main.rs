use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::Config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("io: {0}")]
    Io(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn status(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 1,
            CliError::Failed(_) => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "torusmix", version, about = "Fractal shear and binary-swap transport on the 2-torus")]
struct Cli {
    /// Run configuration file (`key = value` lines, `include = path`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value, `key=value`. Repeatable.
    #[arg(long = "set", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Enumerate an activation schedule and write it as CSV.
    Schedule(ScheduleArgs),
    /// Exact Lagrangian snapshots of a datum along a field.
    Transport(RunArgs),
    /// Viscous solves along a field.
    Solve(RunArgs),
    /// Vanishing-viscosity experiment (`vv` or `mixing`).
    Experiment(ExperimentArgs),
    /// Randomised identity and invariant checks.
    Verify(VerifyArgs),
    /// Re-render a stored report.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct ScheduleArgs {
    /// `dyadic` or `quad`.
    #[arg(long)]
    family: Option<String>,
    /// Depth, or a quadruple bound `(k,m,i,n)` for the quad family.
    #[arg(long = "K")]
    k: Option<String>,
    /// `auto` or a comma-separated list of durations.
    #[arg(long)]
    tau: Option<String>,
    /// Output CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// `fractal:K`, `mix:K`, `mirrored:K`, `still:T`, or a spec file.
    #[arg(long)]
    field: Option<String>,
    #[arg(long)]
    datum: Option<String>,
    #[arg(long)]
    n: Option<String>,
    /// Comma-separated times.
    #[arg(long)]
    times: Option<String>,
    /// Viscosities (solve only).
    #[arg(long)]
    nu: Option<String>,
    /// Final time (solve only).
    #[arg(long)]
    t_end: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// `vv` or `mixing`.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long = "K")]
    k: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    datum: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    samples: Option<String>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    path: PathBuf,
    /// `text` or `json`.
    #[arg(long, default_value = "text")]
    format: String,
}

fn path_string(p: Option<PathBuf>) -> Option<String> {
    p.map(|p| p.to_string_lossy().into_owned())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for pair in &cli.overrides {
        cfg.set_pair(pair)?;
    }
    match cli.command {
        Command::Schedule(a) => {
            cfg.set("family", a.family);
            cfg.set("k", a.k);
            cfg.set("tau", a.tau);
            cfg.set("out", path_string(a.out));
            commands::schedule(&cfg)
        }
        Command::Transport(a) => {
            apply_run_args(&mut cfg, a);
            commands::transport(&cfg)
        }
        Command::Solve(a) => {
            apply_run_args(&mut cfg, a);
            commands::solve(&cfg)
        }
        Command::Experiment(a) => {
            cfg.set("experiment", a.kind);
            cfg.set("k", a.k);
            cfg.set("n", a.n);
            cfg.set("datum", a.datum);
            cfg.set("out", path_string(a.out));
            commands::experiment(&cfg)
        }
        Command::Verify(a) => {
            cfg.set("seed", a.seed);
            cfg.set("samples", a.samples);
            commands::verify(&cfg)
        }
        Command::Report(a) => commands::report(&a.path, &a.format),
    }
}

fn apply_run_args(cfg: &mut Config, a: RunArgs) {
    cfg.set("field", a.field);
    cfg.set("datum", a.datum);
    cfg.set("n", a.n);
    cfg.set("times", a.times);
    cfg.set("nu", a.nu);
    cfg.set("t_end", a.t_end);
    cfg.set("out", path_string(a.out));
}

fn init_threads() {
    if let Some(n) = std::env::var("TORUSMIX_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("torusmix: {e}");
            ExitCode::from(e.status())
        }
    }
}
