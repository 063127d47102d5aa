//! `ttn`: config-driven runner for tree tensor network experiments.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use ttn::TtnError;

use config::{Config, Format};

#[derive(Parser)]
#[command(name = "ttn", version, about = "Tree tensor network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Check topology and state invariants.
    Validate,
    /// Bring a serialized state to canonical form and report its spectra.
    Canonicalize,
    /// Real-time evolution.
    Evolve,
    /// Imaginary-time ground-state search.
    GroundState,
    /// Run a measurement pattern on a tree cluster state.
    Mbqc,
    /// Cross-check against the dense statevector oracle.
    OracleCheck,
    /// Path lengths and swap counts of caterpillar and balanced layouts.
    BenchRouting,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Flags {
    /// Config file (TOML, or JSON by extension); repeat to fan out.
    #[arg(long, global = true)]
    config: Vec<PathBuf>,
    /// Seed for random states, layouts, graphs and measurement outcomes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Largest bond dimension kept after each two-qudit gate.
    #[arg(long, global = true)]
    chi_max: Option<usize>,
    /// Relative squared Schmidt weight below which terms are dropped.
    #[arg(long, global = true)]
    cutoff: Option<f64>,
    /// Time step; for ground-state, a single-stage schedule.
    #[arg(long, global = true, allow_negative_numbers = true)]
    dt: Option<f64>,
    /// Trotter order.
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(1..=2))]
    order: Option<u8>,
    /// Output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Format of tables and time series; reports are always JSON.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Worker threads for independent runs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Topology file or serialized state (validate, canonicalize).
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Suite name for oracle-check; repeatable.
    #[arg(long, global = true)]
    suite: Vec<String>,
    /// System size for oracle-check.
    #[arg(long, global = true)]
    n: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
    Config(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Config(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
            CliError::Numerical(m) => write!(f, "numerical divergence: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
        }
    }
}

impl From<TtnError> for CliError {
    fn from(e: TtnError) -> Self {
        match e {
            TtnError::Numerical(_)
            | TtnError::NonFinite(_)
            | TtnError::EnergyIncrease { .. }
            | TtnError::ZeroNorm
            | TtnError::CorruptWeights(_)
            | TtnError::InconsistentMeasurement => CliError::Numerical(e.to_string()),
            TtnError::InvalidTopology(_) | TtnError::NotCanonical => CliError::Validation(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

/// One unit of work: a config with a fixed seed and output directory.
#[derive(Clone, Debug)]
pub struct Run {
    pub config: Config,
    pub seed: u64,
    pub output: PathBuf,
    pub format: Format,
    pub flags: Flags,
}

fn plan(flags: &Flags) -> Result<Vec<Run>, CliError> {
    let configs = if flags.config.is_empty() {
        vec![(String::from("run"), Config::default())]
    } else {
        flags
            .config
            .iter()
            .map(|p| {
                let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_string();
                Config::load(p).map(|c| (stem, c))
            })
            .collect::<Result<_, _>>()?
    };
    let mut runs = vec![];
    for (stem, cfg) in configs {
        let seeds = match (flags.seed, cfg.seeds.is_empty()) {
            (Some(s), _) => vec![s],
            (None, false) => cfg.seeds.clone(),
            (None, true) => vec![cfg.seed.unwrap_or(0)],
        };
        let output = flags.output.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
        let format = flags.format.or(cfg.format).unwrap_or_default();
        for seed in seeds {
            runs.push((stem.clone(), Run { config: cfg.clone(), seed, output: output.clone(), format, flags: flags.clone() }));
        }
    }
    let fan_out = runs.len() > 1;
    Ok(runs
        .into_iter()
        .map(|(stem, mut run)| {
            if fan_out {
                run.output = run.output.join(format!("{stem}-seed{}", run.seed));
            }
            run
        })
        .collect())
}

fn main() -> ExitCode {
    // Usage errors are config errors; exit code 2 is reserved for divergence.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    let runs = match plan(&cli.flags) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("ttn: {e}");
            return ExitCode::from(e.code());
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.flags.jobs.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("ttn: config error: {e}");
            return ExitCode::from(3);
        }
    };
    let results: Vec<_> = pool.install(|| runs.par_iter().map(|run| commands::execute(cli.command, run)).collect());
    let mut code = 0;
    for (run, res) in runs.iter().zip(results) {
        match res {
            Ok(summary) => println!("{summary}"),
            Err(e) => {
                eprintln!("ttn: {} (seed {}): {e}", run.output.display(), run.seed);
                code = code.max(e.code());
            }
        }
    }
    ExitCode::from(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(CliError::from(TtnError::NonFinite("x".into())).code(), 2);
        assert_eq!(CliError::from(TtnError::EnergyIncrease { step: 1, increase: 1.0 }).code(), 2);
        assert_eq!(CliError::from(TtnError::InvalidTopology("x".into())).code(), 1);
        assert_eq!(CliError::from(TtnError::Parse("x".into())).code(), 3);
    }

    #[test]
    fn single_run_keeps_output_directory() {
        let flags = Flags { seed: Some(4), output: Some("o".into()), ..Flags::default() };
        let runs = plan(&flags).unwrap();
        assert_eq!(runs.len(), 1);
        assert_eq!((runs[0].seed, runs[0].output.clone()), (4, PathBuf::from("o")));
    }
}
