//! Command-line front end shared by the `lqlab` binary.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use crate::config::{ConfigError, ExperimentConfig, Kind, RawConfig};
use crate::experiment::probe_summary;
use crate::sweep::run_sweep;
use crate::{run_to_dir, CSV_COLUMNS};
use anyhow::Result;
use clap::{Parser, Subcommand};
use lqlab_core::lq::riccati_residual;
use lqlab_core::{riccati_solve, LqProblem};

#[derive(Parser)]
#[command(
    name = "lqlab",
    version,
    about = "Run HJB, Q-learning and linear-FA experiments on the scalar LQ problem",
    after_long_help = CSV_COLUMNS
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    #[command(after_long_help = CSV_COLUMNS)]
    Run {
        config: PathBuf,
        /// Output directory (default: $LQLAB_OUT/<experiment>-<hash>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one experiment per value of a numeric config field.
    #[command(after_long_help = CSV_COLUMNS)]
    Sweep {
        config: PathBuf,
        /// Dotted config key to vary, e.g. qlearn.learning_rate.
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: Option<String>,
        /// Maximum concurrent runs (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print monotonicity reports for the operator a config uses.
    Probe {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the Riccati coefficient and its residual.
    Analytic {
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long, allow_hyphen_values = true)]
        beta: f64,
    },
}

enum Failure {
    Config(ConfigError),
    Other(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<ConfigError>() {
            Ok(c) => Failure::Config(c),
            Err(e) => Failure::Other(e),
        }
    }
}

fn out_root() -> PathBuf {
    std::env::var_os("LQLAB_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("lqlab-out"))
}

fn load(path: &Path, seed: Option<u64>) -> Result<(RawConfig, ExperimentConfig), ConfigError> {
    let mut raw = RawConfig::from_path(path)?;
    if let Some(seed) = seed {
        raw.set_number("seed", seed as f64)?;
    }
    let cfg = raw.resolve()?;
    Ok((raw, cfg))
}

fn parse_values(raw: &RawConfig, text: &str) -> Result<Vec<f64>, ConfigError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| raw.error("sweep.values", format!("not a number: {s:?}")))
        })
        .collect()
}

fn sweep(
    raw: &RawConfig,
    cfg: &ExperimentConfig,
    param: Option<String>,
    values: Option<Vec<f64>>,
    jobs: Option<usize>,
    out: Option<&Path>,
) -> Result<u8, Failure> {
    let spec = cfg.sweep.as_ref();
    let param = param
        .or_else(|| spec.and_then(|s| s.param.clone()))
        .ok_or_else(|| raw.error("sweep.param", "no sweep parameter given"))?;
    let values = values
        .or_else(|| spec.map(|s| s.values.clone()))
        .unwrap_or_default();
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let dir = cfg.output_dir(out, &out_root());
    let rows = run_sweep(raw, &param, &values, jobs, &dir)?;
    for r in &rows {
        let status = r.status.map_or("invalid", |s| s.name());
        match &r.error {
            Some(e) => println!("{param}={:?}: {status} ({e})", r.value),
            None => println!("{param}={:?}: {status}", r.value),
        }
    }
    println!("wrote {}", dir.join("sweep.csv").display());
    Ok(0)
}

fn run(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Run { config, out, seed } => {
            let (raw, cfg) = load(&config, seed)?;
            if cfg.experiment == Kind::Sweep {
                return sweep(&raw, &cfg, None, None, None, out.as_deref());
            }
            let dir = cfg.output_dir(out.as_deref(), &out_root());
            let outcome = run_to_dir(&cfg, &dir)?;
            println!(
                "{}: {} sup_error={:?} -> {}",
                cfg.experiment.name(),
                outcome.status.name(),
                outcome.sup_error,
                dir.display()
            );
            Ok(outcome.status.exit_code() as u8)
        }
        Command::Sweep {
            config,
            param,
            values,
            jobs,
            out,
        } => {
            let (raw, cfg) = load(&config, None)?;
            let values = values.map(|v| parse_values(&raw, &v)).transpose()?;
            sweep(&raw, &cfg, param, values, jobs, out.as_deref())
        }
        Command::Probe { config, seed } => {
            let (_, cfg) = load(&config, seed)?;
            let summary = probe_summary(&cfg);
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).map_err(anyhow::Error::from)?
            );
            Ok(0)
        }
        Command::Analytic { alpha, beta } => {
            let p = LqProblem::new(alpha, beta).map_err(|e| ConfigError {
                source_name: "analytic".into(),
                line: None,
                field: e.field.into(),
                reason: e.reason,
            })?;
            let sol = riccati_solve(&p);
            println!("gamma {:?}", sol.gamma_coef);
            println!("residual {:?}", riccati_residual(&p, &sol));
            println!(
                "closed_loop {:?}",
                p.drift - p.control_gain * sol.gain_ratio * sol.gamma_coef
            );
            Ok(0)
        }
    }
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
