//! Batch front end for `lqlab-core`: strict JSON configs, experiment runs,
//! CSV/JSON/SVG artifacts and parameter sweeps.

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod experiment;
pub mod svg;
pub mod sweep;

use std::path::Path;
use std::time::Instant;

use anyhow::Result;

use crate::config::ExperimentConfig;
use crate::experiment::RunOutcome;

/// Runs `cfg` and writes its artifacts into `dir`.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    let start = Instant::now();
    let outcome = experiment::execute(cfg);
    artifacts::write_run(dir, cfg, &outcome, start.elapsed())?;
    Ok(outcome)
}

/// Column reference printed by `--help`.
pub const CSV_COLUMNS: &str = "\
CSV files (comma separated, LF line endings, header row, shortest round-trip numbers):
  fields.csv  node, x, value, policy, analytic_value, analytic_policy, abs_error, interior
              (interior = 1 for nodes in the central two thirds used by sup_error)
  log.csv     hjb-vi, hjb-pi: iteration, residual, sup_norm
              qlearn:         episode, steps, max_abs_q, sup_error
              linfa:          step, weight_norm, probe_residual
              probe:          node, x, drift, mesh_bound, c_minus, c_center, c_plus
  rounds.csv  hjb-pi only: round, evaluation_sweeps, policy_change
  sweep.csv   value, status, converged, sup_error, trip_iteration

Exit codes: 0 ok, 1 config error, 2 diverged (artifacts still written), 3 not converged.";
