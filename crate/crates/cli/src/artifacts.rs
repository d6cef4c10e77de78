use std::fs;
use std::path::Path;
use std::time::Duration;

use anyhow::{Context, Result};
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::experiment::{RunOutcome, Table};
use crate::svg::{line_plot, Series};

const LEARNED: &str = "#1f77b4";
const ANALYTIC: &str = "#ff7f0e";

pub fn write_csv(path: &Path, table: &Table) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

pub fn report(cfg: &ExperimentConfig, outcome: &RunOutcome, elapsed: Duration) -> Value {
    json!({
        "experiment": cfg.base_kind().name(),
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "status": outcome.status.name(),
        "converged": outcome.status == crate::experiment::Status::Converged,
        "sup_error": finite_or_null(outcome.sup_error),
        "trip_iteration": outcome.trip_iteration,
        "wall_clock_seconds": elapsed.as_secs_f64(),
        "metrics": outcome.metrics,
        "config": cfg.canonical(),
    })
}

/// Writes `log.csv`, `fields.csv`, any extra tables, `report.json`,
/// `value.svg` and `policy.svg` into `dir`.
pub fn write_run(
    dir: &Path,
    cfg: &ExperimentConfig,
    outcome: &RunOutcome,
    elapsed: Duration,
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_csv(&dir.join("log.csv"), &outcome.log)?;
    write_csv(&dir.join("fields.csv"), &outcome.fields_table())?;
    for (name, table) in &outcome.extra {
        write_csv(&dir.join(name), table)?;
    }
    let report = serde_json::to_string_pretty(&report(cfg, outcome, elapsed))? + "\n";
    fs::write(dir.join("report.json"), report)?;

    let grid = outcome.value.grid;
    let xs: Vec<f64> = grid.nodes().collect();
    let analytic_v: Vec<f64> = xs.iter().map(|&x| outcome.analytic.value(x)).collect();
    let analytic_u: Vec<f64> = xs.iter().map(|&x| outcome.analytic.policy(x)).collect();
    let kind = cfg.base_kind().name();
    let value_svg = line_plot(
        &format!("{kind}: value function"),
        "x",
        "V(x)",
        &xs,
        &[
            Series {
                label: "learned",
                color: LEARNED,
                ys: &outcome.value.values,
            },
            Series {
                label: "analytic",
                color: ANALYTIC,
                ys: &analytic_v,
            },
        ],
    );
    let policy_svg = line_plot(
        &format!("{kind}: policy"),
        "x",
        "u(x)",
        &xs,
        &[
            Series {
                label: "learned",
                color: LEARNED,
                ys: &outcome.policy.controls,
            },
            Series {
                label: "analytic",
                color: ANALYTIC,
                ys: &analytic_u,
            },
        ],
    );
    fs::write(dir.join("value.svg"), value_svg)?;
    fs::write(dir.join("policy.svg"), policy_svg)?;
    Ok(())
}
