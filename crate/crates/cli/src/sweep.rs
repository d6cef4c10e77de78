use std::path::Path;

use anyhow::Result;
use rayon::prelude::*;

use crate::config::{ConfigError, Kind, RawConfig, NUMERIC_KEYS};
use crate::experiment::{int, num, Status, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    /// `None` when the derived config failed validation.
    pub status: Option<Status>,
    pub sup_error: Option<f64>,
    pub trip_iteration: Option<usize>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn converged(&self) -> bool {
        self.status == Some(Status::Converged)
    }
}

/// Config for run `index` of a sweep: `param = value`, seed offset by the
/// index unless the seed itself is swept.
pub fn derive(
    base: &RawConfig,
    param: &str,
    value: f64,
    index: usize,
) -> Result<RawConfig, ConfigError> {
    let mut raw = base.clone();
    let resolved = base.resolve()?;
    if resolved.experiment == Kind::Sweep {
        let kind = resolved.base_kind();
        raw.entries.insert("experiment".into(), kind.name().into());
        for key in ["sweep.experiment", "sweep.param", "sweep.values"] {
            raw.entries.remove(key);
        }
    }
    raw.entries.remove("output_dir");
    if param != "seed" {
        raw.set_number("seed", (resolved.seed + index as u64) as f64)?;
    }
    raw.set_number(param, value)?;
    Ok(raw)
}

pub fn check(base: &RawConfig, param: &str, values: &[f64]) -> Result<(), ConfigError> {
    base.resolve()?;
    if !NUMERIC_KEYS.contains(&param) {
        return Err(base.error(param, "sweep parameter must name a numeric config field"));
    }
    if values.is_empty() {
        return Err(base.error("sweep.values", "at least one value is required"));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(base.error("sweep.values", format!("values must be finite, got {v}")));
    }
    Ok(())
}

/// Runs one experiment per value on at most `jobs` threads. Each run writes
/// into `out_dir/run-NNN`; rows come back in input order.
pub fn run_sweep(
    base: &RawConfig,
    param: &str,
    values: &[f64],
    jobs: usize,
    out_dir: &Path,
) -> Result<Vec<SweepRow>> {
    check(base, param, values)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()?;
    let rows: Vec<Result<SweepRow>> = pool.install(|| {
        values
            .par_iter()
            .enumerate()
            .map(|(index, &value)| {
                let failed = |e: ConfigError| SweepRow {
                    value,
                    status: None,
                    sup_error: None,
                    trip_iteration: None,
                    error: Some(e.to_string()),
                };
                let cfg = match derive(base, param, value, index).and_then(|raw| raw.resolve()) {
                    Ok(cfg) => cfg,
                    Err(e) => return Ok(failed(e)),
                };
                let dir = out_dir.join(format!("run-{index:03}"));
                let outcome = crate::run_to_dir(&cfg, &dir)?;
                Ok(SweepRow {
                    value,
                    status: Some(outcome.status),
                    sup_error: Some(outcome.sup_error),
                    trip_iteration: outcome.trip_iteration,
                    error: None,
                })
            })
            .collect()
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    crate::artifacts::write_csv(&out_dir.join("sweep.csv"), &summary_table(&rows))?;
    Ok(rows)
}

pub fn summary_table(rows: &[SweepRow]) -> Table {
    let mut t = Table {
        header: vec![
            "value",
            "status",
            "converged",
            "sup_error",
            "trip_iteration",
        ],
        rows: Vec::new(),
    };
    for r in rows {
        t.rows.push(vec![
            num(r.value),
            r.status.map_or("invalid", Status::name).to_string(),
            r.converged().to_string(),
            r.sup_error.map(num).unwrap_or_default(),
            r.trip_iteration.map(int).unwrap_or_default(),
        ]);
    }
    t
}
