//! Runs one resolved config and collects everything the artifact writers
//! need. No I/O happens here.

use lqlab_core::hjb::{monotone_mesh_bound, FrozenPolicyOperator, HjbSolution, SolveError};
use lqlab_core::linfa::{self, fa_train, FaError};
use lqlab_core::monotone::{
    interior_nodes, least_squares_slope, probe_single_node_bumps, relative_sup_error,
    CoefficientReport, MonotonicityReport, INTERIOR_FRACTION,
};
use lqlab_core::qlearn::{self, FrozenUpdate, QTable, TrainError};
use lqlab_core::{
    policy_iteration, probe_operator_monotonicity, riccati_solve, sup_error, value_iteration,
    Grid1D, PolicyField, RiccatiSolution, ValueField,
};
use serde_json::{json, Map, Value};

use crate::config::{ExperimentConfig, Kind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    Diverged,
    NotConverged,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::Diverged => "diverged",
            Status::NotConverged => "not_converged",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Status::Converged => 0,
            Status::Diverged => 2,
            Status::NotConverged => 3,
        }
    }
}

/// A CSV table whose cells are already formatted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn int(v: usize) -> String {
    v.to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub status: Status,
    pub trip_iteration: Option<usize>,
    pub sup_error: f64,
    pub value: ValueField,
    pub policy: PolicyField,
    pub analytic: RiccatiSolution,
    /// Main per-iteration log, written to `log.csv`.
    pub log: Table,
    /// Additional tables keyed by file name.
    pub extra: Vec<(&'static str, Table)>,
    pub metrics: Map<String, Value>,
}

impl RunOutcome {
    pub fn fields_table(&self) -> Table {
        let mut t = Table::new(&[
            "node",
            "x",
            "value",
            "policy",
            "analytic_value",
            "analytic_policy",
            "abs_error",
            "interior",
        ]);
        let grid = self.value.grid;
        let interior = interior_nodes(&grid, INTERIOR_FRACTION);
        for i in 0..grid.n_nodes() {
            let x = grid.node(i);
            let (v, u) = (self.value.values[i], self.policy.controls[i]);
            let av = self.analytic.value(x);
            t.push(vec![
                int(i),
                num(x),
                num(v),
                num(u),
                num(av),
                num(self.analytic.policy(x)),
                num((v - av).abs()),
                int(interior.binary_search(&i).is_ok() as usize),
            ]);
        }
        t
    }
}

/// Runs `cfg`. The config must have passed validation.
pub fn execute(cfg: &ExperimentConfig) -> RunOutcome {
    match cfg.base_kind() {
        Kind::HjbVi | Kind::HjbPi => run_hjb(cfg),
        Kind::QLearn => run_qlearn(cfg),
        Kind::Linfa => run_linfa(cfg),
        Kind::Probe => run_probe(cfg),
        Kind::Sweep => unreachable!("base kind is never sweep"),
    }
}

fn interior_slope(policy: &PolicyField) -> f64 {
    let idx = interior_nodes(&policy.grid, INTERIOR_FRACTION);
    let xs: Vec<f64> = idx.iter().map(|&i| policy.grid.node(i)).collect();
    let us: Vec<f64> = idx.iter().map(|&i| policy.controls[i]).collect();
    least_squares_slope(&xs, &us)
}

fn common_metrics(
    m: &mut Map<String, Value>,
    value: &ValueField,
    policy: &PolicyField,
    sol: &RiccatiSolution,
) {
    m.insert("gamma".into(), json!(sol.gamma_coef));
    m.insert(
        "relative_sup_error".into(),
        json!(relative_sup_error(value, sol, INTERIOR_FRACTION)),
    );
    m.insert("policy_slope".into(), json!(interior_slope(policy)));
}

fn run_hjb(cfg: &ExperimentConfig) -> RunOutcome {
    let p = &cfg.problem;
    let grid = cfg.hjb_grid().expect("validated grid");
    let scheme = cfg.scheme_config(&grid);
    let sol = riccati_solve(p);
    let result = if cfg.base_kind() == Kind::HjbPi {
        policy_iteration(
            p,
            &grid,
            &scheme,
            &PolicyField::constant(grid, cfg.initial_policy),
        )
    } else {
        value_iteration(p, &grid, &scheme)
    };
    let (status, trip, solution): (Status, Option<usize>, HjbSolution) = match result {
        Ok(s) => (Status::Converged, None, s),
        Err(SolveError::Diverged { iteration, partial }) => {
            (Status::Diverged, Some(iteration), *partial)
        }
        Err(SolveError::NotConverged { partial, .. }) => (Status::NotConverged, None, *partial),
        Err(SolveError::Invalid(e)) => {
            panic!("config passed validation but solver rejected it: {e}")
        }
    };

    let mut log = Table::new(&["iteration", "residual", "sup_norm"]);
    for r in &solution.log.iterations {
        log.push(vec![int(r.iteration), num(r.residual), num(r.sup_norm)]);
    }
    let mut extra = Vec::new();
    if cfg.base_kind() == Kind::HjbPi {
        let mut rounds = Table::new(&["round", "evaluation_sweeps", "policy_change"]);
        for r in &solution.log.rounds {
            rounds.push(vec![
                int(r.round),
                int(r.evaluation_sweeps),
                num(r.policy_change),
            ]);
        }
        extra.push(("rounds.csv", rounds));
    }

    let mut metrics = Map::new();
    common_metrics(&mut metrics, &solution.value, &solution.policy, &sol);
    metrics.insert("relaxation_rate".into(), json!(scheme.relaxation_rate));
    metrics.insert("dx".into(), json!(grid.dx()));
    metrics.insert("iterations".into(), json!(solution.log.iterations.len()));
    metrics.insert("policy_rounds".into(), json!(solution.log.rounds.len()));
    metrics.insert(
        "longest_residual_increase".into(),
        json!(solution.log.longest_residual_increase()),
    );

    RunOutcome {
        status,
        trip_iteration: trip,
        sup_error: sup_error(&solution.value, &sol, INTERIOR_FRACTION),
        value: solution.value,
        policy: solution.policy,
        analytic: sol,
        log,
        extra,
        metrics,
    }
}

fn run_qlearn(cfg: &ExperimentConfig) -> RunOutcome {
    let mdp = cfg.mdp().expect("validated mdp");
    let sol = riccati_solve(&mdp.problem);
    let (status, trip, qt, train_log) = match qlearn::train(&mdp, &cfg.qlearn_config()) {
        Ok((qt, log)) => (Status::Converged, None, qt, log),
        Err(TrainError::Diverged {
            trip_iteration,
            partial,
        }) => {
            let (qt, log) = *partial;
            (Status::Diverged, Some(trip_iteration), qt, log)
        }
        Err(TrainError::Invalid(e)) => {
            panic!("config passed validation but training rejected it: {e}")
        }
    };
    let mut log = Table::new(&["episode", "steps", "max_abs_q", "sup_error"]);
    for r in &train_log.episodes {
        log.push(vec![
            int(r.episode),
            int(r.steps),
            num(r.max_abs_q),
            num(r.sup_error),
        ]);
    }
    let (value, policy) = qlearn::greedy_extract(&qt);
    let mut metrics = Map::new();
    common_metrics(&mut metrics, &value, &policy, &sol);
    metrics.insert("episodes".into(), json!(train_log.episodes.len()));
    metrics.insert("max_abs_q".into(), json!(qt.max_abs()));
    metrics.insert("discount_factor".into(), json!(mdp.discount_factor));
    RunOutcome {
        status,
        trip_iteration: trip,
        sup_error: sup_error(&value, &sol, INTERIOR_FRACTION),
        value,
        policy,
        analytic: sol,
        log,
        extra: Vec::new(),
        metrics,
    }
}

fn run_linfa(cfg: &ExperimentConfig) -> RunOutcome {
    let mdp = cfg.mdp().expect("validated mdp");
    let p = mdp.problem;
    let sol = riccati_solve(&p);
    let (status, trip, w, fa_log) = match fa_train(&mdp, &cfg.fa_config()) {
        Ok((w, log)) => (Status::Converged, None, w, log),
        Err(FaError::Diverged {
            trip_iteration,
            partial,
        }) => {
            let (w, log) = *partial;
            (Status::Diverged, Some(trip_iteration), w, log)
        }
        Err(FaError::Invalid(e)) => {
            panic!("config passed validation but training rejected it: {e}")
        }
    };
    let mut log = Table::new(&["step", "weight_norm", "probe_residual"]);
    for r in &fa_log.records {
        log.push(vec![int(r.step), num(r.weight_norm), num(r.probe_residual)]);
    }
    let grid = mdp.state_grid;
    let policy = PolicyField::from_fn(grid, |x| linfa::greedy_action(&w, x, p.u_min, p.u_max));
    let value = ValueField {
        grid,
        values: policy
            .controls
            .iter()
            .enumerate()
            .map(|(i, &u)| w.q_value(grid.node(i), u))
            .collect(),
    };
    let mut metrics = Map::new();
    common_metrics(&mut metrics, &value, &policy, &sol);
    metrics.insert("weights".into(), json!(w.0.to_vec()));
    metrics.insert("weight_norm".into(), json!(w.norm()));
    if let (Some(first), Some(last)) = (fa_log.records.first(), fa_log.records.last()) {
        metrics.insert("initial_probe_residual".into(), json!(first.probe_residual));
        metrics.insert("final_probe_residual".into(), json!(last.probe_residual));
    }
    RunOutcome {
        status,
        trip_iteration: trip,
        sup_error: sup_error(&value, &sol, INTERIOR_FRACTION),
        value,
        policy,
        analytic: sol,
        log,
        extra: Vec::new(),
        metrics,
    }
}

fn report_json(r: &MonotonicityReport) -> Value {
    json!({
        "n_pairs_tested": r.n_pairs_tested,
        "n_violations": r.n_violations,
        "worst_violation": r.worst_violation,
        "violating_node": r.violating_node,
    })
}

/// Monotonicity of the frozen-policy scheme operator around the analytic
/// value sampled on the grid.
fn run_probe(cfg: &ExperimentConfig) -> RunOutcome {
    let p = &cfg.problem;
    let grid: Grid1D = cfg.hjb_grid().expect("validated grid");
    let scheme = cfg.scheme_config(&grid);
    let sol = riccati_solve(p);
    let value = ValueField::from_fn(grid, |x| sol.value(x));
    let op = FrozenPolicyOperator::greedy(p, &grid, &scheme, &value.values);
    let coefficients = op.coefficients();

    let mut log = Table::new(&[
        "node",
        "x",
        "drift",
        "mesh_bound",
        "c_minus",
        "c_center",
        "c_plus",
    ]);
    for (i, c) in coefficients.iter().enumerate() {
        let (x, u) = (grid.node(i), op.controls()[i]);
        log.push(vec![
            int(i),
            num(x),
            num(p.dynamics(x, u)),
            num(monotone_mesh_bound(p, &scheme, x, u)),
            num(c.minus),
            num(c.center),
            num(c.plus),
        ]);
    }
    let coeff_report = CoefficientReport::from_coefficients(coefficients);
    let pairs =
        probe_operator_monotonicity(|v| op.apply(v), grid.n_nodes(), cfg.seed, cfg.probe_pairs);
    let all: Vec<usize> = (0..grid.n_nodes()).collect();
    let bumps = probe_single_node_bumps(|v| op.apply(v), &value.values, &all, 1.0);

    let mut metrics = Map::new();
    metrics.insert("relaxation_rate".into(), json!(scheme.relaxation_rate));
    metrics.insert("random_pairs".into(), report_json(&pairs));
    metrics.insert("single_node_bumps".into(), report_json(&bumps));
    metrics.insert(
        "coefficient_violations".into(),
        json!(coeff_report.violations.len()),
    );
    metrics.insert(
        "monotone".into(),
        json!(coeff_report.is_monotone() && pairs.is_monotone()),
    );
    let policy = PolicyField {
        grid,
        controls: op.controls().to_vec(),
    };
    RunOutcome {
        status: Status::Converged,
        trip_iteration: None,
        sup_error: 0.0,
        value,
        policy,
        analytic: sol,
        log,
        extra: Vec::new(),
        metrics,
    }
}

/// Monotonicity summary for `lqlab probe`, covering whichever operator the
/// config's experiment uses.
pub fn probe_summary(cfg: &ExperimentConfig) -> Value {
    match cfg.base_kind() {
        Kind::HjbVi | Kind::HjbPi | Kind::Probe => {
            let out = run_probe(cfg);
            let mut m = out.metrics;
            m.insert("operator".into(), json!("frozen-policy scheme update"));
            Value::Object(m)
        }
        Kind::QLearn => {
            let mdp = cfg.mdp().expect("validated mdp");
            let lr = cfg.qlearn_config().learning_rate.at(0);
            let qt = QTable::from_fn(&mdp, |x, u| mdp.stage_cost(x, u));
            let (s, a) = (qt.n_states() / 2, qt.n_actions() / 2);
            let op = FrozenUpdate::new(&qt, &mdp, s, a, lr);
            let entries: Vec<usize> = (0..qt.as_slice().len()).collect();
            let bumps = probe_single_node_bumps(|q| op.apply(q), qt.as_slice(), &entries, 1.0);
            let pairs = probe_operator_monotonicity(
                |q| op.apply(q),
                entries.len(),
                cfg.seed,
                cfg.probe_pairs,
            );
            json!({
                "operator": "frozen single-entry Q update",
                "learning_rate": lr,
                "own_coefficient": op.coefficients.own,
                "bootstrap_coefficient": op.coefficients.bootstrap,
                "random_pairs": report_json(&pairs),
                "single_node_bumps": report_json(&bumps),
                "monotone": op.coefficients.is_monotone() && bumps.is_monotone() && pairs.is_monotone(),
            })
        }
        Kind::Linfa => {
            let mdp = cfg.mdp().expect("validated mdp");
            let step = cfg.fa_config().step_size;
            let probe = linfa::probe_set(&mdp, 9);
            let coeffs: Vec<f64> = probe
                .iter()
                .map(|&(x, u)| 1.0 - step.at(x, u) * linfa::features(x, u).squared_norm())
                .collect();
            let negative = coeffs
                .iter()
                .filter(|c| **c < -lqlab_core::monotone::VIOLATION_TOLERANCE)
                .count();
            json!({
                "operator": "per-sample semi-gradient update",
                "samples": probe.len(),
                "negative_self_coefficients": negative,
                "min_self_coefficient": coeffs.iter().cloned().fold(f64::INFINITY, f64::min),
                "monotone": negative == 0,
            })
        }
        Kind::Sweep => unreachable!("base kind is never sweep"),
    }
}
