//! Finite-difference fixed-point solvers for the discounted HJB equation
//!
//! ```text
//! -beta V + min_u { V'(x) (A x + B u) + Q x^2 + R u^2 } = 0
//! ```
//!
//! rearranged as the relaxation `V <- ((g - beta) / g) V + (1 / g) min_u H`
//! with relaxation rate `g > beta`. The derivative is replaced by a one-sided
//! or central difference selected by [`Differencing`]; with upwind
//! differencing every stencil coefficient is nonnegative as soon as
//! `dx >= |A x_i + B u*| / (g - beta)` (see [`monotone_mesh_bound`]).

use thiserror::Error;

use crate::error::{ensure, ConfigError};
use crate::grid::{sup_distance, sup_norm, Grid1D, PolicyField, ValueField};
use crate::lq::{riccati_solve, LqProblem};
use crate::monotone::{DivergenceMonitor, DEFAULT_DIVERGENCE_THRESHOLD};

/// Candidates whose Hamiltonian values differ by at most this are tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Differencing {
    /// Forward difference where the drift is nonnegative, backward otherwise.
    Upwind,
    /// The wrong-sided variant of [`Differencing::Upwind`].
    Downwind,
    /// `(V_{i+1} - V_{i-1}) / (2 dx)` on every interior node.
    Central,
}

/// Which coefficient multiplies `V_i` in the relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CoefficientForm {
    /// `(g - beta) / g`, the form whose fixed points solve the HJB equation.
    Consistent,
    /// `(beta + g) / g`, kept for side-by-side comparison only; its fixed
    /// point solves `beta V + min H = 0` and the iteration is expansive.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub relaxation_rate: f64,
    pub differencing: Differencing,
    pub coefficient_form: CoefficientForm,
    /// Value-iteration stopping threshold on `max |V_new - V|`.
    pub theta: f64,
    pub max_iters: usize,
    pub theta_v: f64,
    pub theta_u: f64,
    pub max_policy_evals: usize,
    pub max_policy_improvements: usize,
    pub divergence_threshold: f64,
}

impl SchemeConfig {
    pub fn new(relaxation_rate: f64, differencing: Differencing) -> Self {
        Self {
            relaxation_rate,
            differencing,
            coefficient_form: CoefficientForm::Consistent,
            theta: 1e-8,
            max_iters: 1_000_000,
            theta_v: 1e-8,
            theta_u: 1e-8,
            max_policy_evals: 1_000_000,
            max_policy_improvements: 1_000,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
        }
    }

    /// Uses the smallest relaxation rate for which every admissible control
    /// satisfies the monotone mesh bound on `grid`.
    pub fn for_grid(problem: &LqProblem, grid: &Grid1D, differencing: Differencing) -> Self {
        Self::new(monotone_relaxation_rate(problem, grid), differencing)
    }

    pub fn with_thresholds(mut self, theta: f64) -> Self {
        self.theta = theta;
        self.theta_v = theta;
        self
    }

    pub fn validate(&self, problem: &LqProblem) -> Result<(), ConfigError> {
        ensure(
            self.relaxation_rate.is_finite() && self.relaxation_rate > 0.0,
            "scheme.relaxation_rate",
            "must be finite and > 0",
        )?;
        if self.coefficient_form == CoefficientForm::Consistent {
            ensure(
                self.relaxation_rate > problem.discount_rate,
                "scheme.relaxation_rate",
                format!(
                    "must exceed the discount rate {} (got {})",
                    problem.discount_rate, self.relaxation_rate
                ),
            )?;
        }
        ensure(self.theta > 0.0, "scheme.theta", "must be > 0")?;
        ensure(self.theta_v > 0.0, "scheme.theta_v", "must be > 0")?;
        ensure(self.theta_u > 0.0, "scheme.theta_u", "must be > 0")?;
        ensure(self.max_iters >= 1, "scheme.max_iters", "must be >= 1")?;
        ensure(
            self.max_policy_evals >= 1,
            "scheme.max_policy_evals",
            "must be >= 1",
        )?;
        ensure(
            self.max_policy_improvements >= 1,
            "scheme.max_policy_improvements",
            "must be >= 1",
        )?;
        ensure(
            self.divergence_threshold > 0.0,
            "scheme.divergence_threshold",
            "must be > 0",
        )?;
        Ok(())
    }

    /// Coefficient of `V_i` before the difference terms are added.
    #[inline]
    pub fn retain(&self, discount_rate: f64) -> f64 {
        match self.coefficient_form {
            CoefficientForm::Consistent => {
                (self.relaxation_rate - discount_rate) / self.relaxation_rate
            }
            CoefficientForm::Literal => {
                (self.relaxation_rate + discount_rate) / self.relaxation_rate
            }
        }
    }
}

/// `beta + max|A x + B u| / dx` over the grid and the control box.
pub fn monotone_relaxation_rate(problem: &LqProblem, grid: &Grid1D) -> f64 {
    let max_drift = problem.drift.abs() * grid.max_abs()
        + problem.control_gain.abs() * problem.u_min.abs().max(problem.u_max.abs());
    problem.discount_rate + max_drift / grid.dx()
}

/// Smallest mesh spacing for which the `V_i` coefficient of the upwind update
/// at `x_i` with control `u_star` stays nonnegative: `|A x_i + B u*| / (g - beta)`.
pub fn monotone_mesh_bound(problem: &LqProblem, cfg: &SchemeConfig, x_i: f64, u_star: f64) -> f64 {
    problem.dynamics(x_i, u_star).abs() / (cfg.relaxation_rate - problem.discount_rate)
}

/// Errors out when the analytic optimum `-G x` would leave the control box
/// somewhere on the state domain.
pub fn check_control_bounds(problem: &LqProblem) -> Result<(), ConfigError> {
    let sol = riccati_solve(problem);
    for x in [problem.x_min, problem.x_max] {
        let u = sol.policy(x);
        ensure(
            u >= problem.u_min && u <= problem.u_max,
            "problem.u_min",
            format!(
                "control box [{}, {}] binds the optimal control {u} at x = {x}",
                problem.u_min, problem.u_max
            ),
        )?;
    }
    Ok(())
}

/// Half-lines of the control axis split at zero drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    /// `A x + B u >= 0`.
    R1,
    /// `A x + B u < 0`.
    R2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stencil {
    Forward,
    Backward,
    Central,
}

/// Stencil used at node `i` of `n` for a control in `region`. Boundary nodes
/// fall back to the single one-sided difference that exists.
pub fn stencil_for(differencing: Differencing, region: Region, i: usize, n: usize) -> Stencil {
    let wanted = match (differencing, region) {
        (Differencing::Upwind, Region::R1) | (Differencing::Downwind, Region::R2) => {
            Stencil::Forward
        }
        (Differencing::Upwind, Region::R2) | (Differencing::Downwind, Region::R1) => {
            Stencil::Backward
        }
        (Differencing::Central, _) => Stencil::Central,
    };
    if i == 0 {
        Stencil::Forward
    } else if i + 1 == n {
        Stencil::Backward
    } else {
        wanted
    }
}

#[inline]
fn slope(values: &[f64], i: usize, dx: f64, stencil: Stencil) -> f64 {
    match stencil {
        Stencil::Forward => (values[i + 1] - values[i]) / dx,
        Stencil::Backward => (values[i] - values[i - 1]) / dx,
        Stencil::Central => (values[i + 1] - values[i - 1]) / (2.0 * dx),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianResult {
    pub u_star: f64,
    pub h_star: f64,
    pub region: Region,
    pub stencil: Stencil,
}

/// Minimizer of `h(u) = slope * (A x + B u) + Q x^2 + R u^2` over `[lo, hi]`.
#[inline]
fn clipped_quadratic_min(problem: &LqProblem, x: f64, slope: f64, lo: f64, hi: f64) -> (f64, f64) {
    let unconstrained = -slope * problem.control_gain / (2.0 * problem.control_cost);
    let u = unconstrained.clamp(lo, hi);
    (
        u,
        slope * problem.dynamics(x, u) + problem.running_cost(x, u),
    )
}

/// Minimizes the discrete Hamiltonian at node `i`.
///
/// For one-sided modes the control axis is split at zero drift; each half is
/// a clipped quadratic with its own difference quotient, and the smaller of
/// the two minima wins (ties: smaller `|u|`, then `R1`). The minimizer of the
/// open half `R2` sitting on the split point is reported as `R1`.
pub fn hamiltonian_minimize(
    problem: &LqProblem,
    grid: &Grid1D,
    values: &[f64],
    i: usize,
    differencing: Differencing,
) -> HamiltonianResult {
    let n = grid.n_nodes();
    let dx = grid.dx();
    let x = grid.node(i);
    let (u_min, u_max) = (problem.u_min, problem.u_max);

    let finish = |u: f64, h: f64| {
        let region = if problem.dynamics(x, u) >= 0.0 {
            Region::R1
        } else {
            Region::R2
        };
        HamiltonianResult {
            u_star: u,
            h_star: h,
            region,
            stencil: stencil_for(differencing, region, i, n),
        }
    };

    if differencing == Differencing::Central {
        let d = slope(values, i, dx, stencil_for(differencing, Region::R1, i, n));
        let (u, h) = clipped_quadratic_min(problem, x, d, u_min, u_max);
        return finish(u, h);
    }

    let split = problem.zero_drift_control(x);
    let d1 = slope(values, i, dx, stencil_for(differencing, Region::R1, i, n));
    let d2 = slope(values, i, dx, stencil_for(differencing, Region::R2, i, n));

    let first =
        (split <= u_max).then(|| clipped_quadratic_min(problem, x, d1, split.max(u_min), u_max));
    let second = (split > u_min).then(|| {
        let (u, h) = clipped_quadratic_min(problem, x, d2, u_min, split.min(u_max));
        if u >= split {
            // Infimum over the open half-line is attained on its closure.
            (split, problem.running_cost(x, split))
        } else {
            (u, h)
        }
    });

    let (u, h) = match (first, second) {
        (Some(a), Some(b)) => {
            if (a.1 - b.1).abs() <= TIE_TOLERANCE {
                if b.0.abs() < a.0.abs() {
                    b
                } else {
                    a
                }
            } else if a.1 < b.1 {
                a
            } else {
                b
            }
        }
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => unreachable!("control box is nonempty"),
    };
    finish(u, h)
}

/// Greedy controls of `values` at every node.
pub fn greedy_policy(
    problem: &LqProblem,
    grid: &Grid1D,
    values: &[f64],
    differencing: Differencing,
) -> PolicyField {
    PolicyField {
        grid: *grid,
        controls: (0..grid.n_nodes())
            .map(|i| hamiltonian_minimize(problem, grid, values, i, differencing).u_star)
            .collect(),
    }
}

/// One Jacobi sweep of the value-iteration update.
pub fn vi_step(problem: &LqProblem, grid: &Grid1D, cfg: &SchemeConfig, values: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    vi_step_into(problem, grid, cfg, values, &mut out);
    out
}

fn vi_step_into(
    problem: &LqProblem,
    grid: &Grid1D,
    cfg: &SchemeConfig,
    values: &[f64],
    out: &mut [f64],
) {
    let retain = cfg.retain(problem.discount_rate);
    let inv_rate = 1.0 / cfg.relaxation_rate;
    for (i, o) in out.iter_mut().enumerate() {
        let h = hamiltonian_minimize(problem, grid, values, i, cfg.differencing).h_star;
        *o = retain * values[i] + inv_rate * h;
    }
}

/// `-beta V_i + min_u H_i` at every node.
pub fn hjb_residual(
    problem: &LqProblem,
    grid: &Grid1D,
    values: &[f64],
    differencing: Differencing,
) -> Vec<f64> {
    (0..grid.n_nodes())
        .map(|i| {
            -problem.discount_rate * values[i]
                + hamiltonian_minimize(problem, grid, values, i, differencing).h_star
        })
        .collect()
}

/// Coefficients of `V_{i-1}`, `V_i`, `V_{i+1}` in a linear update at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StencilCoefficients {
    pub minus: f64,
    pub center: f64,
    pub plus: f64,
    /// Source term `(Q x^2 + R u^2) / g`.
    pub constant: f64,
}

/// The value-iteration update with the control frozen at every node, which
/// makes it an affine map `V -> C V + c`. This is the policy-evaluation
/// operator of policy iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenPolicyOperator {
    dx: f64,
    retain: f64,
    inv_rate: f64,
    controls: Vec<f64>,
    drift: Vec<f64>,
    cost: Vec<f64>,
    stencils: Vec<Stencil>,
}

impl FrozenPolicyOperator {
    /// Stencils follow the sign of the drift under each frozen control.
    pub fn new(problem: &LqProblem, grid: &Grid1D, cfg: &SchemeConfig, controls: &[f64]) -> Self {
        let n = grid.n_nodes();
        assert_eq!(controls.len(), n, "one control per node");
        let mut drift = Vec::with_capacity(n);
        let mut cost = Vec::with_capacity(n);
        let mut stencils = Vec::with_capacity(n);
        for (i, &u) in controls.iter().enumerate() {
            let x = grid.node(i);
            let b = problem.dynamics(x, u);
            let region = if b >= 0.0 { Region::R1 } else { Region::R2 };
            drift.push(b);
            cost.push(problem.running_cost(x, u));
            stencils.push(stencil_for(cfg.differencing, region, i, n));
        }
        Self {
            dx: grid.dx(),
            retain: cfg.retain(problem.discount_rate),
            inv_rate: 1.0 / cfg.relaxation_rate,
            controls: controls.to_vec(),
            drift,
            cost,
            stencils,
        }
    }

    /// Freezes the greedy controls of `values`.
    pub fn greedy(problem: &LqProblem, grid: &Grid1D, cfg: &SchemeConfig, values: &[f64]) -> Self {
        let policy = greedy_policy(problem, grid, values, cfg.differencing);
        Self::new(problem, grid, cfg, &policy.controls)
    }

    pub fn controls(&self) -> &[f64] {
        &self.controls
    }

    pub fn stencils(&self) -> &[Stencil] {
        &self.stencils
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; values.len()];
        self.apply_into(values, &mut out);
        out
    }

    pub fn apply_into(&self, values: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let h = slope(values, i, self.dx, self.stencils[i]) * self.drift[i] + self.cost[i];
            *o = self.retain * values[i] + self.inv_rate * h;
        }
    }

    pub fn coefficients(&self) -> Vec<StencilCoefficients> {
        (0..self.drift.len())
            .map(|i| {
                let flux = self.drift[i] * self.inv_rate / self.dx;
                let (minus, center, plus) = match self.stencils[i] {
                    Stencil::Forward => (0.0, self.retain - flux, flux),
                    Stencil::Backward => (-flux, self.retain + flux, 0.0),
                    Stencil::Central => (-0.5 * flux, self.retain, 0.5 * flux),
                };
                StencilCoefficients {
                    minus,
                    center,
                    plus,
                    constant: self.inv_rate * self.cost[i],
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `max |V_new - V|`.
    pub residual: f64,
    /// `max |V_new|`.
    pub sup_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub evaluation_sweeps: usize,
    /// `max |u_new - u|` after the improvement step.
    pub policy_change: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceLog {
    pub iterations: Vec<IterationRecord>,
    /// Policy-iteration rounds; empty for value iteration.
    pub rounds: Vec<RoundRecord>,
}

impl ConvergenceLog {
    /// Length of the longest run of strictly increasing residuals, counted in
    /// increases (so a run of `k + 1` records counts `k`).
    pub fn longest_residual_increase(&self) -> usize {
        let mut best = 0;
        let mut run = 0;
        for w in self.iterations.windows(2) {
            if w[1].residual > w[0].residual {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
        best
    }

    pub fn last_residual(&self) -> Option<f64> {
        self.iterations.last().map(|r| r.residual)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HjbSolution {
    pub value: ValueField,
    pub policy: PolicyField,
    pub log: ConvergenceLog,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error(transparent)]
    Invalid(#[from] ConfigError),
    #[error("diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        partial: Box<HjbSolution>,
    },
    #[error("not converged after {iterations} iterations")]
    NotConverged {
        iterations: usize,
        partial: Box<HjbSolution>,
    },
}

impl SolveError {
    /// Fields and log at the point the solver stopped, if it ran.
    pub fn partial(&self) -> Option<&HjbSolution> {
        match self {
            SolveError::Invalid(_) => None,
            SolveError::Diverged { partial, .. } | SolveError::NotConverged { partial, .. } => {
                Some(partial)
            }
        }
    }
}

fn prepare(problem: &LqProblem, grid: &Grid1D, cfg: &SchemeConfig) -> Result<(), ConfigError> {
    problem.validate()?;
    cfg.validate(problem)?;
    check_control_bounds(problem)?;
    ensure(
        grid.x_min() == problem.x_min && grid.x_max() == problem.x_max,
        "grid",
        "grid must span the problem's state domain",
    )
}

/// Value iteration from `V = 0`.
pub fn value_iteration(
    problem: &LqProblem,
    grid: &Grid1D,
    cfg: &SchemeConfig,
) -> Result<HjbSolution, SolveError> {
    value_iteration_from(problem, grid, cfg, ValueField::zeros(*grid))
}

/// Jacobi value iteration: every node reads the previous iterate. Stops when
/// `max |V_new - V| < theta`, or fails on divergence or after `max_iters`.
pub fn value_iteration_from(
    problem: &LqProblem,
    grid: &Grid1D,
    cfg: &SchemeConfig,
    initial: ValueField,
) -> Result<HjbSolution, SolveError> {
    prepare(problem, grid, cfg)?;
    assert_eq!(initial.values.len(), grid.n_nodes());
    let mut v = initial.values;
    let mut next = vec![0.0; v.len()];
    let mut monitor = DivergenceMonitor::new(cfg.divergence_threshold);
    let mut log = ConvergenceLog::default();

    let finish = |v: Vec<f64>, log: ConvergenceLog| {
        let policy = greedy_policy(problem, grid, &v, cfg.differencing);
        HjbSolution {
            value: ValueField {
                grid: *grid,
                values: v,
            },
            policy,
            log,
        }
    };

    for iteration in 1..=cfg.max_iters {
        vi_step_into(problem, grid, cfg, &v, &mut next);
        let residual = sup_distance(&next, &v);
        log.iterations.push(IterationRecord {
            iteration,
            residual,
            sup_norm: sup_norm(&next),
        });
        std::mem::swap(&mut v, &mut next);
        if monitor.observe(iteration, &v) {
            return Err(SolveError::Diverged {
                iteration,
                partial: Box::new(finish(v, log)),
            });
        }
        if residual < cfg.theta {
            return Ok(finish(v, log));
        }
    }
    Err(SolveError::NotConverged {
        iterations: cfg.max_iters,
        partial: Box::new(finish(v, log)),
    })
}

/// Policy iteration starting from `u0`: evaluate the frozen policy until
/// `max |V_new - V| < theta_v`, improve greedily, and stop once the policy
/// moves by less than `theta_u`. The value estimate is warm-started across
/// rounds.
pub fn policy_iteration(
    problem: &LqProblem,
    grid: &Grid1D,
    cfg: &SchemeConfig,
    u0: &PolicyField,
) -> Result<HjbSolution, SolveError> {
    prepare(problem, grid, cfg)?;
    ensure(
        u0.controls.len() == grid.n_nodes()
            && u0
                .controls
                .iter()
                .all(|u| *u >= problem.u_min && *u <= problem.u_max),
        "policy",
        "initial policy must give one admissible control per node",
    )?;

    let mut u = u0.controls.clone();
    let mut v = vec![0.0; grid.n_nodes()];
    let mut next = vec![0.0; grid.n_nodes()];
    let mut monitor = DivergenceMonitor::new(cfg.divergence_threshold);
    let mut log = ConvergenceLog::default();
    let mut sweep = 0;

    let pack = |v: Vec<f64>, u: Vec<f64>, log: ConvergenceLog| HjbSolution {
        value: ValueField {
            grid: *grid,
            values: v,
        },
        policy: PolicyField {
            grid: *grid,
            controls: u,
        },
        log,
    };

    for round in 1..=cfg.max_policy_improvements {
        let op = FrozenPolicyOperator::new(problem, grid, cfg, &u);
        let mut evaluated = false;
        let mut sweeps = 0;
        while sweeps < cfg.max_policy_evals {
            sweeps += 1;
            sweep += 1;
            op.apply_into(&v, &mut next);
            let residual = sup_distance(&next, &v);
            log.iterations.push(IterationRecord {
                iteration: sweep,
                residual,
                sup_norm: sup_norm(&next),
            });
            std::mem::swap(&mut v, &mut next);
            if monitor.observe(sweep, &v) {
                return Err(SolveError::Diverged {
                    iteration: sweep,
                    partial: Box::new(pack(v, u, log)),
                });
            }
            if residual < cfg.theta_v {
                evaluated = true;
                break;
            }
        }
        if !evaluated {
            return Err(SolveError::NotConverged {
                iterations: sweep,
                partial: Box::new(pack(v, u, log)),
            });
        }

        let improved = greedy_policy(problem, grid, &v, cfg.differencing).controls;
        let change = sup_distance(&improved, &u);
        log.rounds.push(RoundRecord {
            round,
            evaluation_sweeps: sweeps,
            policy_change: change,
        });
        u = improved;
        if change < cfg.theta_u {
            return Ok(pack(v, u, log));
        }
    }
    Err(SolveError::NotConverged {
        iterations: sweep,
        partial: Box::new(pack(v, u, log)),
    })
}
