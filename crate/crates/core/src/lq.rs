//! The scalar linear-quadratic problem, its closed-form Riccati solution, and
//! the explicit-Euler MDP used by the learning modules.
//!
//! Dynamics `dx/dt = A x + B u`, running cost `Q x^2 + R u^2`, discount rate
//! `beta`. With the quadratic ansatz `V(x) = G x^2 + 2 k x + l` the HJB
//! equation forces `k = l = 0` and
//!
//! ```text
//! (B^2 / R) G^2 + (beta - 2 A) G - Q = 0
//! ```
//!
//! whose positive root gives `V(x) = G x^2` and `u*(x) = -(B / R) G x`.

use crate::error::{ensure, ConfigError};
use crate::grid::Grid1D;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqProblem {
    /// Drift `A` (1/time).
    pub drift: f64,
    /// Continuous discount rate `beta` (1/time).
    pub discount_rate: f64,
    pub state_cost: f64,
    pub control_cost: f64,
    pub control_gain: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub u_min: f64,
    pub u_max: f64,
}

impl LqProblem {
    /// Unit weights on the default domain `x in [-2, 2]`, `u in [-4, 4]`.
    pub fn new(drift: f64, discount_rate: f64) -> Result<Self, ConfigError> {
        let p = Self {
            drift,
            discount_rate,
            state_cost: 1.0,
            control_cost: 1.0,
            control_gain: 1.0,
            x_min: -2.0,
            x_max: 2.0,
            u_min: -4.0,
            u_max: 4.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_state_domain(mut self, x_min: f64, x_max: f64) -> Result<Self, ConfigError> {
        self.x_min = x_min;
        self.x_max = x_max;
        self.validate()?;
        Ok(self)
    }

    pub fn with_control_domain(mut self, u_min: f64, u_max: f64) -> Result<Self, ConfigError> {
        self.u_min = u_min;
        self.u_max = u_max;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let all = [
            self.drift,
            self.discount_rate,
            self.state_cost,
            self.control_cost,
            self.control_gain,
            self.x_min,
            self.x_max,
            self.u_min,
            self.u_max,
        ];
        ensure(
            all.iter().all(|v| v.is_finite()),
            "problem",
            "all coefficients must be finite",
        )?;
        ensure(
            self.discount_rate > 0.0,
            "problem.discount_rate",
            "must be > 0",
        )?;
        ensure(self.state_cost > 0.0, "problem.state_cost", "must be > 0")?;
        ensure(
            self.control_cost > 0.0,
            "problem.control_cost",
            "must be > 0",
        )?;
        // Region split of the Hamiltonian assumes R1 = {u >= -A x / B}.
        ensure(
            self.control_gain > 0.0,
            "problem.control_gain",
            "must be > 0",
        )?;
        ensure(
            self.x_min < 0.0 && 0.0 < self.x_max,
            "problem.x_min",
            format!(
                "state domain [{}, {}] must bracket 0",
                self.x_min, self.x_max
            ),
        )?;
        ensure(
            self.u_min < 0.0 && 0.0 < self.u_max,
            "problem.u_min",
            format!(
                "control domain [{}, {}] must bracket 0",
                self.u_min, self.u_max
            ),
        )?;
        Ok(())
    }

    /// `A x + B u`.
    #[inline]
    pub fn dynamics(&self, x: f64, u: f64) -> f64 {
        self.drift * x + self.control_gain * u
    }

    /// `Q x^2 + R u^2`.
    #[inline]
    pub fn running_cost(&self, x: f64, u: f64) -> f64 {
        self.state_cost * x * x + self.control_cost * u * u
    }

    /// The control at which the drift changes sign, `-A x / B`.
    #[inline]
    pub fn zero_drift_control(&self, x: f64) -> f64 {
        -self.drift * x / self.control_gain
    }
}

/// Coefficients of `V(x) = gamma_coef x^2 + 2 kappa x + lambda_const`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiSolution {
    pub gamma_coef: f64,
    pub kappa: f64,
    pub lambda_const: f64,
    /// `B / R`, so that `u* = -(B / R)(gamma_coef x + kappa)`.
    pub gain_ratio: f64,
}

impl RiccatiSolution {
    pub fn value(&self, x: f64) -> f64 {
        analytic_value(self, x)
    }

    pub fn policy(&self, x: f64) -> f64 {
        analytic_policy(self, x)
    }
}

/// Positive root of the scalar Riccati quadratic, evaluated without
/// cancellation.
pub fn riccati_solve(problem: &LqProblem) -> RiccatiSolution {
    let a = problem.control_gain * problem.control_gain / problem.control_cost;
    let b = problem.discount_rate - 2.0 * problem.drift;
    let c = -problem.state_cost;
    let disc = b * b - 4.0 * a * c;
    let root = disc.sqrt();
    let gamma = if b >= 0.0 {
        (2.0 * -c) / (b + root)
    } else {
        (-b + root) / (2.0 * a)
    };
    assert!(
        gamma.is_finite() && gamma > 0.0,
        "internal error: no positive Riccati root for {problem:?}"
    );
    RiccatiSolution {
        gamma_coef: gamma,
        kappa: 0.0,
        lambda_const: 0.0,
        gain_ratio: problem.control_gain / problem.control_cost,
    }
}

/// `|G^2 + (beta - 2 A) G - 1|` in the general weighted form.
pub fn riccati_residual(problem: &LqProblem, sol: &RiccatiSolution) -> f64 {
    let a = problem.control_gain * problem.control_gain / problem.control_cost;
    let g = sol.gamma_coef;
    (a * g * g + (problem.discount_rate - 2.0 * problem.drift) * g - problem.state_cost).abs()
}

pub fn analytic_value(sol: &RiccatiSolution, x: f64) -> f64 {
    sol.gamma_coef * x * x + 2.0 * sol.kappa * x + sol.lambda_const
}

pub fn analytic_policy(sol: &RiccatiSolution, x: f64) -> f64 {
    -sol.gain_ratio * (sol.gamma_coef * x + sol.kappa)
}

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_STATE_NODES: usize = 81;
/// Step 0.2 on `[-4, 4]`. Finer action grids leave the snapped optimum too
/// flat: with 81 actions the exact discrete policy has slope about -0.83.
pub const DEFAULT_ACTION_NODES: usize = 41;

/// Discrete-time MDP obtained by an explicit Euler step of length `dt`,
/// with next states snapped to `state_grid`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteMdp {
    pub problem: LqProblem,
    pub dt: f64,
    pub discount_factor: f64,
    pub state_grid: Grid1D,
    pub action_grid: Grid1D,
}

impl DiscreteMdp {
    /// State grid over `[x_min, x_max]`, action grid over `[u_min, u_max]`,
    /// discount `exp(-beta dt)`.
    pub fn from_problem(
        problem: LqProblem,
        dt: f64,
        state_nodes: usize,
        action_nodes: usize,
    ) -> Result<Self, ConfigError> {
        problem.validate()?;
        ensure(
            dt.is_finite() && dt > 0.0,
            "mdp.dt",
            format!("must be > 0, got {dt}"),
        )?;
        let state_grid = Grid1D::new(problem.x_min, problem.x_max, state_nodes)
            .map_err(|e| ConfigError::new("mdp.state_nodes", e.reason))?;
        let action_grid = Grid1D::new(problem.u_min, problem.u_max, action_nodes)
            .map_err(|e| ConfigError::new("mdp.action_nodes", e.reason))?;
        let discount_factor = (-problem.discount_rate * dt).exp();
        ensure(
            discount_factor > 0.0 && discount_factor < 1.0,
            "mdp.dt",
            format!("discount factor {discount_factor} must lie in (0, 1)"),
        )?;
        Ok(Self {
            problem,
            dt,
            discount_factor,
            state_grid,
            action_grid,
        })
    }

    /// `from_problem` with the default step and grid sizes.
    pub fn with_defaults(problem: LqProblem) -> Result<Self, ConfigError> {
        Self::from_problem(
            problem,
            DEFAULT_DT,
            DEFAULT_STATE_NODES,
            DEFAULT_ACTION_NODES,
        )
    }

    /// Unsnapped, unclamped Euler successor.
    #[inline]
    pub fn euler(&self, x: f64, u: f64) -> f64 {
        x + self.dt * self.problem.dynamics(x, u)
    }

    /// `dt * (Q x^2 + R u^2)`.
    #[inline]
    pub fn stage_cost(&self, x: f64, u: f64) -> f64 {
        self.dt * self.problem.running_cost(x, u)
    }

    /// One transition: the Euler successor snapped to the nearest state node
    /// (clamped to the domain), and the stage cost.
    pub fn step(&self, x: f64, u: f64) -> (f64, f64) {
        let next = self.state_grid.snap(self.euler(x, u));
        (next, self.stage_cost(x, u))
    }

    /// Index form of [`DiscreteMdp::step`].
    #[inline]
    pub fn step_index(&self, s: usize, a: usize) -> (usize, f64) {
        let x = self.state_grid.node(s);
        let u = self.action_grid.node(a);
        (
            self.state_grid.nearest_index(self.euler(x, u)),
            self.stage_cost(x, u),
        )
    }

    /// Value coefficient `P` of the continuous-state Euler MDP (no snapping,
    /// no control bounds): `V_d(x) = P x^2` solves
    /// `P = dt Q + g a^2 P - (g a b P)^2 / (dt R + g b^2 P)` with
    /// `a = 1 + A dt`, `b = B dt`, `g = discount_factor`.
    pub fn euler_value_coefficient(&self) -> f64 {
        let (a, b, g) = self.euler_coefficients();
        let (q, r) = (
            self.dt * self.problem.state_cost,
            self.dt * self.problem.control_cost,
        );
        let mut p = 0.0_f64;
        for _ in 0..1_000_000 {
            let next = q + g * a * a * p - (g * a * b * p).powi(2) / (r + g * b * b * p);
            if (next - p).abs() <= 1e-15 * next.abs().max(1.0) {
                return next;
            }
            p = next;
        }
        p
    }

    /// Feedback gain `K` of the continuous-state Euler MDP, `u = -K x`.
    pub fn euler_feedback_gain(&self) -> f64 {
        let (a, b, g) = self.euler_coefficients();
        let p = self.euler_value_coefficient();
        g * a * b * p / (self.dt * self.problem.control_cost + g * b * b * p)
    }

    fn euler_coefficients(&self) -> (f64, f64, f64) {
        (
            1.0 + self.problem.drift * self.dt,
            self.problem.control_gain * self.dt,
            self.discount_factor,
        )
    }
}
