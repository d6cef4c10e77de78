//! Monotone and non-monotone dynamic-programming schemes for the scalar
//! discounted linear-quadratic control problem.
//!
//! - [`lq`]: problem definition, closed-form Riccati solution, Euler MDP.
//! - [`hjb`]: finite-difference value and policy iteration for the HJB
//!   equation with upwind, downwind or central differencing.
//! - [`monotone`]: monotonicity probes, stencil-coefficient checks,
//!   divergence monitor and error metrics.
//! - [`qlearn`]: tabular Q-learning on the discretized MDP.
//! - [`linfa`]: semi-gradient Q-learning with quadratic features.

pub mod error;
pub mod grid;
pub mod hjb;
pub mod linfa;
pub mod lq;
pub mod monotone;
pub mod qlearn;

pub use error::ConfigError;
pub use grid::{Grid1D, PolicyField, ValueField};
pub use hjb::{
    hamiltonian_minimize, monotone_mesh_bound, policy_iteration, value_iteration, Differencing,
    HjbSolution, SchemeConfig, SolveError,
};
pub use lq::{
    analytic_policy, analytic_value, riccati_solve, DiscreteMdp, LqProblem, RiccatiSolution,
};
pub use monotone::{coefficient_check, probe_operator_monotonicity, sup_error, DivergenceMonitor};
