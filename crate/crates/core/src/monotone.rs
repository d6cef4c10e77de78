//! Monotonicity diagnostics for explicit update operators, the divergence
//! tripwire, and error metrics against the analytic solution.
//!
//! An update `S` is monotone when `u >= v` componentwise implies
//! `S u >= S v`. For a linear stencil this is the same as every coefficient
//! being nonnegative; [`coefficient_check`] tests the stencil directly and
//! [`probe_operator_monotonicity`] tests the definition on random ordered
//! pairs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{Grid1D, ValueField};
use crate::hjb::{FrozenPolicyOperator, SchemeConfig, StencilCoefficients};
use crate::lq::{analytic_value, LqProblem, RiccatiSolution};

/// Gap below which a component counts as a violation.
pub const VIOLATION_TOLERANCE: f64 = 1e-12;

/// Default sup-norm divergence threshold.
pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Central fraction of the domain used by error metrics; the outer sixth at
/// each end is affected by the one-sided boundary stencils.
pub const INTERIOR_FRACTION: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub n_pairs_tested: usize,
    pub n_violations: usize,
    /// Most negative `S(v + d)_i - S(v)_i` seen (0 when none is negative).
    pub worst_violation: f64,
    pub violating_node: Option<usize>,
}

impl MonotonicityReport {
    fn new() -> Self {
        Self {
            n_pairs_tested: 0,
            n_violations: 0,
            worst_violation: 0.0,
            violating_node: None,
        }
    }

    fn record(&mut self, low: &[f64], high: &[f64]) {
        self.n_pairs_tested += 1;
        for (i, (l, h)) in low.iter().zip(high).enumerate() {
            let gap = h - l;
            // NaN gaps count as violations.
            if gap.is_nan() || gap < -VIOLATION_TOLERANCE {
                self.n_violations += 1;
                let gap = if gap.is_nan() { f64::NEG_INFINITY } else { gap };
                if gap < self.worst_violation {
                    self.worst_violation = gap;
                    self.violating_node = Some(i);
                }
            }
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.n_violations == 0
    }
}

/// How the nonnegative perturbation `d` of a probe pair was drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BumpKind {
    SingleNode,
    Constant,
    Random,
}

/// Draws `n_pairs` ordered pairs `(v, v + d)` with `d >= 0` and checks
/// `S(v + d) >= S(v)` componentwise. Pair `k` uses its own ChaCha stream
/// (`seed`, `k`) and cycles through single-node, constant and random bumps,
/// so results do not depend on evaluation order.
pub fn probe_operator_monotonicity<F>(
    apply: F,
    dim: usize,
    seed: u64,
    n_pairs: usize,
) -> MonotonicityReport
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut report = MonotonicityReport::new();
    for k in 0..n_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let base: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kind = match k % 3 {
            0 => BumpKind::SingleNode,
            1 => BumpKind::Constant,
            _ => BumpKind::Random,
        };
        let bumped = bump(&base, kind, &mut rng);
        report.record(&apply(&base), &apply(&bumped));
    }
    report
}

fn bump(base: &[f64], kind: BumpKind, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = base.to_vec();
    match kind {
        BumpKind::SingleNode => {
            let i = rng.random_range(0..base.len());
            out[i] += rng.random_range(0.0..1.0);
        }
        BumpKind::Constant => {
            let c: f64 = rng.random_range(0.0..1.0);
            out.iter_mut().for_each(|v| *v += c);
        }
        BumpKind::Random => {
            out.iter_mut()
                .for_each(|v| *v += rng.random_range(0.0..1.0));
        }
    }
    out
}

/// Bumps `base` by `magnitude` at each listed node in turn and records the
/// resulting pairs.
pub fn probe_single_node_bumps<F>(
    apply: F,
    base: &[f64],
    nodes: &[usize],
    magnitude: f64,
) -> MonotonicityReport
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    assert!(magnitude >= 0.0, "bump magnitude must be nonnegative");
    let mut report = MonotonicityReport::new();
    let low = apply(base);
    for &i in nodes {
        let mut bumped = base.to_vec();
        bumped[i] += magnitude;
        report.record(&low, &apply(&bumped));
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientName {
    Minus,
    Center,
    Plus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientViolation {
    pub node: usize,
    pub coefficient: CoefficientName,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientReport {
    pub coefficients: Vec<StencilCoefficients>,
    pub violations: Vec<CoefficientViolation>,
}

impl CoefficientReport {
    pub fn from_coefficients(coefficients: Vec<StencilCoefficients>) -> Self {
        let mut violations = Vec::new();
        for (node, c) in coefficients.iter().enumerate() {
            for (coefficient, value) in [
                (CoefficientName::Minus, c.minus),
                (CoefficientName::Center, c.center),
                (CoefficientName::Plus, c.plus),
            ] {
                if value < -VIOLATION_TOLERANCE {
                    violations.push(CoefficientViolation {
                        node,
                        coefficient,
                        value,
                    });
                }
            }
        }
        Self {
            coefficients,
            violations,
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Freezes the greedy control of `v` at every node and reports the negative
/// stencil coefficients of the resulting linear update.
pub fn coefficient_check(
    problem: &LqProblem,
    grid: &Grid1D,
    cfg: &SchemeConfig,
    v: &ValueField,
) -> CoefficientReport {
    let op = FrozenPolicyOperator::greedy(problem, grid, cfg, &v.values);
    CoefficientReport::from_coefficients(op.coefficients())
}

/// Sup-norm tripwire: trips on the first iterate whose sup-norm exceeds the
/// threshold or that contains a non-finite value.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceMonitor {
    pub threshold: f64,
    pub tripped: bool,
    pub trip_iteration: Option<usize>,
}

impl Default for DivergenceMonitor {
    fn default() -> Self {
        Self::new(DEFAULT_DIVERGENCE_THRESHOLD)
    }
}

impl DivergenceMonitor {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            tripped: false,
            trip_iteration: None,
        }
    }

    /// Returns `true` once tripped. The first trip iteration is kept.
    pub fn observe(&mut self, iteration: usize, values: &[f64]) -> bool {
        if !self.tripped && values.iter().any(|v| !self.admissible(*v)) {
            self.trip(iteration);
        }
        self.tripped
    }

    pub fn observe_value(&mut self, iteration: usize, value: f64) -> bool {
        if !self.tripped && !self.admissible(value) {
            self.trip(iteration);
        }
        self.tripped
    }

    #[inline]
    fn admissible(&self, v: f64) -> bool {
        v.is_finite() && v.abs() <= self.threshold
    }

    fn trip(&mut self, iteration: usize) {
        self.tripped = true;
        self.trip_iteration = Some(iteration);
    }
}

/// Indices of the nodes in the central `fraction` of the grid's extent.
pub fn interior_nodes(grid: &Grid1D, fraction: f64) -> Vec<usize> {
    assert!(
        fraction > 0.0 && fraction <= 1.0,
        "interior fraction must lie in (0, 1]"
    );
    let mid = 0.5 * (grid.x_min() + grid.x_max());
    let half = 0.5 * fraction * (grid.x_max() - grid.x_min());
    let slack = 1e-9 * grid.dx();
    (0..grid.n_nodes())
        .filter(|&i| (grid.node(i) - mid).abs() <= half + slack)
        .collect()
}

/// Max over the central `interior_fraction` of nodes of `|v_i - G x_i^2|`.
pub fn sup_error(v: &ValueField, sol: &RiccatiSolution, interior_fraction: f64) -> f64 {
    interior_nodes(&v.grid, interior_fraction)
        .into_iter()
        .map(|i| (v.values[i] - analytic_value(sol, v.grid.node(i))).abs())
        .fold(0.0, f64::max)
}

/// [`sup_error`] divided by the largest analytic value on the same nodes.
pub fn relative_sup_error(v: &ValueField, sol: &RiccatiSolution, interior_fraction: f64) -> f64 {
    let scale = interior_nodes(&v.grid, interior_fraction)
        .into_iter()
        .map(|i| analytic_value(sol, v.grid.node(i)).abs())
        .fold(0.0, f64::max);
    sup_error(v, sol, interior_fraction) / scale
}

/// Ordinary least-squares slope of `ys` on `xs` (with intercept).
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lq::riccati_solve;

    fn grid() -> Grid1D {
        Grid1D::new(-2.0, 2.0, 41).unwrap()
    }

    #[test]
    fn identity_operator_is_monotone() {
        let g = grid();
        let report = probe_operator_monotonicity(|v| v.to_vec(), g.n_nodes(), 7, 300);
        assert_eq!(report.n_pairs_tested, 300);
        assert!(report.is_monotone());
        assert_eq!(report.violating_node, None);
        assert!(report.worst_violation >= -VIOLATION_TOLERANCE);
    }

    #[test]
    fn zero_bump_never_violates() {
        let g = grid();
        let base = vec![0.3; g.n_nodes()];
        let negate = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
        let report = probe_single_node_bumps(negate, &base, &[3, 9], 0.0);
        assert!(report.is_monotone());
    }

    #[test]
    fn negative_coupling_is_caught() {
        let g = grid();
        // S(v)_i = v_i - 2 v_{i+1}: bumping node i+1 lowers S_i.
        let op = |v: &[f64]| {
            let n = v.len();
            (0..n)
                .map(|i| v[i] - if i + 1 < n { 2.0 * v[i + 1] } else { 0.0 })
                .collect::<Vec<_>>()
        };
        let report = probe_operator_monotonicity(op, g.n_nodes(), 1, 30);
        assert!(report.n_violations > 0);
        assert!(report.worst_violation < -VIOLATION_TOLERANCE);
        let targeted = probe_single_node_bumps(op, &vec![0.0; g.n_nodes()], &[5], 1.0);
        assert_eq!(targeted.n_violations, 1);
        assert_eq!(targeted.violating_node, Some(4));
        assert_eq!(targeted.worst_violation, -2.0);
    }

    #[test]
    fn probe_is_reproducible() {
        let g = grid();
        let op = |v: &[f64]| v.iter().map(|x| x.sin()).collect::<Vec<_>>();
        let a = probe_operator_monotonicity(op, g.n_nodes(), 42, 50);
        let b = probe_operator_monotonicity(op, g.n_nodes(), 42, 50);
        assert_eq!(a, b);
    }

    #[test]
    fn monitor_trips_on_threshold_and_non_finite() {
        let mut m = DivergenceMonitor::new(10.0);
        assert!(!m.observe(1, &[1.0, -9.0]));
        assert!(m.observe(2, &[1.0, -11.0]));
        assert!(m.observe(3, &[0.0]));
        assert_eq!(m.trip_iteration, Some(2));

        let mut m = DivergenceMonitor::new(f64::INFINITY);
        assert!(m.observe(4, &[f64::NAN]));
        let mut m = DivergenceMonitor::new(f64::MAX);
        assert!(m.observe_value(5, f64::INFINITY));
        assert_eq!(m.trip_iteration, Some(5));
    }

    #[test]
    fn sup_error_examples() {
        let problem = LqProblem::new(0.5, 1.0).unwrap();
        let sol = riccati_solve(&problem);
        let g = grid();
        let exact = ValueField::from_fn(g, |x| sol.value(x));
        assert_eq!(sup_error(&exact, &sol, INTERIOR_FRACTION), 0.0);
        let shifted = ValueField::from_fn(g, |x| sol.value(x) + 0.1);
        assert!((sup_error(&shifted, &sol, INTERIOR_FRACTION) - 0.1).abs() < 1e-12);
        assert!((sup_error(&shifted, &sol, 1.0) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn interior_nodes_are_central() {
        let g = Grid1D::new(-2.0, 2.0, 401).unwrap();
        let nodes = interior_nodes(&g, INTERIOR_FRACTION);
        let first = g.node(nodes[0]);
        let last = g.node(*nodes.last().unwrap());
        assert!(first >= -4.0 / 3.0 - 1e-9 && first < -4.0 / 3.0 + g.dx());
        assert!((first + last).abs() < 1e-9);
        assert_eq!(interior_nodes(&g, 1.0).len(), 401);
    }

    #[test]
    fn slope_of_a_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 - 2.0 * x).collect();
        assert!((least_squares_slope(&xs, &ys) + 2.0).abs() < 1e-14);
    }
}
