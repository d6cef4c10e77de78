//! Tabular Q-learning on the Euler-discretized LQ problem.
//!
//! Costs are minimized, so the bootstrap uses `min` over the next row:
//!
//! ```text
//! Q(s, a) <- (1 - lr) Q(s, a) + lr (c(s, a) + g min_b Q(s', b))
//! ```
//!
//! Both coefficients are nonnegative exactly when `0 <= lr <= 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::error::{ensure, ConfigError};
use crate::grid::{sup_distance, Grid1D, PolicyField, ValueField};
use crate::lq::{riccati_solve, DiscreteMdp};
use crate::monotone::{
    sup_error, DivergenceMonitor, DEFAULT_DIVERGENCE_THRESHOLD, INTERIOR_FRACTION,
};

/// Action values stored row-major by state node.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub state_grid: Grid1D,
    pub action_grid: Grid1D,
    q: Vec<f64>,
}

impl QTable {
    pub fn zeros(mdp: &DiscreteMdp) -> Self {
        Self::from_fn(mdp, |_, _| 0.0)
    }

    pub fn from_fn(mdp: &DiscreteMdp, f: impl Fn(f64, f64) -> f64) -> Self {
        let (sg, ag) = (mdp.state_grid, mdp.action_grid);
        let q = (0..sg.n_nodes())
            .flat_map(|s| (0..ag.n_nodes()).map(move |a| (s, a)))
            .map(|(s, a)| f(sg.node(s), ag.node(a)))
            .collect();
        Self {
            state_grid: sg,
            action_grid: ag,
            q,
        }
    }

    pub fn n_states(&self) -> usize {
        self.state_grid.n_nodes()
    }

    pub fn n_actions(&self) -> usize {
        self.action_grid.n_nodes()
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions() + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, value: f64) {
        let n = self.n_actions();
        self.q[s * n + a] = value;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        let n = self.n_actions();
        &self.q[s * n..(s + 1) * n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.q
    }

    pub fn max_abs(&self) -> f64 {
        crate::grid::sup_norm(&self.q)
    }

    /// Minimizing action of row `s`; ties go to the smaller `|u|`, then the
    /// smaller index.
    pub fn greedy_action(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for a in 1..row.len() {
            let (qa, qb) = (row[a], row[best]);
            if qa < qb
                || (qa == qb && self.action_grid.node(a).abs() < self.action_grid.node(best).abs())
            {
                best = a;
            }
        }
        best
    }

    pub fn min_row(&self, s: usize) -> f64 {
        self.get(s, self.greedy_action(s))
    }
}

/// One-step Bellman target `c(s, a) + g min_b Q(s', b)` and the successor.
pub fn bellman_target(qt: &QTable, mdp: &DiscreteMdp, s: usize, a: usize) -> (f64, usize) {
    let (next, cost) = mdp.step_index(s, a);
    (cost + mdp.discount_factor * qt.min_row(next), next)
}

/// Updates `Q(s, a)` in place and returns the new entry.
pub fn q_update(qt: &mut QTable, mdp: &DiscreteMdp, s: usize, a: usize, lr: f64) -> f64 {
    let (target, _) = bellman_target(qt, mdp, s, a);
    let updated = (1.0 - lr) * qt.get(s, a) + lr * target;
    qt.set(s, a, updated);
    updated
}

/// Coefficients of the entries read by one frozen `(s, a)` update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateCoefficients {
    /// Coefficient of `Q(s, a)`: `1 - lr`.
    pub own: f64,
    /// Coefficient of `Q(s', b*)`: `lr g`.
    pub bootstrap: f64,
    pub next_state: usize,
    pub next_action: usize,
}

impl UpdateCoefficients {
    pub fn is_monotone(&self) -> bool {
        self.own >= 0.0 && self.bootstrap >= 0.0
    }
}

pub fn update_coefficients(
    qt: &QTable,
    mdp: &DiscreteMdp,
    s: usize,
    a: usize,
    lr: f64,
) -> UpdateCoefficients {
    let (next, _) = mdp.step_index(s, a);
    UpdateCoefficients {
        own: 1.0 - lr,
        bootstrap: lr * mdp.discount_factor,
        next_state: next,
        next_action: qt.greedy_action(next),
    }
}

/// The single-entry update at `(s, a)` with the bootstrap action frozen, as
/// a map on the whole flattened table. Entries other than `(s, a)` pass
/// through unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrozenUpdate {
    pub index: usize,
    pub bootstrap_index: usize,
    pub cost: f64,
    pub lr: f64,
    pub coefficients: UpdateCoefficients,
}

impl FrozenUpdate {
    pub fn new(qt: &QTable, mdp: &DiscreteMdp, s: usize, a: usize, lr: f64) -> Self {
        let coefficients = update_coefficients(qt, mdp, s, a, lr);
        let (_, cost) = mdp.step_index(s, a);
        Self {
            index: s * qt.n_actions() + a,
            bootstrap_index: coefficients.next_state * qt.n_actions() + coefficients.next_action,
            cost,
            lr,
            coefficients,
        }
    }

    pub fn apply(&self, q: &[f64]) -> Vec<f64> {
        let mut out = q.to_vec();
        let c = &self.coefficients;
        out[self.index] =
            c.own * q[self.index] + c.bootstrap * q[self.bootstrap_index] + self.lr * self.cost;
        out
    }
}

/// One Jacobi sweep of the update over every `(s, a)` pair. Deterministic
/// counterpart of trajectory sampling.
pub fn synchronous_sweep(qt: &QTable, mdp: &DiscreteMdp, lr: f64) -> QTable {
    let mut out = qt.clone();
    for s in 0..qt.n_states() {
        for a in 0..qt.n_actions() {
            let (target, _) = bellman_target(qt, mdp, s, a);
            out.set(s, a, (1.0 - lr) * qt.get(s, a) + lr * target);
        }
    }
    out
}

/// Runs synchronous sweeps until successive tables differ by less than `tol`.
pub fn solve_synchronous(
    mdp: &DiscreteMdp,
    lr: f64,
    tol: f64,
    max_sweeps: usize,
) -> (QTable, usize) {
    let mut qt = QTable::zeros(mdp);
    for sweep in 1..=max_sweeps {
        let next = synchronous_sweep(&qt, mdp, lr);
        let change = sup_distance(next.as_slice(), qt.as_slice());
        qt = next;
        if change < tol {
            return (qt, sweep);
        }
    }
    (qt, max_sweeps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRate {
    Constant(f64),
    /// `1 / (1 + n)` where `n` counts earlier updates of the same pair.
    PerVisit,
}

impl LearningRate {
    #[inline]
    pub fn at(&self, visits: u32) -> f64 {
        match *self {
            LearningRate::Constant(lr) => lr,
            LearningRate::PerVisit => 1.0 / (1.0 + visits as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QLearnConfig {
    pub learning_rate: LearningRate,
    pub epsilon: f64,
    pub n_episodes: usize,
    pub episode_len: usize,
    pub seed: u64,
    pub divergence_threshold: f64,
}

impl Default for QLearnConfig {
    fn default() -> Self {
        Self {
            learning_rate: LearningRate::Constant(0.8),
            epsilon: 0.1,
            n_episodes: 5000,
            episode_len: 50,
            seed: 0,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
        }
    }
}

impl QLearnConfig {
    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = LearningRate::Constant(lr);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(
            (0.0..=1.0).contains(&self.epsilon),
            "qlearn.epsilon",
            format!("must lie in [0, 1], got {}", self.epsilon),
        )?;
        ensure(self.n_episodes >= 1, "qlearn.n_episodes", "must be >= 1")?;
        ensure(self.episode_len >= 1, "qlearn.episode_len", "must be >= 1")?;
        if let LearningRate::Constant(lr) = self.learning_rate {
            ensure(lr.is_finite(), "qlearn.learning_rate", "must be finite")?;
        }
        ensure(
            self.divergence_threshold > 0.0,
            "qlearn.divergence_threshold",
            "must be > 0",
        )?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Updates performed so far, across episodes.
    pub steps: usize,
    pub max_abs_q: f64,
    /// Interior sup-error of the greedy value against the analytic value.
    pub sup_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub episodes: Vec<EpisodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Invalid(#[from] ConfigError),
    #[error("diverged at update {trip_iteration}")]
    Diverged {
        trip_iteration: usize,
        partial: Box<(QTable, TrainingLog)>,
    },
}

/// Epsilon-greedy trajectory-sampling Q-learning from uniformly drawn start
/// nodes. The divergence monitor watches every updated entry; a trip ends
/// training with [`TrainError::Diverged`] after logging the current episode.
pub fn train(mdp: &DiscreteMdp, cfg: &QLearnConfig) -> Result<(QTable, TrainingLog), TrainError> {
    cfg.validate()?;
    let sol = riccati_solve(&mdp.problem);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut qt = QTable::zeros(mdp);
    let mut visits = vec![0u32; qt.as_slice().len()];
    let mut monitor = DivergenceMonitor::new(cfg.divergence_threshold);
    let mut log = TrainingLog::default();
    let (n_s, n_a) = (qt.n_states(), qt.n_actions());
    let mut steps = 0;

    for episode in 1..=cfg.n_episodes {
        let mut s = rng.random_range(0..n_s);
        for _ in 0..cfg.episode_len {
            let a = if rng.random::<f64>() < cfg.epsilon {
                rng.random_range(0..n_a)
            } else {
                qt.greedy_action(s)
            };
            let k = s * n_a + a;
            let lr = cfg.learning_rate.at(visits[k]);
            visits[k] = visits[k].saturating_add(1);
            let (next, _) = mdp.step_index(s, a);
            let updated = q_update(&mut qt, mdp, s, a, lr);
            steps += 1;
            if monitor.observe_value(steps, updated) {
                break;
            }
            s = next;
        }
        let (value, _) = greedy_extract(&qt);
        log.episodes.push(EpisodeRecord {
            episode,
            steps,
            max_abs_q: qt.max_abs(),
            sup_error: sup_error(&value, &sol, INTERIOR_FRACTION),
        });
        if let Some(trip_iteration) = monitor.trip_iteration {
            return Err(TrainError::Diverged {
                trip_iteration,
                partial: Box::new((qt, log)),
            });
        }
    }
    Ok((qt, log))
}

/// Row minima and their actions.
pub fn greedy_extract(qt: &QTable) -> (ValueField, PolicyField) {
    let (values, controls) = (0..qt.n_states())
        .map(|s| {
            let a = qt.greedy_action(s);
            (qt.get(s, a), qt.action_grid.node(a))
        })
        .unzip();
    (
        ValueField {
            grid: qt.state_grid,
            values,
        },
        PolicyField {
            grid: qt.state_grid,
            controls,
        },
    )
}

/// Discounted cost of the deterministic rollout from the node nearest `x0`
/// under `pi` for `horizon` steps.
pub fn rollout_return(mdp: &DiscreteMdp, pi: &PolicyField, x0: f64, horizon: usize) -> f64 {
    let grid = mdp.state_grid;
    let mut s = grid.nearest_index(x0);
    let mut total = 0.0;
    let mut weight = 1.0;
    for _ in 0..horizon {
        let x = grid.node(s);
        let u = pi.controls[s];
        let (next, cost) = mdp.step(x, u);
        total += weight * cost;
        weight *= mdp.discount_factor;
        s = grid.nearest_index(next);
    }
    total
}

/// Smallest horizon with `g^horizon < tol`.
pub fn horizon_for(mdp: &DiscreteMdp, tol: f64) -> usize {
    (tol.ln() / mdp.discount_factor.ln()).floor() as usize + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lq::LqProblem;
    use approx::assert_abs_diff_eq;

    fn mdp() -> DiscreteMdp {
        DiscreteMdp::from_problem(LqProblem::new(0.5, 1.0).unwrap(), 0.1, 81, 81).unwrap()
    }

    #[test]
    fn update_examples() {
        let m = mdp();
        let (s, a) = (60, 30);
        let mut qt = QTable::zeros(&m);
        let before = qt.clone();
        q_update(&mut qt, &m, s, a, 0.0);
        assert_eq!(qt, before);

        let (_, cost) = m.step_index(s, a);
        assert_eq!(q_update(&mut qt, &m, s, a, 1.0), cost);
    }

    #[test]
    fn half_step_on_zero_table() {
        let p = LqProblem::new(0.0, 1.0).unwrap();
        let m = DiscreteMdp::from_problem(p, 1.0, 5, 9).unwrap();
        // x = 1, u = -1 costs 1 * (1 + 1) = 2.
        let (s, a) = (3, 3);
        assert_eq!(m.step_index(s, a).1, 2.0);
        let mut qt = QTable::zeros(&m);
        assert_eq!(q_update(&mut qt, &m, s, a, 0.5), 1.0);
    }

    #[test]
    fn greedy_extract_tie_rules() {
        let m = mdp();
        let qt = QTable::from_fn(&m, |_, u| u * u);
        let (v, pi) = greedy_extract(&qt);
        assert!(v.values.iter().all(|x| *x == 0.0));
        assert!(pi.controls.iter().all(|u| *u == 0.0));

        let flat = QTable::from_fn(&m, |_, _| 3.0);
        let (_, pi) = greedy_extract(&flat);
        assert!(pi.controls.iter().all(|u| *u == 0.0));
    }

    #[test]
    fn rollout_edge_cases() {
        let m = mdp();
        let pi = PolicyField::constant(m.state_grid, 0.0);
        assert_eq!(rollout_return(&m, &pi, 0.0, 500), 0.0);
        assert_eq!(rollout_return(&m, &pi, 1.0, 0), 0.0);
        assert!(m.discount_factor.powi(horizon_for(&m, 1e-10) as i32) < 1e-10);
    }

    #[test]
    fn coefficients_follow_learning_rate() {
        let m = mdp();
        let qt = QTable::zeros(&m);
        for (lr, monotone) in [(0.0, true), (0.5, true), (1.0, true), (1.3, false)] {
            let c = update_coefficients(&qt, &m, 50, 20, lr);
            assert_eq!(c.is_monotone(), monotone, "lr = {lr}");
            assert_abs_diff_eq!(c.own, 1.0 - lr);
            assert_abs_diff_eq!(c.bootstrap, lr * m.discount_factor);
        }
    }

    #[test]
    fn per_visit_schedule() {
        assert_eq!(LearningRate::PerVisit.at(0), 1.0);
        assert_eq!(LearningRate::PerVisit.at(3), 0.25);
        assert_eq!(LearningRate::Constant(1.3).at(10), 1.3);
    }

    #[test]
    fn rejects_bad_epsilon() {
        let m = mdp();
        let cfg = QLearnConfig {
            epsilon: 1.5,
            ..QLearnConfig::default()
        };
        match train(&m, &cfg) {
            Err(TrainError::Invalid(e)) => assert_eq!(e.field, "qlearn.epsilon"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }
}
