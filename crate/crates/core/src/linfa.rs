//! Semi-gradient Q-learning with the quadratic feature map
//! `X(x, u) = [1, x, u, x^2, x u, u^2]` and `Q~(x, u, w) = X(x, u) . w`.
//!
//! At the sampled pair the update reads
//!
//! ```text
//! Q~_new(x, u) = (1 - lr |X|^2) Q~(x, u) + lr |X|^2 target
//! ```
//!
//! so its self-coefficient is nonnegative only while `lr <= 1 / |X|^2`
//! ([`step_bound`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::error::{ensure, ConfigError};
use crate::lq::DiscreteMdp;
use crate::monotone::DEFAULT_DIVERGENCE_THRESHOLD;

pub const N_FEATURES: usize = 6;

/// Index of each feature in [`FeatureVector`] and [`FeatureWeights`].
pub mod index {
    pub const ONE: usize = 0;
    pub const X: usize = 1;
    pub const U: usize = 2;
    pub const XX: usize = 3;
    pub const XU: usize = 4;
    pub const UU: usize = 5;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    pub fn squared_norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum()
    }

    pub fn dot(&self, w: &FeatureWeights) -> f64 {
        self.0.iter().zip(&w.0).map(|(a, b)| a * b).sum()
    }
}

pub fn features(x: f64, u: f64) -> FeatureVector {
    FeatureVector([1.0, x, u, x * x, x * u, u * u])
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureWeights(pub [f64; N_FEATURES]);

impl FeatureWeights {
    pub fn zeros() -> Self {
        Self::default()
    }

    #[inline]
    pub fn q_value(&self, x: f64, u: f64) -> f64 {
        features(x, u).dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    /// Weights of `a x^2 + b x u + c u^2`.
    pub fn quadratic(xx: f64, xu: f64, uu: f64) -> Self {
        let mut w = [0.0; N_FEATURES];
        w[index::XX] = xx;
        w[index::XU] = xu;
        w[index::UU] = uu;
        Self(w)
    }
}

/// Minimizer of `Q~(x, ., w)` on `[u_min, u_max]`. Without positive
/// curvature the cheaper endpoint wins, `u_min` on ties.
pub fn greedy_action(w: &FeatureWeights, x: f64, u_min: f64, u_max: f64) -> f64 {
    let curvature = w.0[index::UU];
    if curvature > 0.0 {
        (-(w.0[index::U] + w.0[index::XU] * x) / (2.0 * curvature)).clamp(u_min, u_max)
    } else if w.q_value(x, u_max) < w.q_value(x, u_min) {
        u_max
    } else {
        u_min
    }
}

/// `1 / |X(x, u)|^2`.
pub fn step_bound(x: f64, u: f64) -> f64 {
    1.0 / features(x, u).squared_norm()
}

/// Bootstrapped target `c(x, u) + g min_u' Q~(x', u', w)` with the raw Euler
/// successor `x'`.
pub fn bellman_target(w: &FeatureWeights, mdp: &DiscreteMdp, x: f64, u: f64) -> f64 {
    let next = mdp.euler(x, u);
    let u_next = greedy_action(w, next, mdp.problem.u_min, mdp.problem.u_max);
    mdp.stage_cost(x, u) + mdp.discount_factor * w.q_value(next, u_next)
}

pub fn bellman_residual(w: &FeatureWeights, mdp: &DiscreteMdp, x: f64, u: f64) -> f64 {
    bellman_target(w, mdp, x, u) - w.q_value(x, u)
}

/// One semi-gradient step `w + lr (target - Q~(x, u, w)) X(x, u)`.
pub fn fa_update(w: &FeatureWeights, mdp: &DiscreteMdp, x: f64, u: f64, lr: f64) -> FeatureWeights {
    let delta = lr * bellman_residual(w, mdp, x, u);
    let phi = features(x, u);
    let mut out = *w;
    out.0
        .iter_mut()
        .zip(&phi.0)
        .for_each(|(wi, p)| *wi += delta * p);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Constant(f64),
    /// `fraction * step_bound(x, u)` at every sample.
    BoundScaled(f64),
}

impl StepSize {
    #[inline]
    pub fn at(&self, x: f64, u: f64) -> f64 {
        match *self {
            StepSize::Constant(lr) => lr,
            StepSize::BoundScaled(fraction) => fraction * step_bound(x, u),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaTrainConfig {
    pub step_size: StepSize,
    pub n_steps: usize,
    pub seed: u64,
    /// Log a record every this many steps (and at step 0 and the end).
    pub log_every: usize,
    pub divergence_threshold: f64,
    /// The probe set is a `probe_side x probe_side` lattice over the box.
    pub probe_side: usize,
}

impl FaTrainConfig {
    pub fn new(step_size: StepSize, n_steps: usize, seed: u64) -> Self {
        Self {
            step_size,
            n_steps,
            seed,
            log_every: 1000,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
            probe_side: 9,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.step_size {
            StepSize::Constant(lr) => ensure(
                lr.is_finite() && lr >= 0.0,
                "linfa.lr",
                "must be finite and >= 0",
            )?,
            StepSize::BoundScaled(f) => ensure(
                f > 0.0 && f <= 1.0,
                "linfa.fraction",
                format!("must lie in (0, 1], got {f}"),
            )?,
        }
        ensure(self.log_every >= 1, "linfa.log_every", "must be >= 1")?;
        ensure(self.probe_side >= 2, "linfa.probe_side", "must be >= 2")?;
        ensure(
            self.divergence_threshold > 0.0,
            "linfa.divergence_threshold",
            "must be > 0",
        )?;
        Ok(())
    }
}

/// Lattice of `(x, u)` pairs over the state-control box.
pub fn probe_set(mdp: &DiscreteMdp, side: usize) -> Vec<(f64, f64)> {
    let p = &mdp.problem;
    let lerp = |lo: f64, hi: f64, k: usize| lo + (hi - lo) * k as f64 / (side - 1) as f64;
    (0..side)
        .flat_map(|i| (0..side).map(move |j| (i, j)))
        .map(|(i, j)| (lerp(p.x_min, p.x_max, i), lerp(p.u_min, p.u_max, j)))
        .collect()
}

/// Mean absolute Bellman residual over `probe`.
pub fn mean_probe_residual(w: &FeatureWeights, mdp: &DiscreteMdp, probe: &[(f64, f64)]) -> f64 {
    probe
        .iter()
        .map(|&(x, u)| bellman_residual(w, mdp, x, u).abs())
        .sum::<f64>()
        / probe.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaRecord {
    pub step: usize,
    pub weight_norm: f64,
    pub probe_residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaLog {
    pub records: Vec<FaRecord>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FaError {
    #[error(transparent)]
    Invalid(#[from] ConfigError),
    #[error("diverged at step {trip_iteration}")]
    Diverged {
        trip_iteration: usize,
        partial: Box<(FeatureWeights, FaLog)>,
    },
}

/// Trains from `w = 0` on pairs drawn uniformly from the state-control box.
pub fn fa_train(
    mdp: &DiscreteMdp,
    cfg: &FaTrainConfig,
) -> Result<(FeatureWeights, FaLog), FaError> {
    cfg.validate()?;
    let p = &mdp.problem;
    let probe = probe_set(mdp, cfg.probe_side);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = FeatureWeights::zeros();
    let mut log = FaLog::default();
    let record = |w: &FeatureWeights, step: usize| FaRecord {
        step,
        weight_norm: w.norm(),
        probe_residual: mean_probe_residual(w, mdp, &probe),
    };
    log.records.push(record(&w, 0));

    for step in 1..=cfg.n_steps {
        let x = rng.random_range(p.x_min..=p.x_max);
        let u = rng.random_range(p.u_min..=p.u_max);
        let lr = cfg.step_size.at(x, u);
        if let StepSize::BoundScaled(_) = cfg.step_size {
            debug_assert!(1.0 - lr * features(x, u).squared_norm() >= -1e-12);
        }
        w = fa_update(&w, mdp, x, u, lr);
        let norm = w.norm();
        if !norm.is_finite() || norm > cfg.divergence_threshold {
            log.records.push(FaRecord {
                step,
                weight_norm: norm,
                probe_residual: mean_probe_residual(&w, mdp, &probe),
            });
            return Err(FaError::Diverged {
                trip_iteration: step,
                partial: Box::new((w, log)),
            });
        }
        if step % cfg.log_every == 0 || step == cfg.n_steps {
            log.records.push(record(&w, step));
        }
    }
    Ok((w, log))
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
    fn feature_examples() {
        assert_eq!(features(0.0, 0.0).0, [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(features(1.0, 2.0).0, [1.0, 1.0, 2.0, 1.0, 2.0, 4.0]);
        assert_eq!(features(-1.0, 1.0).0, [1.0, -1.0, 1.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn step_bound_examples() {
        assert_eq!(step_bound(0.0, 0.0), 1.0);
        assert_eq!(step_bound(1.0, 2.0), 1.0 / 27.0);
        assert_eq!(step_bound(-1.0, -2.0), 1.0 / 27.0);
    }

    #[test]
    fn greedy_action_examples() {
        let bowl = FeatureWeights::quadratic(0.0, 0.0, 1.0);
        for x in [-2.0, 0.0, 1.3] {
            assert_eq!(greedy_action(&bowl, x, -4.0, 4.0), 0.0);
        }
        let tracking = FeatureWeights::quadratic(0.0, 2.0, 1.0);
        assert_abs_diff_eq!(greedy_action(&tracking, 0.7, -4.0, 4.0), -0.7);
        let cap = FeatureWeights::quadratic(0.0, 0.0, -1.0);
        assert_eq!(greedy_action(&cap, 0.3, -4.0, 4.0), -4.0);
        assert_eq!(greedy_action(&tracking, 9.0, -4.0, 4.0), -4.0);
    }

    #[test]
    fn update_examples() {
        let m = mdp();
        let w = FeatureWeights([0.1, -0.2, 0.3, 1.0, 0.5, 0.8]);
        assert_eq!(fa_update(&w, &m, 0.4, -0.3, 0.0), w);

        let (x, u, c) = (0.4, -0.3, 0.05);
        let stepped = fa_update(&FeatureWeights::zeros(), &m, x, u, c);
        let cost = m.stage_cost(x, u);
        for (got, phi) in stepped.0.iter().zip(features(x, u).0) {
            assert_abs_diff_eq!(*got, c * cost * phi, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_steps_leave_weights() {
        let m = mdp();
        let (w, log) = fa_train(&m, &FaTrainConfig::new(StepSize::BoundScaled(0.5), 0, 3)).unwrap();
        assert_eq!(w, FeatureWeights::zeros());
        assert_eq!(log.records.len(), 1);
    }

    #[test]
    fn rejects_bad_fraction() {
        let m = mdp();
        let cfg = FaTrainConfig::new(StepSize::BoundScaled(1.5), 10, 0);
        assert!(matches!(fa_train(&m, &cfg), Err(FaError::Invalid(_))));
    }
}
