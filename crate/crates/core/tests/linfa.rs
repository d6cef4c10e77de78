use lqlab_core::linfa::*;
use lqlab_core::{DiscreteMdp, LqProblem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn problem() -> LqProblem {
    LqProblem::new(0.5, 1.0).unwrap()
}

fn mdp() -> DiscreteMdp {
    DiscreteMdp::with_defaults(problem()).unwrap()
}

fn corner_bound() -> f64 {
    let p = problem();
    [
        (p.x_min, p.u_min),
        (p.x_min, p.u_max),
        (p.x_max, p.u_min),
        (p.x_max, p.u_max),
    ]
    .iter()
    .map(|&(x, u)| step_bound(x, u))
    .fold(f64::INFINITY, f64::min)
}

// Value coefficient of the discrete problem from synchronous value iteration
// over the state grid, fitted as c x^2 on the central two thirds.
fn tabular_value_coefficient(mdp: &DiscreteMdp) -> f64 {
    let (ns, na) = (mdp.state_grid.n_nodes(), mdp.action_grid.n_nodes());
    let transitions: Vec<(usize, f64)> = (0..ns)
        .flat_map(|s| (0..na).map(move |a| (s, a)))
        .map(|(s, a)| mdp.step_index(s, a))
        .collect();
    let mut v = vec![0.0; ns];
    loop {
        let next: Vec<f64> = (0..ns)
            .map(|s| {
                transitions[s * na..(s + 1) * na]
                    .iter()
                    .map(|&(n, c)| c + mdp.discount_factor * v[n])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let change = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if change < 1e-13 {
            break;
        }
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (s, vs) in v.iter().enumerate().take(ns - ns / 6).skip(ns / 6) {
        let x2 = mdp.state_grid.node(s).powi(2);
        num += x2 * vs;
        den += x2 * x2;
    }
    num / den
}

#[test]
fn corners_share_the_tightest_bound() {
    assert_eq!(corner_bound(), 1.0 / 357.0);
    assert_eq!(step_bound(1.0, 2.0), 1.0 / 27.0);
}

#[test]
fn bound_scaled_training_stays_bounded() {
    let m = mdp();
    let (w, log) = fa_train(
        &m,
        &FaTrainConfig::new(StepSize::BoundScaled(0.5), 100_000, 0),
    )
    .unwrap();
    assert!(log.records.iter().all(|r| r.weight_norm < 1e3));
    let first = log.records.first().unwrap().probe_residual;
    let last = log.records.last().unwrap().probe_residual;
    assert!(last < 0.5 * first, "{first} -> {last}");
    assert!(w.is_finite());
}

#[test]
fn constant_rate_above_corner_bound_diverges() {
    let m = mdp();
    let outcomes: Vec<bool> = (0..5)
        .map(|seed| {
            let cfg = FaTrainConfig::new(StepSize::Constant(10.0 * corner_bound()), 100_000, seed);
            matches!(fa_train(&m, &cfg), Err(FaError::Diverged { .. }))
        })
        .collect();
    assert!(outcomes.iter().any(|d| *d), "{outcomes:?}");
}

#[test]
fn twice_the_corner_bound_still_settles() {
    // Most samples sit well inside the box where the bound is loose.
    let cfg = FaTrainConfig::new(StepSize::Constant(2.0 * corner_bound()), 20_000, 0);
    assert!(fa_train(&mdp(), &cfg).is_ok());
}

#[test]
fn zero_steps_leave_weights_at_zero() {
    let (w, log) = fa_train(
        &mdp(),
        &FaTrainConfig::new(StepSize::BoundScaled(0.5), 0, 3),
    )
    .unwrap();
    assert_eq!(w, FeatureWeights::zeros());
    assert_eq!(log.records.len(), 1);
}

#[test]
fn training_trajectory_is_bit_reproducible() {
    let m = mdp();
    let mut cfg = FaTrainConfig::new(StepSize::BoundScaled(0.7), 5_000, 42);
    cfg.log_every = 1;
    let (wa, la) = fa_train(&m, &cfg).unwrap();
    let (wb, lb) = fa_train(&m, &cfg).unwrap();
    assert_eq!(wa.0.map(f64::to_bits), wb.0.map(f64::to_bits));
    let bits = |l: &FaLog| {
        l.records
            .iter()
            .map(|r| r.weight_norm.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&la), bits(&lb));
}

#[test]
fn one_step_target_is_exactly_representable() {
    let fine = DiscreteMdp::from_problem(problem(), 0.1, 801, 401).unwrap();
    let gamma_d = tabular_value_coefficient(&fine);
    // Snapping biases the tabular coefficient; it should still sit near the
    // unsnapped Euler coefficient.
    let euler = fine.euler_value_coefficient();
    assert!(
        (gamma_d - euler).abs() <= 0.05 * euler,
        "{gamma_d} vs {euler}"
    );

    let (a, dt, g) = (problem().drift, fine.dt, fine.discount_factor);
    let target =
        |x: f64, u: f64| dt * (x * x + u * u) + g * gamma_d * (x + dt * (a * x + u)).powi(2);
    let m = 1.0 + a * dt;
    let expected = [
        0.0,
        0.0,
        0.0,
        dt + g * gamma_d * m * m,
        2.0 * g * gamma_d * m * dt,
        dt + g * gamma_d * dt * dt,
    ];

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let samples: Vec<(f64, f64)> = (0..100)
        .map(|_| (rng.random_range(-2.0..=2.0), rng.random_range(-4.0..=4.0)))
        .collect();
    let design = DMatrix::from_fn(samples.len(), N_FEATURES, |r, c| {
        let (x, u) = samples[r];
        features(x, u).0[c]
    });
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|&(x, u)| target(x, u)));
    let fit = design.svd(true, true).solve(&y, 1e-14).unwrap();
    for (k, e) in expected.iter().enumerate() {
        assert!((fit[k] - e).abs() <= 1e-8, "weight {k}: {} vs {e}", fit[k]);
    }
}

proptest! {
    #[test]
    fn update_realizes_convex_combination(
        w in proptest::array::uniform6(-2.0f64..2.0),
        x in -2.0f64..=2.0,
        u in -4.0f64..=4.0,
        frac in 0.0f64..=2.0,
    ) {
        let m = mdp();
        let w = FeatureWeights(w);
        let lr = frac * step_bound(x, u);
        let norm2 = features(x, u).squared_norm();
        let target = bellman_target(&w, &m, x, u);
        let updated = fa_update(&w, &m, x, u, lr).q_value(x, u);
        let expected = lr * target * norm2 + (1.0 - lr * norm2) * w.q_value(x, u);
        prop_assert!((updated - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
    }

    #[test]
    fn greedy_action_beats_a_fine_grid(
        w in proptest::array::uniform6(-2.0f64..2.0),
        curvature in 1e-2f64..3.0,
        x in -2.0f64..=2.0,
    ) {
        let mut w = FeatureWeights(w);
        w.0[index::UU] = curvature;
        let (lo, hi) = (-4.0, 4.0);
        let n = 10_000;
        let cell = (hi - lo) / (n - 1) as f64;
        let best = (0..n)
            .map(|k| lo + cell * k as f64)
            .min_by(|a, b| w.q_value(x, *a).total_cmp(&w.q_value(x, *b)))
            .unwrap();
        let u = greedy_action(&w, x, lo, hi);
        prop_assert!((u - best).abs() <= cell);
        prop_assert!(w.q_value(x, u) <= w.q_value(x, best) + 1e-12);
    }

    #[test]
    fn bound_is_even(x in -2.0f64..=2.0, u in -4.0f64..=4.0) {
        prop_assert_eq!(step_bound(x, u), step_bound(-x, -u));
        prop_assert!(step_bound(x, u) <= 1.0);
    }
}
