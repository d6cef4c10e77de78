use lqlab_core::hjb::{hjb_residual, value_iteration_from, vi_step, CoefficientForm};
use lqlab_core::monotone::{interior_nodes, INTERIOR_FRACTION};
use lqlab_core::*;

fn problem() -> LqProblem {
    LqProblem::new(0.5, 1.0).unwrap()
}

fn grid(dx: f64) -> Grid1D {
    Grid1D::with_spacing(-2.0, 2.0, dx).unwrap()
}

fn interior_max(grid: &Grid1D, v: &[f64]) -> f64 {
    interior_nodes(grid, INTERIOR_FRACTION)
        .into_iter()
        .map(|i| v[i].abs())
        .fold(0.0, f64::max)
}

fn upwind(dx: f64) -> (Grid1D, SchemeConfig, HjbSolution) {
    let p = problem();
    let g = grid(dx);
    let cfg = SchemeConfig::for_grid(&p, &g, Differencing::Upwind);
    let sol = value_iteration(&p, &g, &cfg).unwrap();
    (g, cfg, sol)
}

#[test]
fn upwind_error_is_first_order() {
    let sol = riccati_solve(&problem());
    let errs: Vec<f64> = [0.04, 0.02, 0.01]
        .iter()
        .map(|&dx| sup_error(&upwind(dx).2.value, &sol, INTERIOR_FRACTION))
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.5..=2.5).contains(&ratio), "errors {errs:?}");
    }
    assert!(errs[2] <= 0.05);
}

#[test]
fn converged_value_solves_discrete_hjb() {
    let p = problem();
    let (g, cfg, sol) = upwind(0.02);
    let res = hjb_residual(&p, &g, &sol.value.values, Differencing::Upwind);
    let bound = 10.0 * cfg.theta * cfg.relaxation_rate;
    assert!(interior_max(&g, &res) <= bound);
}

#[test]
fn symmetric_grid_gives_even_value_and_odd_policy() {
    let (g, cfg, sol) = upwind(0.02);
    let n = g.n_nodes();
    for i in 0..n {
        let j = n - 1 - i;
        assert!((sol.value.values[i] - sol.value.values[j]).abs() <= 10.0 * cfg.theta);
        assert!((sol.policy.controls[i] + sol.policy.controls[j]).abs() <= 10.0 * cfg.theta);
    }
}

#[test]
fn analytic_start_is_near_fixed_point() {
    let p = problem();
    let riccati = riccati_solve(&p);
    let mut prev = None;
    for dx in [0.04, 0.02, 0.01] {
        let g = grid(dx);
        let cfg = SchemeConfig::for_grid(&p, &g, Differencing::Upwind);
        let v0 = ValueField::from_fn(g, |x| riccati.value(x));
        let first = vi_step(&p, &g, &cfg, &v0.values);
        let step: Vec<f64> = first.iter().zip(&v0.values).map(|(a, b)| a - b).collect();
        assert!(interior_max(&g, &step) <= dx);
        // The step is the HJB residual over the relaxation rate.
        let res = interior_max(&g, &hjb_residual(&p, &g, &v0.values, Differencing::Upwind));
        assert!(res <= 2.0 * dx);
        if let Some(prev) = prev {
            let ratio: f64 = prev / res;
            assert!((1.5..=2.5).contains(&ratio));
        }
        prev = Some(res);
    }
}

#[test]
fn analytic_start_converges_to_same_fixed_point() {
    let p = problem();
    let riccati = riccati_solve(&p);
    let (g, cfg, cold) = upwind(0.02);
    let warm =
        value_iteration_from(&p, &g, &cfg, ValueField::from_fn(g, |x| riccati.value(x))).unwrap();
    assert!(warm.log.iterations.len() < cold.log.iterations.len());
    let gap = cold
        .value
        .values
        .iter()
        .zip(&warm.value.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    // Both stop within theta of the fixed point, scaled by 1 / (1 - contraction).
    assert!(gap <= 1e-5);
}

#[test]
fn downwind_is_unstable() {
    let p = problem();
    let g = grid(0.01);
    let cfg = SchemeConfig::for_grid(&p, &g, Differencing::Downwind);
    match value_iteration(&p, &g, &cfg) {
        Err(SolveError::Diverged { iteration, partial }) => {
            assert!(iteration < cfg.max_iters);
            let last = partial.log.iterations.last().unwrap().sup_norm;
            assert!(last.is_nan() || last > 1e6);
        }
        other => panic!(
            "expected divergence, got {:?}",
            other.map(|s| s.log.iterations.len())
        ),
    }
}

#[test]
fn literal_coefficient_misses_the_analytic_value() {
    let p = problem();
    let g = grid(0.04);
    let mut cfg = SchemeConfig::for_grid(&p, &g, Differencing::Upwind);
    cfg.coefficient_form = CoefficientForm::Literal;
    let riccati = riccati_solve(&p);
    let err = match value_iteration(&p, &g, &cfg) {
        Ok(s) => sup_error(&s.value, &riccati, INTERIOR_FRACTION),
        Err(_) => f64::INFINITY,
    };
    assert!(err > 1.0);
}

#[test]
fn policy_iteration_matches_value_iteration() {
    let p = problem();
    let g = grid(0.02);
    let mut cfg = SchemeConfig::for_grid(&p, &g, Differencing::Upwind).with_thresholds(1e-12);
    cfg.theta_u = 1e-8;
    let vi = value_iteration(&p, &g, &cfg).unwrap();
    let pi = policy_iteration(&p, &g, &cfg, &PolicyField::constant(g, 1.0)).unwrap();
    let dv = lqlab_core::grid::sup_distance(&vi.value.values, &pi.value.values);
    let du = lqlab_core::grid::sup_distance(&vi.policy.controls, &pi.policy.controls);
    assert!(dv <= 1e-6 && du <= 1e-6, "dv {dv} du {du}");
}

#[test]
fn policy_iteration_from_analytic_policy_is_quick() {
    let p = problem();
    let g = grid(0.02);
    let riccati = riccati_solve(&p);
    let u0 = PolicyField::from_fn(g, |x| riccati.policy(x));
    let mut cfg = SchemeConfig::for_grid(&p, &g, Differencing::Upwind);
    // The analytic policy is off the discrete optimum by O(dx), so two
    // rounds suffice only when theta_u is at that scale.
    cfg.theta_u = 1e-2;
    let loose = policy_iteration(&p, &g, &cfg, &u0).unwrap();
    assert!(loose.log.rounds.len() <= 2);
    // With a loose theta_v each evaluation stops after a sweep and the policy
    // creeps; evaluating tightly restores the few-round behavior.
    let mut tight = cfg.with_thresholds(1e-12);
    tight.theta_u = 1e-8;
    let tight = policy_iteration(&p, &g, &tight, &u0).unwrap();
    assert!(tight.log.rounds.len() <= 6, "{:?}", tight.log.rounds);
}

#[test]
fn policy_iteration_stops_after_one_round_when_converged() {
    let p = problem();
    let g = grid(0.04);
    let cfg = SchemeConfig::for_grid(&p, &g, Differencing::Upwind);
    let first = policy_iteration(&p, &g, &cfg, &PolicyField::constant(g, 1.0)).unwrap();
    let mut loose = cfg;
    loose.theta_u = 1.0;
    let again = policy_iteration(&p, &g, &loose, &first.policy).unwrap();
    assert_eq!(again.log.rounds.len(), 1);
}

#[test]
fn relaxation_rate_must_exceed_discount() {
    let p = problem();
    let g = grid(0.04);
    let cfg = SchemeConfig::new(p.discount_rate, Differencing::Upwind);
    match value_iteration(&p, &g, &cfg) {
        Err(SolveError::Invalid(e)) => assert_eq!(e.field, "scheme.relaxation_rate"),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn binding_control_box_is_rejected() {
    let p = problem().with_control_domain(-1.0, 1.0).unwrap();
    let g = grid(0.04);
    let cfg = SchemeConfig::for_grid(&p, &g, Differencing::Upwind);
    assert!(matches!(
        value_iteration(&p, &g, &cfg),
        Err(SolveError::Invalid(_))
    ));
}
