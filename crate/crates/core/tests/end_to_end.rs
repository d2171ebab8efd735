use std::f64::consts::PI;

use degenctrl_core::control::{smooth_step, ControlOptions};
use degenctrl_core::pde::{duality_defect, random_smooth_data, sample, solve_adjoint, solve_forward};
use degenctrl_core::weights::{build_degenerate_weight, carleman_ratio, hardy_poincare_constant, SGridOptions};
use degenctrl_core::*;
use proptest::prelude::*;

fn prototype_problem(alpha: f64, form: Form, n: usize) -> (ProblemSpec, SpaceGrid) {
    let p = CoefficientProfile::prototype(alpha, 0.5, 11).unwrap();
    let g = SpaceGrid::build(n, &p).unwrap();
    let u0 = sample(&g, |x| (PI * x).sin());
    (ProblemSpec::new(p, form, ControlRegion::single(0.6, 0.9).unwrap()).with_u0(u0), g)
}

#[test]
fn profile_to_control_pipeline() {
    let (spec, g) = prototype_problem(0.5, Form::Divergence, 60);
    let report = check_degeneracy_hypotheses(&spec.profile, spec.profile.default_tolerance()).unwrap();
    assert!(report.passed());
    let tg = TimeGrid::new(0.3, 60).unwrap();
    let r = hum_null_control(&spec, &g, &tg, &ControlOptions::default()).unwrap();
    assert!(r.relative_residual <= 1e-2, "{}", r.relative_residual);
    assert!(r.cost > 0.0 && r.cost_bound_constant.is_finite());
}

#[test]
fn nondivergence_control_away_from_x0() {
    let (spec, g) = prototype_problem(0.5, Form::NonDivergence, 60);
    let tg = TimeGrid::new(0.3, 60).unwrap();
    let r = hum_null_control(&spec, &g, &tg, &ControlOptions::default()).unwrap();
    assert!(r.relative_residual <= 1e-2, "{}", r.relative_residual);
}

#[test]
fn strong_nondivergence_sides_decouple() {
    // the x0 row is Dirichlet, so a control on the right cannot reach the left half
    let (spec, g) = prototype_problem(1.5, Form::NonDivergence, 60);
    let tg = TimeGrid::new(0.3, 60).unwrap();
    let r = hum_null_control(&spec, &g, &tg, &ControlOptions::default()).unwrap();
    let free = solve_forward(&spec, &g, &tg).unwrap();
    let k = g.x0_index().unwrap();
    for i in 0..=k {
        assert!((r.final_state[i] - free.last()[i]).abs() <= 1e-12);
    }
    assert!(free.last()[k / 2].abs() > 1e-2);
}

#[test]
fn carleman_report_from_adjoint() {
    let p = CoefficientProfile::prototype(0.5, 0.5, 11).unwrap();
    let g = SpaceGrid::build(40, &p).unwrap();
    let tg = TimeGrid::new(1.0, 40).unwrap();
    let vt = random_smooth_data(&g, 3, 6);
    let spec = ProblemSpec::new(p.clone(), Form::Divergence, ControlRegion::full()).with_final(vt);
    let v = solve_adjoint(&spec, &g, &tg).unwrap();
    let w = build_degenerate_weight(&p, &g, Form::Divergence, 1.0, 0.1, 0.0).unwrap();
    let rep = carleman_ratio(&v, &w, &p, &SGridOptions::default()).unwrap();
    assert_eq!(rep.s.len(), 16);
    assert!(rep.sup_ratio.is_finite());
}

#[test]
fn hardy_constant_for_quadratic_weight() {
    let p = CoefficientProfile::prototype(1.0, 0.5, 11).unwrap();
    let g = SpaceGrid::build(100, &p).unwrap();
    let h = hardy_poincare_constant(|x| (x - 0.5) * (x - 0.5), &g).unwrap();
    assert!(h.c_hp > 0.0 && h.c_hp.is_finite());
}

#[test]
fn regional_construction_end_to_end() {
    let p = CoefficientProfile::prototype(1.5, 0.5, 11).unwrap();
    let g = SpaceGrid::build(60, &p).unwrap();
    let tg = TimeGrid::new(0.1, 40).unwrap();
    let u0 = sample(&g, |x| (PI * x).sin());
    let spec = ProblemSpec::new(p, Form::Divergence, ControlRegion::single(0.2, 0.8).unwrap()).with_u0(u0);
    let r = regional_control_cutoff(&spec, &g, &tg, 0.2, 0.1, &ControlOptions::default()).unwrap();
    assert!(r.trace.final_max_abs <= 1e-10);
    assert!(r.trace.near_max > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn controls_vanish_outside_omega(lo in 0.05f64..0.6, width in 0.15f64..0.35, seed in 0u64..1000) {
        let hi = (lo + width).min(0.95);
        let p = CoefficientProfile::constant(1.0, 11).unwrap();
        let g = SpaceGrid::build(24, &p).unwrap();
        let tg = TimeGrid::new(0.2, 20).unwrap();
        let omega = ControlRegion::single(lo, hi).unwrap();
        let spec = ProblemSpec::new(p, Form::Divergence, omega.clone()).with_u0(random_smooth_data(&g, seed, 4));
        let r = hum_null_control(&spec, &g, &tg, &ControlOptions::default()).unwrap();
        for row in &r.h.values {
            for (i, &x) in g.nodes().iter().enumerate() {
                if !omega.contains(x) {
                    prop_assert_eq!(row[i], 0.0);
                }
            }
        }
        prop_assert!(r.cost >= 0.0 && r.final_residual >= 0.0);
    }

    #[test]
    fn duality_identity_holds(alpha in 0.1f64..1.9, seed in 0u64..1000, theta in 0.5f64..1.0) {
        let p = CoefficientProfile::prototype(alpha, 0.5, 11).unwrap();
        let g = SpaceGrid::build(20, &p).unwrap();
        let tg = TimeGrid::new(0.1, 10).unwrap();
        let spec = ProblemSpec::new(p, Form::Divergence, ControlRegion::single(0.6, 0.9).unwrap())
            .with_u0(random_smooth_data(&g, seed, 5))
            .with_final(random_smooth_data(&g, seed + 1, 5))
            .with_theta(theta);
        prop_assert!(duality_defect(&spec, &g, &tg).unwrap() < 1e-12);
    }

    #[test]
    fn free_solution_stays_bounded(alpha in 0.1f64..1.9, seed in 0u64..1000) {
        let p = CoefficientProfile::prototype(alpha, 0.5, 11).unwrap();
        let g = SpaceGrid::build(20, &p).unwrap();
        let tg = TimeGrid::new(0.1, 10).unwrap();
        let u0 = random_smooth_data(&g, seed, 5);
        let bound = u0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let spec = ProblemSpec::new(p, Form::Divergence, ControlRegion::full()).with_u0(u0);
        let u = solve_forward(&spec, &g, &tg).unwrap();
        prop_assert!(u.max_abs() <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn smooth_step_is_monotone(a in -0.5f64..1.5, b in -0.5f64..1.5) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(smooth_step(lo) <= smooth_step(hi));
    }
}
