//! Shared fixtures for the benchmarks.

use std::f64::consts::PI;

use degenctrl_core::pde::sample;
use degenctrl_core::{CoefficientProfile, ControlRegion, Form, ProblemSpec, SpaceGrid, TimeGrid};

/// A prepared problem: spec with `u0 = sin(pi x)` and `vT = u0`.
pub struct Fixture {
    pub spec: ProblemSpec,
    pub grid: SpaceGrid,
    pub tgrid: TimeGrid,
}

/// Prototype profile with exponent `alpha` (or `a = 1` for `None`) at
/// `x0 = 0.5`, `omega = (0.3, 0.7)`.
pub fn fixture(alpha: Option<f64>, form: Form, cells: usize, steps: usize, horizon: f64) -> Fixture {
    let profile = match alpha {
        Some(a) => CoefficientProfile::prototype(a, 0.5, 11),
        None => CoefficientProfile::constant(1.0, 11),
    }
    .expect("valid profile");
    let grid = SpaceGrid::build(cells, &profile).expect("valid grid");
    let tgrid = TimeGrid::new(horizon, steps).expect("valid time grid");
    let u0 = sample(&grid, |x| (PI * x).sin());
    let omega = ControlRegion::single(0.3, 0.7).expect("valid interval");
    let spec = ProblemSpec::new(profile, form, omega).with_u0(u0.clone()).with_final(u0);
    Fixture { spec, grid, tgrid }
}
