//! One function per task; each returns a report section and its data files.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use degenctrl_core::control::{
    estimate_observability_constant, hum_null_control, regional_control_cutoff, semilinear_null_control,
    two_piece_control, ControlOptions, ObservabilityMethod, ObservabilityOptions, PicardOptions,
};
use degenctrl_core::pde::{
    energy_estimate_check, random_smooth_data, sample, solve_adjoint, solve_forward, Coefficient, Nonlinearity,
};
use degenctrl_core::weights::{
    build_degenerate_weight, build_nondegenerate_weight, caccioppoli_check, carleman_ratio, hardy_poincare_constant,
    CarlemanWeight, InequalityReport, SGridOptions, WeightVariant,
};
use degenctrl_core::{CoefficientProfile, ControlRegion, Form, ProblemSpec, SpaceGrid, TimeGrid};
use serde_json::json;

use crate::config::{InitialData, MethodSpec, Scenario, Task, VariantSpec};
use crate::report::{num, Section, Verdict};
use crate::CliError;

pub struct TaskOutput {
    pub section: Section,
    /// File name and contents, written in this order.
    pub files: Vec<(String, Vec<u8>)>,
}

struct Setup {
    profile: CoefficientProfile,
    form: Form,
    grid: SpaceGrid,
    tgrid: TimeGrid,
    omega: ControlRegion,
}

fn setup(sc: &Scenario, base: &Path) -> Result<Setup, CliError> {
    let profile = sc.build_profile(base)?;
    let grid = SpaceGrid::build_graded(sc.grid.cells, &profile, sc.grid.grading)?;
    let tgrid = TimeGrid::new(sc.grid.horizon, sc.grid.steps)?;
    Ok(Setup { profile, form: sc.form.into(), grid, tgrid, omega: sc.region()? })
}

fn initial(kind: InitialData, grid: &SpaceGrid, seed: u64, modes: usize) -> Vec<f64> {
    match kind {
        InitialData::Sine => sample(grid, |x| (PI * x).sin()),
        InitialData::Zero => vec![0.0; grid.len()],
        InitialData::Random => random_smooth_data(grid, seed, modes),
    }
}

fn base_spec(sc: &Scenario, s: &Setup) -> ProblemSpec {
    let u0 = initial(sc.data.u0, &s.grid, sc.seed.unwrap_or(0), sc.data.modes);
    let mut spec = ProblemSpec::new(s.profile.clone(), s.form, s.omega.clone())
        .with_u0(u0)
        .with_theta(sc.grid.theta);
    if let Some(c) = sc.data.reaction {
        spec = spec.with_reaction(Coefficient::constant(c));
    }
    spec
}

fn control_options(sc: &Scenario) -> ControlOptions {
    ControlOptions { epsilon: sc.control.epsilon, cg_tol: sc.control.cg_tol, max_iters: sc.control.max_iters }
}

fn grid_entries(sec: &mut Section, s: &Setup) {
    sec.push("cells", s.grid.cells() as u64)
        .push("steps", s.tgrid.steps as u64)
        .push("horizon", s.tgrid.horizon)
        .push("profile", s.profile.shape_name())
        .push("degeneracy", format!("{:?}", s.profile.kind()));
}

pub fn run_task(sc: &Scenario, base: &Path) -> Result<TaskOutput, CliError> {
    match sc.task {
        Task::Solve => solve(sc, base),
        Task::Observe => observe(sc, base),
        Task::Control => control(sc, base),
        Task::Carleman | Task::Caccioppoli => inequality(sc, base),
        Task::Hardy => hardy(sc),
        Task::Regional => regional(sc, base),
        Task::Semilinear => semilinear(sc, base),
        Task::Suite => Err(CliError::Config("suite scenarios are run by run_suite".into())),
    }
}

fn solve(sc: &Scenario, base: &Path) -> Result<TaskOutput, CliError> {
    let s = setup(sc, base)?;
    let spec = base_spec(sc, &s);
    let u = solve_forward(&spec, &s.grid, &s.tgrid)?;
    let energy = energy_estimate_check(&u, &spec)?;
    let mut sec = Section::new(&sc.name, "solve");
    grid_entries(&mut sec, &s);
    let finite = u.values.iter().flatten().all(|v| v.is_finite());
    sec.push("max_abs", u.max_abs())
        .push("final_max_abs", u.last().iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .push("energy_constant", num(energy.constant.value().unwrap_or(f64::NAN)));
    sec.verdict = Verdict::from_bool(finite);
    Ok(TaskOutput { section: sec, files: vec![("solution.csv".into(), u.to_csv().into_bytes())] })
}

fn observe(sc: &Scenario, base: &Path) -> Result<TaskOutput, CliError> {
    let s = setup(sc, base)?;
    let spec = base_spec(sc, &s);
    let method = match sc.observe.method {
        MethodSpec::Auto => ObservabilityMethod::Auto,
        MethodSpec::Dense => ObservabilityMethod::DenseSvd,
        MethodSpec::Power => ObservabilityMethod::PowerIteration,
    };
    let opts = ObservabilityOptions { method, tol: sc.observe.tol, max_iters: sc.observe.max_iters, ..Default::default() };
    let rep = estimate_observability_constant(&spec, &s.grid, &s.tgrid, &opts)?;
    let mut sec = Section::new(&sc.name, "observe");
    grid_entries(&mut sec, &s);
    sec.push("c_t", num(rep.c_t))
        .push("method", format!("{:?}", rep.method))
        .push("iterations", rep.trace.len() as u64)
        .push("conditioning", rep.conditioning.map(num).unwrap_or(serde_json::Value::Null));
    sec.verdict = Verdict::from_bool(rep.c_t.is_finite());
    let mut csv = String::from("iteration,c_t\n");
    for (i, q) in rep.trace.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, q));
    }
    Ok(TaskOutput { section: sec, files: vec![("observe_trace.csv".into(), csv.into_bytes())] })
}

fn control(sc: &Scenario, base: &Path) -> Result<TaskOutput, CliError> {
    let s = setup(sc, base)?;
    let spec = base_spec(sc, &s);
    let opts = control_options(sc);
    let r = if s.omega.intervals().len() == 2 {
        two_piece_control(&spec, &s.grid, &s.tgrid, &opts)?
    } else {
        hum_null_control(&spec, &s.grid, &s.tgrid, &opts)?
    };
    let mut sec = Section::new(&sc.name, "control");
    grid_entries(&mut sec, &s);
    sec.push("final_residual", r.final_residual)
        .push("relative_residual", r.relative_residual)
        .push("cost", r.cost)
        .push("cost_bound_constant", r.cost_bound_constant)
        .push("epsilon", r.epsilon)
        .push("cg_iterations", r.cg_iterations as u64)
        .push("cg_converged", r.cg_converged)
        .push("warnings", r.warnings.clone());
    sec.verdict = Verdict::from_bool(r.relative_residual <= sc.control.target);
    let mut trace = String::from("iteration,residual\n");
    for (i, v) in r.cg_trace.iter().enumerate() {
        trace.push_str(&format!("{},{}\n", i + 1, v));
    }
    Ok(TaskOutput {
        section: sec,
        files: vec![
            ("control.csv".into(), r.h.to_csv().into_bytes()),
            ("state.csv".into(), r.state.to_csv().into_bytes()),
            ("cg_trace.csv".into(), trace.into_bytes()),
        ],
    })
}

fn weight_for(sc: &Scenario, s: &Setup) -> Result<CarlemanWeight, CliError> {
    let w = &sc.weights;
    let variant = match (w.variant, s.profile.is_degenerate()) {
        (VariantSpec::Auto, true) => None,
        (VariantSpec::Auto, false) | (VariantSpec::A1, _) => Some(WeightVariant::NonDegA1),
        (VariantSpec::A2, _) => Some(WeightVariant::NonDegA2),
    };
    Ok(match variant {
        None => {
            let r = if s.form == Form::Divergence { 0.0 } else { w.r };
            build_degenerate_weight(&s.profile, &s.grid, s.form, w.c1, w.margin, r)?
        }
        Some(v) => build_nondegenerate_weight(&s.profile, None, v, w.r, &s.grid, s.form)?,
    })
}

fn inequality(sc: &Scenario, base: &Path) -> Result<TaskOutput, CliError> {
    let s = setup(sc, base)?;
    let weight = weight_for(sc, &s)?;
    let seed = sc.seed.ok_or_else(|| CliError::Config("seed required".into()))?;
    let opts = SGridOptions { s_min: sc.weights.s_min, s_max: sc.weights.s_max, ..Default::default() };
    let inner = match sc.weights.omega_inner {
        Some([a, b]) => Some(ControlRegion::single(a, b)?),
        None => None,
    };
    let mut reports: Vec<InequalityReport> = Vec::new();
    for i in 0..sc.data.samples {
        let v_t = initial(sc.data.v_t, &s.grid, seed.wrapping_add(i as u64), sc.data.modes);
        let spec = ProblemSpec::new(s.profile.clone(), s.form, s.omega.clone()).with_final(v_t).with_theta(sc.grid.theta);
        let v = solve_adjoint(&spec, &s.grid, &s.tgrid)?;
        let rep = match (sc.task, &inner) {
            (Task::Caccioppoli, Some(inner)) => caccioppoli_check(&v, &weight, inner, &s.omega, &opts)?,
            _ => carleman_ratio(&v, &weight, &s.profile, &opts)?,
        };
        reports.push(rep);
    }
    let task = sc.task.name();
    let mut sec = Section::new(&sc.name, task);
    grid_entries(&mut sec, &s);
    let sups: Vec<f64> = reports.iter().map(|r| r.sup_ratio).collect();
    sec.push("variant", format!("{:?}", weight.variant))
        .push("samples", reports.len() as u64)
        .push("s0", reports.iter().map(|r| num(r.s0)).collect::<Vec<_>>())
        .push("sup_ratio", sups.iter().map(|&x| num(x)).collect::<Vec<_>>())
        .push("max_sup_ratio", num(sups.iter().cloned().fold(0.0, f64::max)));
    sec.verdict = Verdict::from_bool(reports.iter().all(|r| r.verdict));
    let mut files = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        files.push((format!("{task}_{i}.csv"), r.to_csv().into_bytes()));
    }
    let mut wcsv = String::from("x,psi\n");
    for (x, p) in weight.nodes.iter().zip(&weight.psi) {
        wcsv.push_str(&format!("{x},{p}\n"));
    }
    files.push(("weight.csv".into(), wcsv.into_bytes()));
    Ok(TaskOutput { section: sec, files })
}

fn hardy(sc: &Scenario) -> Result<TaskOutput, CliError> {
    let h = sc.hardy.as_ref().ok_or_else(|| CliError::Config("task hardy needs [hardy]".into()))?;
    // the grid only needs a node at x0
    let shape = CoefficientProfile::prototype_beyond_range(1.0, h.x0, 11)?;
    let grid = SpaceGrid::build_graded(sc.grid.cells, &shape, sc.grid.grading)?;
    let (x0, e) = (h.x0, h.exponent);
    let rep = hardy_poincare_constant(|x| (x - x0).abs().powf(e), &grid)?;
    let mut sec = Section::new(&sc.name, "hardy");
    sec.push("cells", grid.cells() as u64)
        .push("exponent", e)
        .push("c_hp", num(rep.c_hp))
        .push("min_exponent", num(rep.min_exponent))
        .push("certified", rep.certified);
    sec.verdict = Verdict::from_bool(rep.certified && rep.c_hp.is_finite());
    Ok(TaskOutput { section: sec, files: Vec::new() })
}

fn regional(sc: &Scenario, base: &Path) -> Result<TaskOutput, CliError> {
    let s = setup(sc, base)?;
    let spec = base_spec(sc, &s);
    let rg = sc.regional.as_ref().ok_or_else(|| CliError::Config("task regional needs [regional]".into()))?;
    let r = regional_control_cutoff(&spec, &s.grid, &s.tgrid, rg.r_outer, rg.r_inner, &control_options(sc))?;
    let mut sec = Section::new(&sc.name, "regional");
    grid_entries(&mut sec, &s);
    let t = &r.trace;
    sec.push("r_outer", t.r_outer)
        .push("r_inner", t.r_inner)
        .push("final_max_abs", t.final_max_abs)
        .push("source_l2", t.source_l2)
        .push("source_max", t.source_max)
        .push("near_l2", t.near_l2)
        .push("near_max", t.near_max)
        .push("side_residuals", vec![t.side_residuals.0, t.side_residuals.1]);
    sec.verdict = Verdict::from_bool(t.final_max_abs <= 1e-10);
    Ok(TaskOutput {
        section: sec,
        files: vec![
            ("source.csv".into(), r.control.h.to_csv().into_bytes()),
            ("state.csv".into(), r.control.state.to_csv().into_bytes()),
        ],
    })
}

fn semilinear(sc: &Scenario, base: &Path) -> Result<TaskOutput, CliError> {
    let s = setup(sc, base)?;
    let spec = base_spec(sc, &s);
    let sl = sc.semilinear.as_ref().ok_or_else(|| CliError::Config("task semilinear needs [semilinear]".into()))?;
    let amp = sl.amplitude;
    let f: Nonlinearity = Arc::new(move |_, _, u: f64| amp * u.sin());
    let fq: Nonlinearity = Arc::new(move |_, _, u: f64| amp * u.cos());
    let picard = PicardOptions { tol: sl.tol, max_iters: sl.max_iters };
    let r = semilinear_null_control(&spec, &s.grid, &s.tgrid, f, fq, amp.abs(), &picard, &control_options(sc))?;
    let mut sec = Section::new(&sc.name, "semilinear");
    grid_entries(&mut sec, &s);
    sec.push("iterations", r.iterations as u64)
        .push("converged", r.converged)
        .push("picard_trace", r.trace.iter().map(|&x| num(x)).collect::<Vec<_>>())
        .push("nonlinear_relative_residual", r.nonlinear_relative_residual)
        .push("cost_bound_constant", r.control.cost_bound_constant)
        .push("failure", r.failure.clone().unwrap_or_default());
    sec.verdict = Verdict::from_bool(r.converged && r.nonlinear_relative_residual <= sc.control.target);
    let summary = json!({ "trace": r.trace });
    Ok(TaskOutput {
        section: sec,
        files: vec![
            ("control.csv".into(), r.control.h.to_csv().into_bytes()),
            ("picard.json".into(), serde_json::to_vec_pretty(&summary).expect("plain json")),
        ],
    })
}
