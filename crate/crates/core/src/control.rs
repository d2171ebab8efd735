//! Observability constants and null controls by penalized HUM.
//!
//! With the exact discrete adjoint of [`crate::pde::Stepper`], the control
//! `g^n = chi z^n(v_T)` drives the state to `u(T) = u_free(T) + Lambda v_T`,
//! where `Lambda = O^* O` is the observation Gramian. Penalized HUM solves
//! `(Lambda + eps) v_T = -u_free(T)` by conjugate gradient in the operator's
//! weighted inner product, so that `u(T) = -eps v_T`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, CgOutcome};
use crate::mesh::{Form, SpaceGrid, TimeGrid, WeightedNorm};
use crate::pde::{
    secant, Coefficient, ControlRegion, Field, Nonlinearity, ProblemSpec, Stepper,
};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ControlOptions {
    /// Penalization; `None` uses `1e-6 * ||u0||^2`.
    pub epsilon: Option<f64>,
    pub cg_tol: f64,
    pub max_iters: usize,
}

impl Default for ControlOptions {
    fn default() -> Self {
        Self { epsilon: None, cg_tol: 1e-10, max_iters: 5000 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ControlResult {
    /// Control field; row `n + 1` acts on step `n`. Zero outside `omega`.
    #[serde(skip)]
    pub h: Field,
    /// Controlled trajectory.
    #[serde(skip)]
    pub state: Field,
    #[serde(skip)]
    pub final_state: Vec<f64>,
    /// `||u(T)||` in the form's norm.
    pub final_residual: f64,
    /// `||u(T)|| / ||u0||`, zero for zero data.
    pub relative_residual: f64,
    /// `int int h^2` with the form's weight.
    pub cost: f64,
    pub initial_norm_sq: f64,
    /// `cost / ||u0||^2`.
    pub cost_bound_constant: f64,
    pub epsilon: f64,
    pub cg_iterations: usize,
    pub cg_converged: bool,
    pub cg_trace: Vec<f64>,
    /// Relative defect of the forward/adjoint duality identity for this run.
    pub duality_defect: f64,
    pub warnings: Vec<String>,
}

struct Hum<'a> {
    st: &'a Stepper,
}

impl Hum<'_> {
    /// `g^n = chi z^n` for every step.
    fn observe(&self, v_t: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let (v, z) = self.st.adjoint_free(v_t)?;
        let chi = self.st.chi();
        let g = z.into_iter().map(|zn| zn.iter().zip(chi).map(|(a, c)| a * c).collect()).collect();
        Ok((v.into_iter().next().unwrap_or_default(), g))
    }

    fn drive(&self, u0: &[f64], g: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.st.forward_free(u0, |n, out| out.copy_from_slice(&g[n]))
    }

    fn free_final(&self, u0: &[f64]) -> Result<Vec<f64>> {
        let rows = self.st.forward_free(u0, |_, _| {})?;
        Ok(rows.into_iter().last().unwrap_or_default())
    }

    fn gramian(&self, v_t: &[f64]) -> Result<Vec<f64>> {
        let (_, g) = self.observe(v_t)?;
        let zero = vec![0.0; v_t.len()];
        Ok(self.drive(&zero, &g)?.into_iter().last().unwrap_or_default())
    }

    fn cost(&self, g: &[Vec<f64>]) -> f64 {
        let dt = self.st.tgrid.step();
        g.iter().map(|gn| dt * self.st.dot(gn, gn)).sum()
    }

    /// Scaled observation matrix: column `j` is the observation of the
    /// `W`-normalized unit vector `e_j`, rows are `sqrt(dt w_r) g^n_r` over
    /// observed nodes. Also returns the scaled `v^0` columns.
    fn observation_matrix(&self) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<usize>)> {
        let st = self.st;
        let m = st.free().len();
        let dt = st.tgrid.step();
        let w = st.weight();
        let observed: Vec<usize> = (0..m).filter(|&r| st.chi()[r] != 0.0).collect();
        let mut obs = DMatrix::zeros(st.tgrid.steps * observed.len(), m);
        let mut phi = DMatrix::zeros(m, m);
        let mut e = vec![0.0; m];
        for j in 0..m {
            e[j] = 1.0 / w[j].sqrt();
            let (v0, g) = self.observe(&e)?;
            e[j] = 0.0;
            for (n, gn) in g.iter().enumerate() {
                for (k, &r) in observed.iter().enumerate() {
                    obs[(n * observed.len() + k, j)] = (dt * w[r]).sqrt() * gn[r];
                }
            }
            for r in 0..m {
                phi[(r, j)] = w[r].sqrt() * v0[r];
            }
        }
        Ok((obs, phi, observed))
    }

    /// Minimal-norm exact control with `u(T) = u_free(T) + F g = 0`. The
    /// scaled forward map is the transpose of the scaled observation matrix,
    /// so with `O = QR` the control is `Q R^{-T} b` without forming `O^T O`.
    fn dense_exact(&self, b: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let st = self.st;
        let m = st.free().len();
        let dt = st.tgrid.step();
        let w = st.weight();
        let (obs, _, observed) = self.observation_matrix()?;
        let qr = obs.qr();
        let r = qr.r();
        let rhs = nalgebra::DVector::from_iterator(m, (0..m).map(|i| w[i].sqrt() * b[i]));
        let y = r
            .transpose()
            .solve_lower_triangular(&rhs)
            .ok_or_else(|| Error::Precondition("observation map is rank deficient".into()))?;
        let ghat = qr.q() * &y;
        let x = r
            .solve_upper_triangular(&y)
            .ok_or_else(|| Error::Precondition("observation map is rank deficient".into()))?;
        let v_t = (0..m).map(|j| x[j] / w[j].sqrt()).collect();
        let mut g = vec![vec![0.0; m]; st.tgrid.steps];
        for (n, gn) in g.iter_mut().enumerate() {
            for (k, &row) in observed.iter().enumerate() {
                gn[row] = ghat[n * observed.len() + k] / (dt * w[row]).sqrt();
            }
        }
        Ok((v_t, g))
    }

    /// CG on `(Lambda + eps) x = b`; operator failures surface as errors.
    fn solve(&self, b: &[f64], eps: f64, tol: f64, max_iters: usize) -> Result<CgOutcome> {
        let failure = std::cell::RefCell::new(None);
        let out = conjugate_gradient(
            |x| match self.gramian(x) {
                Ok(mut y) => {
                    for (yi, xi) in y.iter_mut().zip(x) {
                        *yi += eps * xi;
                    }
                    y
                }
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    vec![f64::NAN; x.len()]
                }
            },
            b,
            |a, c| self.st.dot(a, c),
            tol,
            max_iters,
        );
        match failure.into_inner() {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }
}

fn refuse_nondivergence_through_x0(spec: &ProblemSpec) -> Result<()> {
    if spec.form == Form::NonDivergence {
        if let Some(x0) = spec.profile.x0() {
            if spec.omega.closure_contains(x0) {
                return Err(Error::Precondition(format!(
                    "non-divergence form with x0 = {x0} in the control region: the observability route \
                     is not available; use regional_control_cutoff"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Solver {
    Cg,
    /// Unpenalized minimal-norm control from a QR of the observation matrix.
    DenseExact,
}

fn hum_core(
    spec: &ProblemSpec,
    grid: &SpaceGrid,
    tgrid: &TimeGrid,
    solver: Solver,
    eps: Option<f64>,
    cg_tol: f64,
    max_iters: usize,
) -> Result<ControlResult> {
    let st = Stepper::new(spec, grid, tgrid)?;
    let u0_full = spec.u0.as_ref().ok_or_else(|| Error::Config("control needs u0".into()))?;
    if u0_full.len() != grid.len() {
        return Err(Error::Shape { expected: grid.len(), got: u0_full.len() });
    }
    let hum = Hum { st: &st };
    let u0 = st.to_free(u0_full);
    let norm_sq = st.dot(&u0, &u0);
    let epsilon = eps.unwrap_or(1e-6 * norm_sq);
    let mut h = Field::zeros(spec.form, st.grid().clone(), *tgrid);
    if norm_sq == 0.0 {
        return Ok(ControlResult {
            state: h.clone(),
            h,
            final_state: vec![0.0; grid.len()],
            final_residual: 0.0,
            relative_residual: 0.0,
            cost: 0.0,
            initial_norm_sq: 0.0,
            cost_bound_constant: 0.0,
            epsilon,
            cg_iterations: 0,
            cg_converged: true,
            cg_trace: Vec::new(),
            duality_defect: 0.0,
            warnings: Vec::new(),
        });
    }
    let free_t = hum.free_final(&u0)?;
    let b: Vec<f64> = free_t.iter().map(|v| -v).collect();
    let (v_t, g, cg) = match solver {
        Solver::Cg => {
            let cg = hum.solve(&b, epsilon, cg_tol, max_iters)?;
            let (_, g) = hum.observe(&cg.solution)?;
            (cg.solution.clone(), g, cg)
        }
        Solver::DenseExact => {
            let (v_t, g) = hum.dense_exact(&b)?;
            (v_t, g, CgOutcome { solution: Vec::new(), iterations: 0, converged: true, trace: Vec::new() })
        }
    };
    let (v0, _) = hum.observe(&v_t)?;
    let u = hum.drive(&u0, &g)?;
    let u_t = &u[tgrid.steps];
    for (n, gn) in g.iter().enumerate() {
        h.values[n + 1] = st.to_full(gn);
    }
    let mut state = Field::zeros(spec.form, st.grid().clone(), *tgrid);
    for (n, un) in u.iter().enumerate() {
        state.values[n] = st.to_full(un);
    }
    let cost = hum.cost(&g);
    let final_residual = st.dot(u_t, u_t).sqrt();
    // <u(T), v_T> - <u0, v^0> = dt sum <g, z> = cost
    let lhs = st.dot(u_t, &v_t) - st.dot(&u0, &v0);
    let scale = final_residual * st.dot(&v_t, &v_t).sqrt() + norm_sq.sqrt() * st.dot(&v0, &v0).sqrt() + cost;
    Ok(ControlResult {
        h,
        state,
        final_state: st.to_full(u_t),
        final_residual,
        relative_residual: final_residual / norm_sq.sqrt(),
        cost,
        initial_norm_sq: norm_sq,
        cost_bound_constant: cost / norm_sq,
        epsilon,
        cg_iterations: cg.iterations,
        cg_converged: cg.converged,
        cg_trace: cg.trace,
        duality_defect: if scale > 0.0 { (lhs - cost).abs() / scale } else { 0.0 },
        warnings: Vec::new(),
    })
}

/// Penalized HUM null control of `spec.u0` in time `T`.
pub fn hum_null_control(
    spec: &ProblemSpec,
    grid: &SpaceGrid,
    tgrid: &TimeGrid,
    opts: &ControlOptions,
) -> Result<ControlResult> {
    refuse_nondivergence_through_x0(spec)?;
    if let Some(eps) = opts.epsilon {
        if !(eps > 0.0) {
            return Err(Error::Constraint(format!("epsilon = {eps} must be positive")));
        }
    }
    hum_core(spec, grid, tgrid, Solver::Cg, opts.epsilon, opts.cg_tol, opts.max_iters)
}

/// HUM control for `omega = omega_1 u omega_2`. A region that does not
/// straddle `x0` is reported as a warning and the control is attempted anyway.
pub fn two_piece_control(
    spec: &ProblemSpec,
    grid: &SpaceGrid,
    tgrid: &TimeGrid,
    opts: &ControlOptions,
) -> Result<ControlResult> {
    let mut warnings = Vec::new();
    match spec.profile.x0() {
        Some(x0) if !spec.omega.straddles(x0) => {
            warnings.push(format!("control region {:?} does not straddle x0 = {x0}", spec.omega.intervals()))
        }
        None => warnings.push("profile is non-degenerate; nothing to straddle".into()),
        _ => {}
    }
    let mut res = hum_null_control(spec, grid, tgrid, opts)?;
    res.warnings.extend(warnings);
    Ok(res)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ObservabilityMethod {
    /// Generalized singular value from a QR/SVD of the assembled maps.
    DenseSvd,
    /// Power iteration on `Lambda^{-1} Phi^* Phi` with inner CG.
    PowerIteration,
    /// Dense for at most [`DENSE_LIMIT`] free nodes, power iteration otherwise.
    Auto,
}

pub const DENSE_LIMIT: usize = 60;

#[derive(Debug, Clone, Copy)]
pub struct ObservabilityOptions {
    pub method: ObservabilityMethod,
    pub tol: f64,
    pub max_iters: usize,
    pub inner_tol: f64,
    pub inner_max_iters: usize,
}

impl Default for ObservabilityOptions {
    fn default() -> Self {
        Self { method: ObservabilityMethod::Auto, tol: 1e-9, max_iters: 500, inner_tol: 1e-12, inner_max_iters: 20000 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ObservabilityReport {
    pub c_t: f64,
    pub method: ObservabilityMethod,
    /// Rayleigh quotients per power iteration (empty for the dense route).
    pub trace: Vec<f64>,
    pub free_nodes: usize,
    pub steps: usize,
    pub horizon: f64,
    pub epsilon: Option<f64>,
    /// Condition number of the column-normalized modal factor (dense route on
    /// a time-invariant symmetric generator). Beyond about `1e10` the dense
    /// value degrades; shorten `T` or coarsen the grid.
    pub conditioning: Option<f64>,
}

/// `C_T = sup ||v(0)||_W^2 / (dt sum_n ||chi z^n||_W^2)` over final data.
pub fn estimate_observability_constant(
    spec: &ProblemSpec,
    grid: &SpaceGrid,
    tgrid: &TimeGrid,
    opts: &ObservabilityOptions,
) -> Result<ObservabilityReport> {
    let st = Stepper::new(spec, grid, tgrid)?;
    let m = st.free().len();
    if st.chi().iter().all(|&c| c == 0.0) {
        return Err(Error::Config("control region contains no free grid node".into()));
    }
    let method = match opts.method {
        ObservabilityMethod::Auto if m <= DENSE_LIMIT => ObservabilityMethod::DenseSvd,
        ObservabilityMethod::Auto => ObservabilityMethod::PowerIteration,
        other => other,
    };
    let hum = Hum { st: &st };
    let (c_t, trace, conditioning) = match method {
        ObservabilityMethod::DenseSvd => {
            let (c, cond) = dense_constant(&hum, spec.b.is_none())?;
            (c, Vec::new(), cond)
        }
        _ => {
            let (c, trace) = power_constant(&hum, opts)?;
            (c, trace, None)
        }
    };
    Ok(ObservabilityReport {
        c_t,
        method,
        trace,
        free_nodes: m,
        steps: tgrid.steps,
        horizon: tgrid.horizon,
        epsilon: None,
        conditioning,
    })
}

fn dense_constant(hum: &Hum, symmetric: bool) -> Result<(f64, Option<f64>)> {
    if symmetric && hum.st.is_time_invariant() {
        return modal_constant(hum.st);
    }
    let (obs, phi, _) = hum.observation_matrix()?;
    let r = obs.qr().r();
    // X = Phi R^{-1}  <=>  R^T X^T = Phi^T
    let xt = r
        .transpose()
        .solve_lower_triangular(&phi.transpose())
        .ok_or_else(|| Error::Precondition("observation map is rank deficient".into()))?;
    Ok((xt.singular_values().max().powi(2), None))
}

/// Time-invariant, `W`-symmetric generator: expand in its eigenvectors and
/// parameterize by `v(0)`, so that `C_T = ||R^{-1}||^2` for the QR of the
/// observation matrix. Columns are formed in log scale and normalized before
/// the factorization; modes annihilated by the scheme cannot raise the ratio
/// and are dropped.
fn modal_constant(st: &Stepper) -> Result<(f64, Option<f64>)> {
    let m = st.free().len();
    let w = st.weight();
    let l = st.generator(0);
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    // S = W^{1/2} L W^{-1/2}
    let mut s = DMatrix::zeros(m, m);
    for i in 0..m {
        s[(i, i)] = l.diag[i];
        if i + 1 < m {
            let v = 0.5 * (l.upper[i] * sw[i] / sw[i + 1] + l.lower[i + 1] * sw[i + 1] / sw[i]);
            s[(i, i + 1)] = v;
            s[(i + 1, i)] = v;
        }
    }
    let eig = s.symmetric_eigen();
    let dt = st.tgrid.step();
    let steps = st.tgrid.steps;
    let theta = st.theta;
    let observed: Vec<usize> = (0..m).filter(|&r| st.chi()[r] != 0.0).collect();
    // per mode: v^n = (q/p) v^{n+1}, z^n = v^{n+1} / p
    let mut cols = Vec::new();
    let mut scales = Vec::new();
    for k in 0..m {
        let mu = eig.eigenvalues[k];
        let p = 1.0 - theta * dt * mu;
        let q = 1.0 + (1.0 - theta) * dt * mu;
        let ratio = (q / p).abs();
        if ratio == 0.0 || (steps as f64) * ratio.ln() < -700.0 {
            continue;
        }
        let sign = (q / p).signum();
        let lr = -ratio.ln();
        // z^n = y (p/q)^{n+1} / p, largest at n = steps - 1
        let top = steps as f64 * lr - p.abs().ln();
        let vec = eig.eigenvectors.column(k);
        let mut col = Vec::with_capacity(steps * observed.len());
        for n in 0..steps {
            let mag = ((n + 1) as f64 * lr - p.abs().ln() - top).exp() * sign.powi(n as i32 + 1) * p.signum();
            for &r in &observed {
                // eigenvector of S; the W-orthonormal mode is W^{-1/2} vec
                col.push(dt.sqrt() * mag * vec[r]);
            }
        }
        cols.push(col);
        scales.push(top);
    }
    if cols.is_empty() {
        return Ok((0.0, None));
    }
    let rows = steps * observed.len();
    let obs = DMatrix::from_fn(rows, cols.len(), |i, j| cols[j][i]);
    let r = obs.qr().r();
    let k = cols.len();
    let sv = r.singular_values();
    let cond = sv.max() / sv.min();
    let inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Precondition("observation map is rank deficient".into()))?;
    let inv = DMatrix::from_fn(k, k, |i, j| (-scales[i]).exp() * inv[(i, j)]);
    Ok((inv.singular_values().max().powi(2), Some(cond)))
}

fn power_constant(hum: &Hum, opts: &ObservabilityOptions) -> Result<(f64, Vec<f64>)> {
    let st = hum.st;
    let grid = st.grid();
    // iterate on y -> Phi Lambda^{-1} Phi^* y; the quotient is the exact HUM cost of y
    // generic start: symmetric data would confine the iteration to a subspace
    let mut y = st.to_free(&crate::pde::random_smooth_data(grid, 0x5eed, grid.cells()));
    let mut trace = Vec::new();
    let mut last = 0.0;
    for it in 0..opts.max_iters {
        let norm = st.dot(&y, &y).sqrt();
        y.iter_mut().for_each(|v| *v /= norm);
        let b = hum.free_final(&y)?;
        let cg = hum.solve(&b, 0.0, opts.inner_tol, opts.inner_max_iters)?;
        let q = st.dot(&b, &cg.solution);
        trace.push(q);
        if it > 0 && (q - last).abs() <= opts.tol * q.abs() {
            return Ok((q, trace));
        }
        last = q;
        y = hum.observe(&cg.solution)?.0;
    }
    Err(Error::Convergence { iterations: opts.max_iters, last })
}

/// Smooth step: 0 for `y <= 0`, 1 for `y >= 1`, `C^infinity` in between.
pub fn smooth_step(y: f64) -> f64 {
    if y <= 0.0 {
        0.0
    } else if y >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / y).exp();
        let b = (-1.0 / (1.0 - y)).exp();
        a / (a + b)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionalTrace {
    /// Outer and inner radii after snapping to grid nodes.
    pub r_outer: f64,
    pub r_inner: f64,
    pub side_iterations: (usize, usize),
    pub side_residuals: (f64, f64),
    /// `sqrt(dt sum_n ||h^n||^2)` over the whole domain.
    pub source_l2: f64,
    pub source_max: f64,
    /// The same two norms restricted to `|x - x0| < r_inner`, where only the
    /// middle piece is active.
    pub near_l2: f64,
    pub near_max: f64,
    /// `max |u(T)|` of the assembled field.
    pub final_max_abs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionalResult {
    pub control: ControlResult,
    pub trace: RegionalTrace,
}

fn intersect(omega: &ControlRegion, lo: f64, hi: f64) -> Result<ControlRegion> {
    let parts: Vec<(f64, f64)> = omega
        .intervals()
        .iter()
        .filter_map(|&(a, b)| {
            let (a, b) = (a.max(lo), b.min(hi));
            (a < b).then_some((a, b))
        })
        .collect();
    ControlRegion::new(parts)
}

/// Cutoff construction for `x0` inside `omega`: exact HUM on the two
/// non-degenerate side problems, a free solve around `x0`, and the blend
/// `u = phi1 v1 + phi2 v2 + (T - t)/T phi0 v0`. The induced source is the
/// residual of the assembled field in the full backward-Euler scheme.
pub fn regional_control_cutoff(
    spec: &ProblemSpec,
    grid: &SpaceGrid,
    tgrid: &TimeGrid,
    r_outer: f64,
    r_inner: f64,
    opts: &ControlOptions,
) -> Result<RegionalResult> {
    let x0 = spec
        .profile
        .x0()
        .ok_or_else(|| Error::Config("regional construction needs a degenerate profile".into()))?;
    if !(r_outer > r_inner && r_inner > 0.0) {
        return Err(Error::Config(format!("need r_outer > r_inner > 0, got {r_outer}, {r_inner}")));
    }
    if !spec.omega.intervals().iter().any(|&(a, b)| a <= x0 - r_outer && x0 + r_outer <= b) {
        return Err(Error::Config(format!("(x0 - r, x0 + r) with r = {r_outer} is not inside omega")));
    }
    let k = grid.x0_index().ok_or_else(|| Error::Config("grid does not pass through x0".into()))?;
    let x = grid.nodes();
    let n = x.len();
    let snap = |r: f64| -> (usize, usize) {
        let l = (0..=k).min_by(|&a, &b| ((x0 - x[a]) - r).abs().total_cmp(&((x0 - x[b]) - r).abs())).unwrap();
        let rr = (k..n).min_by(|&a, &b| ((x[a] - x0) - r).abs().total_cmp(&((x[b] - x0) - r).abs())).unwrap();
        (l, rr)
    };
    let (lo_out, hi_out) = snap(r_outer);
    let (lo_in, hi_in) = snap(r_inner);
    if !(lo_out >= 2 && lo_out < lo_in && lo_in < k && k < hi_in && hi_in < hi_out && hi_out + 2 < n) {
        return Err(Error::Config("radii do not resolve on this grid".into()));
    }
    let u0_full = spec.u0.as_ref().ok_or_else(|| Error::Config("control needs u0".into()))?;
    if matches!(spec.c, Some(Coefficient::Sampled(_))) || matches!(spec.b, Some(Coefficient::Sampled(_))) {
        return Err(Error::Config("regional construction needs functional lower-order coefficients".into()));
    }
    let (ro, ri) = (x0 - x[lo_out], x0 - x[lo_in]);

    // cutoffs
    let phi1: Vec<f64> = x.iter().map(|&xi| smooth_step((x[lo_in] - xi) / (x[lo_in] - x[lo_out]))).collect();
    let phi2: Vec<f64> = x.iter().map(|&xi| smooth_step((xi - x[hi_in]) / (x[hi_out] - x[hi_in]))).collect();
    let phi0: Vec<f64> = (0..n).map(|i| 1.0 - phi1[i] - phi2[i]).collect();

    let sub = |a: usize, b: usize, degenerate: bool| -> Result<SpaceGrid> {
        SpaceGrid::from_nodes(x[a..=b].to_vec(), if degenerate { Some(x0) } else { None })
    };
    let base = ProblemSpec { theta: 1.0, h: None, v_t: None, ..spec.clone() };
    let side = |a: usize, b: usize| -> Result<ControlResult> {
        let s = ProblemSpec {
            omega: intersect(&spec.omega, x[a], x[b])?,
            u0: Some(clip(u0_full, a, b)),
            ..base.clone()
        };
        hum_core(&s, &sub(a, b, false)?, tgrid, Solver::DenseExact, Some(0.0), opts.cg_tol, opts.max_iters)
    };
    let left = side(0, lo_in)?;
    let right = side(hi_in, n - 1)?;
    let mid_spec = ProblemSpec { u0: Some(clip(u0_full, lo_out, hi_out)), omega: ControlRegion::full(), ..base.clone() };
    let mid = crate::pde::solve_forward(&mid_spec, &sub(lo_out, hi_out, true)?, tgrid)?;

    let garc = Arc::new(grid.clone());
    let mut u = Field::zeros(spec.form, garc.clone(), *tgrid);
    let horizon = tgrid.horizon;
    for step in 0..=tgrid.steps {
        let fade = (horizon - tgrid.time(step)) / horizon;
        let row = &mut u.values[step];
        for i in 0..=lo_in {
            row[i] += phi1[i] * left.state.values[step][i];
        }
        for i in hi_in..n {
            row[i] += phi2[i] * right.state.values[step][i - hi_in];
        }
        for i in lo_out..=hi_out {
            row[i] += fade * phi0[i] * mid.values[step][i - lo_out];
        }
    }

    // induced source h^n = (u^{n+1} - u^n)/dt - L u^{n+1}
    let full_spec = ProblemSpec { theta: 1.0, omega: ControlRegion::full(), ..spec.clone() };
    let st = Stepper::new(&full_spec, grid, tgrid)?;
    let dt = tgrid.step();
    let mut h = Field::zeros(spec.form, garc, *tgrid);
    let mut l2 = 0.0;
    let mut hmax: f64 = 0.0;
    let mut near_l2 = 0.0;
    let mut near_max: f64 = 0.0;
    let free = st.free().to_vec();
    let near: Vec<bool> = free.iter().map(|&i| i > lo_in && i < hi_in).collect();
    let w = st.weight().to_vec();
    for step in 0..tgrid.steps {
        let next = st.to_free(&u.values[step + 1]);
        let prev = st.to_free(&u.values[step]);
        let mut lu = vec![0.0; free.len()];
        st.generator(step + 1).mul_vec(&next, &mut lu);
        let hn: Vec<f64> = (0..free.len()).map(|r| (next[r] - prev[r]) / dt - lu[r]).collect();
        l2 += dt * st.dot(&hn, &hn);
        hmax = hn.iter().fold(hmax, |m, v| m.max(v.abs()));
        for r in (0..free.len()).filter(|&r| near[r]) {
            near_l2 += dt * w[r] * hn[r] * hn[r];
            near_max = near_max.max(hn[r].abs());
        }
        h.values[step + 1] = st.to_full(&hn);
    }
    let u_t = u.last().to_vec();
    let final_max_abs = u_t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let norm = WeightedNorm::natural(&st.op);
    let u0n = norm.norm(grid, u0_full)?;
    let final_residual = norm.norm(grid, &u_t)?;
    let cost = l2;
    let control = ControlResult {
        h,
        state: u,
        final_state: u_t,
        final_residual,
        relative_residual: if u0n > 0.0 { final_residual / u0n } else { 0.0 },
        cost,
        initial_norm_sq: u0n * u0n,
        cost_bound_constant: if u0n > 0.0 { cost / (u0n * u0n) } else { 0.0 },
        epsilon: 0.0,
        cg_iterations: left.cg_iterations + right.cg_iterations,
        cg_converged: left.cg_converged && right.cg_converged,
        cg_trace: Vec::new(),
        duality_defect: left.duality_defect.max(right.duality_defect),
        warnings: Vec::new(),
    };
    Ok(RegionalResult {
        control,
        trace: RegionalTrace {
            r_outer: ro,
            r_inner: ri,
            side_iterations: (left.cg_iterations, right.cg_iterations),
            side_residuals: (left.final_residual, right.final_residual),
            source_l2: l2.sqrt(),
            source_max: hmax,
            near_l2: near_l2.sqrt(),
            near_max,
            final_max_abs,
        },
    })
}

fn clip(u0: &[f64], a: usize, b: usize) -> Vec<f64> {
    let mut v = u0[a..=b].to_vec();
    let last = v.len() - 1;
    v[0] = 0.0;
    v[last] = 0.0;
    v
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PicardOptions {
    /// Stop once successive controls differ by less than this, relative.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 20 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SemilinearResult {
    pub control: ControlResult,
    pub iterations: usize,
    pub converged: bool,
    /// Relative change of the control per Picard iteration.
    pub trace: Vec<f64>,
    /// `||u(T)||` of the semilinear state driven by the final control.
    pub nonlinear_residual: f64,
    pub nonlinear_relative_residual: f64,
    pub failure: Option<String>,
}

fn field_distance(a: &Field, b: &Field, st: &Stepper) -> f64 {
    let dt = st.tgrid.step();
    let mut acc = 0.0;
    for (ra, rb) in a.values.iter().zip(&b.values) {
        let d: Vec<f64> = st.to_free(&ra.iter().zip(rb).map(|(x, y)| x - y).collect::<Vec<_>>());
        acc += dt * st.dot(&d, &d);
    }
    acc.sqrt()
}

/// Null control of `u_t - A u + f(t, x, u) = chi h` by Picard iteration on
/// the frozen reaction `c = f(u)/u`, each step solved by penalized HUM.
/// Only weakly degenerate (or non-degenerate) coefficients are accepted.
#[allow(clippy::too_many_arguments)]
pub fn semilinear_null_control(
    spec: &ProblemSpec,
    grid: &SpaceGrid,
    tgrid: &TimeGrid,
    f: Nonlinearity,
    f_q: Nonlinearity,
    fq_bound: f64,
    picard: &PicardOptions,
    opts: &ControlOptions,
) -> Result<SemilinearResult> {
    if spec.profile.is_degenerate() && spec.profile.k() >= 1.0 {
        return Err(Error::Precondition(
            "the semilinear result covers only weakly degenerate coefficients (K < 1)".into(),
        ));
    }
    let u0_full = spec.u0.as_ref().ok_or_else(|| Error::Config("control needs u0".into()))?;
    let nodes = grid.nodes().to_vec();
    let times: Vec<f64> = (0..=tgrid.steps).map(|n| tgrid.time(n)).collect();
    let sample_c = |u: Option<&Field>| -> Vec<Vec<f64>> {
        times
            .iter()
            .enumerate()
            .map(|(n, &t)| {
                nodes
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let c = match u {
                            None => f_q(t, x, 0.0),
                            Some(u) => secant(&f, &f_q, t, x, u.values[n][i]),
                        };
                        c.clamp(-fq_bound.abs(), fq_bound.abs())
                    })
                    .collect()
            })
            .collect()
    };
    let base = ProblemSpec { theta: 1.0, ..spec.clone() };
    let mut c = sample_c(None);
    let mut trace = Vec::new();
    let mut prev: Option<ControlResult> = None;
    let mut rises = 0;
    let mut failure = None;
    let mut converged = false;
    let mut iterations = 0;
    let st_plain = Stepper::new(&base, grid, tgrid)?;
    for _ in 0..picard.max_iters {
        iterations += 1;
        let lin = base.clone().with_reaction(Coefficient::Sampled(c.clone()));
        let res = hum_null_control(&lin, grid, tgrid, opts)?;
        let st = Stepper::new(&lin, grid, tgrid)?;
        let u0 = st.to_free(u0_full);
        let g: Vec<Vec<f64>> = (0..tgrid.steps).map(|n| st.to_free(&res.h.values[n + 1])).collect();
        let rows = st_plain.forward_semilinear_free(&u0, &f, &f_q, |n, out| out.copy_from_slice(&g[n]))?;
        let mut state = Field::zeros(spec.form, st.grid().clone(), *tgrid);
        for (n, r) in rows.iter().enumerate() {
            state.values[n] = st.to_full(r);
        }
        let stop = match &prev {
            None => false,
            Some(p) => {
                let d = field_distance(&res.h, &p.h, &st);
                let scale = res.cost.sqrt().max(f64::MIN_POSITIVE);
                let rel = d / scale;
                if let Some(&last) = trace.last() {
                    if rel > last {
                        rises += 1;
                    } else {
                        rises = 0;
                    }
                }
                trace.push(rel);
                rel < picard.tol || d == 0.0
            }
        };
        c = sample_c(Some(&state));
        prev = Some(res);
        if stop {
            converged = true;
            break;
        }
        if rises >= 3 {
            failure = Some("control differences increased in three successive iterations".into());
            break;
        }
    }
    let control = prev.expect("at least one Picard iteration");
    // state of the semilinear problem under the final control
    let u0 = st_plain.to_free(u0_full);
    let g: Vec<Vec<f64>> = (0..tgrid.steps).map(|n| st_plain.to_free(&control.h.values[n + 1])).collect();
    let rows = st_plain.forward_semilinear_free(&u0, &f, &f_q, |n, out| out.copy_from_slice(&g[n]))?;
    let u_t = &rows[tgrid.steps];
    let nonlinear_residual = st_plain.dot(u_t, u_t).sqrt();
    let u0n = st_plain.dot(&u0, &u0).sqrt();
    if !converged && failure.is_none() {
        failure = Some(format!("no convergence in {} Picard iterations", picard.max_iters));
    }
    Ok(SemilinearResult {
        control,
        iterations,
        converged,
        trace,
        nonlinear_residual,
        nonlinear_relative_residual: if u0n > 0.0 { nonlinear_residual / u0n } else { 0.0 },
        failure,
    })
}
