//! Forward and adjoint time stepping of the controlled problem
//! `u_t = A u - c u - b u_x + chi_omega h` with homogeneous Dirichlet data.
//!
//! The theta-scheme step is `P_n u^{n+1} = Q_n u^n + dt g^n` with
//! `P_n = I - theta dt L(t_{n+1})`, `Q_n = I + (1 - theta) dt L(t_n)` and
//! `g^n = chi h^{n+1}`: row `n + 1` of a source field acts on step `n`.
//! The adjoint is the exact transpose of this recursion in the weighted inner
//! product `<u, v>_W` of the operator, `z^n = P_n^{-*} v^{n+1}`,
//! `v^n = Q_n^* z^n`, which yields the discrete duality identity
//! `<u^M, v^M>_W - <u^0, v^0>_W = dt sum_n <g^n, z^n>_W` to rounding.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coeff::CoefficientProfile;
use crate::error::{Error, Result};
use crate::linalg::Tridiagonal;
use crate::mesh::{DiscreteOperator, Form, SpaceGrid, TimeGrid};

/// Function of `(t, x)`.
pub type SpaceTimeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Nonlinearity `f(t, x, u)`.
pub type Nonlinearity = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Bounded space-time coefficient (reaction `c` or advection `b`).
#[derive(Clone)]
pub enum Coefficient {
    Function(SpaceTimeFn),
    /// Node values per time level, `(M + 1) x (N + 1)`.
    Sampled(Vec<Vec<f64>>),
}

impl std::fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coefficient::Function(_) => f.write_str("Coefficient::Function"),
            Coefficient::Sampled(v) => write!(f, "Coefficient::Sampled({}x{})", v.len(), v.first().map_or(0, Vec::len)),
        }
    }
}

impl Coefficient {
    pub fn constant(c: f64) -> Self {
        Coefficient::Function(Arc::new(move |_, _| c))
    }

    pub fn at(&self, n: usize, t: f64, i: usize, x: f64) -> f64 {
        match self {
            Coefficient::Function(f) => f(t, x),
            Coefficient::Sampled(v) => v[n][i],
        }
    }
}

/// Union of at most two disjoint open subintervals of `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlRegion {
    intervals: Vec<(f64, f64)>,
}

impl ControlRegion {
    pub fn new(mut intervals: Vec<(f64, f64)>) -> Result<Self> {
        if intervals.is_empty() || intervals.len() > 2 {
            return Err(Error::Config(format!(
                "control region needs 1 or 2 intervals, got {}",
                intervals.len()
            )));
        }
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(lo, hi) in &intervals {
            if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                return Err(Error::Config(format!("interval ({lo}, {hi}) is not inside (0, 1)")));
            }
        }
        if intervals.len() == 2 && intervals[0].1 > intervals[1].0 {
            return Err(Error::Config("control intervals overlap".into()));
        }
        Ok(Self { intervals })
    }

    pub fn single(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![(lo, hi)])
    }

    pub fn full() -> Self {
        Self { intervals: vec![(0.0, 1.0)] }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| lo < x && x < hi)
    }

    pub fn closure_contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| lo <= x && x <= hi)
    }

    /// `chi_omega` at the grid nodes.
    pub fn indicator(&self, grid: &SpaceGrid) -> Vec<f64> {
        grid.nodes().iter().map(|&x| if self.contains(x) { 1.0 } else { 0.0 }).collect()
    }

    /// True for two pieces `(l1, b1) u (l2, b2)` with `b1 < x0 < l2`.
    pub fn straddles(&self, x0: f64) -> bool {
        self.intervals.len() == 2 && self.intervals[0].1 < x0 && x0 < self.intervals[1].0
    }
}

/// Data of a linear control problem. Node-valued data (`u0`, `v_t`) live on
/// the grid the problem is solved on.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub profile: CoefficientProfile,
    pub form: Form,
    pub omega: ControlRegion,
    pub c: Option<Coefficient>,
    pub b: Option<Coefficient>,
    pub u0: Option<Vec<f64>>,
    pub v_t: Option<Vec<f64>>,
    pub h: Option<Field>,
    pub theta: f64,
}

impl ProblemSpec {
    pub fn new(profile: CoefficientProfile, form: Form, omega: ControlRegion) -> Self {
        Self { profile, form, omega, c: None, b: None, u0: None, v_t: None, h: None, theta: 1.0 }
    }

    pub fn with_u0(mut self, u0: Vec<f64>) -> Self {
        self.u0 = Some(u0);
        self
    }
    pub fn with_final(mut self, v_t: Vec<f64>) -> Self {
        self.v_t = Some(v_t);
        self
    }
    pub fn with_reaction(mut self, c: Coefficient) -> Self {
        self.c = Some(c);
        self
    }
    pub fn with_advection(mut self, b: Coefficient) -> Self {
        self.b = Some(b);
        self
    }
    pub fn with_source(mut self, h: Field) -> Self {
        self.h = Some(h);
        self
    }
    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    /// Smallest `C` with `|b(t, x)| <= C sqrt(a(x))` at every node; infinite
    /// when `b` is non-zero where `a` vanishes. `None` without advection.
    pub fn advection_bound(&self, grid: &SpaceGrid, tgrid: &TimeGrid) -> Option<f64> {
        let b = self.b.as_ref()?;
        let mut c: f64 = 0.0;
        for n in 0..=tgrid.steps {
            let t = tgrid.time(n);
            for (i, &x) in grid.nodes().iter().enumerate() {
                let bv = b.at(n, t, i, x).abs();
                if bv == 0.0 {
                    continue;
                }
                let a = grid.coeff_at_node(&self.profile, i);
                c = c.max(if a > 0.0 { bv / a.sqrt() } else { f64::INFINITY });
            }
        }
        Some(c)
    }
}

/// Space-time array of node values, one row per time level.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: Vec<Vec<f64>>,
    pub form: Form,
    pub grid: Arc<SpaceGrid>,
    pub tgrid: TimeGrid,
}

const MAGIC: &[u8; 4] = b"DGF1";

impl Field {
    pub fn zeros(form: Form, grid: Arc<SpaceGrid>, tgrid: TimeGrid) -> Self {
        let values = vec![vec![0.0; grid.len()]; tgrid.steps + 1];
        Self { values, form, grid, tgrid }
    }

    pub fn rows(&self) -> usize {
        self.values.len()
    }
    pub fn cols(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }
    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n]
    }
    pub fn last(&self) -> &[f64] {
        &self.values[self.values.len() - 1]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().flatten().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Largest absolute value in the two boundary columns.
    pub fn boundary_max(&self) -> f64 {
        self.values.iter().fold(0.0, |m, r| m.max(r[0].abs()).max(r[r.len() - 1].abs()))
    }

    /// CSV with header `t,x_0,...,x_N` (node abscissas) and one row per time level.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for x in self.grid.nodes() {
            out.push(',');
            out.push_str(&x.to_string());
        }
        out.push('\n');
        for (n, row) in self.values.iter().enumerate() {
            out.push_str(&self.tgrid.time(n).to_string());
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Binary dump: magic `DGF1`, rows and columns as little-endian `u32`,
    /// then the values as little-endian `f64` in row-major order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.rows() as u32).to_le_bytes())?;
        w.write_all(&(self.cols() as u32).to_le_bytes())?;
        for v in self.values.iter().flatten() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + 8 * self.rows() * self.cols());
        self.write_binary(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Reads a binary dump into raw rows.
    pub fn read_binary<R: Read>(mut r: R) -> Result<Vec<Vec<f64>>> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Config("not a DGF1 field dump".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let rows = u32::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let cols = u32::from_le_bytes(word) as usize;
        let mut out = vec![vec![0.0; cols]; rows];
        let mut buf = [0u8; 8];
        for row in &mut out {
            for v in row.iter_mut() {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
        }
        Ok(out)
    }
}

/// Node samples of `f`, with the two boundary nodes set to zero.
pub fn sample(grid: &SpaceGrid, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = grid.len();
    grid.nodes()
        .iter()
        .enumerate()
        .map(|(i, &x)| if i == 0 || i + 1 == n { 0.0 } else { f(x) })
        .collect()
}

/// Random smooth datum `sum_k c_k sin(k pi y) / k` on the grid's interval,
/// with `c_k` uniform in `[-1, 1]` drawn from a seeded ChaCha8 stream.
pub fn random_smooth_data(grid: &SpaceGrid, seed: u64, modes: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<f64> = (0..modes).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let (lo, hi) = (grid.lo(), grid.hi());
    sample(grid, |x| {
        let y = (x - lo) / (hi - lo);
        coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let k = (k + 1) as f64;
                c * (k * std::f64::consts::PI * y).sin() / k
            })
            .sum()
    })
}

/// Precomputed theta-scheme matrices on the free nodes of an operator.
#[derive(Debug, Clone)]
pub struct Stepper {
    pub op: DiscreteOperator,
    pub tgrid: TimeGrid,
    pub theta: f64,
    free: Vec<usize>,
    weight: Vec<f64>,
    chi: Vec<f64>,
    /// `L(t_n)` for every level, or a single entry when autonomous.
    generators: Vec<Tridiagonal>,
    p: Vec<Tridiagonal>,
    q: Vec<Tridiagonal>,
    pt: Vec<Tridiagonal>,
    qt: Vec<Tridiagonal>,
}

impl Stepper {
    pub fn new(spec: &ProblemSpec, grid: &SpaceGrid, tgrid: &TimeGrid) -> Result<Self> {
        if !(0.5..=1.0).contains(&spec.theta) {
            return Err(Error::Config(format!("theta = {} must lie in [1/2, 1]", spec.theta)));
        }
        let op = DiscreteOperator::assemble(spec.form, &spec.profile, grid);
        let free = op.free_indices();
        let (base, weight) = op.restricted();
        let chi_full = spec.omega.indicator(grid);
        let chi = free.iter().map(|&i| chi_full[i]).collect();
        let autonomous = spec.c.is_none() && spec.b.is_none();
        let levels = if autonomous { 1 } else { tgrid.steps + 1 };
        let nodes = grid.nodes();
        let mut generators = Vec::with_capacity(levels);
        for n in 0..levels {
            let t = tgrid.time(n);
            let mut l = base.clone();
            for (r, &i) in free.iter().enumerate() {
                if let Some(c) = &spec.c {
                    l.diag[r] -= c.at(n, t, i, nodes[i]);
                }
                if let Some(b) = &spec.b {
                    let bv = b.at(n, t, i, nodes[i]);
                    let span = nodes[i + 1] - nodes[i - 1];
                    if r > 0 && free[r - 1] + 1 == i {
                        l.lower[r] += bv / span;
                    }
                    if r + 1 < free.len() && free[r + 1] == i + 1 {
                        l.upper[r] -= bv / span;
                    }
                }
            }
            generators.push(l);
        }
        let dt = tgrid.step();
        let steps = if autonomous { 1 } else { tgrid.steps };
        let mut p = Vec::with_capacity(steps);
        let mut q = Vec::with_capacity(steps);
        for n in 0..steps {
            let next = if autonomous { 0 } else { n + 1 };
            p.push(generators[next].shifted(1.0, -spec.theta * dt));
            q.push(generators[n].shifted(1.0, (1.0 - spec.theta) * dt));
        }
        let pt = p.iter().map(Tridiagonal::transpose).collect();
        let qt = q.iter().map(Tridiagonal::transpose).collect();
        Ok(Self { op, tgrid: *tgrid, theta: spec.theta, free, weight, chi, generators, p, q, pt, qt })
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }
    pub fn weight(&self) -> &[f64] {
        &self.weight
    }
    /// `chi_omega` on free nodes.
    pub fn chi(&self) -> &[f64] {
        &self.chi
    }
    pub fn grid(&self) -> &Arc<SpaceGrid> {
        &self.op.grid
    }
    /// True when every level uses the same generator.
    pub fn is_time_invariant(&self) -> bool {
        self.generators.windows(2).all(|w| w[0].lower == w[1].lower && w[0].diag == w[1].diag && w[0].upper == w[1].upper)
    }

    pub fn generator(&self, n: usize) -> &Tridiagonal {
        &self.generators[n.min(self.generators.len() - 1)]
    }

    pub fn dot(&self, u: &[f64], v: &[f64]) -> f64 {
        self.weight.iter().zip(u).zip(v).map(|((w, a), b)| w * a * b).sum()
    }

    pub fn to_free(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| full[i]).collect()
    }

    pub fn to_full(&self, free: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.op.len()];
        for (&i, &v) in self.free.iter().zip(free) {
            out[i] = v;
        }
        out
    }

    fn idx(&self, n: usize) -> usize {
        n.min(self.p.len() - 1)
    }

    /// Forward recursion on free nodes. `source(n, g)` fills `g^n` (already
    /// restricted to free nodes); rows `u^0..u^M` are returned.
    pub fn forward_free<S>(&self, u0: &[f64], mut source: S) -> Result<Vec<Vec<f64>>>
    where
        S: FnMut(usize, &mut [f64]),
    {
        let m = self.free.len();
        let dt = self.tgrid.step();
        let mut rows = Vec::with_capacity(self.tgrid.steps + 1);
        rows.push(u0.to_vec());
        let mut g = vec![0.0; m];
        let mut rhs = vec![0.0; m];
        for n in 0..self.tgrid.steps {
            let k = self.idx(n);
            self.q[k].mul_vec(&rows[n], &mut rhs);
            g.iter_mut().for_each(|v| *v = 0.0);
            source(n, &mut g);
            for (r, gv) in rhs.iter_mut().zip(&g) {
                *r += dt * gv;
            }
            if !self.p[k].solve_in_place(&mut rhs) {
                return Err(Error::StepFailure { step: n + 1 });
            }
            rows.push(rhs.clone());
        }
        Ok(rows)
    }

    /// Exact discrete adjoint from `v^M = v_t`. Returns `(v, z)` with
    /// `v` rows `v^0..v^M` and `z` rows `z^0..z^{M-1}`.
    pub fn adjoint_free(&self, v_t: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let steps = self.tgrid.steps;
        let m = self.free.len();
        let mut v = vec![Vec::new(); steps + 1];
        let mut z = vec![Vec::new(); steps];
        v[steps] = v_t.to_vec();
        let mut buf = vec![0.0; m];
        for n in (0..steps).rev() {
            let k = self.idx(n);
            // P^* z = v  <=>  P^T (W z) = W v
            let mut y: Vec<f64> = v[n + 1].iter().zip(&self.weight).map(|(a, w)| a * w).collect();
            if !self.pt[k].solve_in_place(&mut y) {
                return Err(Error::StepFailure { step: n });
            }
            let zn: Vec<f64> = y.iter().zip(&self.weight).map(|(a, w)| a / w).collect();
            // v^n = Q^* z = W^{-1} Q^T W z = W^{-1} Q^T y
            self.qt[k].mul_vec(&y, &mut buf);
            v[n] = buf.iter().zip(&self.weight).map(|(a, w)| a / w).collect();
            z[n] = zn;
        }
        Ok((v, z))
    }

    /// Backward-Euler forward recursion for `u_t = A u - f(t, x, u) + g`,
    /// each step solved by fixed-point iteration on the secant linearization
    /// `f(u) = (f(u) / u) u`.
    pub fn forward_semilinear_free<S>(
        &self,
        u0: &[f64],
        f: &Nonlinearity,
        f_q: &Nonlinearity,
        mut source: S,
    ) -> Result<Vec<Vec<f64>>>
    where
        S: FnMut(usize, &mut [f64]),
    {
        let m = self.free.len();
        let dt = self.tgrid.step();
        let nodes = self.op.grid.nodes();
        let xs: Vec<f64> = self.free.iter().map(|&i| nodes[i]).collect();
        let mut rows = Vec::with_capacity(self.tgrid.steps + 1);
        rows.push(u0.to_vec());
        let mut g = vec![0.0; m];
        for n in 0..self.tgrid.steps {
            let t = self.tgrid.time(n + 1);
            g.iter_mut().for_each(|v| *v = 0.0);
            source(n, &mut g);
            let rhs: Vec<f64> = rows[n].iter().zip(&g).map(|(u, gv)| u + dt * gv).collect();
            let base = self.generator(n + 1).shifted(1.0, -dt);
            let mut u = rows[n].clone();
            let mut converged = false;
            for _ in 0..100 {
                let mut mat = base.clone();
                for r in 0..m {
                    mat.diag[r] += dt * secant(f, f_q, t, xs[r], u[r]);
                }
                let mut next = rhs.clone();
                if !mat.solve_in_place(&mut next) {
                    return Err(Error::StepFailure { step: n + 1 });
                }
                let diff = next.iter().zip(&u).fold(0.0f64, |d, (a, b)| d.max((a - b).abs()));
                let scale = next.iter().fold(0.0f64, |d, a| d.max(a.abs()));
                u = next;
                if diff <= 1e-14 * (1.0 + scale) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::StepFailure { step: n + 1 });
            }
            rows.push(u);
        }
        Ok(rows)
    }
}

/// `f(t, x, u) / u`, replaced by `f_q(t, x, u / 2)` when `|u| < 1e-12`.
pub fn secant(f: &Nonlinearity, f_q: &Nonlinearity, t: f64, x: f64, u: f64) -> f64 {
    if u.abs() < 1e-12 {
        f_q(t, x, 0.5 * u)
    } else {
        f(t, x, u) / u
    }
}

fn free_rows_to_field(st: &Stepper, form: Form, rows: &[Vec<f64>], shift: usize) -> Field {
    let mut field = Field::zeros(form, st.grid().clone(), st.tgrid);
    for (n, r) in rows.iter().enumerate() {
        field.values[n + shift] = st.to_full(r);
    }
    field
}

fn check_len(v: &[f64], grid: &SpaceGrid) -> Result<()> {
    if v.len() != grid.len() {
        return Err(Error::Shape { expected: grid.len(), got: v.len() });
    }
    Ok(())
}

/// Source rows restricted to `omega` and to free nodes.
fn masked_source<'a>(st: &'a Stepper, h: Option<&'a Field>) -> impl FnMut(usize, &mut [f64]) + 'a {
    move |n, g| {
        if let Some(h) = h {
            let row = &h.values[n + 1];
            for (r, &i) in st.free().iter().enumerate() {
                g[r] = st.chi()[r] * row[i];
            }
        }
    }
}

/// Solves the forward problem from `spec.u0` with source `spec.h`.
pub fn solve_forward(spec: &ProblemSpec, grid: &SpaceGrid, tgrid: &TimeGrid) -> Result<Field> {
    let st = Stepper::new(spec, grid, tgrid)?;
    let u0 = spec.u0.as_ref().ok_or_else(|| Error::Config("forward solve needs u0".into()))?;
    check_len(u0, grid)?;
    if let Some(h) = &spec.h {
        if h.rows() != tgrid.steps + 1 || h.cols() != grid.len() {
            return Err(Error::Shape { expected: (tgrid.steps + 1) * grid.len(), got: h.rows() * h.cols() });
        }
    }
    let rows = st.forward_free(&st.to_free(u0), masked_source(&st, spec.h.as_ref()))?;
    Ok(free_rows_to_field(&st, spec.form, &rows, 0))
}

/// Solves the homogeneous adjoint problem backward from `spec.v_t`.
pub fn solve_adjoint(spec: &ProblemSpec, grid: &SpaceGrid, tgrid: &TimeGrid) -> Result<Field> {
    Ok(solve_adjoint_full(spec, grid, tgrid)?.0)
}

/// Adjoint states `v` and the intermediate states `z`; row `n + 1` of the
/// second field holds `z^n`, aligned with the source convention.
pub fn solve_adjoint_full(spec: &ProblemSpec, grid: &SpaceGrid, tgrid: &TimeGrid) -> Result<(Field, Field)> {
    let st = Stepper::new(spec, grid, tgrid)?;
    let v_t = spec.v_t.as_ref().ok_or_else(|| Error::Config("adjoint solve needs v_T".into()))?;
    check_len(v_t, grid)?;
    let (v, z) = st.adjoint_free(&st.to_free(v_t))?;
    Ok((free_rows_to_field(&st, spec.form, &v, 0), free_rows_to_field(&st, spec.form, &z, 1)))
}

/// Relative defect of `<u^M, v_T> - <u0, v^0> = dt sum <g^n, z^n>` for the
/// data in `spec` (`u0`, `v_t`, optional source `h`).
pub fn duality_defect(spec: &ProblemSpec, grid: &SpaceGrid, tgrid: &TimeGrid) -> Result<f64> {
    let st = Stepper::new(spec, grid, tgrid)?;
    let u0 = st.to_free(spec.u0.as_ref().ok_or_else(|| Error::Config("duality needs u0".into()))?);
    let v_t = st.to_free(spec.v_t.as_ref().ok_or_else(|| Error::Config("duality needs v_T".into()))?);
    let u = st.forward_free(&u0, masked_source(&st, spec.h.as_ref()))?;
    let (v, z) = st.adjoint_free(&v_t)?;
    let dt = tgrid.step();
    let lhs = st.dot(&u[tgrid.steps], &v_t) - st.dot(&u0, &v[0]);
    let mut rhs = 0.0;
    let mut g = vec![0.0; st.free().len()];
    let mut src = masked_source(&st, spec.h.as_ref());
    for (n, zn) in z.iter().enumerate() {
        g.iter_mut().for_each(|v| *v = 0.0);
        src(n, &mut g);
        rhs += dt * st.dot(&g, zn);
    }
    let scale = st.dot(&u[tgrid.steps], &u[tgrid.steps]).sqrt() * st.dot(&v_t, &v_t).sqrt()
        + st.dot(&u0, &u0).sqrt() * st.dot(&v[0], &v[0]).sqrt()
        + rhs.abs();
    Ok(if scale > 0.0 { (lhs - rhs).abs() / scale } else { 0.0 })
}

/// Ratio of two non-negative quantities with the `0/0` case kept apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum EmpiricalConstant {
    Finite(f64),
    Infinite,
    Undefined,
}

impl EmpiricalConstant {
    pub fn ratio(num: f64, den: f64) -> Self {
        if den > 0.0 {
            EmpiricalConstant::Finite(num / den)
        } else if num > 0.0 {
            EmpiricalConstant::Infinite
        } else {
            EmpiricalConstant::Undefined
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            EmpiricalConstant::Finite(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    /// `sup_t ||u(t)||^2` in the form's norm.
    pub sup_norm_sq: f64,
    /// `int_0^T` of the energy seminorm squared.
    pub integrated_gradient_sq: f64,
    /// `||u0||^2 + ||h||^2_{L^2(Q_T)}` in the form's norms.
    pub rhs_budget: f64,
    pub constant: EmpiricalConstant,
}

/// Energy seminorm `-<A u, u>_W`: `sum a_{i+1/2} (Du)^2 h` in divergence
/// form, `sum (Du)^2 h` in non-divergence form.
pub fn energy_seminorm_sq(op: &DiscreteOperator, u: &[f64]) -> f64 {
    let h = op.grid.spacings();
    (0..h.len())
        .map(|i| {
            let d = (u[i + 1] - u[i]) / h[i];
            let c = match op.form {
                Form::Divergence => op.half_coeff[i],
                Form::NonDivergence => 1.0,
            };
            c * d * d * h[i]
        })
        .sum()
}

fn weighted_sq(op: &DiscreteOperator, u: &[f64]) -> f64 {
    op.weight.iter().zip(u).map(|(w, v)| w * v * v).sum()
}

/// Both sides of the energy estimate
/// `sup ||u||^2 + int ||u||_{energy}^2 <= C (||u0||^2 + ||h||^2)`.
pub fn energy_estimate_check(u: &Field, spec: &ProblemSpec) -> Result<EnergyReport> {
    let op = DiscreteOperator::assemble(u.form, &spec.profile, &u.grid);
    let dt = u.tgrid.step();
    let sup = u.values.iter().map(|r| weighted_sq(&op, r)).fold(0.0, f64::max);
    let grad: f64 = u.values[1..].iter().map(|r| dt * energy_seminorm_sq(&op, r)).sum();
    let mut budget = weighted_sq(&op, &u.values[0]);
    if let Some(h) = &spec.h {
        let chi = spec.omega.indicator(&u.grid);
        for row in &h.values[1..] {
            let masked: Vec<f64> = row.iter().zip(&chi).map(|(a, c)| a * c).collect();
            budget += dt * weighted_sq(&op, &masked);
        }
    }
    let lhs = sup + grad;
    Ok(EnergyReport {
        sup_norm_sq: sup,
        integrated_gradient_sq: grad,
        rhs_budget: budget,
        constant: EmpiricalConstant::ratio(lhs, budget),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    pub passed: bool,
    /// Largest decrease `E(t_k) - E(t_{k+1})`.
    pub worst_defect: f64,
    pub tolerance: f64,
    pub energies: Vec<f64>,
}

/// Checks that `t -> E(t)` (energy seminorm of the adjoint state) is
/// nondecreasing up to `1e-8 E(T)`.
pub fn gradient_monotonicity_check(v: &Field, p: &CoefficientProfile) -> MonotonicityReport {
    let op = DiscreteOperator::assemble(v.form, p, &v.grid);
    let energies: Vec<f64> = v.values.iter().map(|r| energy_seminorm_sq(&op, r)).collect();
    let tolerance = 1e-8 * energies.last().copied().unwrap_or(0.0);
    let worst_defect = energies.windows(2).map(|w| (w[0] - w[1]).max(0.0)).fold(0.0, f64::max);
    MonotonicityReport { passed: worst_defect <= tolerance, worst_defect, tolerance, energies }
}
