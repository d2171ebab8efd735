//! Space/time grids, the discrete divergence and non-divergence operators and
//! the weighted inner products that go with them.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coeff::CoefficientProfile;
use crate::error::{Error, Result};
use crate::linalg::Tridiagonal;
use crate::quad::integrate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    /// `(a u_x)_x`
    Divergence,
    /// `a u_xx`
    NonDivergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("horizon T = {horizon} must be positive")));
        }
        if steps < 2 {
            return Err(Error::Config(format!("need at least 2 time steps, got {steps}")));
        }
        Ok(Self { horizon, steps })
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.horizon
        } else {
            self.horizon * n as f64 / self.steps as f64
        }
    }
}

/// Nodes `lo = x_0 < ... < x_N = hi`. When the grid is built over a degenerate
/// profile one node is exactly `x0` and offsets `x_i - x0` are stored exactly
/// as constructed, so coefficient evaluations near `x0` avoid cancellation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceGrid {
    nodes: Vec<f64>,
    offsets: Option<Vec<f64>>,
    x0: Option<f64>,
    x0_index: Option<usize>,
}

/// Smallest number of cells accepted by [`SpaceGrid::build`].
pub const MIN_CELLS: usize = 8;

impl SpaceGrid {
    /// Uniform grid of `n` cells on `[0, 1]`, shifted piecewise so that a node
    /// lands on the degeneracy point when `p` is degenerate.
    pub fn build(n: usize, p: &CoefficientProfile) -> Result<Self> {
        Self::build_graded(n, p, 1.0)
    }

    /// Like [`Self::build`] with nodes clustered at `x0` by the power map
    /// `|x - x0| ~ (i / m)^gamma` on each side; `gamma = 1` is uniform.
    pub fn build_graded(n: usize, p: &CoefficientProfile, gamma: f64) -> Result<Self> {
        if n < MIN_CELLS {
            return Err(Error::Config(format!("grid needs at least {MIN_CELLS} cells, got {n}")));
        }
        if !(gamma >= 1.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("grading exponent {gamma} must be >= 1")));
        }
        let Some(x0) = p.x0() else {
            let nodes = (0..=n).map(|i| i as f64 / n as f64).collect();
            return Ok(Self { nodes, offsets: None, x0: None, x0_index: None });
        };
        let j = ((x0 * n as f64).round() as usize).clamp(1, n - 1);
        let right = n - j;
        let mut offsets = Vec::with_capacity(n + 1);
        for i in 0..j {
            offsets.push(-x0 * ((j - i) as f64 / j as f64).powf(gamma));
        }
        offsets.push(0.0);
        for i in 1..=right {
            offsets.push((1.0 - x0) * (i as f64 / right as f64).powf(gamma));
        }
        let mut nodes: Vec<f64> = offsets.iter().map(|d| x0 + d).collect();
        nodes[0] = 0.0;
        nodes[j] = x0;
        nodes[n] = 1.0;
        Ok(Self { nodes, offsets: Some(offsets), x0: Some(x0), x0_index: Some(j) })
    }

    /// Grid through explicit nodes, e.g. a subinterval for a side problem.
    pub fn from_nodes(nodes: Vec<f64>, x0: Option<f64>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::Config("a grid needs at least 2 cells".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("grid nodes must be strictly increasing".into()));
        }
        let x0_index = match x0 {
            Some(x0) => Some(
                nodes
                    .iter()
                    .position(|&x| x == x0)
                    .ok_or_else(|| Error::Config(format!("x0 = {x0} is not a grid node")))?,
            ),
            None => None,
        };
        let offsets = x0.map(|x0| nodes.iter().map(|x| x - x0).collect());
        Ok(Self { nodes, offsets, x0, x0_index })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }
    pub fn x0(&self) -> Option<f64> {
        self.x0
    }
    pub fn x0_index(&self) -> Option<usize> {
        self.x0_index
    }
    pub fn lo(&self) -> f64 {
        self.nodes[0]
    }
    pub fn hi(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// `x_i - x0`, or `x_i` for grids without a degeneracy point.
    pub fn offset(&self, i: usize) -> f64 {
        match &self.offsets {
            Some(d) => d[i],
            None => self.nodes[i],
        }
    }

    pub fn half_points(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Cell widths `h_{i+1/2}`.
    pub fn spacings(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Trapezoid (dual cell) widths.
    pub fn dual_widths(&self) -> Vec<f64> {
        let h = self.spacings();
        let n = self.nodes.len();
        (0..n)
            .map(|i| {
                let l = if i > 0 { h[i - 1] } else { 0.0 };
                let r = if i + 1 < n { h[i] } else { 0.0 };
                0.5 * (l + r)
            })
            .collect()
    }

    /// Largest ratio of adjacent cell widths.
    pub fn max_spacing_ratio(&self) -> f64 {
        self.spacings()
            .windows(2)
            .map(|w| (w[1] / w[0]).max(w[0] / w[1]))
            .fold(1.0, f64::max)
    }

    pub fn is_uniform(&self) -> bool {
        let h = self.spacings();
        h.iter().all(|v| (v - h[0]).abs() <= 1e-12 * h[0])
    }

    /// `a` at node `i`.
    pub fn coeff_at_node(&self, p: &CoefficientProfile, i: usize) -> f64 {
        if self.x0_index == Some(i) {
            return 0.0;
        }
        match self.x0 {
            Some(_) if p.x0() == self.x0 => p.eval_offset(self.offset(i)),
            _ => p.eval(self.nodes[i]),
        }
    }

    /// `a` at the midpoint of cell `i`; closed form when available,
    /// otherwise the average of the two node values.
    pub fn coeff_at_half(&self, p: &CoefficientProfile, i: usize) -> f64 {
        if !p.has_closed_form() {
            return 0.5 * (self.coeff_at_node(p, i) + self.coeff_at_node(p, i + 1));
        }
        match self.x0 {
            Some(_) if p.x0() == self.x0 => p.eval_offset(0.5 * (self.offset(i) + self.offset(i + 1))),
            _ => p.eval(0.5 * (self.nodes[i] + self.nodes[i + 1])),
        }
    }
}

/// Node grid for `n` cells; the time grid plays no role in the placement.
pub fn build_grid(n: usize, _t: &TimeGrid, p: &CoefficientProfile) -> Result<SpaceGrid> {
    SpaceGrid::build(n, p)
}

/// Tridiagonal operator on all grid nodes together with the diagonal of its
/// natural inner product. Rows flagged `fixed` (Dirichlet nodes) are zero and
/// carry zero weight; free rows keep their couplings to fixed columns so the
/// stencil can be applied to data with non-zero boundary values.
#[derive(Debug, Clone, Serialize)]
pub struct DiscreteOperator {
    pub form: Form,
    pub band: Tridiagonal,
    pub weight: Vec<f64>,
    pub fixed: Vec<bool>,
    /// `a` at the nodes.
    pub node_coeff: Vec<f64>,
    /// `a` at the cell midpoints.
    pub half_coeff: Vec<f64>,
    #[serde(skip)]
    pub grid: Arc<SpaceGrid>,
}

fn boundary_fixed(n: usize) -> Vec<bool> {
    let mut fixed = vec![false; n];
    fixed[0] = true;
    fixed[n - 1] = true;
    fixed
}

/// Conservative stencil `(a_{i+1/2} D+ u - a_{i-1/2} D- u) / w_i` with
/// homogeneous Dirichlet rows at both ends.
pub fn assemble_divergence_operator(p: &CoefficientProfile, g: &SpaceGrid) -> DiscreteOperator {
    let n = g.len();
    let h = g.spacings();
    let w = g.dual_widths();
    let half: Vec<f64> = (0..n - 1).map(|i| g.coeff_at_half(p, i)).collect();
    let node: Vec<f64> = (0..n).map(|i| g.coeff_at_node(p, i)).collect();
    let fixed = boundary_fixed(n);
    let mut band = Tridiagonal::zeros(n);
    for i in 1..n - 1 {
        let lo = half[i - 1] / (h[i - 1] * w[i]);
        let up = half[i] / (h[i] * w[i]);
        band.lower[i] = lo;
        band.upper[i] = up;
        band.diag[i] = -(lo + up);
    }
    let weight = w.iter().zip(&fixed).map(|(&w, &f)| if f { 0.0 } else { w }).collect();
    DiscreteOperator {
        form: Form::Divergence,
        band,
        weight,
        fixed,
        node_coeff: node,
        half_coeff: half,
        grid: Arc::new(g.clone()),
    }
}

/// Stencil `a_i (D+ u - D- u) / w_i` with inner-product weight `w_i / a_i`.
///
/// At `x0` the row is Dirichlet for strong degeneracy. For weak degeneracy the
/// node keeps a coupled row whose effective coefficient is the harmonic mean
/// of `a` over the dual cell, with weight `int_dual 1/a`.
pub fn assemble_nondivergence_operator(p: &CoefficientProfile, g: &SpaceGrid) -> DiscreteOperator {
    let n = g.len();
    let h = g.spacings();
    let w = g.dual_widths();
    let half: Vec<f64> = (0..n - 1).map(|i| g.coeff_at_half(p, i)).collect();
    let node: Vec<f64> = (0..n).map(|i| g.coeff_at_node(p, i)).collect();
    let mut fixed = boundary_fixed(n);
    let mut eff = node.clone();
    let mut weight: Vec<f64> = (0..n).map(|i| if node[i] > 0.0 { w[i] / node[i] } else { 0.0 }).collect();
    if let Some(k) = g.x0_index().filter(|&k| k > 0 && k + 1 < n && p.x0() == g.x0()) {
        if p.k() >= 1.0 {
            fixed[k] = true;
        } else {
            let m = dual_inverse_integral(p, g, k);
            weight[k] = m;
            eff[k] = w[k] / m;
        }
    }
    let mut band = Tridiagonal::zeros(n);
    for i in 1..n - 1 {
        if fixed[i] {
            continue;
        }
        let lo = eff[i] / (h[i - 1] * w[i]);
        let up = eff[i] / (h[i] * w[i]);
        band.lower[i] = lo;
        band.upper[i] = up;
        band.diag[i] = -(lo + up);
    }
    for (wt, &f) in weight.iter_mut().zip(&fixed) {
        if f {
            *wt = 0.0;
        }
    }
    DiscreteOperator {
        form: Form::NonDivergence,
        band,
        weight,
        fixed,
        node_coeff: node,
        half_coeff: half,
        grid: Arc::new(g.clone()),
    }
}

/// `int 1/a` over the dual cell of the degeneracy node `k` (weak degeneracy).
fn dual_inverse_integral(p: &CoefficientProfile, g: &SpaceGrid, k: usize) -> f64 {
    let dl = 0.5 * (g.offset(k) - g.offset(k - 1));
    let dr = 0.5 * (g.offset(k + 1) - g.offset(k));
    if p.has_closed_form() {
        integrate(|t| 1.0 / p.eval_offset(-t), 0.0, dl) + integrate(|t| 1.0 / p.eval_offset(t), 0.0, dr)
    } else {
        // a ~ a(x_{k+-1}) (|d| / h)^K near the node
        let kk = p.k();
        let side = |a_nb: f64, half_width: f64| {
            let h = 2.0 * half_width;
            h / a_nb * 0.5f64.powf(1.0 - kk) / (1.0 - kk)
        };
        side(g.coeff_at_node(p, k - 1), dl) + side(g.coeff_at_node(p, k + 1), dr)
    }
}

impl DiscreteOperator {
    pub fn assemble(form: Form, p: &CoefficientProfile, g: &SpaceGrid) -> Self {
        match form {
            Form::Divergence => assemble_divergence_operator(p, g),
            Form::NonDivergence => assemble_nondivergence_operator(p, g),
        }
    }

    pub fn len(&self) -> usize {
        self.band.len()
    }
    pub fn is_empty(&self) -> bool {
        self.band.is_empty()
    }

    /// Indices of the free (non-Dirichlet) nodes.
    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.fixed[i]).collect()
    }

    /// Operator and weight restricted to free nodes; couplings across a
    /// removed interior Dirichlet node are dropped.
    pub fn restricted(&self) -> (Tridiagonal, Vec<f64>) {
        let free = self.free_indices();
        let m = free.len();
        let mut t = Tridiagonal::zeros(m);
        for (r, &i) in free.iter().enumerate() {
            t.diag[r] = self.band.diag[i];
            if r > 0 && free[r - 1] + 1 == i {
                t.lower[r] = self.band.lower[i];
            }
            if r + 1 < m && free[r + 1] == i + 1 {
                t.upper[r] = self.band.upper[i];
            }
        }
        let w = free.iter().map(|&i| self.weight[i]).collect();
        (t, w)
    }

    /// `op * u` on all nodes (fixed rows give 0).
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.band.mul_vec(u, &mut out);
        out
    }

    /// Largest deviation from symmetry of `diag(weight) * band` over free nodes.
    pub fn weighted_asymmetry(&self) -> f64 {
        let (t, w) = self.restricted();
        (1..t.len())
            .map(|i| (w[i] * t.lower[i] - w[i - 1] * t.upper[i - 1]).abs())
            .fold(0.0, f64::max)
    }

    /// Eigenvalues (ascending) of the operator on free nodes, computed from
    /// the symmetrization `W^{1/2} A W^{-1/2}`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let (t, w) = self.restricted();
        let m = t.len();
        let s = DMatrix::from_fn(m, m, |i, j| {
            let v = t.entry(i, j);
            if v == 0.0 {
                0.0
            } else {
                v * (w[i] / w[j]).sqrt()
            }
        });
        let s = 0.5 * (&s + s.transpose());
        let mut ev: Vec<f64> = s.symmetric_eigen().eigenvalues.iter().cloned().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Coordinate-format text, one `row col value` triple per non-zero.
    pub fn to_coo(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            for j in i.saturating_sub(1)..(i + 2).min(self.len()) {
                let v = self.band.entry(i, j);
                if v != 0.0 {
                    let _ = writeln!(out, "{i} {j} {v:e}");
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    L2,
    L2InvA,
    H1A,
    H1InvA,
}

/// Quadrature weights of a discrete norm: `sum node_w u v + sum cell_w Du Dv`
/// where `D` is the cell difference quotient.
#[derive(Debug, Clone, Serialize)]
pub struct WeightedNorm {
    pub kind: NormKind,
    pub node_weights: Vec<f64>,
    pub cell_weights: Vec<f64>,
}

impl WeightedNorm {
    pub fn new(kind: NormKind, g: &SpaceGrid, p: &CoefficientProfile) -> Self {
        let w = g.dual_widths();
        let h = g.spacings();
        let n = g.len();
        let inv_a = || -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let a = g.coeff_at_node(p, i);
                    if a > 0.0 { w[i] / a } else { 0.0 }
                })
                .collect()
        };
        let (node_weights, cell_weights) = match kind {
            NormKind::L2 => (w.clone(), vec![0.0; n - 1]),
            NormKind::L2InvA => (inv_a(), vec![0.0; n - 1]),
            NormKind::H1A => (w.clone(), (0..n - 1).map(|i| g.coeff_at_half(p, i) * h[i]).collect()),
            NormKind::H1InvA => (inv_a(), h.clone()),
        };
        Self { kind, node_weights, cell_weights }
    }

    /// Plain trapezoid `L2` weights.
    pub fn l2(g: &SpaceGrid) -> Self {
        let n = g.len();
        Self { kind: NormKind::L2, node_weights: g.dual_widths(), cell_weights: vec![0.0; n - 1] }
    }

    /// Norm matching an operator's natural inner product.
    pub fn natural(op: &DiscreteOperator) -> Self {
        let kind = match op.form {
            Form::Divergence => NormKind::L2,
            Form::NonDivergence => NormKind::L2InvA,
        };
        Self { kind, node_weights: op.weight.clone(), cell_weights: vec![0.0; op.len() - 1] }
    }

    pub fn norm(&self, grid: &SpaceGrid, u: &[f64]) -> Result<f64> {
        Ok(inner_product(u, u, self, grid)?.max(0.0).sqrt())
    }
}

/// Discrete inner product with the norm's quadrature weights.
pub fn inner_product(u: &[f64], v: &[f64], norm: &WeightedNorm, grid: &SpaceGrid) -> Result<f64> {
    let n = norm.node_weights.len();
    for len in [u.len(), v.len(), grid.len()] {
        if len != n {
            return Err(Error::Shape { expected: n, got: len });
        }
    }
    let mut acc: f64 = (0..n).map(|i| norm.node_weights[i] * u[i] * v[i]).sum();
    if norm.cell_weights.iter().any(|&c| c != 0.0) {
        let h = grid.spacings();
        for i in 0..n - 1 {
            let du = (u[i + 1] - u[i]) / h[i];
            let dv = (v[i + 1] - v[i]) / h[i];
            acc += norm.cell_weights[i] * du * dv;
        }
    }
    Ok(acc)
}

/// Nodal first difference: centred inside, one-sided at the two ends.
pub fn nodal_gradient(g: &SpaceGrid, u: &[f64]) -> Vec<f64> {
    let x = g.nodes();
    let n = x.len();
    (0..n)
        .map(|i| {
            let (l, r) = (i.saturating_sub(1), (i + 1).min(n - 1));
            (u[r] - u[l]) / (x[r] - x[l])
        })
        .collect()
}

/// Defect of the discrete Green formula
/// `|<op u, v>_w + sum_i w_i c_i (Du)_i (Dv)_i|` with `c = a` in divergence
/// form and `c = 1` in non-divergence form.
pub fn summation_by_parts_defect(u: &[f64], v: &[f64], op: &DiscreteOperator) -> Result<f64> {
    let n = op.len();
    for len in [u.len(), v.len()] {
        if len != n {
            return Err(Error::Shape { expected: n, got: len });
        }
    }
    let g = &op.grid;
    let lu = op.apply(u);
    let du = nodal_gradient(g, u);
    let dv = nodal_gradient(g, v);
    let w = g.dual_widths();
    let mut acc = 0.0;
    for i in 0..n {
        acc += op.weight[i] * lu[i] * v[i];
        let c = match op.form {
            Form::Divergence => op.node_coeff[i],
            Form::NonDivergence => 1.0,
        };
        acc += w[i] * c * du[i] * dv[i];
    }
    Ok(acc.abs())
}

/// Dense copy of `diag(weight) * band` on free nodes, for tests and oracles.
pub fn weighted_dense(op: &DiscreteOperator) -> DMatrix<f64> {
    let (t, w) = op.restricted();
    DMatrix::from_diagonal(&DVector::from_vec(w)) * t.to_dense()
}
