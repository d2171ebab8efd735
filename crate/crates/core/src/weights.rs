//! Carleman weights `phi = Theta(t) psi(x)` and discrete evaluation of the
//! weighted inequalities (Carleman, Caccioppoli, Hardy–Poincaré).

use serde::Serialize;

use crate::coeff::{CoefficientProfile, NonDegeneratePair};
use crate::error::{Error, Result};
use crate::linalg::symmetric_tridiagonal_min_eigenvalue;
use crate::mesh::{Form, SpaceGrid};
use crate::pde::{ControlRegion, Field};
use crate::quad::{integrate, simpson};

/// Exponent below which `exp` is treated as zero.
pub const LOG_CLAMP: f64 = -700.0;

/// `Theta(t) = 1 / [t (T - t)]^4`.
pub fn eval_theta(t: f64, horizon: f64) -> Result<f64> {
    if !(t > 0.0 && t < horizon) {
        return Err(Error::Domain(format!("t = {t} is not in (0, {horizon})")));
    }
    Ok((t * (horizon - t)).powi(-4))
}

/// `Theta^k e^{2 s Theta psi}` evaluated in log space; zero once the exponent
/// drops below [`LOG_CLAMP`].
pub fn clamped_weight(t: f64, horizon: f64, s: f64, psi: f64, theta_power: i32) -> Result<f64> {
    let theta = eval_theta(t, horizon)?;
    Ok(exp_clamped(theta_power as f64 * theta.ln() + 2.0 * s * theta * psi))
}

fn exp_clamped(e: f64) -> f64 {
    if e < LOG_CLAMP { 0.0 } else { e.exp() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WeightVariant {
    DegDiv,
    DegNonDiv,
    NonDegA1,
    NonDegA2,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightConstants {
    /// `c1, c2` (divergence) or `d1, d2, R` (non-divergence; `r = 0` in the
    /// divergence case). `required` is the lower bound `c2` must exceed.
    Degenerate { c1: f64, c2: f64, r: f64, required: f64 },
    NonDegA1 { r: f64, c: f64, h0: f64 },
    NonDegA2 { r: f64, d: f64, c: f64 },
}

/// Sampled spatial part `psi` of a Carleman weight on a grid.
#[derive(Debug, Clone, Serialize)]
pub struct CarlemanWeight {
    pub variant: WeightVariant,
    pub form: Form,
    pub theta_exponent: u32,
    pub constants: WeightConstants,
    pub nodes: Vec<f64>,
    pub psi: Vec<f64>,
    pub psi_half: Vec<f64>,
    /// `psi_x` at the cell midpoints.
    pub psi_x_half: Vec<f64>,
    /// `zeta` at nodes and half points (`NonDegA2` only).
    pub zeta: Vec<f64>,
    pub zeta_half: Vec<f64>,
    /// `int_x^B g + h0` at the two end nodes (`NonDegA1` only).
    pub bracket_ends: Option<(f64, f64)>,
    /// `psi < 0` everywhere and the lower bound holds.
    pub certified: bool,
    /// The lower bound on `c1` (resp. `d1`) used for observability is not
    /// checked here; it depends on the chosen non-degenerate data.
    pub c1_bound_checked: bool,
}

impl CarlemanWeight {
    pub fn max_psi(&self) -> f64 {
        self.psi.iter().chain(&self.psi_half).cloned().fold(f64::NEG_INFINITY, f64::max)
    }
    pub fn min_psi(&self) -> f64 {
        self.psi.iter().chain(&self.psi_half).cloned().fold(f64::INFINITY, f64::min)
    }
}

/// `max{(1-x0)^2 e^{R(1-x0)^2} / (a(1)(2-K)), x0^2 e^{R x0^2} / (a(0)(2-K))}`.
pub fn required_c2(p: &CoefficientProfile, r: f64) -> Result<f64> {
    let x0 = p.x0().ok_or_else(|| Error::Domain("degenerate weight needs a degenerate profile".into()))?;
    let k = p.k();
    let right = (1.0 - x0).powi(2) * (r * (1.0 - x0).powi(2)).exp() / (p.eval(1.0) * (2.0 - k));
    let left = x0 * x0 * (r * x0 * x0).exp() / (p.eval(0.0) * (2.0 - k));
    Ok(right.max(left))
}

/// Weight for the degenerate problem,
/// `psi(x) = c1 (int_{x0}^x (y - x0) e^{R (y - x0)^2} / a(y) dy - c2)`
/// with `R = 0` in divergence form and `c2 = (1 + margin) * required`.
pub fn build_degenerate_weight(
    p: &CoefficientProfile,
    grid: &SpaceGrid,
    form: Form,
    c1: f64,
    margin: f64,
    r: f64,
) -> Result<CarlemanWeight> {
    let x0 = p.x0().ok_or_else(|| Error::Domain("degenerate weight needs a degenerate profile".into()))?;
    if grid.x0() != Some(x0) || grid.lo() != 0.0 || grid.hi() != 1.0 {
        return Err(Error::Config("degenerate weight needs a grid on [0, 1] through x0".into()));
    }
    if !(c1 > 0.0) {
        return Err(Error::Constraint(format!("c1 = {c1} must be positive")));
    }
    if !(margin > 0.0) {
        return Err(Error::Constraint(format!(
            "margin = {margin}: c2 must exceed the required bound strictly"
        )));
    }
    let r = match form {
        Form::Divergence => 0.0,
        Form::NonDivergence => {
            if !(r > 0.0) {
                return Err(Error::Constraint(format!("R = {r} must be positive")));
            }
            r
        }
    };
    let required = required_c2(p, r)?;
    let c2 = (1.0 + margin) * required;
    let k = grid.x0_index().expect("grid through x0");
    let n = grid.len();
    let integrand = |d: f64| {
        let a = p.eval_offset(d);
        if d == 0.0 { 0.0 } else { d * (r * d * d).exp() / a }
    };
    // cumulative integral outward from x0, in offset coordinates
    let mut cum = vec![0.0; n];
    for i in k + 1..n {
        cum[i] = cum[i - 1] + integrate(integrand, grid.offset(i - 1), grid.offset(i));
    }
    for i in (0..k).rev() {
        cum[i] = cum[i + 1] + integrate(integrand, grid.offset(i + 1), grid.offset(i));
    }
    let mut psi_half = Vec::with_capacity(n - 1);
    let mut psi_x_half = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let (dl, dr) = (grid.offset(i), grid.offset(i + 1));
        let dm = 0.5 * (dl + dr);
        // integrate from the node nearer x0
        let half_cum = if i >= k {
            cum[i] + integrate(integrand, dl, dm)
        } else {
            cum[i + 1] + integrate(integrand, dr, dm)
        };
        psi_half.push(c1 * (half_cum - c2));
        let a = grid.coeff_at_half(p, i);
        psi_x_half.push(c1 * dm * (r * dm * dm).exp() / a);
    }
    let psi: Vec<f64> = cum.iter().map(|c| c1 * (c - c2)).collect();
    let mut w = CarlemanWeight {
        variant: match form {
            Form::Divergence => WeightVariant::DegDiv,
            Form::NonDivergence => WeightVariant::DegNonDiv,
        },
        form,
        theta_exponent: 4,
        constants: WeightConstants::Degenerate { c1, c2, r, required },
        nodes: grid.nodes().to_vec(),
        psi,
        psi_half,
        psi_x_half,
        zeta: Vec::new(),
        zeta_half: Vec::new(),
        bracket_ends: None,
        certified: false,
        c1_bound_checked: false,
    };
    let floor = -c1 * c2 * (1.0 + 1e-12);
    w.certified = w.max_psi() < 0.0 && w.min_psi() >= floor;
    Ok(w)
}

/// Sub-cells per grid cell for the nested integral of the `NonDegA1` weight.
const A1_SUBCELLS: usize = 8;

/// Weight for a non-degenerate problem on the grid's interval `(A, B)`.
///
/// `NonDegA1`: `psi = -r int_A^x (int_t^B g + h0) / sqrt(a) dt - c` with
/// `c = 1`. `NonDegA2`: `psi = e^{r zeta} - c`, `zeta = d int_x^B 1/a` with
/// `d` the largest difference quotient of `a` and `c = 1 + max e^{r zeta}`.
pub fn build_nondegenerate_weight(
    p: &CoefficientProfile,
    pair: Option<&NonDegeneratePair>,
    variant: WeightVariant,
    r: f64,
    grid: &SpaceGrid,
    form: Form,
) -> Result<CarlemanWeight> {
    if !(r > 0.0) {
        return Err(Error::Constraint(format!("r = {r} must be positive")));
    }
    let (lo, hi) = (grid.lo(), grid.hi());
    if let Some(x0) = p.x0() {
        if lo <= x0 && x0 <= hi {
            return Err(Error::Domain(format!("coefficient degenerates at x0 = {x0} inside ({lo}, {hi})")));
        }
    }
    let n = grid.len();
    let a_nodes: Vec<f64> = (0..n).map(|i| grid.coeff_at_node(p, i)).collect();
    if let Some(i) = a_nodes.iter().position(|&a| !(a > 0.0)) {
        return Err(Error::Domain(format!("a({}) = {} is not positive", grid.nodes()[i], a_nodes[i])));
    }
    let a_half: Vec<f64> = (0..n - 1).map(|i| grid.coeff_at_half(p, i)).collect();
    let xs = grid.nodes();
    let base = CarlemanWeight {
        variant,
        form,
        theta_exponent: 4,
        constants: WeightConstants::NonDegA2 { r, d: 0.0, c: 0.0 },
        nodes: xs.to_vec(),
        psi: Vec::new(),
        psi_half: Vec::new(),
        psi_x_half: Vec::new(),
        zeta: Vec::new(),
        zeta_half: Vec::new(),
        bracket_ends: None,
        certified: false,
        c1_bound_checked: false,
    };
    let mut w = match variant {
        WeightVariant::NonDegA1 => {
            let pair = pair.ok_or_else(|| Error::Config("NonDegA1 weight needs a non-degenerate pair".into()))?;
            if (pair.interval.0 - lo).abs() > 1e-12 || (pair.interval.1 - hi).abs() > 1e-12 {
                return Err(Error::Config("pair interval does not match the grid".into()));
            }
            let c = 1.0;
            let f = |x: f64| pair.bracket(x) / p.eval(x).sqrt();
            let mut psi = vec![-c; n];
            let mut psi_half = Vec::with_capacity(n - 1);
            let mut psi_x_half = Vec::with_capacity(n - 1);
            let mut acc = 0.0;
            for i in 0..n - 1 {
                let h = xs[i + 1] - xs[i];
                let sub = h / A1_SUBCELLS as f64;
                let vals: Vec<f64> = (0..=A1_SUBCELLS).map(|j| f(xs[i] + j as f64 * sub)).collect();
                let half = simpson(&vals[..=A1_SUBCELLS / 2], sub);
                psi_half.push(-r * (acc + half) - c);
                psi_x_half.push(-r * vals[A1_SUBCELLS / 2]);
                acc += simpson(&vals, sub);
                psi[i + 1] = -r * acc - c;
            }
            CarlemanWeight {
                constants: WeightConstants::NonDegA1 { r, c, h0: pair.h0 },
                psi,
                psi_half,
                psi_x_half,
                bracket_ends: Some((pair.bracket(lo), pair.h0)),
                ..base
            }
        }
        WeightVariant::NonDegA2 => {
            let d = a_nodes
                .windows(2)
                .zip(xs.windows(2))
                .map(|(a, x)| ((a[1] - a[0]) / (x[1] - x[0])).abs())
                .fold(0.0, f64::max);
            let inv = |x: f64| 1.0 / p.eval(x);
            let mut tail = vec![0.0; n];
            for i in (0..n - 1).rev() {
                tail[i] = tail[i + 1] + integrate(inv, xs[i], xs[i + 1]);
            }
            let zeta: Vec<f64> = tail.iter().map(|t| d * t).collect();
            let zeta_half: Vec<f64> = (0..n - 1)
                .map(|i| d * (tail[i + 1] + integrate(inv, 0.5 * (xs[i] + xs[i + 1]), xs[i + 1])))
                .collect();
            let c = 1.0 + zeta.iter().chain(&zeta_half).map(|z| (r * z).exp()).fold(0.0, f64::max);
            let psi = zeta.iter().map(|z| (r * z).exp() - c).collect();
            let psi_half = zeta_half.iter().map(|z| (r * z).exp() - c).collect();
            let psi_x_half = zeta_half
                .iter()
                .zip(&a_half)
                .map(|(z, a)| -r * d / a * (r * z).exp())
                .collect();
            CarlemanWeight {
                constants: WeightConstants::NonDegA2 { r, d, c },
                psi,
                psi_half,
                psi_x_half,
                zeta,
                zeta_half,
                ..base
            }
        }
        _ => return Err(Error::Config(format!("{variant:?} is not a non-degenerate variant"))),
    };
    w.certified = w.max_psi() < 0.0;
    Ok(w)
}

/// Both sides of a weighted inequality over a grid of Carleman parameters.
#[derive(Debug, Clone, Serialize)]
pub struct InequalityReport {
    pub variant: String,
    pub s: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub ratio: Vec<f64>,
    /// Boundary-term contributions at the left and right end per `s`.
    pub boundary_left: Vec<f64>,
    pub boundary_right: Vec<f64>,
    pub s0: f64,
    /// Whether the ratio curve settled (relative change < 5%) on the grid.
    pub stabilized: bool,
    /// Finer scan of `[s0, 4 s0]`.
    pub window_s: Vec<f64>,
    pub window_ratio: Vec<f64>,
    pub sup_ratio: f64,
    pub verdict: bool,
}

#[derive(Serialize)]
struct ReportSummary<'a> {
    variant: &'a str,
    s0: f64,
    sup_ratio: f64,
    verdict: &'a str,
}

impl InequalityReport {
    /// CSV with columns `s,lhs,rhs,ratio` over the main grid.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,lhs,rhs,ratio\n");
        for i in 0..self.s.len() {
            out.push_str(&format!("{},{},{},{}\n", self.s[i], self.lhs[i], self.rhs[i], self.ratio[i]));
        }
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::to_value(ReportSummary {
            variant: &self.variant,
            s0: self.s0,
            sup_ratio: self.sup_ratio,
            verdict: if self.verdict { "pass" } else { "fail" },
        })
        .expect("summary is plain data")
    }
}

/// Carleman parameter grid. `None` bounds are derived from the weight and
/// the time grid so that the weight neither vanishes nor stays flat.
#[derive(Debug, Clone, Copy)]
pub struct SGridOptions {
    pub s_min: Option<f64>,
    pub s_max: Option<f64>,
    pub points: usize,
    pub window_points: usize,
    /// Relative change below which the ratio curve counts as settled.
    pub settle: f64,
}

impl Default for SGridOptions {
    fn default() -> Self {
        Self { s_min: None, s_max: None, points: 16, window_points: 8, settle: 0.05 }
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Natural scale of `s`: the value at which `2 s Theta(t_1) |max psi| = 2`.
fn s_unit(w: &CarlemanWeight, v: &Field) -> f64 {
    let t1 = v.tgrid.time(1);
    let theta = (t1 * (v.tgrid.horizon - t1)).powi(-4);
    1.0 / (theta * (-w.max_psi()).max(1e-300))
}

fn s_grid(w: &CarlemanWeight, v: &Field, o: &SGridOptions) -> Vec<f64> {
    let unit = s_unit(w, v);
    let lo = o.s_min.unwrap_or(1e-4 * unit);
    let hi = o.s_max.unwrap_or(80.0 * unit);
    log_grid(lo, hi, o.points.max(2))
}

fn ratio_of(lhs: f64, rhs: f64) -> f64 {
    if rhs > 0.0 {
        lhs / rhs
    } else if lhs > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// First grid index where the ratio changes by less than `settle` relative.
fn settle_index(ratio: &[f64], settle: f64) -> Option<usize> {
    (0..ratio.len().saturating_sub(1)).find(|&i| {
        let (a, b) = (ratio[i], ratio[i + 1]);
        a.is_finite() && b.is_finite() && (b - a).abs() <= settle * a.abs().max(b.abs())
    })
}

/// Derivative at the end node of three points, second order on any spacing.
fn end_derivative(x: [f64; 3], v: [f64; 3]) -> f64 {
    let (h1, h2) = (x[1] - x[0], x[2] - x[0]);
    // Lagrange derivative at x[0]
    -v[0] * (h1 + h2) / (h1 * h2) + v[1] * h2 / (h1 * (h2 - h1)) - v[2] * h1 / (h2 * (h2 - h1))
}

fn boundary_gradients(x: &[f64], v: &[f64]) -> (f64, f64) {
    let n = x.len();
    let left = end_derivative([x[0], x[1], x[2]], [v[0], v[1], v[2]]);
    let right = end_derivative([x[n - 1], x[n - 2], x[n - 3]], [v[n - 1], v[n - 2], v[n - 3]]);
    (left, right)
}

struct Sides {
    lhs: f64,
    left: f64,
    right: f64,
}

fn carleman_sides(v: &Field, w: &CarlemanWeight, p: &CoefficientProfile, s: f64) -> Result<Sides> {
    let grid = &v.grid;
    let x = grid.nodes();
    let n = x.len();
    let h = grid.spacings();
    let dual = grid.dual_widths();
    let horizon = v.tgrid.horizon;
    let dt = v.tgrid.step();
    let a_node: Vec<f64> = (0..n).map(|i| grid.coeff_at_node(p, i)).collect();
    let a_half: Vec<f64> = (0..n - 1).map(|i| grid.coeff_at_half(p, i)).collect();
    let (lo, hi) = (0, n - 1);
    let mut sides = Sides { lhs: 0.0, left: 0.0, right: 0.0 };
    for step in 1..v.tgrid.steps {
        let t = v.tgrid.time(step);
        let theta = eval_theta(t, horizon)?;
        let lt = theta.ln();
        let row = v.row(step);
        let mut lhs = 0.0;
        for c in 0..n - 1 {
            let vx = (row[c + 1] - row[c]) / h[c];
            let e = 2.0 * s * theta * w.psi_half[c];
            let coef = match w.variant {
                WeightVariant::DegDiv => a_half[c],
                WeightVariant::NonDegA2 => (r_of(w) * w.zeta_half[c]).exp(),
                _ => 1.0,
            };
            lhs += h[c] * s * coef * vx * vx * exp_clamped(lt + e);
        }
        for i in 1..n - 1 {
            let e = 2.0 * s * theta * w.psi[i];
            let d = x[i] - grid.x0().unwrap_or(0.0);
            let zero = match w.variant {
                WeightVariant::DegDiv => {
                    if a_node[i] > 0.0 { d * d / a_node[i] } else { 0.0 }
                }
                WeightVariant::DegNonDiv => {
                    if a_node[i] > 0.0 { (d / a_node[i]).powi(2) } else { 0.0 }
                }
                WeightVariant::NonDegA1 => 1.0,
                WeightVariant::NonDegA2 => (3.0 * r_of(w) * w.zeta[i]).exp(),
            };
            lhs += dual[i] * s.powi(3) * zero * row[i] * row[i] * exp_clamped(3.0 * lt + e);
        }
        sides.lhs += dt * lhs;

        let (gl, gr) = boundary_gradients(x, row);
        let el = exp_clamped(lt + 2.0 * s * theta * w.psi[lo]);
        let er = exp_clamped(lt + 2.0 * s * theta * w.psi[hi]);
        let (fl, fr) = match &w.constants {
            WeightConstants::Degenerate { c1, .. } => {
                let x0 = grid.x0().unwrap_or(0.0);
                let (al, ar) = match w.variant {
                    WeightVariant::DegDiv => (a_node[lo], a_node[hi]),
                    _ => (1.0, 1.0),
                };
                // s c1 [a e (x - x0) v_x^2]_0^1, split into the two non-negative ends
                (-s * c1 * al * (x[lo] - x0), s * c1 * ar * (x[hi] - x0))
            }
            WeightConstants::NonDegA1 { r, .. } => {
                let (bl, br) = w.bracket_ends.unwrap_or((0.0, 0.0));
                let (al, ar) = match w.form {
                    Form::Divergence => (a_node[lo].powf(1.5), a_node[hi].powf(1.5)),
                    Form::NonDivergence => (a_node[lo].sqrt(), a_node[hi].sqrt()),
                };
                // -s r [ ... ]_A^B
                (s * r * al * bl, -s * r * ar * br)
            }
            WeightConstants::NonDegA2 { r, .. } => {
                let zl = (r * w.zeta[lo]).exp();
                let zr = (r * w.zeta[hi]).exp();
                (s * r * a_node[lo] * zl, -s * r * a_node[hi] * zr)
            }
        };
        sides.left += dt * fl * el * gl * gl;
        sides.right += dt * fr * er * gr * gr;
    }
    Ok(sides)
}

fn r_of(w: &CarlemanWeight) -> f64 {
    match w.constants {
        WeightConstants::NonDegA2 { r, .. } => r,
        _ => 0.0,
    }
}

fn check_field(v: &Field, w: &CarlemanWeight) -> Result<()> {
    if v.form != w.form {
        return Err(Error::Config(format!("field is {:?} but weight is {:?}", v.form, w.form)));
    }
    if v.grid.nodes() != w.nodes.as_slice() {
        return Err(Error::Shape { expected: w.nodes.len(), got: v.grid.len() });
    }
    Ok(())
}

fn finish_report<F>(
    variant: String,
    s: Vec<f64>,
    o: &SGridOptions,
    mut eval: F,
) -> Result<InequalityReport>
where
    F: FnMut(f64) -> Result<(f64, f64, f64)>,
{
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    let mut ratio = Vec::new();
    let mut bl = Vec::new();
    let mut br = Vec::new();
    for &sv in &s {
        let (l, left, right) = eval(sv)?;
        lhs.push(l);
        rhs.push(left + right);
        bl.push(left);
        br.push(right);
        ratio.push(ratio_of(l, left + right));
    }
    let settled = settle_index(&ratio, o.settle);
    let s0 = s[settled.unwrap_or(s.len() - 1)];
    let window_s = log_grid(s0, 4.0 * s0, o.window_points.max(2));
    let mut window_ratio = Vec::new();
    for &sv in &window_s {
        let (l, left, right) = eval(sv)?;
        window_ratio.push(ratio_of(l, left + right));
    }
    let sup_ratio = window_ratio.iter().cloned().fold(0.0, f64::max);
    Ok(InequalityReport {
        variant,
        s,
        lhs,
        rhs,
        ratio,
        boundary_left: bl,
        boundary_right: br,
        s0,
        stabilized: settled.is_some(),
        window_s,
        window_ratio,
        sup_ratio,
        verdict: sup_ratio.is_finite(),
    })
}

/// Left side (interior weighted energy) and right side (boundary term) of
/// the Carleman inequality for an adjoint solution `v`, for each `s`.
/// Time quadrature runs over the interior levels `t_1 .. t_{M-1}`.
pub fn carleman_ratio(
    v: &Field,
    w: &CarlemanWeight,
    p: &CoefficientProfile,
    o: &SGridOptions,
) -> Result<InequalityReport> {
    check_field(v, w)?;
    let s = s_grid(w, v, o);
    finish_report(format!("{:?}", w.variant), s, o, |sv| {
        let sides = carleman_sides(v, w, p, sv)?;
        Ok((sides.lhs, sides.left, sides.right))
    })
}

/// `int int_{omega'} v_x^2 e^{2 s phi}` against `int int_omega v^2`.
pub fn caccioppoli_check(
    v: &Field,
    w: &CarlemanWeight,
    omega_inner: &ControlRegion,
    omega: &ControlRegion,
    o: &SGridOptions,
) -> Result<InequalityReport> {
    check_field(v, w)?;
    for &(lo, hi) in omega_inner.intervals() {
        let inside = omega.intervals().iter().any(|&(a, b)| a < lo && hi < b);
        if !inside {
            return Err(Error::Config(format!("closure of ({lo}, {hi}) is not inside omega")));
        }
        if let Some(x0) = v.grid.x0() {
            if lo <= x0 && x0 <= hi {
                return Err(Error::Config(format!("x0 = {x0} lies in the closure of omega'")));
            }
        }
    }
    let grid = &v.grid;
    let x = grid.nodes();
    let h = grid.spacings();
    let dual = grid.dual_widths();
    let dt = v.tgrid.step();
    let horizon = v.tgrid.horizon;
    let mut rhs = 0.0;
    for step in 1..v.tgrid.steps {
        let row = v.row(step);
        for i in 0..x.len() {
            if omega.contains(x[i]) {
                rhs += dt * dual[i] * row[i] * row[i];
            }
        }
    }
    let cells: Vec<usize> = (0..h.len()).filter(|&c| omega_inner.contains(0.5 * (x[c] + x[c + 1]))).collect();
    let s = s_grid(w, v, o);
    finish_report("Caccioppoli".into(), s, o, |sv| {
        let mut lhs = 0.0;
        for step in 1..v.tgrid.steps {
            let theta = eval_theta(v.tgrid.time(step), horizon)?;
            let row = v.row(step);
            for &c in &cells {
                let vx = (row[c + 1] - row[c]) / h[c];
                lhs += dt * h[c] * vx * vx * exp_clamped(2.0 * sv * theta * w.psi_half[c]);
            }
        }
        Ok((lhs, rhs, 0.0))
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct HardyReport {
    pub c_hp: f64,
    /// Smallest local log-slope of `p` in `|x - x0|` over the cells.
    pub min_exponent: f64,
    /// The monotone-quotient hypothesis holds with some exponent above 1.
    pub certified: bool,
    pub cells: usize,
}

/// Discrete quadratic forms `(sum m_i w_i^2, sum k_c (Dw)_c^2)` of
/// `int mass w^2` and `int stiff (w')^2`.
#[derive(Debug, Clone)]
pub struct QuadraticForms {
    pub mass: Vec<f64>,
    pub stiffness: Vec<f64>,
}

impl QuadraticForms {
    pub fn assemble(mass: impl Fn(f64) -> f64, stiff: impl Fn(f64) -> f64, grid: &SpaceGrid) -> Self {
        let x = grid.nodes();
        let n = x.len();
        let mut m = vec![0.0; n];
        for i in 1..n - 1 {
            let (l, r) = (0.5 * (x[i - 1] + x[i]), 0.5 * (x[i] + x[i + 1]));
            m[i] = integrate(&mass, l, x[i]) + integrate(&mass, x[i], r);
        }
        let k = (0..n - 1)
            .map(|c| {
                let h = x[c + 1] - x[c];
                integrate(&stiff, x[c], x[c + 1]) / (h * h)
            })
            .collect();
        Self { mass: m, stiffness: k }
    }

    pub fn lhs(&self, w: &[f64]) -> f64 {
        self.mass.iter().zip(w).map(|(m, v)| m * v * v).sum()
    }

    pub fn rhs(&self, w: &[f64]) -> f64 {
        self.stiffness.iter().enumerate().map(|(c, k)| k * (w[c + 1] - w[c]).powi(2)).sum()
    }

    /// Largest `lhs / rhs` over node functions vanishing at both ends.
    pub fn best_constant(&self) -> f64 {
        let n = self.mass.len();
        let inner = 1..n - 1;
        let s: Vec<f64> = inner.clone().map(|i| 1.0 / self.mass[i].sqrt()).collect();
        let diag: Vec<f64> = inner
            .clone()
            .enumerate()
            .map(|(r, i)| (self.stiffness[i - 1] + self.stiffness[i]) * s[r] * s[r])
            .collect();
        let off: Vec<f64> = (0..diag.len())
            .map(|r| if r == 0 { 0.0 } else { -self.stiffness[r] * s[r - 1] * s[r] })
            .collect();
        1.0 / symmetric_tridiagonal_min_eigenvalue(&diag, &off)
    }
}

/// Smallest `C` with `int p w^2 / (x - x0)^2 <= C int p (w')^2` over discrete
/// `w` vanishing at `0` and `1`.
pub fn hardy_poincare_constant(p: impl Fn(f64) -> f64, grid: &SpaceGrid) -> Result<HardyReport> {
    let x0 = grid.x0().ok_or_else(|| Error::Domain("Hardy–Poincaré needs a grid through x0".into()))?;
    let x = grid.nodes();
    let k = grid.x0_index().expect("grid through x0");
    let vals: Vec<f64> = x.iter().map(|&v| p(v)).collect();
    if vals.iter().any(|&v| v < 0.0 || v.is_nan()) {
        return Err(Error::InvalidProfile("p must be non-negative".into()));
    }
    if vals[k] != 0.0 {
        return Err(Error::InvalidProfile(format!("p(x0) = {} must vanish", vals[k])));
    }
    let mut min_exponent = f64::INFINITY;
    for c in 0..x.len() - 1 {
        if c == k || c + 1 == k {
            continue;
        }
        let (d0, d1) = ((x[c] - x0).abs(), (x[c + 1] - x0).abs());
        let slope = (vals[c + 1].ln() - vals[c].ln()) / (d1.ln() - d0.ln());
        min_exponent = min_exponent.min(slope);
    }
    let forms = QuadraticForms::assemble(
        |y| {
            let d = y - x0;
            if d == 0.0 { 0.0 } else { p(y) / (d * d) }
        },
        &p,
        grid,
    );
    Ok(HardyReport {
        c_hp: forms.best_constant(),
        min_exponent,
        certified: min_exponent > 1.0,
        cells: grid.cells(),
    })
}

/// Smallest `C` with `int w^2 / a <= C int (w')^2` on the grid.
pub fn inverse_coefficient_poincare_constant(p: &CoefficientProfile, grid: &SpaceGrid) -> f64 {
    QuadraticForms::assemble(|y| 1.0 / p.eval(y), |_| 1.0, grid).best_constant()
}
