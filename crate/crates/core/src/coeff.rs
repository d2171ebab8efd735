//! Diffusion coefficient profiles `a(x)` and mechanical checks of the
//! structural hypotheses imposed on them.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::Form;
use crate::quad::integrate;

/// Real function of one variable shared across threads.
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DegeneracyKind {
    WeaklyDegenerate,
    StronglyDegenerate,
    NonDegenerate,
}

impl DegeneracyKind {
    fn from_exponent(k: f64) -> Self {
        if k < 1.0 {
            DegeneracyKind::WeaklyDegenerate
        } else {
            DegeneracyKind::StronglyDegenerate
        }
    }
}

#[derive(Clone)]
enum Shape {
    /// `|x - x0|^alpha`
    Power { alpha: f64 },
    Constant(f64),
    Closed { name: String, f: ScalarFn },
    Sampled,
}

/// A diffusion coefficient together with its degeneracy data.
///
/// `k` is the growth exponent bound in `(x - x0) a' <= K a`; it is `0` for
/// non-degenerate profiles. `theta` and `sigma` are only needed in the
/// strongly degenerate regimes `K > 4/3` and `K > 3/2` respectively.
#[derive(Clone)]
pub struct CoefficientProfile {
    shape: Shape,
    xs: Vec<f64>,
    values: Vec<f64>,
    x0: Option<f64>,
    k: f64,
    theta: Option<f64>,
    sigma: Option<f64>,
    kind: DegeneracyKind,
    beyond_range: bool,
}

impl fmt::Debug for CoefficientProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientProfile")
            .field("shape", &self.shape_name())
            .field("x0", &self.x0)
            .field("k", &self.k)
            .field("theta", &self.theta)
            .field("sigma", &self.sigma)
            .field("kind", &self.kind)
            .field("samples", &self.xs.len())
            .finish()
    }
}

/// Sample abscissas on `[0, 1]` with `n` points, placing one exactly at `x0`.
pub(crate) fn sample_abscissas(n: usize, x0: Option<f64>) -> Vec<f64> {
    let cells = n - 1;
    match x0 {
        None => (0..n).map(|i| i as f64 / cells as f64).collect(),
        Some(x0) => {
            let left = ((x0 * cells as f64).round() as usize).clamp(1, cells - 1);
            let right = cells - left;
            let mut xs = Vec::with_capacity(n);
            for i in 0..left {
                xs.push(x0 * i as f64 / left as f64);
            }
            xs.push(x0);
            for i in 1..=right {
                xs.push(if i == right {
                    1.0
                } else {
                    x0 + (1.0 - x0) * i as f64 / right as f64
                });
            }
            xs
        }
    }
}

/// Builds `a(x) = |x - x0|^alpha`, the prototype weak (`alpha < 1`) or
/// strong (`1 <= alpha < 2`) degeneracy.
pub fn make_prototype_profile(alpha: f64, x0: f64, n: usize) -> Result<CoefficientProfile> {
    CoefficientProfile::prototype(alpha, x0, n)
}

impl CoefficientProfile {
    pub fn prototype(alpha: f64, x0: f64, n: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::ExponentRange(alpha));
        }
        Self::power_law(alpha, x0, n)
    }

    /// Prototype with `alpha >= 2` allowed. Such coefficients sit outside the
    /// range where null controllability holds; they exist for the failure
    /// experiments and are flagged by [`Self::beyond_range`].
    pub fn prototype_beyond_range(alpha: f64, x0: f64, n: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::ExponentRange(alpha));
        }
        Self::power_law(alpha, x0, n)
    }

    fn power_law(alpha: f64, x0: f64, n: usize) -> Result<Self> {
        if !(x0 > 0.0 && x0 < 1.0) {
            return Err(Error::Domain(format!("x0 = {x0} must lie in (0, 1)")));
        }
        if n < 3 {
            return Err(Error::InvalidProfile(format!("need at least 3 samples, got {n}")));
        }
        let xs = sample_abscissas(n, Some(x0));
        let values = xs.iter().map(|x| (x - x0).abs().powf(alpha)).collect();
        let sigma = (alpha > 1.5).then(|| alpha * x0.max(1.0 - x0).powf(2.0 - alpha));
        Ok(Self {
            shape: Shape::Power { alpha },
            xs,
            values,
            x0: Some(x0),
            k: alpha,
            theta: Some(alpha),
            sigma,
            kind: DegeneracyKind::from_exponent(alpha),
            beyond_range: alpha >= 2.0,
        })
    }

    pub fn constant(value: f64, n: usize) -> Result<Self> {
        if !(value > 0.0) {
            return Err(Error::InvalidProfile(format!("constant coefficient {value} must be positive")));
        }
        if n < 3 {
            return Err(Error::InvalidProfile(format!("need at least 3 samples, got {n}")));
        }
        let xs = sample_abscissas(n, None);
        let values = vec![value; n];
        Ok(Self {
            shape: Shape::Constant(value),
            xs,
            values,
            x0: None,
            k: 0.0,
            theta: None,
            sigma: None,
            kind: DegeneracyKind::NonDegenerate,
            beyond_range: false,
        })
    }

    /// Closed-form coefficient. With `x0 = Some(..)` the profile is
    /// degenerate with exponent bound `k`; otherwise it is non-degenerate and
    /// `k` is ignored.
    pub fn from_fn(name: &str, f: ScalarFn, x0: Option<f64>, k: f64, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidProfile(format!("need at least 3 samples, got {n}")));
        }
        if let Some(x0) = x0 {
            if !(x0 > 0.0 && x0 < 1.0) {
                return Err(Error::Domain(format!("x0 = {x0} must lie in (0, 1)")));
            }
            if !(k > 0.0 && k < 2.0) {
                return Err(Error::ExponentRange(k));
            }
        }
        let xs = sample_abscissas(n, x0);
        let values = xs.iter().map(|&x| f(x)).collect();
        let kind = match x0 {
            Some(_) => DegeneracyKind::from_exponent(k),
            None => DegeneracyKind::NonDegenerate,
        };
        Ok(Self {
            shape: Shape::Closed { name: name.to_string(), f },
            xs,
            values,
            x0,
            k: if x0.is_some() { k } else { 0.0 },
            theta: None,
            sigma: None,
            kind,
            beyond_range: false,
        })
    }

    /// Tabulated coefficient, linearly interpolated between samples. A
    /// degenerate profile must carry `x0` as one of its abscissas.
    pub fn from_samples(xs: Vec<f64>, values: Vec<f64>, x0: Option<f64>, k: f64) -> Result<Self> {
        if xs.len() != values.len() {
            return Err(Error::Shape { expected: xs.len(), got: values.len() });
        }
        if xs.len() < 3 {
            return Err(Error::InvalidProfile("need at least 3 samples".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidProfile("abscissas must be strictly increasing".into()));
        }
        if xs[0] != 0.0 || *xs.last().unwrap() != 1.0 {
            return Err(Error::InvalidProfile("samples must span [0, 1]".into()));
        }
        if let Some(x0) = x0 {
            if !xs.contains(&x0) {
                return Err(Error::InvalidProfile(format!("x0 = {x0} is not a sample abscissa")));
            }
            if !(k > 0.0 && k < 2.0) {
                return Err(Error::ExponentRange(k));
            }
        }
        let kind = match x0 {
            Some(_) => DegeneracyKind::from_exponent(k),
            None => DegeneracyKind::NonDegenerate,
        };
        Ok(Self {
            shape: Shape::Sampled,
            xs,
            values,
            x0,
            k: if x0.is_some() { k } else { 0.0 },
            theta: None,
            sigma: None,
            kind,
            beyond_range: false,
        })
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = Some(theta);
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = Some(sigma);
        self
    }

    pub fn x0(&self) -> Option<f64> {
        self.x0
    }
    pub fn k(&self) -> f64 {
        self.k
    }
    pub fn theta(&self) -> Option<f64> {
        self.theta
    }
    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }
    pub fn kind(&self) -> DegeneracyKind {
        self.kind
    }
    pub fn is_degenerate(&self) -> bool {
        self.kind != DegeneracyKind::NonDegenerate
    }
    pub fn beyond_range(&self) -> bool {
        self.beyond_range
    }
    pub fn samples(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.values)
    }
    pub fn has_closed_form(&self) -> bool {
        !matches!(self.shape, Shape::Sampled)
    }

    pub fn shape_name(&self) -> String {
        match &self.shape {
            Shape::Power { alpha } => format!("|x-x0|^{alpha}"),
            Shape::Constant(c) => format!("constant {c}"),
            Shape::Closed { name, .. } => name.clone(),
            Shape::Sampled => "sampled".into(),
        }
    }

    /// `a(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Power { alpha } => (x - self.x0.unwrap_or(0.0)).abs().powf(*alpha),
            Shape::Constant(c) => *c,
            Shape::Closed { f, .. } => f(x),
            Shape::Sampled => interpolate(&self.xs, &self.values, x),
        }
    }

    /// `a(x0 + d)`, exact in `d` for power laws so that cells touching the
    /// degeneracy are not polluted by cancellation in `x - x0`.
    pub fn eval_offset(&self, d: f64) -> f64 {
        match &self.shape {
            Shape::Power { alpha } => d.abs().powf(*alpha),
            _ => self.eval(self.x0.unwrap_or(0.0) + d),
        }
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// `1e-8 * (1 + ||a||_inf)`
    pub fn default_tolerance(&self) -> f64 {
        1e-8 * (1.0 + self.max_value())
    }

    /// Two-column CSV with header `x,a`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,a\n");
        for (x, a) in self.xs.iter().zip(&self.values) {
            out.push_str(&format!("{x},{a}\n"));
        }
        out
    }

    pub fn from_csv(text: &str, x0: Option<f64>, k: f64) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next().map(str::trim) {
            Some("x,a") => {}
            other => return Err(Error::InvalidProfile(format!("expected header `x,a`, found {other:?}"))),
        }
        let mut xs = Vec::new();
        let mut values = Vec::new();
        for (no, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::InvalidProfile(format!("malformed CSV line {}", no + 2)))
            };
            xs.push(parse(parts.next())?);
            values.push(parse(parts.next())?);
        }
        Self::from_samples(xs, values, x0, k)
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let j = xs.partition_point(|&v| v <= x);
    let (xl, xr) = (xs[j - 1], xs[j]);
    let t = (x - xl) / (xr - xl);
    ys[j - 1] * (1.0 - t) + ys[j] * t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisCheck {
    pub name: String,
    pub verdict: Verdict,
    pub worst_defect: f64,
    /// Abscissa of the worst defect; always present on failure.
    pub witness: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub kind: DegeneracyKind,
    pub tolerance: f64,
    pub checks: Vec<HypothesisCheck>,
    /// Largest one-sided log-slope `d ln a / d ln |x - x0|` over sample cells.
    pub empirical_k: Option<f64>,
    pub inv_a_integrable: Option<bool>,
    pub inv_sqrt_a_integrable: Option<bool>,
    /// Ratio of successive refinement increments of the `1/a` sums.
    pub inv_a_increment_ratio: Option<f64>,
    pub inv_sqrt_a_increment_ratio: Option<f64>,
}

impl HypothesisReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.verdict != Verdict::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &str, worst: Option<(f64, f64)>, tol: f64) {
        let (verdict, worst_defect, witness) = match worst {
            None => (Verdict::Pass, 0.0, None),
            Some((d, x)) if d <= tol => (Verdict::Pass, d, Some(x)),
            Some((d, x)) => (Verdict::Fail, d, Some(x)),
        };
        self.checks.push(HypothesisCheck { name: name.into(), verdict, worst_defect, witness });
    }

    fn not_applicable(&mut self, name: &str) {
        self.checks.push(HypothesisCheck {
            name: name.into(),
            verdict: Verdict::NotApplicable,
            worst_defect: 0.0,
            witness: None,
        });
    }

    fn fail(&mut self, name: &str, witness: f64) {
        self.checks.push(HypothesisCheck {
            name: name.into(),
            verdict: Verdict::Fail,
            worst_defect: f64::INFINITY,
            witness: Some(witness),
        });
    }
}

fn worst(acc: &mut Option<(f64, f64)>, defect: f64, x: f64) {
    match acc {
        Some((d, _)) if *d >= defect => {}
        _ => *acc = Some((defect, x)),
    }
}

/// Checks the sign structure of `a`, the growth condition
/// `(x - x0) a' <= K a`, the monotone quotient `a / |x - x0|^theta` when
/// `K > 4/3`, the derivative bound with `sigma` when `K > 3/2`, and reports
/// grid-integrability of `1/a` and `1/sqrt(a)`.
///
/// The growth condition is tested cell by cell in its integrated form: on each
/// side of `x0`, `ln a` may grow at most `K` times as fast as `ln |x - x0|`
/// when moving away from the degeneracy. Cells touching `x0` are skipped.
pub fn check_degeneracy_hypotheses(p: &CoefficientProfile, tol: f64) -> Result<HypothesisReport> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance {tol} must be positive")));
    }
    let (xs, values) = p.samples();
    if xs.len() < 3 {
        return Err(Error::InvalidProfile("need at least 3 samples".into()));
    }
    if let Some(i) = values.iter().position(|&a| a < 0.0 || a.is_nan()) {
        return Err(Error::InvalidProfile(format!("a({}) = {} is negative", xs[i], values[i])));
    }
    let mut report = HypothesisReport {
        kind: p.kind(),
        tolerance: tol,
        checks: Vec::new(),
        empirical_k: None,
        inv_a_integrable: None,
        inv_sqrt_a_integrable: None,
        inv_a_increment_ratio: None,
        inv_sqrt_a_increment_ratio: None,
    };

    // (i) zero structure
    let mut sign: Option<(f64, f64)> = None;
    for (&x, &a) in xs.iter().zip(values) {
        let at_x0 = p.x0() == Some(x);
        let defect = if at_x0 { a } else if a > 0.0 { 0.0 } else { f64::INFINITY };
        if defect > 0.0 {
            worst(&mut sign, defect, x);
        }
    }
    report.push("sign", sign, tol);

    let (r1, r2) = integrability_ratios(p);
    report.inv_a_increment_ratio = r1;
    report.inv_sqrt_a_increment_ratio = r2;
    report.inv_a_integrable = Some(r1.is_none_or(|r| r < INTEGRABLE_RATIO));
    report.inv_sqrt_a_integrable = Some(r2.is_none_or(|r| r < INTEGRABLE_RATIO));

    let Some(x0) = p.x0() else {
        report.not_applicable("growth");
        report.not_applicable("monotone_quotient");
        report.not_applicable("derivative_bound");
        return Ok(report);
    };
    let k = p.k();

    // (ii) growth, per cell on each side
    let mut growth = None;
    let mut k_emp = f64::NEG_INFINITY;
    for (xa, xb, aa, ab) in side_cells(xs, values, x0) {
        let (da, db) = ((xa - x0).abs(), (xb - x0).abs());
        // oriented away from x0: `near` is closer to x0
        let (dn, df, an, af) = if da < db { (da, db, aa, ab) } else { (db, da, ab, aa) };
        let dln_a = af.ln() - an.ln();
        let dln_d = df.ln() - dn.ln();
        k_emp = k_emp.max(dln_a / dln_d);
        worst(&mut growth, dln_a - k * dln_d, 0.5 * (xa + xb));
    }
    report.empirical_k = k_emp.is_finite().then_some(k_emp);
    report.push("growth", growth.map(|(d, x)| (d.max(0.0), x)), tol);

    // (iii) monotone quotient a / |x - x0|^theta
    if k > 4.0 / 3.0 {
        match p.theta() {
            None => report.fail("monotone_quotient", x0),
            Some(theta) => {
                let mut mono = None;
                for (xa, xb, aa, ab) in side_cells(xs, values, x0) {
                    let qa = aa / (xa - x0).abs().powf(theta);
                    let qb = ab / (xb - x0).abs().powf(theta);
                    let (qn, qf) = if (xa - x0).abs() < (xb - x0).abs() { (qa, qb) } else { (qb, qa) };
                    worst(&mut mono, ((qn - qf) / qf).max(0.0), 0.5 * (xa + xb));
                }
                report.push("monotone_quotient", mono, tol);
            }
        }
    } else {
        report.not_applicable("monotone_quotient");
    }

    // (iv) |a'| <= sigma |x - x0|^(2 theta - 3), quotient bounded below
    if k > 1.5 {
        match (p.theta(), p.sigma()) {
            (Some(theta), Some(sigma)) => {
                let mut bound = None;
                let mut q_min = f64::INFINITY;
                for (xa, xb, aa, ab) in side_cells(xs, values, x0) {
                    let slope = ((ab - aa) / (xb - xa)).abs();
                    let far = (xa - x0).abs().max((xb - x0).abs());
                    let cap = sigma * far.powf(2.0 * theta - 3.0);
                    worst(&mut bound, ((slope - cap) / cap).max(0.0), 0.5 * (xa + xb));
                    q_min = q_min.min(aa / (xa - x0).abs().powf(theta));
                }
                if q_min > 0.0 {
                    report.push("derivative_bound", bound, tol);
                } else {
                    report.fail("derivative_bound", x0);
                }
            }
            _ => report.fail("derivative_bound", x0),
        }
    } else {
        report.not_applicable("derivative_bound");
    }
    Ok(report)
}

/// Sample cells lying entirely on one side of `x0` (neither endpoint at `x0`).
fn side_cells<'a>(
    xs: &'a [f64],
    values: &'a [f64],
    x0: f64,
) -> impl Iterator<Item = (f64, f64, f64, f64)> + 'a {
    (0..xs.len() - 1)
        .filter(move |&i| xs[i] != x0 && xs[i + 1] != x0 && (xs[i] - x0).signum() == (xs[i + 1] - x0).signum())
        .map(move |i| (xs[i], xs[i + 1], values[i], values[i + 1]))
}

/// Increment ratio below which a midpoint-sum sequence counts as convergent.
pub const INTEGRABLE_RATIO: f64 = 0.995;
const BASE_CELLS: usize = 4096;

/// Ratios `(S4 - S2) / (S2 - S1)` of composite-midpoint sums of `1/a` and
/// `1/sqrt(a)` over three dyadic refinements. `None` when the sums have
/// already converged to rounding.
fn integrability_ratios(p: &CoefficientProfile) -> (Option<f64>, Option<f64>) {
    let ratio = |power: f64| -> Option<f64> {
        let sums: Vec<f64> = if p.has_closed_form() {
            (0..3).map(|l| closed_midpoint_sum(p, BASE_CELLS << l, power)).collect()
        } else {
            [8usize, 4, 2].iter().map(|&s| sampled_midpoint_sum(p, s, power)).collect()
        };
        if sums.iter().any(|s| !s.is_finite()) {
            return Some(f64::INFINITY);
        }
        let d1 = sums[1] - sums[0];
        let d2 = sums[2] - sums[1];
        if d1.abs() <= 1e-12 * sums[1].abs() {
            return None;
        }
        Some((d2 / d1).abs())
    };
    (ratio(1.0), ratio(0.5))
}

fn closed_midpoint_sum(p: &CoefficientProfile, cells: usize, power: f64) -> f64 {
    let f = |a: f64| a.powf(-power);
    match p.x0() {
        None => {
            let h = 1.0 / cells as f64;
            (0..cells).map(|i| h * f(p.eval((i as f64 + 0.5) * h))).sum()
        }
        Some(x0) => {
            let mut total = 0.0;
            for (len, dir) in [(x0, -1.0), (1.0 - x0, 1.0)] {
                let m = ((len * cells as f64).round() as usize).max(1);
                let h = len / m as f64;
                total += (0..m).map(|i| h * f(p.eval_offset(dir * (i as f64 + 0.5) * h))).sum::<f64>();
            }
            total
        }
    }
}

/// Midpoint sums built from the samples themselves: cells of `stride`
/// samples walking outward from `x0`, valued at their middle sample.
fn sampled_midpoint_sum(p: &CoefficientProfile, stride: usize, power: f64) -> f64 {
    let (xs, values) = p.samples();
    let f = |a: f64| a.powf(-power);
    let center = p.x0().and_then(|x0| xs.iter().position(|&x| x == x0));
    let sides: Vec<Vec<usize>> = match center {
        Some(c) => vec![(0..=c).rev().collect(), (c..xs.len()).collect()],
        None => vec![(0..xs.len()).collect()],
    };
    let mut total = 0.0;
    for side in sides {
        let mut j = 0;
        while j + stride < side.len() {
            let (a, b, m) = (side[j], side[j + stride], side[j + stride / 2]);
            total += (xs[b] - xs[a]).abs() * f(values[m]);
            j += stride;
        }
    }
    total
}

/// Non-degenerate coefficient data `(g, h, g0, h0)` for the identity
/// `-/+ a'/(2 sqrt a) (int_x^B g + h0) + sqrt(a) g = h` on `(A, B)`, with the
/// minus sign in divergence form and the plus sign in non-divergence form.
#[derive(Clone)]
pub struct NonDegeneratePair {
    pub g: ScalarFn,
    pub h: ScalarFn,
    pub g0: f64,
    pub h0: f64,
    pub form: Form,
    pub interval: (f64, f64),
    /// Number of verification abscissas.
    pub samples: usize,
}

impl fmt::Debug for NonDegeneratePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonDegeneratePair")
            .field("g0", &self.g0)
            .field("h0", &self.h0)
            .field("form", &self.form)
            .field("interval", &self.interval)
            .finish()
    }
}

impl NonDegeneratePair {
    /// `int_x^B g + h0`
    pub fn bracket(&self, x: f64) -> f64 {
        integrate(&*self.g, x, self.interval.1) + self.h0
    }
}

/// Verifies the non-degenerate identity by quadrature.
///
/// The identity is checked in its integrated form
/// `sqrt(a)(int_x^B g + h0) |_x^B = -int_x^B h` (divergence) or
/// `(int_x^B g + h0)/sqrt(a) |_x^B = -int_x^B h/a` (non-divergence), which is
/// equivalent for absolutely continuous `a` and avoids differentiating `a`.
pub fn check_nondegenerate_pair(
    p: &CoefficientProfile,
    pair: &NonDegeneratePair,
    tol: f64,
) -> Result<HypothesisReport> {
    let (lo, hi) = pair.interval;
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(Error::Domain(format!("interval ({lo}, {hi}) is not inside [0, 1]")));
    }
    if let Some(x0) = p.x0() {
        if lo <= x0 && x0 <= hi {
            return Err(Error::Domain(format!("interval ({lo}, {hi}) contains the degeneracy x0 = {x0}")));
        }
    }
    if !(pair.g0 > 0.0 && pair.h0 > 0.0) {
        return Err(Error::Constraint("g0 and h0 must be strictly positive".into()));
    }
    let n = pair.samples.max(4);
    let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let mut report = HypothesisReport {
        kind: p.kind(),
        tolerance: tol,
        checks: Vec::new(),
        empirical_k: None,
        inv_a_integrable: None,
        inv_sqrt_a_integrable: None,
        inv_a_increment_ratio: None,
        inv_sqrt_a_increment_ratio: None,
    };

    let mut positivity = None;
    let mut lower = None;
    let mut identity = None;
    let a_hi = p.eval(hi);
    for &x in xs.iter().chain(std::iter::once(&hi)) {
        let a = p.eval(x);
        if !(a > 0.0) {
            worst(&mut positivity, f64::INFINITY, x);
        }
        let g = (pair.g)(x);
        if g.is_nan() || g < pair.g0 {
            worst(&mut lower, pair.g0 - g, x);
        }
    }
    report.push("positivity", positivity, 0.0);
    report.push("g_lower_bound", lower, tol);
    if report.passed() {
        for &x in &xs {
            let a = p.eval(x);
            let bracket = pair.bracket(x);
            let (lhs, rhs) = match pair.form {
                Form::Divergence => (
                    a.sqrt() * bracket - a_hi.sqrt() * pair.h0,
                    integrate(&*pair.h, x, hi),
                ),
                Form::NonDivergence => (
                    bracket / a.sqrt() - pair.h0 / a_hi.sqrt(),
                    integrate(|t| (pair.h)(t) / p.eval(t), x, hi),
                ),
            };
            let defect = (lhs - rhs).abs() / (1.0 + lhs.abs().max(rhs.abs()));
            worst(&mut identity, defect, x);
        }
        report.push("identity", identity, tol);
    } else {
        report.not_applicable("identity");
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prototype_classification() {
        let wd = make_prototype_profile(0.5, 0.5, 101).unwrap();
        assert_eq!(wd.kind(), DegeneracyKind::WeaklyDegenerate);
        assert_eq!(wd.k(), 0.5);
        let sd = make_prototype_profile(1.5, 0.3, 101).unwrap();
        assert_eq!(sd.kind(), DegeneracyKind::StronglyDegenerate);
        assert_eq!(sd.theta(), Some(1.5));
        assert!(sd.sigma().is_none());
        let sd2 = make_prototype_profile(1.7, 0.3, 101).unwrap();
        assert!(sd2.sigma().is_some());
    }

    #[test]
    fn exponent_two_rejected() {
        assert!(matches!(make_prototype_profile(2.0, 0.5, 11), Err(Error::ExponentRange(_))));
        assert!(matches!(make_prototype_profile(0.0, 0.5, 11), Err(Error::ExponentRange(_))));
        let over = CoefficientProfile::prototype_beyond_range(2.0, 0.5, 11).unwrap();
        assert!(over.beyond_range());
    }

    #[test]
    fn x0_is_a_sample_and_vanishes() {
        let p = make_prototype_profile(0.7, 0.37, 50).unwrap();
        let (xs, vs) = p.samples();
        let i = xs.iter().position(|&x| x == 0.37).unwrap();
        assert_eq!(vs[i], 0.0);
        assert_eq!(xs[0], 0.0);
        assert_eq!(*xs.last().unwrap(), 1.0);
    }

    #[test]
    fn weak_prototype_passes_and_inverse_integrable() {
        let p = make_prototype_profile(0.5, 0.5, 201).unwrap();
        let r = check_degeneracy_hypotheses(&p, p.default_tolerance()).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.inv_a_integrable, Some(true));
        assert_eq!(r.inv_sqrt_a_integrable, Some(true));
    }

    #[test]
    fn strong_prototype_inverse_diverges() {
        let p = make_prototype_profile(1.5, 0.5, 201).unwrap();
        let r = check_degeneracy_hypotheses(&p, p.default_tolerance()).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.inv_a_integrable, Some(false));
        assert_eq!(r.inv_sqrt_a_integrable, Some(true));
    }

    #[test]
    fn constant_profile_not_applicable() {
        let p = CoefficientProfile::constant(1.0, 11).unwrap();
        let r = check_degeneracy_hypotheses(&p, 1e-8).unwrap();
        assert_eq!(r.kind, DegeneracyKind::NonDegenerate);
        assert_eq!(r.check("growth").unwrap().verdict, Verdict::NotApplicable);
        assert!(r.passed());
    }

    #[test]
    fn growth_violation_has_witness() {
        // a = |x - 0.5|^1.2 declared with K = 0.8
        let f: ScalarFn = Arc::new(|x: f64| (x - 0.5f64).abs().powf(1.2));
        let p = CoefficientProfile::from_fn("steep", f, Some(0.5), 0.8, 41).unwrap();
        let r = check_degeneracy_hypotheses(&p, 1e-8).unwrap();
        let g = r.check("growth").unwrap();
        assert_eq!(g.verdict, Verdict::Fail);
        assert!(g.witness.is_some());
    }

    #[test]
    fn negative_profile_is_error() {
        let xs = vec![0.0, 0.5, 1.0];
        let p = CoefficientProfile::from_samples(xs, vec![1.0, -0.1, 1.0], None, 0.0).unwrap();
        assert!(matches!(check_degeneracy_hypotheses(&p, 1e-8), Err(Error::InvalidProfile(_))));
    }

    #[test]
    fn samples_must_contain_x0() {
        let xs = vec![0.0, 0.4, 1.0];
        let err = CoefficientProfile::from_samples(xs, vec![0.5, 0.1, 0.5], Some(0.5), 0.5);
        assert!(err.is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let p = make_prototype_profile(0.5, 0.5, 9).unwrap();
        let text = p.to_csv();
        assert!(text.starts_with("x,a\n"));
        let q = CoefficientProfile::from_csv(&text, Some(0.5), 0.5).unwrap();
        assert_eq!(q.samples().1, p.samples().1);
    }

    #[test]
    fn sampled_integrability_follows_exponent() {
        for (alpha, expect) in [(0.4, true), (1.6, false)] {
            let proto = make_prototype_profile(alpha, 0.5, 4097).unwrap();
            let (xs, vs) = proto.samples();
            let p = CoefficientProfile::from_samples(xs.to_vec(), vs.to_vec(), Some(0.5), alpha).unwrap();
            let r = check_degeneracy_hypotheses(&p, 1e-8).unwrap();
            assert_eq!(r.inv_a_integrable, Some(expect), "alpha {alpha}: {:?}", r.inv_a_increment_ratio);
        }
    }

    fn divergence_example_pair() -> (CoefficientProfile, NonDegeneratePair) {
        let a = |x: f64| 2.0 - (1.0 - x).sqrt();
        let p = CoefficientProfile::from_fn("2-sqrt(1-x)", Arc::new(a), None, 0.0, 101).unwrap();
        let g: ScalarFn = Arc::new(move |x: f64| 2f64.sqrt() / (4.0 * (1.0 - x).sqrt()) * a(x).powf(-1.5));
        let pair = NonDegeneratePair {
            g,
            h: Arc::new(|_| 0.0),
            g0: 0.125,
            h0: 1.0,
            form: Form::Divergence,
            interval: (0.0, 1.0),
            samples: 64,
        };
        (p, pair)
    }

    #[test]
    fn divergence_example_pair_passes() {
        let (p, pair) = divergence_example_pair();
        let r = check_nondegenerate_pair(&p, &pair, 1e-6).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn nondivergence_example_pair_passes() {
        let a = |x: f64| (2.0 - x).sqrt();
        let p = CoefficientProfile::from_fn("sqrt(2-x)", Arc::new(a), None, 0.0, 101).unwrap();
        let pair = NonDegeneratePair {
            g: Arc::new(move |x| 1.0 / (4.0 * a(x).powf(1.5))),
            h: Arc::new(|_| 0.0),
            g0: 1.0 / (8.0 * 2f64.sqrt()),
            h0: 1.0,
            form: Form::NonDivergence,
            interval: (0.0, 1.0),
            samples: 64,
        };
        let r = check_nondegenerate_pair(&p, &pair, 1e-8).unwrap();
        assert!(r.passed(), "{r:?}");
        // flipping the form breaks the identity
        let wrong = NonDegeneratePair { form: Form::Divergence, ..pair };
        let r = check_nondegenerate_pair(&p, &wrong, 1e-8).unwrap();
        assert_eq!(r.check("identity").unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn constant_pair_zero_residual() {
        let p = CoefficientProfile::constant(1.0, 11).unwrap();
        for form in [Form::Divergence, Form::NonDivergence] {
            let pair = NonDegeneratePair {
                g: Arc::new(|_| 1.0),
                h: Arc::new(|_| 1.0),
                g0: 1.0,
                h0: 0.3,
                form,
                interval: (0.0, 1.0),
                samples: 16,
            };
            let r = check_nondegenerate_pair(&p, &pair, 1e-12).unwrap();
            assert!(r.passed());
            assert!(r.check("identity").unwrap().worst_defect < 1e-13);
        }
    }

    #[test]
    fn pair_interval_through_x0_rejected() {
        let (_, pair) = divergence_example_pair();
        let p = make_prototype_profile(0.5, 0.5, 11).unwrap();
        assert!(matches!(check_nondegenerate_pair(&p, &pair, 1e-6), Err(Error::Domain(_))));
        let local = NonDegeneratePair { interval: (0.6, 0.9), ..pair };
        assert!(check_nondegenerate_pair(&p, &local, 1e-6).is_ok());
    }
}
