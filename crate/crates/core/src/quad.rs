//! Quadrature helpers.
//!
//! Most integrands in this crate are smooth except at an endpoint, where they
//! may blow up like `|x - x0|^(1-K)`. Double-exponential (tanh-sinh)
//! quadrature handles those algebraic endpoint singularities without special
//! casing; non-finite samples at the very endpoints are skipped.

use std::f64::consts::FRAC_PI_2;

const MAX_LEVEL: usize = 9;
const U_MAX: f64 = 6.5;

/// Tanh-sinh quadrature of `f` over `[a, b]` to relative tolerance `tol`.
///
/// Abscissas near the endpoints are formed as `a + (b - a) * eps` so that a
/// singularity at `a = 0` is sampled at exactly representable offsets.
pub fn tanh_sinh<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if b < a {
        return -tanh_sinh(f, b, a, tol);
    }
    let width = b - a;
    if width == 0.0 {
        return 0.0;
    }
    let half = 0.5 * width;
    let mid = a + half;

    let eval = |x: f64| {
        let y = f(x);
        if y.is_finite() {
            y
        } else {
            0.0
        }
    };
    // contribution of the abscissa pair at parameter u (u > 0)
    let pair = |u: f64| -> f64 {
        let s = FRAC_PI_2 * u.sinh();
        let e2s = (2.0 * s).exp();
        if !e2s.is_finite() {
            return 0.0;
        }
        let eps = 1.0 / (e2s + 1.0);
        let cs = s.cosh();
        let w = FRAC_PI_2 * u.cosh() / (cs * cs);
        let xl = a + width * eps;
        let xr = b - width * eps;
        let mut acc = 0.0;
        if xl > a {
            acc += eval(xl);
        }
        if xr < b {
            acc += eval(xr);
        }
        w * acc
    };

    let mut h = 1.0;
    let mut sum = FRAC_PI_2 * eval(mid);
    let mut u = h;
    while u <= U_MAX {
        sum += pair(u);
        u += h;
    }
    let mut estimate = half * h * sum;
    for level in 1..=MAX_LEVEL {
        h *= 0.5;
        let mut u = h;
        while u <= U_MAX {
            sum += pair(u);
            u += 2.0 * h;
        }
        let next = half * h * sum;
        let converged = (next - estimate).abs() <= tol * next.abs().max(1e-300);
        estimate = next;
        if level >= 3 && converged {
            break;
        }
    }
    estimate
}

/// Default tolerance used across the crate.
pub const QUAD_TOL: f64 = 1e-12;

/// Integral of `f` over `[a, b]` with the crate-wide tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    tanh_sinh(f, a, b, QUAD_TOL)
}

/// Composite Simpson rule on an odd number of equally spaced samples.
pub fn simpson(values: &[f64], step: f64) -> f64 {
    let n = values.len();
    assert!(n >= 3 && n % 2 == 1, "simpson needs an odd sample count >= 3");
    let mut acc = values[0] + values[n - 1];
    for (i, v) in values.iter().enumerate().take(n - 1).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * step / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate(|x| 3.0 * x * x, 0.0, 2.0);
        assert!((v - 8.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_sqrt_endpoint_singularity() {
        let v = integrate(|x| 1.0 / x.sqrt(), 0.0, 1.0);
        assert!((v - 2.0).abs() < 1e-9, "{v}");
        let w = integrate(|x| 1.0 / (1.0 - x).sqrt(), 0.0, 1.0);
        assert!((w - 2.0).abs() < 1e-7, "{w}");
    }

    #[test]
    fn power_singularity_near_nonintegrable() {
        // exponent -0.9: integral 10
        let v = integrate(|x| x.powf(-0.9), 0.0, 1.0);
        assert!((v - 10.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn simpson_cubic() {
        let xs: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x * x).collect();
        assert!((simpson(&ys, 0.1) - 0.25).abs() < 1e-14);
    }
}
