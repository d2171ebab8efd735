//! Banded and iterative linear algebra used by the solvers.

use serde::Serialize;

/// Square tridiagonal matrix. `lower[i]` couples row `i` to column `i - 1`
/// (`lower[0]` is unused), `upper[i]` couples row `i` to column `i + 1`
/// (`upper[n - 1]` is unused).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        if row == col {
            self.diag[row]
        } else if col + 1 == row {
            self.lower[row]
        } else if row + 1 == col {
            self.upper[row]
        } else {
            0.0
        }
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        let n = self.len();
        debug_assert_eq!(x.len(), n);
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.lower[i] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.upper[i] * x[i + 1];
            }
            out[i] = acc;
        }
    }

    pub fn transpose(&self) -> Self {
        let n = self.len();
        let mut t = Self::zeros(n);
        t.diag.copy_from_slice(&self.diag);
        for i in 1..n {
            t.lower[i] = self.upper[i - 1];
            t.upper[i - 1] = self.lower[i];
        }
        t
    }

    /// Largest `|A - A^T|` entry.
    pub fn asymmetry(&self) -> f64 {
        (1..self.len())
            .map(|i| (self.lower[i] - self.upper[i - 1]).abs())
            .fold(0.0, f64::max)
    }

    /// `I * alpha + A * beta`
    pub fn shifted(&self, alpha: f64, beta: f64) -> Self {
        Self {
            lower: self.lower.iter().map(|v| v * beta).collect(),
            diag: self.diag.iter().map(|v| alpha + v * beta).collect(),
            upper: self.upper.iter().map(|v| v * beta).collect(),
        }
    }

    /// Solves `A x = rhs` in place by the Thomas algorithm. Returns `false`
    /// on a zero or non-finite pivot.
    pub fn solve_in_place(&self, rhs: &mut [f64]) -> bool {
        let n = self.len();
        if n == 0 {
            return true;
        }
        let mut c = vec![0.0; n];
        let mut pivot = self.diag[0];
        if pivot == 0.0 || !pivot.is_finite() {
            return false;
        }
        c[0] = self.upper[0] / pivot;
        rhs[0] /= pivot;
        for i in 1..n {
            pivot = self.diag[i] - self.lower[i] * c[i - 1];
            if pivot == 0.0 || !pivot.is_finite() {
                return false;
            }
            c[i] = if i + 1 < n { self.upper[i] / pivot } else { 0.0 };
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) / pivot;
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= c[i] * rhs[i + 1];
        }
        rhs.iter().all(|v| v.is_finite())
    }

    /// Dense copy, for oracles and small eigenproblems.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.len();
        nalgebra::DMatrix::from_fn(n, n, |i, j| self.entry(i, j))
    }
}

/// Number of eigenvalues of the symmetric tridiagonal matrix
/// `(diag, off)` strictly below `x` (Sturm sequence count).
fn sturm_count(diag: &[f64], off_sq: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..diag.len() {
        let prev = if i == 0 { 0.0 } else { off_sq[i] / q };
        q = diag[i] - x - prev;
        if q == 0.0 {
            q = f64::EPSILON * (diag[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Smallest eigenvalue of a symmetric tridiagonal matrix by bisection.
/// `off[i]` couples rows `i - 1` and `i` (`off[0]` unused).
pub fn symmetric_tridiagonal_min_eigenvalue(diag: &[f64], off: &[f64]) -> f64 {
    let n = diag.len();
    assert!(n > 0);
    let off_sq: Vec<f64> = off.iter().map(|v| v * v).collect();
    // Gershgorin bounds
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { off[i].abs() } else { 0.0 } + if i + 1 < n { off[i + 1].abs() } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(diag, &off_sq, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone, Serialize)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Relative residual after each iteration.
    pub trace: Vec<f64>,
}

/// Conjugate gradient for `A x = b` where `A` is self-adjoint positive
/// definite in the inner product `dot`. Starts from zero. Returns the best
/// iterate seen if the tolerance is not reached.
pub fn conjugate_gradient<A, D>(
    apply: A,
    b: &[f64],
    dot: D,
    tol: f64,
    max_iters: usize,
) -> CgOutcome
where
    A: Fn(&[f64]) -> Vec<f64>,
    D: Fn(&[f64], &[f64]) -> f64,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let b_norm = dot(b, b).sqrt();
    let mut trace = Vec::new();
    if b_norm == 0.0 {
        return CgOutcome {
            solution: x,
            iterations: 0,
            converged: true,
            trace,
        };
    }
    let mut rr = dot(&r, &r);
    let mut best = (f64::INFINITY, x.clone());
    for it in 0..max_iters {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let rel = rr_new.sqrt() / b_norm;
        trace.push(rel);
        if rel < best.0 {
            best = (rel, x.clone());
        }
        if rel <= tol {
            return CgOutcome {
                solution: x,
                iterations: it + 1,
                converged: true,
                trace,
            };
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    let iterations = trace.len();
    CgOutcome {
        solution: best.1,
        iterations,
        converged: false,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(n: usize) -> Tridiagonal {
        let mut t = Tridiagonal::zeros(n);
        for i in 0..n {
            t.diag[i] = 2.0;
            if i > 0 {
                t.lower[i] = -1.0;
            }
            if i + 1 < n {
                t.upper[i] = -1.0;
            }
        }
        t
    }

    #[test]
    fn thomas_matches_matvec() {
        let a = laplacian(7);
        let x: Vec<f64> = (0..7).map(|i| (i as f64).sin()).collect();
        let mut b = vec![0.0; 7];
        a.mul_vec(&x, &mut b);
        assert!(a.solve_in_place(&mut b));
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn singular_pivot_reported() {
        let a = Tridiagonal::zeros(3);
        let mut b = vec![1.0; 3];
        assert!(!a.solve_in_place(&mut b));
    }

    #[test]
    fn sturm_min_eigenvalue_of_laplacian() {
        let n = 20;
        let a = laplacian(n);
        let mut off = vec![0.0; n];
        off[1..n].copy_from_slice(&a.lower[1..n]);
        let lam = symmetric_tridiagonal_min_eigenvalue(&a.diag, &off);
        let exact = 2.0 - 2.0 * (std::f64::consts::PI / (n as f64 + 1.0)).cos();
        assert!((lam - exact).abs() < 1e-13, "{lam} vs {exact}");
    }

    #[test]
    fn cg_solves_spd_system() {
        let a = laplacian(30);
        let b: Vec<f64> = (0..30).map(|i| 1.0 + i as f64 * 0.1).collect();
        let out = conjugate_gradient(
            |p| {
                let mut o = vec![0.0; p.len()];
                a.mul_vec(p, &mut o);
                o
            },
            &b,
            |u, v| u.iter().zip(v).map(|(a, b)| a * b).sum(),
            1e-12,
            100,
        );
        assert!(out.converged);
        let mut check = vec![0.0; 30];
        a.mul_vec(&out.solution, &mut check);
        for (u, v) in check.iter().zip(&b) {
            assert!((u - v).abs() < 1e-9);
        }
    }
}
