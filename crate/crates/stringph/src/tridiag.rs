//! Thomas elimination for the constant-coefficient symmetric tridiagonal
//! systems (a·I + b·S)x = r arising from trapezoidal damping, where S is the
//! neighbor-sum matrix (S x)_i = x_{i-1} + x_{i+1}.

use crate::error::{Error, Result};

/// Cached forward-elimination coefficients for one (a, b, n) configuration.
///
/// Repeated solves reuse the elimination pass; the per-solve arithmetic is
/// identical to a fresh factor-and-solve, so cached and one-shot paths agree
/// bit for bit.
#[derive(Debug, Clone)]
pub struct TridiagFactor {
    a: f64,
    b: f64,
    /// Superdiagonal multipliers c'_i = b / m_i.
    c_prime: Vec<f64>,
    /// Pivots m_0 = a, m_i = a - b·c'_{i-1}.
    pivot: Vec<f64>,
}

impl TridiagFactor {
    /// Requires strict diagonal dominance a > 2|b| so elimination never
    /// pivots; the damping matrix I + dt·Dmp always satisfies it.
    pub fn new(a: f64, b: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("tridiagonal system size must be positive"));
        }
        if !(a.is_finite() && b.is_finite()) || a - 2.0 * b.abs() <= 0.0 {
            return Err(Error::config(format!(
                "tridiagonal system not diagonally dominant: a = {a}, b = {b}"
            )));
        }
        let mut c_prime = vec![0.0; n];
        let mut pivot = vec![0.0; n];
        let mut m = a;
        for i in 0..n {
            pivot[i] = m;
            c_prime[i] = b / m;
            if i + 1 < n {
                m = a - b * c_prime[i];
            }
        }
        Ok(TridiagFactor { a, b, c_prime, pivot })
    }

    pub fn size(&self) -> usize {
        self.pivot.len()
    }

    pub fn coefficients(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    /// Solves (a·I + b·S)x = rhs in place of `out`.
    pub fn solve(&self, rhs: &[f64], out: &mut [f64]) {
        let n = self.size();
        debug_assert_eq!(rhs.len(), n);
        debug_assert_eq!(out.len(), n);
        out[0] = rhs[0] / self.pivot[0];
        for i in 1..n {
            out[i] = (rhs[i] - self.b * out[i - 1]) / self.pivot[i];
        }
        for i in (0..n - 1).rev() {
            out[i] -= self.c_prime[i] * out[i + 1];
        }
    }

    /// Applies the matrix (a·I + b·S) to x; used for residual checks and for
    /// assembling right-hand sides.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        apply_sym_toeplitz(self.a, self.b, x, out);
    }
}

/// Applies (a·I + b·S) without a factor object.
pub fn apply_sym_toeplitz(a: f64, b: f64, x: &[f64], out: &mut [f64]) {
    let n = x.len();
    debug_assert_eq!(out.len(), n);
    if n == 1 {
        out[0] = a * x[0];
        return;
    }
    out[0] = a * x[0] + b * x[1];
    for i in 1..n - 1 {
        out[i] = a * x[i] + b * (x[i - 1] + x[i + 1]);
    }
    out[n - 1] = a * x[n - 1] + b * x[n - 2];
}

/// One-shot solve; same arithmetic as factor-then-solve.
pub fn solve_sym_toeplitz(a: f64, b: f64, rhs: &[f64], out: &mut [f64]) -> Result<()> {
    let f = TridiagFactor::new(a, b, rhs.len())?;
    f.solve(rhs, out);
    Ok(())
}
