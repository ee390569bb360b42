//! Matrix-free difference operators on the interior of a simply-supported
//! grid, plus h-weighted norms.
//!
//! Conventions (0-based, `m = N - 1` interior nodes, boundaries q_0 = q_N = 0):
//!   d_minus: R^m -> R^{m+1},  out[i] = (v[i] - v[i-1]) / h
//!   d_plus = -(d_minus)^T: R^{m+1} -> R^m, out[i] = (w[i+1] - w[i]) / h
//!   d2 = d_plus . d_minus (the Dirichlet Laplacian)
//!
//! The `_trunc` variants drop the last d_minus output (the q_N boundary
//! interval); the nonlinear string energy sums over those first m difference
//! quotients only. Dense counterparts used by tests live in [`dense`].

/// Backward difference including both boundary rows; output length `v.len() + 1`.
pub fn d_minus(v: &[f64], h: f64) -> Vec<f64> {
    let mut out = vec![0.0; v.len() + 1];
    d_minus_into(v, h, &mut out);
    out
}

pub fn d_minus_into(v: &[f64], h: f64, out: &mut [f64]) {
    let m = v.len();
    debug_assert_eq!(out.len(), m + 1);
    let inv = 1.0 / h;
    out[0] = v[0] * inv;
    for i in 1..m {
        out[i] = (v[i] - v[i - 1]) * inv;
    }
    out[m] = -v[m - 1] * inv;
}

/// Negated transpose of [`d_minus`]; output length `w.len() - 1`.
pub fn d_plus(w: &[f64], h: f64) -> Vec<f64> {
    let mut out = vec![0.0; w.len() - 1];
    d_plus_into(w, h, &mut out);
    out
}

pub fn d_plus_into(w: &[f64], h: f64, out: &mut [f64]) {
    let m = w.len() - 1;
    debug_assert_eq!(out.len(), m);
    let inv = 1.0 / h;
    for i in 0..m {
        out[i] = (w[i + 1] - w[i]) * inv;
    }
}

/// Second difference d_plus ∘ d_minus; maps R^m -> R^m.
pub fn d2(v: &[f64], h: f64) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    d2_into(v, h, &mut out);
    out
}

pub fn d2_into(v: &[f64], h: f64, out: &mut [f64]) {
    let m = v.len();
    debug_assert_eq!(out.len(), m);
    let inv2 = 1.0 / (h * h);
    if m == 1 {
        out[0] = -2.0 * v[0] * inv2;
        return;
    }
    out[0] = (v[1] - 2.0 * v[0]) * inv2;
    for i in 1..m - 1 {
        out[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) * inv2;
    }
    out[m - 1] = (v[m - 2] - 2.0 * v[m - 1]) * inv2;
}

/// First m outputs of [`d_minus`] (drops the q_N boundary interval).
pub fn d_minus_trunc_into(v: &[f64], h: f64, out: &mut [f64]) {
    let m = v.len();
    debug_assert_eq!(out.len(), m);
    let inv = 1.0 / h;
    out[0] = v[0] * inv;
    for i in 1..m {
        out[i] = (v[i] - v[i - 1]) * inv;
    }
}

/// Transpose of the truncated backward difference: out[j] = (w[j] - w[j+1]) / h
/// with w[m] treated as zero.
pub fn d_minus_trunc_t_into(w: &[f64], h: f64, out: &mut [f64]) {
    let m = w.len();
    debug_assert_eq!(out.len(), m);
    let inv = 1.0 / h;
    for j in 0..m - 1 {
        out[j] = (w[j] - w[j + 1]) * inv;
    }
    out[m - 1] = w[m - 1] * inv;
}

/// h-weighted Euclidean norm sqrt(h · vᵀv).
pub fn norm_h(v: &[f64], h: f64) -> f64 {
    (h * dot(v, v)).sqrt()
}

/// Plain dot product, sequential accumulation (the tape mirrors this order).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Explicit dense operator matrices; test oracles and the dense
/// eigendecomposition cross-checks build on these.
pub mod dense {
    /// Dense d_minus as an (m+1) x m matrix, row-major.
    pub fn d_minus_matrix(m: usize, h: f64) -> Vec<Vec<f64>> {
        let inv = 1.0 / h;
        let mut a = vec![vec![0.0; m]; m + 1];
        for i in 0..=m {
            if i < m {
                a[i][i] = inv;
            }
            if i >= 1 {
                a[i][i - 1] = -inv;
            }
        }
        a
    }

    /// Dense d_plus as an m x (m+1) matrix.
    pub fn d_plus_matrix(m: usize, h: f64) -> Vec<Vec<f64>> {
        let dm = d_minus_matrix(m, h);
        let mut a = vec![vec![0.0; m + 1]; m];
        for i in 0..m {
            for j in 0..=m {
                a[i][j] = -dm[j][i];
            }
        }
        a
    }

    /// Dense Dirichlet Laplacian, m x m.
    pub fn d2_matrix(m: usize, h: f64) -> Vec<Vec<f64>> {
        let dp = d_plus_matrix(m, h);
        let dm = d_minus_matrix(m, h);
        matmul(&dp, &dm)
    }

    pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let (m, k, n) = (a.len(), b.len(), b[0].len());
        let mut out = vec![vec![0.0; n]; m];
        for i in 0..m {
            for l in 0..k {
                let ail = a[i][l];
                for j in 0..n {
                    out[i][j] += ail * b[l][j];
                }
            }
        }
        out
    }

    pub fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter().map(|row| super::dot(row, x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn randv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn d_minus_zero_is_zero() {
        assert!(d_minus(&[0.0; 7], 0.1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn d_minus_small_case() {
        // N = 3, h = 0.5, zero boundaries
        assert_eq!(d_minus(&[1.0, 2.0], 0.5), vec![2.0, 2.0, -4.0]);
    }

    #[test]
    fn d_plus_zero_is_zero() {
        assert!(d_plus(&[0.0; 8], 0.25).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn d_plus_small_case_matches_transpose_convention() {
        assert_eq!(d_plus(&[1.0, 0.0, 1.0], 1.0), vec![-1.0, 1.0]);
    }

    #[test]
    fn d_plus_is_negated_transpose_of_d_minus() {
        let (m, h) = (9, 0.07);
        let dp = dense::d_plus_matrix(m, h);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = randv(&mut rng, m + 1);
        let fast = d_plus(&w, h);
        let via_matrix = dense::matvec(&dp, &w);
        for i in 0..m {
            assert!((fast[i] - via_matrix[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn adjoint_identity() {
        // <d_minus(u), w> = -<u, d_plus(w)>
        let (m, h) = (13, 0.031);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let u = randv(&mut rng, m);
            let w = randv(&mut rng, m + 1);
            let lhs = dot(&d_minus(&u, h), &w);
            let rhs = -dot(&u, &d_plus(&w, h));
            assert!(rel_err(lhs, rhs) < 1e-13 || (lhs - rhs).abs() < 1e-13);
        }
    }

    #[test]
    fn d2_matches_classic_stencil() {
        let (m, h) = (11, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = randv(&mut rng, m);
        let out = d2(&v, h);
        for i in 0..m {
            let left = if i > 0 { v[i - 1] } else { 0.0 };
            let right = if i + 1 < m { v[i + 1] } else { 0.0 };
            let expect = (left - 2.0 * v[i] + right) / (h * h);
            assert!((out[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn d2_eigenvectors() {
        // v[s] = sin(pi k s / N) has eigenvalue -(4/h^2) sin^2(pi k / 2N)
        let n = 16usize;
        let h = 0.05;
        for k in 1..n {
            let v: Vec<f64> = (1..n)
                .map(|s| (std::f64::consts::PI * k as f64 * s as f64 / n as f64).sin())
                .collect();
            let lam = -(4.0 / (h * h))
                * (std::f64::consts::PI * k as f64 / (2.0 * n as f64)).sin().powi(2);
            let av = d2(&v, h);
            for s in 0..n - 1 {
                assert!(
                    (av[s] - lam * v[s]).abs() < 1e-8 * (1.0 / (h * h)),
                    "mode {k} node {s}: {} vs {}",
                    av[s],
                    lam * v[s]
                );
            }
        }
    }

    #[test]
    fn d2_symmetry() {
        let (m, h) = (10, 0.11);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let u = randv(&mut rng, m);
            let v = randv(&mut rng, m);
            let lhs = dot(&d2(&u, h), &v);
            let rhs = dot(&u, &d2(&v, h));
            assert!(rel_err(lhs, rhs) < 1e-13 || (lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn d2_negative_semidefinite() {
        let (m, h) = (10, 0.11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let v = randv(&mut rng, m);
            assert!(dot(&v, &d2(&v, h)) <= 0.0);
        }
    }

    #[test]
    fn trunc_is_prefix_of_full() {
        let (m, h) = (8, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v = randv(&mut rng, m);
        let full = d_minus(&v, h);
        let mut tr = vec![0.0; m];
        d_minus_trunc_into(&v, h, &mut tr);
        assert_eq!(&full[..m], &tr[..]);
    }

    #[test]
    fn trunc_transpose_is_adjoint() {
        // <d_minus_trunc(u), w> = <u, d_minus_trunc_t(w)>
        let (m, h) = (8, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let u = randv(&mut rng, m);
            let w = randv(&mut rng, m);
            let mut du = vec![0.0; m];
            d_minus_trunc_into(&u, h, &mut du);
            let mut tw = vec![0.0; m];
            d_minus_trunc_t_into(&w, h, &mut tw);
            let lhs = dot(&du, &w);
            let rhs = dot(&u, &tw);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn norm_h_cases() {
        assert_eq!(norm_h(&[3.0, 4.0], 1.0), 5.0);
        assert_eq!(norm_h(&[0.0; 12], 0.3), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = randv(&mut rng, 9);
        let a = -2.73;
        assert!(rel_err(norm_h(&v.iter().map(|x| a * x).collect::<Vec<_>>(), 0.2),
                        a.abs() * norm_h(&v, 0.2)) < 1e-13);
    }

    #[test]
    fn operators_are_linear() {
        let (m, h) = (9, 0.17);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = randv(&mut rng, m);
        let v = randv(&mut rng, m);
        let (a, b) = (1.7, -0.4);
        let comb: Vec<f64> = (0..m).map(|i| a * u[i] + b * v[i]).collect();
        let lhs = d2(&comb, h);
        let du = d2(&u, h);
        let dv = d2(&v, h);
        for i in 0..m {
            let rhs = a * du[i] + b * dv[i];
            assert!((lhs[i] - rhs).abs() < 1e-13 * (1.0 / (h * h)));
        }
    }
}
