//! Flat row-major matrix kernels for the tape and the plain inference path.
//! The ikj loop order keeps the inner loop contiguous so it autovectorizes;
//! per-element accumulation order is fixed and shared by both paths.

/// out = A(m×k) · B(k×n), overwriting out.
pub fn matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    matmul_acc(m, k, n, a, b, out);
}

/// out += A(m×k) · B(k×n).
pub fn matmul_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (l, &ail) in arow.iter().enumerate() {
            if ail == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for j in 0..n {
                orow[j] += ail * brow[j];
            }
        }
    }
}

/// out += Aᵀ(k×m transposed view of A m×k) · G(m×n); used for dB in the
/// matmul pullback.
pub fn matmul_at_acc(m: usize, k: usize, n: usize, a: &[f64], g: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (l, &ail) in arow.iter().enumerate() {
            if ail == 0.0 {
                continue;
            }
            let orow = &mut out[l * n..(l + 1) * n];
            for j in 0..n {
                orow[j] += ail * grow[j];
            }
        }
    }
}

/// out += G(m×n) · Bᵀ(n×k transposed view of B k×n); used for dA in the
/// matmul pullback.
pub fn matmul_bt_acc(m: usize, k: usize, n: usize, g: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for l in 0..k {
            let brow = &b[l * n..(l + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += grow[j] * brow[j];
            }
            orow[l] += acc;
        }
    }
}

/// Truncated kernel-2 convolution z_s = k1 q_s + k2 q_{s-1}, s over the first
/// m outputs (zero left boundary).
pub fn conv_k2_trunc(q: &[f64], k1: f64, k2: f64, out: &mut [f64]) {
    let m = q.len();
    debug_assert_eq!(out.len(), m);
    out[0] = k1 * q[0];
    for j in 1..m {
        out[j] = k1 * q[j] + k2 * q[j - 1];
    }
}

/// Transpose of [`conv_k2_trunc`]: out_j = k1 w_j + k2 w_{j+1} with w_m = 0.
pub fn conv_k2_trunc_t(w: &[f64], k1: f64, k2: f64, out: &mut [f64]) {
    let m = w.len();
    debug_assert_eq!(out.len(), m);
    for j in 0..m - 1 {
        out[j] = k1 * w[j] + k2 * w[j + 1];
    }
    out[m - 1] = k1 * w[m - 1];
}

/// Full kernel-2 convolution with zero boundaries on both ends; output has
/// one more entry than the input and reproduces the backward difference for
/// k = [1/h, -1/h].
pub fn conv_k2_full(q: &[f64], k1: f64, k2: f64) -> Vec<f64> {
    let m = q.len();
    let mut out = vec![0.0; m + 1];
    out[0] = k1 * q[0];
    for j in 1..m {
        out[j] = k1 * q[j] + k2 * q[j - 1];
    }
    out[m] = k2 * q[m - 1];
    out
}
