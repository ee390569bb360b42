//! The nonnegative energy network: a kernel-2 convolution feeding a scalar
//! MLP applied per grid interval, squared and h-summed. The analytic input
//! gradient is built as an explicit first-order graph (forward-mode scalar
//! derivative through the MLP), so training gradients flow through it.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::nn::tape::{Tape, TensorId};
use crate::nn::{linalg, Shape, Tensor};
use crate::sav::NonlinearEnergy;

/// Full kernel-2 convolution with zero boundaries (one output per grid
/// interval, input length + 1 outputs); reproduces the backward difference
/// for kernel [1/h, −1/h].
pub fn conv_k2(q: &[f64], kernel: &[f64; 2]) -> Vec<f64> {
    linalg::conv_k2_full(q, kernel[0], kernel[1])
}

/// Learned non-quadratic Hamiltonian H(q) = h Σ_s f_MLP((k * q)_s)².
///
/// The sum runs over the first N−1 convolution outputs, mirroring the
/// truncated analytic energy it must absorb.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyNetwork {
    /// Grid spacing baked into the Riemann sum (fixed, not learned).
    pub h: f64,
    /// LeakyReLU negative slope.
    pub alpha: f64,
    /// Hidden layer widths.
    pub widths: Vec<usize>,
    /// Length-2 convolution kernel (learnable).
    pub kernel: Tensor,
    /// widths[0]×1, widths[i]×widths[i−1], …, 1×widths.last().
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

pub const DEFAULT_HIDDEN: [usize; 5] = [100, 100, 100, 100, 100];
pub const DEFAULT_ALPHA: f64 = 0.01;
/// Relative noise applied to the difference-kernel initialization.
pub const KERNEL_INIT_NOISE: f64 = 1e-2;

impl EnergyNetwork {
    /// Fresh network with the default five 100-unit hidden layers.
    pub fn new(h: f64, seed: u64) -> Self {
        Self::with_widths(h, seed, &DEFAULT_HIDDEN)
    }

    /// Kernel starts at the backward-difference stencil [1/h, −1/h] with
    /// small relative noise; dense layers use uniform fan-in scaling.
    pub fn with_widths(h: f64, seed: u64, widths: &[usize]) -> Self {
        assert!(!widths.is_empty(), "energy network needs hidden layers");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uni = |bound: f64| (rng.gen::<f64>() * 2.0 - 1.0) * bound;

        let kernel = Tensor::vector(vec![
            (1.0 / h) * (1.0 + KERNEL_INIT_NOISE * uni(1.0)),
            (-1.0 / h) * (1.0 + KERNEL_INIT_NOISE * uni(1.0)),
        ]);

        let mut dims = Vec::with_capacity(widths.len() + 1);
        let mut prev = 1usize;
        for &w in widths {
            dims.push((w, prev));
            prev = w;
        }
        dims.push((1, prev));

        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (rows, cols) in dims {
            let bound = 1.0 / (cols as f64).sqrt();
            let w: Vec<f64> = (0..rows * cols).map(|_| uni(bound)).collect();
            let b: Vec<f64> = (0..rows).map(|_| uni(bound)).collect();
            weights.push(Tensor::matrix(rows, cols, w));
            biases.push(Tensor::vector(b));
        }

        EnergyNetwork {
            h,
            alpha: DEFAULT_ALPHA,
            widths: widths.to_vec(),
            kernel,
            weights,
            biases,
        }
    }

    fn depth(&self) -> usize {
        self.widths.len()
    }

    /// Plain forward pass; returns the per-interval MLP outputs `a` (row of
    /// length m) and pre-activations when requested.
    fn forward_rows(&self, q: &[f64], keep_pre: bool) -> (Vec<f64>, Vec<Vec<f64>>) {
        let m = q.len();
        let mut z = vec![0.0; m];
        linalg::conv_k2_trunc(q, self.kernel.data[0], self.kernel.data[1], &mut z);

        let mut x = z;
        let mut rows = 1usize;
        let mut pres = Vec::new();
        for l in 0..self.depth() {
            let w = &self.weights[l];
            let (r, c) = match w.shape {
                Shape::Matrix(r, c) => (r, c),
                _ => unreachable!(),
            };
            debug_assert_eq!(c, rows);
            let mut u = vec![0.0; r * m];
            linalg::matmul(r, c, m, &w.data, &x, &mut u);
            let b = &self.biases[l].data;
            for i in 0..r {
                for j in 0..m {
                    u[i * m + j] += b[i];
                }
            }
            let act: Vec<f64> = u.iter().map(|&v| super::leaky_relu(v, self.alpha)).collect();
            if keep_pre {
                pres.push(u);
            }
            x = act;
            rows = r;
        }
        let wl = &self.weights[self.depth()];
        let (r, c) = match wl.shape {
            Shape::Matrix(r, c) => (r, c),
            _ => unreachable!(),
        };
        debug_assert_eq!((r, c), (1, rows));
        let mut a = vec![0.0; m];
        linalg::matmul(1, c, m, &wl.data, &x, &mut a);
        let bl = self.biases[self.depth()].data[0];
        for v in a.iter_mut() {
            *v += bl;
        }
        (a, pres)
    }

    /// H(q) = h · Σ a_s².
    pub fn energy_forward(&self, q: &[f64]) -> f64 {
        let (a, _) = self.forward_rows(q, false);
        let mut s = 0.0;
        for &ai in &a {
            s += ai * ai;
        }
        self.h * s
    }

    /// Analytic ∇_q H via the forward-mode scalar derivative of the MLP.
    pub fn energy_grad_q(&self, q: &[f64], out: &mut [f64]) {
        let m = q.len();
        let (a, pres) = self.forward_rows(q, true);

        // forward-mode derivative chain J = d f_MLP / d z per column
        let mut j = vec![1.0; m];
        let mut rows = 1usize;
        for l in 0..self.depth() {
            let w = &self.weights[l];
            let (r, c) = match w.shape {
                Shape::Matrix(r, c) => (r, c),
                _ => unreachable!(),
            };
            let mut jm = vec![0.0; r * m];
            linalg::matmul(r, c, m, &w.data, &j, &mut jm);
            let u = &pres[l];
            for i in 0..r * m {
                jm[i] = super::leaky_relu_deriv(u[i], self.alpha) * jm[i];
            }
            j = jm;
            rows = r;
        }
        let wl = &self.weights[self.depth()];
        let mut jout = vec![0.0; m];
        linalg::matmul(1, rows, m, &wl.data, &j, &mut jout);

        let mut w = vec![0.0; m];
        for s in 0..m {
            w[s] = 2.0 * (a[s] * jout[s]);
        }
        let mut ct = vec![0.0; m];
        linalg::conv_k2_trunc_t(&w, self.kernel.data[0], self.kernel.data[1], &mut ct);
        for s in 0..m {
            out[s] = self.h * ct[s];
        }
    }
}

impl NonlinearEnergy for EnergyNetwork {
    fn value(&self, q: &[f64]) -> f64 {
        self.energy_forward(q)
    }

    fn grad_into(&self, q: &[f64], out: &mut [f64]) {
        self.energy_grad_q(q, out)
    }
}

/// Tape handles for the network parameters within one recording.
#[derive(Debug, Clone)]
pub struct EnergyNetIds {
    pub kernel: TensorId,
    pub weights: Vec<TensorId>,
    pub biases: Vec<TensorId>,
}

impl EnergyNetwork {
    pub fn register(&self, tape: &mut Tape) -> EnergyNetIds {
        EnergyNetIds {
            kernel: tape.leaf(self.kernel.clone()),
            weights: self.weights.iter().map(|w| tape.leaf(w.clone())).collect(),
            biases: self.biases.iter().map(|b| tape.leaf(b.clone())).collect(),
        }
    }

    /// Records H(q) on the tape; arithmetic mirrors [`Self::energy_forward`]
    /// bit for bit.
    pub fn tape_value(&self, tape: &mut Tape, ids: &EnergyNetIds, q: TensorId) -> TensorId {
        let (h, _, _) = self.tape_tower(tape, ids, q, false);
        h
    }

    /// Records H(q) and ∇_q H(q) on the tape.
    pub fn tape_value_grad(
        &self,
        tape: &mut Tape,
        ids: &EnergyNetIds,
        q: TensorId,
    ) -> (TensorId, TensorId) {
        let (h, g, _) = self.tape_tower(tape, ids, q, true);
        (h, g.expect("gradient requested"))
    }

    fn tape_tower(
        &self,
        tape: &mut Tape,
        ids: &EnergyNetIds,
        q: TensorId,
        with_grad: bool,
    ) -> (TensorId, Option<TensorId>, usize) {
        let m = tape.value(q).data.len();
        let z = tape.conv_k2_trunc(q, ids.kernel);
        let mut x = tape.reshape(z, Shape::Matrix(1, m));
        let mut pres = Vec::new();
        for l in 0..self.depth() {
            let mm = tape.matmul(ids.weights[l], x);
            let u = tape.bias_add_col(mm, ids.biases[l]);
            x = tape.leaky_relu(u, self.alpha);
            pres.push(u);
        }
        let mm = tape.matmul(ids.weights[self.depth()], x);
        let a = tape.bias_add_col(mm, ids.biases[self.depth()]);
        let sq = tape.powi(a, 2);
        let s = tape.sum(sq);
        let h_id = tape.scale(s, self.h);

        if !with_grad {
            return (h_id, None, m);
        }

        let ones = tape.leaf(Tensor::matrix(1, m, vec![1.0; m]));
        let mut j = ones;
        for l in 0..self.depth() {
            let jm = tape.matmul(ids.weights[l], j);
            let d = tape.leaky_relu_deriv(pres[l], self.alpha);
            j = tape.mul_elem(d, jm);
        }
        let jout = tape.matmul(ids.weights[self.depth()], j);
        let aj = tape.mul_elem(a, jout);
        let w = tape.scale(aj, 2.0);
        let wv = tape.reshape(w, Shape::Vector(m));
        let ct = tape.conv_k2_trunc_t(wv, ids.kernel);
        let g = tape.scale(ct, self.h);
        (h_id, Some(g), m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics;
    
    use rand_chacha::ChaCha8Rng;

    fn randq(rng: &mut ChaCha8Rng, m: usize, scale: f64) -> Vec<f64> {
        (0..m).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale).collect()
    }

    #[test]
    fn conv_with_difference_kernel_reproduces_d_minus() {
        let h = 0.21;
        let q = [0.4, -0.7, 0.2, 0.9, -0.3];
        let z = conv_k2(&q, &[1.0 / h, -1.0 / h]);
        let dm = crate::stencil::d_minus(&q, h);
        assert_eq!(z.len(), dm.len());
        for i in 0..z.len() {
            assert!((z[i] - dm[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn conv_is_bilinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let q: Vec<f64> = randq(&mut rng, 6, 1.0);
        let r: Vec<f64> = randq(&mut rng, 6, 1.0);
        let k = [0.7, -1.3];
        let zq = conv_k2(&q, &k);
        let zr = conv_k2(&r, &k);
        let mix: Vec<f64> = q.iter().zip(&r).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let zmix = conv_k2(&mix, &k);
        for i in 0..zmix.len() {
            assert!((zmix[i] - (2.0 * zq[i] - 0.5 * zr[i])).abs() < 1e-12);
        }
        let k2 = [1.4, -2.6];
        let z2 = conv_k2(&q, &k2);
        for i in 0..z2.len() {
            assert!((z2[i] - 2.0 * zq[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_gives_zero_conv() {
        assert!(conv_k2(&[0.0; 9], &[3.0, -2.0]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn energy_is_nonnegative_and_zero_with_zero_head() {
        let mut net = EnergyNetwork::with_widths(0.05, 7, &[12, 12]);
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..20 {
            let q = randq(&mut rng, 9, 1e-2);
            assert!(net.energy_forward(&q) >= 0.0);
        }
        let d = net.weights.len() - 1;
        net.weights[d].data.fill(0.0);
        net.biases[d].data.fill(0.0);
        let q = randq(&mut rng, 9, 1e-2);
        assert_eq!(net.energy_forward(&q), 0.0);
        let mut g = vec![0.0; 9];
        net.energy_grad_q(&q, &mut g);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn analytic_substitution_recovers_h_nl() {
        // With kernel [1/h, -1/h] and the scalar map x -> sqrt(c) x², the
        // conv→map→square→h-sum pipeline is exactly the quartic energy, and
        // its forward-mode gradient matches grad_h_nl.
        let h = 1.1 / 8.0;
        let c: f64 = 1.2345e4;
        let sqrt_c = c.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let m = 7;
        for _ in 0..10 {
            let q = randq(&mut rng, m, 1e-2);
            let mut z = vec![0.0; m];
            linalg::conv_k2_trunc(&q, 1.0 / h, -1.0 / h, &mut z);
            let a: Vec<f64> = z.iter().map(|&x| sqrt_c * (x * x)).collect();
            let energy = h * a.iter().map(|&x| x * x).sum::<f64>();
            let expect = physics::h_nl_raw(c, h, &q);
            assert!(
                (energy - expect).abs() <= 1e-13 * expect.abs().max(1e-30),
                "{energy} vs {expect}"
            );

            // gradient via the same explicit pipeline
            let fprime: Vec<f64> = z.iter().map(|&x| sqrt_c * 2.0 * x).collect();
            let w: Vec<f64> = (0..m).map(|s| 2.0 * a[s] * fprime[s]).collect();
            let mut ct = vec![0.0; m];
            linalg::conv_k2_trunc_t(&w, 1.0 / h, -1.0 / h, &mut ct);
            let grad_pipeline: Vec<f64> = ct.iter().map(|&x| h * x).collect();
            let mut grad_ref = vec![0.0; m];
            physics::grad_h_nl_raw(c, h, &q, &mut grad_ref);
            for i in 0..m {
                assert!(
                    (grad_pipeline[i] - grad_ref[i]).abs()
                        <= 1e-13 * grad_ref[i].abs().max(1e-20),
                    "component {i}"
                );
            }
        }
    }

    #[test]
    fn energy_grad_matches_finite_differences() {
        let net = EnergyNetwork::with_widths(0.1, 13, &[10, 10, 10]);
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let m = 7;
        for _ in 0..5 {
            let q = randq(&mut rng, m, 1e-2);
            let mut g = vec![0.0; m];
            net.energy_grad_q(&q, &mut g);
            let step = 1e-7;
            let mut fd = vec![0.0; m];
            let mut qp = q.clone();
            for i in 0..m {
                qp[i] = q[i] + step;
                let fp = net.energy_forward(&qp);
                qp[i] = q[i] - step;
                let fm = net.energy_forward(&qp);
                qp[i] = q[i];
                fd[i] = (fp - fm) / (2.0 * step);
            }
            let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum();
            let den: f64 = g.iter().map(|x| x * x).sum();
            assert!(num.sqrt() < 1e-7 * den.sqrt().max(1e-12));
        }
    }

    #[test]
    fn tape_tower_matches_plain_bit_for_bit() {
        let net = EnergyNetwork::with_widths(0.0625, 19, &[9, 9]);
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let m = 6;
        for _ in 0..5 {
            let q = randq(&mut rng, m, 1e-2);
            let mut tape = Tape::new();
            let ids = net.register(&mut tape);
            let qid = tape.leaf_vector(&q);
            let (h_id, g_id) = net.tape_value_grad(&mut tape, &ids, qid);
            let h_tape = tape.scalar_value(h_id);
            let g_tape = tape.value(g_id).data.clone();

            let h_plain = net.energy_forward(&q);
            let mut g_plain = vec![0.0; m];
            net.energy_grad_q(&q, &mut g_plain);

            assert_eq!(h_tape, h_plain);
            assert_eq!(g_tape, g_plain);
        }
    }

    #[test]
    fn tape_gradients_of_energy_match_fd_for_all_parameters() {
        // dH/dθ for kernel and every MLP weight via the tape equals central
        // finite differences of the plain forward.
        let mut net = EnergyNetwork::with_widths(0.08, 3, &[6, 6]);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let q = randq(&mut rng, 5, 2e-2);

        let mut tape = Tape::new();
        let ids = net.register(&mut tape);
        let qid = tape.leaf_vector(&q);
        let h_id = net.tape_value(&mut tape, &ids, qid);
        tape.backward(h_id).unwrap();

        let eps = 1e-6;
        // kernel
        let gk = tape.grad(ids.kernel).unwrap().to_vec();
        for c in 0..2 {
            let orig = net.kernel.data[c];
            net.kernel.data[c] = orig + eps;
            let fp = net.energy_forward(&q);
            net.kernel.data[c] = orig - eps;
            let fm = net.energy_forward(&q);
            net.kernel.data[c] = orig;
            let fd = (fp - fm) / (2.0 * eps);
            assert!(
                (gk[c] - fd).abs() <= 1e-6 * fd.abs().max(1e-8),
                "kernel[{c}]: {} vs {}",
                gk[c],
                fd
            );
        }
        // a few weights from each layer
        for l in 0..net.weights.len() {
            let gw = tape.grad(ids.weights[l]).unwrap().to_vec();
            let count = net.weights[l].data.len();
            for idx in [0, count / 2, count - 1] {
                let orig = net.weights[l].data[idx];
                net.weights[l].data[idx] = orig + eps;
                let fp = net.energy_forward(&q);
                net.weights[l].data[idx] = orig - eps;
                let fm = net.energy_forward(&q);
                net.weights[l].data[idx] = orig;
                let fd = (fp - fm) / (2.0 * eps);
                assert!(
                    (gw[idx] - fd).abs() <= 1e-5 * fd.abs().max(1e-7),
                    "w{l}[{idx}]: {} vs {}",
                    gw[idx],
                    fd
                );
            }
        }
    }
}
