//! Black-box baseline: an MLP that maps the standardized current state and
//! input straight to the next staggered state.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::nn::tape::{Tape, TensorId};
use crate::nn::{linalg, Shape, Tensor};

pub const DEFAULT_HIDDEN: [usize; 5] = [256, 256, 256, 256, 256];

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineNet {
    pub alpha: f64,
    pub in_dim: usize,
    pub out_dim: usize,
    pub widths: Vec<usize>,
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
    /// Per-feature input standardization, set from training-set statistics.
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
}

impl BaselineNet {
    pub fn new(interior: usize, seed: u64) -> Self {
        Self::with_widths(interior, seed, &DEFAULT_HIDDEN)
    }

    pub fn with_widths(interior: usize, seed: u64, widths: &[usize]) -> Self {
        let in_dim = 2 * interior + 2;
        let out_dim = 2 * interior;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uni = |bound: f64| (rng.gen::<f64>() * 2.0 - 1.0) * bound;

        let mut dims = Vec::new();
        let mut prev = in_dim;
        for &w in widths {
            dims.push((w, prev));
            prev = w;
        }
        dims.push((out_dim, prev));

        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (rows, cols) in dims {
            let bound = 1.0 / (cols as f64).sqrt();
            weights.push(Tensor::matrix(
                rows,
                cols,
                (0..rows * cols).map(|_| uni(bound)).collect(),
            ));
            biases.push(Tensor::vector((0..rows).map(|_| uni(bound)).collect()));
        }

        BaselineNet {
            alpha: 0.01,
            in_dim,
            out_dim,
            widths: widths.to_vec(),
            weights,
            biases,
            input_mean: vec![0.0; in_dim],
            input_std: vec![1.0; in_dim],
        }
    }

    pub fn set_input_stats(&mut self, mean: Vec<f64>, std: Vec<f64>) {
        assert_eq!(mean.len(), self.in_dim);
        assert_eq!(std.len(), self.in_dim);
        self.input_mean = mean;
        self.input_std = std.into_iter().map(|s| s.max(1e-12)).collect();
    }

    fn standardization(&self) -> (Vec<f64>, Vec<f64>) {
        let scale: Vec<f64> = self.input_std.iter().map(|s| 1.0 / s).collect();
        let shift: Vec<f64> = self
            .input_mean
            .iter()
            .zip(&scale)
            .map(|(m, sc)| -m * sc)
            .collect();
        (scale, shift)
    }

    /// Plain forward for recursive rollout.
    pub fn forward(&self, input: &[f64], out: &mut [f64]) {
        assert_eq!(input.len(), self.in_dim);
        assert_eq!(out.len(), self.out_dim);
        let (scale, shift) = self.standardization();
        let mut x: Vec<f64> = (0..self.in_dim)
            .map(|i| input[i] * scale[i] + shift[i])
            .collect();
        for l in 0..self.widths.len() {
            let w = &self.weights[l];
            let (r, c) = match w.shape {
                Shape::Matrix(r, c) => (r, c),
                _ => unreachable!(),
            };
            let mut u = vec![0.0; r];
            linalg::matmul(r, c, 1, &w.data, &x, &mut u);
            for i in 0..r {
                u[i] += self.biases[l].data[i];
            }
            for v in u.iter_mut() {
                *v = super::leaky_relu(*v, self.alpha);
            }
            x = u;
        }
        let w = &self.weights[self.widths.len()];
        let (r, c) = match w.shape {
            Shape::Matrix(r, c) => (r, c),
            _ => unreachable!(),
        };
        linalg::matmul(r, c, 1, &w.data, &x, out);
        for i in 0..r {
            out[i] += self.biases[self.widths.len()].data[i];
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineIds {
    pub weights: Vec<TensorId>,
    pub biases: Vec<TensorId>,
}

impl BaselineNet {
    pub fn register(&self, tape: &mut Tape) -> BaselineIds {
        BaselineIds {
            weights: self.weights.iter().map(|w| tape.leaf(w.clone())).collect(),
            biases: self.biases.iter().map(|b| tape.leaf(b.clone())).collect(),
        }
    }

    /// Records the forward pass on the tape; mirrors [`Self::forward`].
    pub fn tape_forward(&self, tape: &mut Tape, ids: &BaselineIds, input: TensorId) -> TensorId {
        let (scale, shift) = self.standardization();
        let mut x = tape.mul_add_const(input, &scale, &shift);
        for l in 0..self.widths.len() {
            let mm = tape.matmul(ids.weights[l], x);
            let u = tape.bias_add_col(mm, ids.biases[l]);
            x = tape.leaky_relu(u, self.alpha);
        }
        let mm = tape.matmul(ids.weights[self.widths.len()], x);
        tape.bias_add_col(mm, ids.biases[self.widths.len()])
    }
}
