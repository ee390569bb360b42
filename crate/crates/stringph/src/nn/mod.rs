//! Minimal tensor library with reverse-mode automatic differentiation and
//! the layers the identification models need: a kernel-2 convolution, scalar
//! MLPs with LeakyReLU, the nonnegative energy network and its analytic
//! input-gradient, a baseline MLP, and Adam.

pub mod adam;
pub mod baseline;
pub mod energy;
pub mod linalg;
pub mod tape;

pub use adam::{AdamConfig, AdamState};
pub use baseline::BaselineNet;
pub use energy::EnergyNetwork;
pub use tape::{Tape, TensorId};

/// Tensor shapes are at most rank 2; matrices are row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dense 64-bit tensor; the optional gradient lives on the tape, not here.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: Shape::Scalar,
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: Shape::Vector(data.len()),
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Tensor {
            shape: Shape::Matrix(rows, cols),
            data,
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn as_scalar(&self) -> f64 {
        debug_assert_eq!(self.shape, Shape::Scalar);
        self.data[0]
    }
}

/// Named parameter collection shared by checkpointing, Adam and the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    pub entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> usize {
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
            trainable,
        });
        self.entries.len() - 1
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|e| e.name == name)
            .map(|e| &mut e.tensor)
    }

    pub fn trainable_indices(&self) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].trainable)
            .collect()
    }

    /// Total number of trainable scalars.
    pub fn trainable_len(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.data.len())
            .sum()
    }
}

/// LeakyReLU and its derivative; the derivative at exactly zero uses the
/// negative slope.
#[inline]
pub fn leaky_relu(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * x
    }
}

#[inline]
pub fn leaky_relu_deriv(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        alpha
    }
}

/// Integer power as a left-to-right product chain; the plain physics kernels
/// use the same association.
#[inline]
pub fn powi_chain(x: f64, p: u32) -> f64 {
    debug_assert!(p >= 1);
    let mut acc = x;
    for _ in 1..p {
        acc *= x;
    }
    acc
}
