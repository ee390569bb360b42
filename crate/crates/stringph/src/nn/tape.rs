//! Reverse-mode automatic differentiation over tensor primitives.
//!
//! The tape is an eager arena: every operation computes its value on entry
//! and records enough context for the vector-Jacobian product. `backward`
//! walks the records once in reverse topological (= insertion) order.
//! A tape is single-context; `reset` bumps an epoch so ids from earlier
//! passes are rejected instead of silently reading stale storage.

use crate::error::{Error, Result};
use crate::nn::{linalg, Shape, Tensor};
use crate::stencil;

/// Handle to a node on a specific tape epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId {
    idx: u32,
    epoch: u32,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    MulElem(TensorId, TensorId),
    Scale(TensorId, f64),
    AddConst(TensorId),
    /// scalar node × tensor node
    SMul(TensorId, TensorId),
    /// tensor node ÷ scalar node
    SDiv(TensorId, TensorId),
    Dot(TensorId, TensorId),
    Sum(TensorId),
    Abs(TensorId),
    Powi(TensorId, u32),
    Sqrt(TensorId),
    Exp(TensorId),
    MatMul(TensorId, TensorId),
    BiasAddCol(TensorId, TensorId),
    LeakyRelu(TensorId, f64),
    ConvK2Trunc(TensorId, TensorId),
    ConvK2TruncT(TensorId, TensorId),
    DMinusTrunc(TensorId, f64),
    DMinusTruncT(TensorId, f64),
    D2(TensorId, f64),
    NeighborSum(TensorId),
    TriSolve {
        a: TensorId,
        b: TensorId,
        rhs: TensorId,
    },
    Concat(Vec<TensorId>),
    Slice {
        x: TensorId,
        start: usize,
    },
    Reshape(TensorId),
    /// out = x ∘ scale + shift with constant vectors.
    MulAddConst { x: TensorId, scale: Vec<f64> },
}

struct Node {
    op: Op,
    val: Tensor,
}

/// The recording context. One forward+backward pass at a time.
pub struct Tape {
    epoch: u32,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            epoch: 0,
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    /// Discards all nodes and invalidates outstanding ids.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.epoch = self.epoch.wrapping_add(1);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, val: Tensor) -> TensorId {
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node { op, val });
        TensorId {
            idx,
            epoch: self.epoch,
        }
    }

    fn check(&self, id: TensorId) -> usize {
        assert_eq!(
            id.epoch, self.epoch,
            "tensor id from a stale tape epoch used in an operation"
        );
        id.idx as usize
    }

    /// Value of a node.
    pub fn value(&self, id: TensorId) -> &Tensor {
        let i = self.check(id);
        &self.nodes[i].val
    }

    pub fn scalar_value(&self, id: TensorId) -> f64 {
        self.value(id).as_scalar()
    }

    /// Gradient of the last `backward` root with respect to `id`, if any
    /// gradient reached it.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        let i = self.check(id);
        self.grads.get(i).and_then(|g| g.as_deref())
    }

    // -- leaves ------------------------------------------------------------

    pub fn leaf(&mut self, t: Tensor) -> TensorId {
        self.push(Op::Leaf, t)
    }

    pub fn leaf_scalar(&mut self, v: f64) -> TensorId {
        self.leaf(Tensor::scalar(v))
    }

    pub fn leaf_vector(&mut self, v: &[f64]) -> TensorId {
        self.leaf(Tensor::vector(v.to_vec()))
    }

    // -- elementwise -------------------------------------------------------

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ia, ib) = (self.check(a), self.check(b));
        let (ta, tb) = (&self.nodes[ia].val, &self.nodes[ib].val);
        assert_eq!(ta.shape, tb.shape, "add shapes");
        let data: Vec<f64> = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let shape = ta.shape;
        self.push(Op::Add(a, b), Tensor { shape, data })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ia, ib) = (self.check(a), self.check(b));
        let (ta, tb) = (&self.nodes[ia].val, &self.nodes[ib].val);
        assert_eq!(ta.shape, tb.shape, "sub shapes");
        let data: Vec<f64> = ta.data.iter().zip(&tb.data).map(|(x, y)| x - y).collect();
        let shape = ta.shape;
        self.push(Op::Sub(a, b), Tensor { shape, data })
    }

    pub fn mul_elem(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ia, ib) = (self.check(a), self.check(b));
        let (ta, tb) = (&self.nodes[ia].val, &self.nodes[ib].val);
        assert_eq!(ta.shape, tb.shape, "mul_elem shapes");
        let data: Vec<f64> = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let shape = ta.shape;
        self.push(Op::MulElem(a, b), Tensor { shape, data })
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let ia = self.check(a);
        let ta = &self.nodes[ia].val;
        let data: Vec<f64> = ta.data.iter().map(|x| c * x).collect();
        let shape = ta.shape;
        self.push(Op::Scale(a, c), Tensor { shape, data })
    }

    pub fn add_const(&mut self, a: TensorId, c: f64) -> TensorId {
        let ia = self.check(a);
        let ta = &self.nodes[ia].val;
        let data: Vec<f64> = ta.data.iter().map(|x| x + c).collect();
        let shape = ta.shape;
        self.push(Op::AddConst(a), Tensor { shape, data })
    }

    pub fn smul(&mut self, s: TensorId, x: TensorId) -> TensorId {
        let (is, ix) = (self.check(s), self.check(x));
        assert_eq!(self.nodes[is].val.shape, Shape::Scalar, "smul scalar arg");
        let sv = self.nodes[is].val.data[0];
        let tx = &self.nodes[ix].val;
        let data: Vec<f64> = tx.data.iter().map(|x| sv * x).collect();
        let shape = tx.shape;
        self.push(Op::SMul(s, x), Tensor { shape, data })
    }

    pub fn sdiv(&mut self, x: TensorId, s: TensorId) -> TensorId {
        let (ix, is) = (self.check(x), self.check(s));
        assert_eq!(self.nodes[is].val.shape, Shape::Scalar, "sdiv scalar arg");
        let sv = self.nodes[is].val.data[0];
        let tx = &self.nodes[ix].val;
        let data: Vec<f64> = tx.data.iter().map(|x| x / sv).collect();
        let shape = tx.shape;
        self.push(Op::SDiv(x, s), Tensor { shape, data })
    }

    pub fn dot(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ia, ib) = (self.check(a), self.check(b));
        let (ta, tb) = (&self.nodes[ia].val, &self.nodes[ib].val);
        assert_eq!(ta.data.len(), tb.data.len(), "dot lengths");
        let v = stencil::dot(&ta.data, &tb.data);
        self.push(Op::Dot(a, b), Tensor::scalar(v))
    }

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let ia = self.check(a);
        let mut acc = 0.0;
        for &x in &self.nodes[ia].val.data {
            acc += x;
        }
        self.push(Op::Sum(a), Tensor::scalar(acc))
    }

    pub fn abs(&mut self, a: TensorId) -> TensorId {
        let ia = self.check(a);
        let ta = &self.nodes[ia].val;
        let data: Vec<f64> = ta.data.iter().map(|x| x.abs()).collect();
        let shape = ta.shape;
        self.push(Op::Abs(a), Tensor { shape, data })
    }

    pub fn powi(&mut self, a: TensorId, p: u32) -> TensorId {
        assert!(p >= 2, "powi exponent");
        let ia = self.check(a);
        let ta = &self.nodes[ia].val;
        let data: Vec<f64> = ta.data.iter().map(|&x| super::powi_chain(x, p)).collect();
        let shape = ta.shape;
        self.push(Op::Powi(a, p), Tensor { shape, data })
    }

    pub fn sqrt(&mut self, a: TensorId) -> TensorId {
        let ia = self.check(a);
        let ta = &self.nodes[ia].val;
        let data: Vec<f64> = ta.data.iter().map(|x| x.sqrt()).collect();
        let shape = ta.shape;
        self.push(Op::Sqrt(a), Tensor { shape, data })
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let ia = self.check(a);
        let ta = &self.nodes[ia].val;
        let data: Vec<f64> = ta.data.iter().map(|x| x.exp()).collect();
        let shape = ta.shape;
        self.push(Op::Exp(a), Tensor { shape, data })
    }

    // -- dense layers --------------------------------------------------------

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ia, ib) = (self.check(a), self.check(b));
        let (m, k) = match self.nodes[ia].val.shape {
            Shape::Matrix(m, k) => (m, k),
            s => panic!("matmul lhs must be a matrix, got {s:?}"),
        };
        let (k2, n, vec_rhs) = match self.nodes[ib].val.shape {
            Shape::Matrix(k2, n) => (k2, n, false),
            Shape::Vector(k2) => (k2, 1, true),
            s => panic!("matmul rhs must be matrix or vector, got {s:?}"),
        };
        assert_eq!(k, k2, "matmul inner dims");
        let mut out = vec![0.0; m * n];
        linalg::matmul(
            m,
            k,
            n,
            &self.nodes[ia].val.data,
            &self.nodes[ib].val.data,
            &mut out,
        );
        let shape = if vec_rhs {
            Shape::Vector(m)
        } else {
            Shape::Matrix(m, n)
        };
        self.push(Op::MatMul(a, b), Tensor { shape, data: out })
    }

    /// Broadcasts a bias vector over the columns of a matrix (or adds two
    /// vectors when x is a vector).
    pub fn bias_add_col(&mut self, x: TensorId, b: TensorId) -> TensorId {
        let (ix, ib) = (self.check(x), self.check(b));
        let bv = &self.nodes[ib].val;
        let xv = &self.nodes[ix].val;
        let out = match xv.shape {
            Shape::Matrix(m, n) => {
                assert_eq!(bv.data.len(), m, "bias length");
                let mut data = vec![0.0; m * n];
                for i in 0..m {
                    let bi = bv.data[i];
                    for j in 0..n {
                        data[i * n + j] = xv.data[i * n + j] + bi;
                    }
                }
                Tensor {
                    shape: xv.shape,
                    data,
                }
            }
            Shape::Vector(m) => {
                assert_eq!(bv.data.len(), m, "bias length");
                let data: Vec<f64> = xv.data.iter().zip(&bv.data).map(|(a, b)| a + b).collect();
                Tensor {
                    shape: xv.shape,
                    data,
                }
            }
            Shape::Scalar => panic!("bias_add_col on scalar"),
        };
        self.push(Op::BiasAddCol(x, b), out)
    }

    pub fn leaky_relu(&mut self, a: TensorId, alpha: f64) -> TensorId {
        let ia = self.check(a);
        let ta = &self.nodes[ia].val;
        let data: Vec<f64> = ta.data.iter().map(|&x| super::leaky_relu(x, alpha)).collect();
        let shape = ta.shape;
        self.push(Op::LeakyRelu(a, alpha), Tensor { shape, data })
    }

    /// σ'(x) as a value; treated as locally constant (zero pullback), which
    /// realizes the piecewise-linear second-derivative convention.
    pub fn leaky_relu_deriv(&mut self, a: TensorId, alpha: f64) -> TensorId {
        let ia = self.check(a);
        let ta = &self.nodes[ia].val;
        let data: Vec<f64> = ta
            .data
            .iter()
            .map(|&x| super::leaky_relu_deriv(x, alpha))
            .collect();
        let shape = ta.shape;
        // constant with respect to every input: recorded as a leaf
        self.push(Op::Leaf, Tensor { shape, data })
    }

    // -- stencils ------------------------------------------------------------

    /// Truncated kernel-2 convolution; kernel is a learnable length-2 vector.
    pub fn conv_k2_trunc(&mut self, q: TensorId, k: TensorId) -> TensorId {
        let (iq, ik) = (self.check(q), self.check(k));
        let kv = &self.nodes[ik].val;
        assert_eq!(kv.data.len(), 2, "kernel length");
        let qv = &self.nodes[iq].val;
        let m = qv.data.len();
        let mut out = vec![0.0; m];
        linalg::conv_k2_trunc(&qv.data, kv.data[0], kv.data[1], &mut out);
        self.push(
            Op::ConvK2Trunc(q, k),
            Tensor {
                shape: Shape::Vector(m),
                data: out,
            },
        )
    }

    /// Transpose of [`Tape::conv_k2_trunc`] in its first argument.
    pub fn conv_k2_trunc_t(&mut self, w: TensorId, k: TensorId) -> TensorId {
        let (iw, ik) = (self.check(w), self.check(k));
        let kv = &self.nodes[ik].val;
        assert_eq!(kv.data.len(), 2, "kernel length");
        let wv = &self.nodes[iw].val;
        let m = wv.data.len();
        let mut out = vec![0.0; m];
        linalg::conv_k2_trunc_t(&wv.data, kv.data[0], kv.data[1], &mut out);
        self.push(
            Op::ConvK2TruncT(w, k),
            Tensor {
                shape: Shape::Vector(m),
                data: out,
            },
        )
    }

    /// Truncated backward difference with fixed spacing (the analytic
    /// quartic energy path); adjoint pair with [`Tape::d_minus_trunc_t`].
    pub fn d_minus_trunc(&mut self, q: TensorId, h: f64) -> TensorId {
        let iq = self.check(q);
        let qv = &self.nodes[iq].val;
        let mut out = vec![0.0; qv.data.len()];
        stencil::d_minus_trunc_into(&qv.data, h, &mut out);
        let shape = qv.shape;
        self.push(Op::DMinusTrunc(q, h), Tensor { shape, data: out })
    }

    pub fn d_minus_trunc_t(&mut self, w: TensorId, h: f64) -> TensorId {
        let iw = self.check(w);
        let wv = &self.nodes[iw].val;
        let mut out = vec![0.0; wv.data.len()];
        stencil::d_minus_trunc_t_into(&wv.data, h, &mut out);
        let shape = wv.shape;
        self.push(Op::DMinusTruncT(w, h), Tensor { shape, data: out })
    }

    /// Dirichlet second difference (symmetric, so it is its own pullback).
    pub fn d2(&mut self, q: TensorId, h: f64) -> TensorId {
        let iq = self.check(q);
        let qv = &self.nodes[iq].val;
        let mut out = vec![0.0; qv.data.len()];
        stencil::d2_into(&qv.data, h, &mut out);
        let shape = qv.shape;
        self.push(Op::D2(q, h), Tensor { shape, data: out })
    }

    /// Neighbor sum (S x)_i = x_{i-1} + x_{i+1}; symmetric.
    pub fn neighbor_sum(&mut self, x: TensorId) -> TensorId {
        let ix = self.check(x);
        let xv = &self.nodes[ix].val;
        let out = neighbor_sum_vec(&xv.data);
        let shape = xv.shape;
        self.push(Op::NeighborSum(x), Tensor { shape, data: out })
    }

    /// Solves (a·I + b·S) x = rhs with scalar nodes a, b. The pullback uses
    /// the adjoint rule: λ solves the transposed (= same) system against the
    /// incoming gradient, then da = −λᵀx, db = −λᵀSx, d_rhs = λ.
    pub fn tridiag_solve(&mut self, a: TensorId, b: TensorId, rhs: TensorId) -> TensorId {
        let (ia, ib, ir) = (self.check(a), self.check(b), self.check(rhs));
        assert_eq!(self.nodes[ia].val.shape, Shape::Scalar);
        assert_eq!(self.nodes[ib].val.shape, Shape::Scalar);
        let av = self.nodes[ia].val.data[0];
        let bv = self.nodes[ib].val.data[0];
        let rv = &self.nodes[ir].val;
        let mut out = vec![0.0; rv.data.len()];
        crate::tridiag::solve_sym_toeplitz(av, bv, &rv.data, &mut out)
            .expect("trapezoidal damping system is diagonally dominant");
        let shape = rv.shape;
        self.push(Op::TriSolve { a, b, rhs }, Tensor { shape, data: out })
    }

    // -- shaping -------------------------------------------------------------

    pub fn concat(&mut self, parts: &[TensorId]) -> TensorId {
        let mut data = Vec::new();
        for &p in parts {
            let ip = self.check(p);
            data.extend_from_slice(&self.nodes[ip].val.data);
        }
        let n = data.len();
        self.push(
            Op::Concat(parts.to_vec()),
            Tensor {
                shape: Shape::Vector(n),
                data,
            },
        )
    }

    pub fn slice(&mut self, x: TensorId, start: usize, len: usize) -> TensorId {
        let ix = self.check(x);
        let xv = &self.nodes[ix].val;
        assert!(start + len <= xv.data.len(), "slice bounds");
        let data = xv.data[start..start + len].to_vec();
        self.push(
            Op::Slice { x, start },
            Tensor {
                shape: Shape::Vector(len),
                data,
            },
        )
    }

    pub fn reshape(&mut self, x: TensorId, shape: Shape) -> TensorId {
        let ix = self.check(x);
        let xv = &self.nodes[ix].val;
        assert_eq!(xv.data.len(), shape.len(), "reshape element count");
        let data = xv.data.clone();
        self.push(Op::Reshape(x), Tensor { shape, data })
    }

    /// out = x ∘ scale + shift with constant coefficient vectors.
    pub fn mul_add_const(&mut self, x: TensorId, scale: &[f64], shift: &[f64]) -> TensorId {
        let ix = self.check(x);
        let xv = &self.nodes[ix].val;
        assert_eq!(xv.data.len(), scale.len());
        assert_eq!(xv.data.len(), shift.len());
        let data: Vec<f64> = (0..xv.data.len())
            .map(|i| xv.data[i] * scale[i] + shift[i])
            .collect();
        let shape = xv.shape;
        self.push(
            Op::MulAddConst {
                x,
                scale: scale.to_vec(),
            },
            Tensor { shape, data },
        )
    }

    // -- backward ------------------------------------------------------------

    /// Accumulates d(root)/d(node) for every node reachable from `root`.
    /// Gradients from a previous backward pass on the same forward tape are
    /// discarded first, so replay is idempotent.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        if root.epoch != self.epoch {
            return Err(Error::config(
                "backward called with a tensor from a stale tape",
            ));
        }
        let ir = root.idx as usize;
        if self.nodes[ir].val.shape != Shape::Scalar {
            return Err(Error::config("backward root must be a scalar"));
        }
        self.grads.clear();
        self.grads.resize(self.nodes.len(), None);
        self.grads[ir] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            let go = match self.grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            // reinstall so callers can read it afterwards
            let op = self.nodes[i].op.clone();
            self.propagate(i, &op, &go);
            self.grads[i] = Some(go);
        }
        Ok(())
    }

    fn grad_buf(&mut self, id: TensorId) -> &mut Vec<f64> {
        let i = self.check(id);
        let len = self.nodes[i].val.data.len();
        self.grads[i].get_or_insert_with(|| vec![0.0; len])
    }

    fn propagate(&mut self, out_idx: usize, op: &Op, go: &[f64]) {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (g, &v) in self.grad_buf(a).iter_mut().zip(go) {
                    *g += v;
                }
                for (g, &v) in self.grad_buf(b).iter_mut().zip(go) {
                    *g += v;
                }
            }
            Op::Sub(a, b) => {
                for (g, &v) in self.grad_buf(a).iter_mut().zip(go) {
                    *g += v;
                }
                for (g, &v) in self.grad_buf(b).iter_mut().zip(go) {
                    *g -= v;
                }
            }
            Op::MulElem(a, b) => {
                let bv = self.nodes[self.check(b)].val.data.clone();
                for ((g, &v), &bx) in self.grad_buf(a).iter_mut().zip(go).zip(&bv) {
                    *g += v * bx;
                }
                let av = self.nodes[self.check(a)].val.data.clone();
                for ((g, &v), &ax) in self.grad_buf(b).iter_mut().zip(go).zip(&av) {
                    *g += v * ax;
                }
            }
            Op::Scale(a, c) => {
                for (g, &v) in self.grad_buf(a).iter_mut().zip(go) {
                    *g += c * v;
                }
            }
            Op::AddConst(a) => {
                for (g, &v) in self.grad_buf(a).iter_mut().zip(go) {
                    *g += v;
                }
            }
            Op::SMul(s, x) => {
                let sv = self.nodes[self.check(s)].val.data[0];
                let xv = self.nodes[self.check(x)].val.data.clone();
                for (g, &v) in self.grad_buf(x).iter_mut().zip(go) {
                    *g += sv * v;
                }
                let mut acc = 0.0;
                for (i, &v) in go.iter().enumerate() {
                    acc += v * xv[i];
                }
                self.grad_buf(s)[0] += acc;
            }
            Op::SDiv(x, s) => {
                let sv = self.nodes[self.check(s)].val.data[0];
                let xv = self.nodes[self.check(x)].val.data.clone();
                for (g, &v) in self.grad_buf(x).iter_mut().zip(go) {
                    *g += v / sv;
                }
                let mut acc = 0.0;
                for (i, &v) in go.iter().enumerate() {
                    acc += v * xv[i];
                }
                self.grad_buf(s)[0] += -acc / (sv * sv);
            }
            Op::Dot(a, b) => {
                let g0 = go[0];
                let bv = self.nodes[self.check(b)].val.data.clone();
                for (g, &bx) in self.grad_buf(a).iter_mut().zip(&bv) {
                    *g += g0 * bx;
                }
                let av = self.nodes[self.check(a)].val.data.clone();
                for (g, &ax) in self.grad_buf(b).iter_mut().zip(&av) {
                    *g += g0 * ax;
                }
            }
            Op::Sum(a) => {
                let g0 = go[0];
                for g in self.grad_buf(a).iter_mut() {
                    *g += g0;
                }
            }
            Op::Abs(a) => {
                let av = self.nodes[self.check(a)].val.data.clone();
                for ((g, &v), &ax) in self.grad_buf(a).iter_mut().zip(go).zip(&av) {
                    *g += v * sign_zero(ax);
                }
            }
            Op::Powi(a, p) => {
                let av = self.nodes[self.check(a)].val.data.clone();
                let pf = p as f64;
                for ((g, &v), &ax) in self.grad_buf(a).iter_mut().zip(go).zip(&av) {
                    *g += v * pf * super::powi_chain(ax, p - 1);
                }
            }
            Op::Sqrt(a) => {
                let ov = self.nodes[out_idx].val.data.clone();
                for ((g, &v), &out) in self.grad_buf(a).iter_mut().zip(go).zip(&ov) {
                    *g += v / (2.0 * out);
                }
            }
            Op::Exp(a) => {
                let ov = self.nodes[out_idx].val.data.clone();
                for ((g, &v), &out) in self.grad_buf(a).iter_mut().zip(go).zip(&ov) {
                    *g += v * out;
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = match self.nodes[self.check(a)].val.shape {
                    Shape::Matrix(m, k) => (m, k),
                    _ => unreachable!(),
                };
                let n = self.nodes[self.check(b)].val.data.len() / k;
                let av = self.nodes[self.check(a)].val.data.clone();
                let bv = self.nodes[self.check(b)].val.data.clone();
                linalg::matmul_bt_acc(m, k, n, go, &bv, self.grad_buf(a));
                linalg::matmul_at_acc(m, k, n, &av, go, self.grad_buf(b));
            }
            Op::BiasAddCol(x, b) => {
                for (g, &v) in self.grad_buf(x).iter_mut().zip(go) {
                    *g += v;
                }
                let blen = self.nodes[self.check(b)].val.data.len();
                let n = go.len() / blen;
                let gb = self.grad_buf(b);
                for i in 0..blen {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += go[i * n + j];
                    }
                    gb[i] += acc;
                }
            }
            Op::LeakyRelu(a, alpha) => {
                let av = self.nodes[self.check(a)].val.data.clone();
                for ((g, &v), &ax) in self.grad_buf(a).iter_mut().zip(go).zip(&av) {
                    *g += v * super::leaky_relu_deriv(ax, alpha);
                }
            }
            Op::ConvK2Trunc(q, k) => {
                let kv = self.nodes[self.check(k)].val.data.clone();
                let qv = self.nodes[self.check(q)].val.data.clone();
                let m = qv.len();
                {
                    let gq = self.grad_buf(q);
                    let mut tmp = vec![0.0; m];
                    linalg::conv_k2_trunc_t(go, kv[0], kv[1], &mut tmp);
                    for (g, &v) in gq.iter_mut().zip(&tmp) {
                        *g += v;
                    }
                }
                let gk = self.grad_buf(k);
                let mut d0 = 0.0;
                let mut d1 = 0.0;
                for j in 0..m {
                    d0 += go[j] * qv[j];
                    if j >= 1 {
                        d1 += go[j] * qv[j - 1];
                    }
                }
                gk[0] += d0;
                gk[1] += d1;
            }
            Op::ConvK2TruncT(w, k) => {
                let kv = self.nodes[self.check(k)].val.data.clone();
                let wv = self.nodes[self.check(w)].val.data.clone();
                let m = wv.len();
                {
                    let gw = self.grad_buf(w);
                    let mut tmp = vec![0.0; m];
                    linalg::conv_k2_trunc(go, kv[0], kv[1], &mut tmp);
                    for (g, &v) in gw.iter_mut().zip(&tmp) {
                        *g += v;
                    }
                }
                let gk = self.grad_buf(k);
                let mut d0 = 0.0;
                let mut d1 = 0.0;
                for j in 0..m {
                    d0 += go[j] * wv[j];
                    if j + 1 < m {
                        d1 += go[j] * wv[j + 1];
                    }
                }
                gk[0] += d0;
                gk[1] += d1;
            }
            Op::DMinusTrunc(q, h) => {
                let mut tmp = vec![0.0; go.len()];
                stencil::d_minus_trunc_t_into(go, h, &mut tmp);
                for (g, &v) in self.grad_buf(q).iter_mut().zip(&tmp) {
                    *g += v;
                }
            }
            Op::DMinusTruncT(w, h) => {
                let mut tmp = vec![0.0; go.len()];
                stencil::d_minus_trunc_into(go, h, &mut tmp);
                for (g, &v) in self.grad_buf(w).iter_mut().zip(&tmp) {
                    *g += v;
                }
            }
            Op::D2(q, h) => {
                let mut tmp = vec![0.0; go.len()];
                stencil::d2_into(go, h, &mut tmp);
                for (g, &v) in self.grad_buf(q).iter_mut().zip(&tmp) {
                    *g += v;
                }
            }
            Op::NeighborSum(x) => {
                let tmp = neighbor_sum_vec(go);
                for (g, &v) in self.grad_buf(x).iter_mut().zip(&tmp) {
                    *g += v;
                }
            }
            Op::TriSolve { a, b, rhs } => {
                let av = self.nodes[self.check(a)].val.data[0];
                let bv = self.nodes[self.check(b)].val.data[0];
                let xv = self.nodes[out_idx].val.data.clone();
                let mut lambda = vec![0.0; go.len()];
                crate::tridiag::solve_sym_toeplitz(av, bv, go, &mut lambda)
                    .expect("adjoint damping solve");
                for (g, &v) in self.grad_buf(rhs).iter_mut().zip(&lambda) {
                    *g += v;
                }
                let mut da = 0.0;
                for i in 0..xv.len() {
                    da += lambda[i] * xv[i];
                }
                self.grad_buf(a)[0] += -da;
                let sx = neighbor_sum_vec(&xv);
                let mut db = 0.0;
                for i in 0..xv.len() {
                    db += lambda[i] * sx[i];
                }
                self.grad_buf(b)[0] += -db;
            }
            Op::Concat(ref parts) => {
                let parts = parts.clone();
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[self.check(p)].val.data.len();
                    let gslice = go[offset..offset + len].to_vec();
                    for (g, &v) in self.grad_buf(p).iter_mut().zip(&gslice) {
                        *g += v;
                    }
                    offset += len;
                }
            }
            Op::Slice { x, start } => {
                let gx = self.grad_buf(x);
                for (j, &v) in go.iter().enumerate() {
                    gx[start + j] += v;
                }
            }
            Op::Reshape(x) => {
                for (g, &v) in self.grad_buf(x).iter_mut().zip(go) {
                    *g += v;
                }
            }
            Op::MulAddConst { x, ref scale } => {
                let scale = scale.clone();
                for ((g, &v), &s) in self.grad_buf(x).iter_mut().zip(go).zip(&scale) {
                    *g += v * s;
                }
            }
        }
    }
}

fn sign_zero(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn neighbor_sum_vec(x: &[f64]) -> Vec<f64> {
    let m = x.len();
    let mut out = vec![0.0; m];
    if m == 1 {
        return out;
    }
    out[0] = x[1];
    for i in 1..m - 1 {
        out[i] = x[i - 1] + x[i + 1];
    }
    out[m - 1] = x[m - 2];
    out
}
