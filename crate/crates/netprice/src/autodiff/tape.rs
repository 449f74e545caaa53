//! Eager tape: forward ops record nodes, `backward` replays the chain rule.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeding::Rng64;

use super::params::{ParamId, ParamStore};
use super::sparse::SparseMatrix;
use super::tensor::Tensor;

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum OpKind<T> {
    Constant,
    Param(ParamId),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    MatMul(usize, usize),
    SparseMatMul(Rc<SparseMatrix<T>>, usize),
    AddBias(usize, usize),
    Transpose(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    LeakyRelu(usize, T),
    Exp(usize),
    Ln(usize),
    Abs(usize),
    Clamp(usize, T, T),
    Dropout(usize, Rc<Vec<T>>),
    ConcatCols(usize, usize),
    RowSoftmaxMasked(Rc<SparseMatrix<T>>, usize),
    SumAll(usize),
}

struct Node<T> {
    op: OpKind<T>,
    value: Tensor<T>,
}

/// Ordered record of executed operations. Values are computed eagerly;
/// [`Tape::backward`] visits nodes in reverse order, accumulating gradients
/// additively at fan-out.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Value of a 1x1 variable.
    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, op: OpKind<T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::DimMismatch {
                op,
                lhs: self.shape(a),
                rhs: self.shape(b),
            });
        }
        Ok(())
    }

    /// Record a constant leaf; no gradient is reported for it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(OpKind::Constant, value)
    }

    /// Pull a parameter's current value onto the tape.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(OpKind::Param(id), store.value(id).clone())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.nodes[a.0]
            .value
            .zip_map(&self.nodes[b.0].value, |x, y| x + y);
        Ok(self.push(OpKind::Add(a.0, b.0), value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.nodes[a.0]
            .value
            .zip_map(&self.nodes[b.0].value, |x, y| x - y);
        Ok(self.push(OpKind::Sub(a.0, b.0), value))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.nodes[a.0]
            .value
            .zip_map(&self.nodes[b.0].value, |x, y| x * y);
        Ok(self.push(OpKind::Mul(a.0, b.0), value))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let value = self.nodes[a.0].value.map(|x| x * k);
        self.push(OpKind::Scale(a.0, k), value)
    }

    pub fn add_scalar(&mut self, a: Var, k: T) -> Var {
        let value = self.nodes[a.0].value.map(|x| x + k);
        self.push(OpKind::AddScalar(a.0), value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).1 != self.shape(b).0 {
            return Err(Error::DimMismatch {
                op: "matmul",
                lhs: self.shape(a),
                rhs: self.shape(b),
            });
        }
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        Ok(self.push(OpKind::MatMul(a.0, b.0), value))
    }

    /// `S * x` with a constant sparse operand.
    pub fn sparse_matmul(&mut self, s: Rc<SparseMatrix<T>>, x: Var) -> Result<Var> {
        let value = s.apply(&self.nodes[x.0].value)?;
        Ok(self.push(OpKind::SparseMatMul(s, x.0), value))
    }

    /// Broadcast-add a `1 x m` bias row to every row of an `n x m` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.shape(a);
        if self.shape(bias) != (1, m) {
            return Err(Error::DimMismatch {
                op: "add_bias",
                lhs: (n, m),
                rhs: self.shape(bias),
            });
        }
        let mut value = self.nodes[a.0].value.clone();
        let b = &self.nodes[bias.0].value;
        for i in 0..n {
            for j in 0..m {
                let cur = value.get(i, j);
                value.set(i, j, cur + b.get(0, j));
            }
        }
        Ok(self.push(OpKind::AddBias(a.0, bias.0), value))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.transpose();
        self.push(OpKind::Transpose(a.0), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(Scalar::sigmoid);
        self.push(OpKind::Sigmoid(a.0), value)
    }

    pub fn tanh_act(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| x.tanh());
        self.push(OpKind::Tanh(a.0), value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| x.max(T::zero()));
        self.push(OpKind::Relu(a.0), value)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let value = self.nodes[a.0]
            .value
            .map(|x| if x > T::zero() { x } else { slope * x });
        self.push(OpKind::LeakyRelu(a.0, slope), value)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| x.exp());
        self.push(OpKind::Exp(a.0), value)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| x.ln());
        self.push(OpKind::Ln(a.0), value)
    }

    /// Absolute value; subgradient 0 at the kink.
    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| x.abs());
        self.push(OpKind::Abs(a.0), value)
    }

    /// Clamp to `[lo, hi]`; gradient passes only strictly inside the range.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let value = self.nodes[a.0].value.map(|x| x.max(lo).min(hi));
        self.push(OpKind::Clamp(a.0, lo, hi), value)
    }

    /// Inverted dropout: surviving entries are scaled by `1/(1-rate)` so
    /// evaluation mode needs no correction.
    pub fn dropout(&mut self, a: Var, rate: T, rng: &mut Rng64) -> Result<Var> {
        if rate < T::zero() || rate >= T::one() {
            return Err(Error::Invalid(format!("dropout rate {rate} not in [0, 1)")));
        }
        let keep_scale = T::one() / (T::one() - rate);
        let n = self.nodes[a.0].value.len();
        let rate_f = rate.as_f64();
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < rate_f {
                    T::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let src = &self.nodes[a.0].value;
        let mut value = src.clone();
        for (v, m) in value.data_mut().iter_mut().zip(mask.iter()) {
            *v = *v * *m;
        }
        Ok(self.push(OpKind::Dropout(a.0, Rc::new(mask)), value))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ra != rb {
            return Err(Error::DimMismatch {
                op: "concat_cols",
                lhs: (ra, ca),
                rhs: (rb, cb),
            });
        }
        let mut value = Tensor::zeros(ra, ca + cb);
        for i in 0..ra {
            for j in 0..ca {
                value.set(i, j, self.nodes[a.0].value.get(i, j));
            }
            for j in 0..cb {
                value.set(i, ca + j, self.nodes[b.0].value.get(i, j));
            }
        }
        Ok(self.push(OpKind::ConcatCols(a.0, b.0), value))
    }

    /// Per-row softmax over the entries indicated by `mask`'s sparsity
    /// pattern; all other entries are zero. Rows with an empty pattern
    /// stay zero.
    pub fn row_softmax_masked(&mut self, a: Var, mask: Rc<SparseMatrix<T>>) -> Result<Var> {
        let (n, m) = self.shape(a);
        if (mask.rows(), mask.cols()) != (n, m) {
            return Err(Error::DimMismatch {
                op: "row_softmax_masked",
                lhs: (n, m),
                rhs: (mask.rows(), mask.cols()),
            });
        }
        let src = &self.nodes[a.0].value;
        let mut value = Tensor::zeros(n, m);
        for i in 0..n {
            let cols = mask.row_cols(i);
            if cols.is_empty() {
                continue;
            }
            let mut max = T::neg_infinity();
            for &j in cols {
                max = max.max(src.get(i, j));
            }
            let mut z = T::zero();
            for &j in cols {
                let e = (src.get(i, j) - max).exp();
                value.set(i, j, e);
                z += e;
            }
            for &j in cols {
                let e = value.get(i, j);
                value.set(i, j, e / z);
            }
        }
        Ok(self.push(OpKind::RowSoftmaxMasked(mask, a.0), value))
    }

    /// Sum of all entries as a 1x1 tensor.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.nodes[a.0].value.sum());
        self.push(OpKind::SumAll(a.0), value)
    }

    /// Accumulate `d loss / d param` into the store's gradient buffers for
    /// every parameter reachable from `loss`. Existing gradients are added
    /// to, not overwritten; parameters off the tape are untouched.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                OpKind::Constant => {}
                OpKind::Param(id) => store.add_grad(*id, &g),
                OpKind::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                OpKind::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.map(|x| -x));
                }
                OpKind::Mul(a, b) => {
                    let ga = g.zip_map(&self.nodes[*b].value, |x, y| x * y);
                    let gb = g.zip_map(&self.nodes[*a].value, |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                OpKind::Scale(a, k) => {
                    let k = *k;
                    accumulate(&mut grads, *a, g.map(|x| x * k));
                }
                OpKind::AddScalar(a) => accumulate(&mut grads, *a, g),
                OpKind::MatMul(a, b) => {
                    let ga = g.matmul(&self.nodes[*b].value.transpose())?;
                    let gb = self.nodes[*a].value.transpose().matmul(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                OpKind::SparseMatMul(s, x) => {
                    accumulate(&mut grads, *x, s.apply_transposed(&g)?);
                }
                OpKind::AddBias(a, bias) => {
                    accumulate(&mut grads, *bias, g.col_sums());
                    accumulate(&mut grads, *a, g);
                }
                OpKind::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                OpKind::Sigmoid(a) => {
                    let y = &self.nodes[idx].value;
                    accumulate(&mut grads, *a, g.zip_map(y, |gi, yi| gi * yi * (T::one() - yi)));
                }
                OpKind::Tanh(a) => {
                    let y = &self.nodes[idx].value;
                    accumulate(&mut grads, *a, g.zip_map(y, |gi, yi| gi * (T::one() - yi * yi)));
                }
                OpKind::Relu(a) => {
                    let x = &self.nodes[*a].value;
                    accumulate(
                        &mut grads,
                        *a,
                        g.zip_map(x, |gi, xi| if xi > T::zero() { gi } else { T::zero() }),
                    );
                }
                OpKind::LeakyRelu(a, slope) => {
                    let slope = *slope;
                    let x = &self.nodes[*a].value;
                    accumulate(
                        &mut grads,
                        *a,
                        g.zip_map(x, |gi, xi| if xi > T::zero() { gi } else { gi * slope }),
                    );
                }
                OpKind::Exp(a) => {
                    let y = &self.nodes[idx].value;
                    accumulate(&mut grads, *a, g.zip_map(y, |gi, yi| gi * yi));
                }
                OpKind::Ln(a) => {
                    let x = &self.nodes[*a].value;
                    accumulate(&mut grads, *a, g.zip_map(x, |gi, xi| gi / xi));
                }
                OpKind::Abs(a) => {
                    let x = &self.nodes[*a].value;
                    accumulate(
                        &mut grads,
                        *a,
                        g.zip_map(x, |gi, xi| {
                            if xi > T::zero() {
                                gi
                            } else if xi < T::zero() {
                                -gi
                            } else {
                                T::zero()
                            }
                        }),
                    );
                }
                OpKind::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let x = &self.nodes[*a].value;
                    accumulate(
                        &mut grads,
                        *a,
                        g.zip_map(x, |gi, xi| {
                            if xi > lo && xi < hi {
                                gi
                            } else {
                                T::zero()
                            }
                        }),
                    );
                }
                OpKind::Dropout(a, mask) => {
                    let mut ga = g;
                    for (v, m) in ga.data_mut().iter_mut().zip(mask.iter()) {
                        *v = *v * *m;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                OpKind::ConcatCols(a, b) => {
                    let (ra, ca) = self.nodes[*a].value.shape();
                    let cb = self.nodes[*b].value.cols();
                    let mut ga = Tensor::zeros(ra, ca);
                    let mut gb = Tensor::zeros(ra, cb);
                    for i in 0..ra {
                        for j in 0..ca {
                            ga.set(i, j, g.get(i, j));
                        }
                        for j in 0..cb {
                            gb.set(i, j, g.get(i, ca + j));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                OpKind::RowSoftmaxMasked(mask, a) => {
                    let y = &self.nodes[idx].value;
                    let (n, m) = y.shape();
                    let mut ga = Tensor::zeros(n, m);
                    for i in 0..n {
                        let cols = mask.row_cols(i);
                        if cols.is_empty() {
                            continue;
                        }
                        let mut dot = T::zero();
                        for &j in cols {
                            dot += g.get(i, j) * y.get(i, j);
                        }
                        for &j in cols {
                            ga.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                OpKind::SumAll(a) => {
                    let (ra, ca) = self.nodes[*a].value.shape();
                    accumulate(&mut grads, *a, Tensor::filled(ra, ca, g.item()));
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], idx: usize, g: Tensor<T>) {
    match &mut grads[idx] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
