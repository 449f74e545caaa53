//! Constant CSR matrices for neighborhood aggregation.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::tensor::Tensor;

/// Immutable CSR matrix. Used as a constant operand on the tape
/// (adjacency, neighbor-mean, and normalized-adjacency operators);
/// gradients never flow into its values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    pub fn new(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        vals: Vec<T>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1 || col_idx.len() != vals.len() || row_ptr[rows] != col_idx.len()
        {
            return Err(Error::Invalid("inconsistent CSR arrays".into()));
        }
        if col_idx.iter().any(|&j| j >= cols) {
            return Err(Error::Invalid("CSR column index out of range".into()));
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            vals,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            vals: vec![T::one(); n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// `(column, value)` entries of row `i`.
    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .zip(self.vals[lo..hi].iter())
            .map(|(&j, &v)| (j, v))
    }

    /// Column indices of row `i`.
    pub fn row_cols(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// `S * X` with dense `X`.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rows() != self.cols {
            return Err(Error::DimMismatch {
                op: "sparse_matmul",
                lhs: (self.rows, self.cols),
                rhs: x.shape(),
            });
        }
        let mut out = Tensor::zeros(self.rows, x.cols());
        for i in 0..self.rows {
            for (j, v) in self.row_entries(i) {
                for k in 0..x.cols() {
                    let cur = out.get(i, k);
                    out.set(i, k, cur + v * x.get(j, k));
                }
            }
        }
        Ok(out)
    }

    /// `S^T * G` with dense `G`; the backward pair of [`Self::apply`].
    pub fn apply_transposed(&self, g: &Tensor<T>) -> Result<Tensor<T>> {
        if g.rows() != self.rows {
            return Err(Error::DimMismatch {
                op: "sparse_matmul_transposed",
                lhs: (self.cols, self.rows),
                rhs: g.shape(),
            });
        }
        let mut out = Tensor::zeros(self.cols, g.cols());
        for i in 0..self.rows {
            for (j, v) in self.row_entries(i) {
                for k in 0..g.cols() {
                    let cur = out.get(j, k);
                    out.set(j, k, cur + v * g.get(i, k));
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Tensor<T> {
        let mut out = Tensor::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row_entries(i) {
                out.set(i, j, v);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SparseMatrix<f64> {
        // [[0 2 0], [1 0 3]]
        SparseMatrix::new(2, 3, vec![0, 1, 3], vec![1, 0, 2], vec![2.0, 1.0, 3.0]).unwrap()
    }

    #[test]
    fn apply_matches_dense() {
        let s = small();
        let x = Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let got = s.apply(&x).unwrap();
        let want = s.to_dense().matmul(&x).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn apply_transposed_matches_dense() {
        let s = small();
        let g = Tensor::from_vec(2, 2, vec![1.0, 0.5, -1.0, 2.0]).unwrap();
        let got = s.apply_transposed(&g).unwrap();
        let want = s.to_dense().transpose().matmul(&g).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn identity_is_noop() {
        let x = Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(SparseMatrix::<f64>::identity(3).apply(&x).unwrap(), x);
    }
}
