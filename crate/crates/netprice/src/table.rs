//! Per-node feature and protected-attribute table.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::IndexMap;
use crate::scalar::Scalar;

/// Non-protected feature matrix `X` (n x m), the binary protected
/// attribute `s`, and the feature names used to resolve score-function
/// coefficients. The policy reads only `X`; `s` is reserved for the
/// market simulation, the losses, and the metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTable<T> {
    features: Tensor<T>,
    feature_names: Vec<String>,
    s: Vec<u8>,
    protected_name: String,
}

impl<T: Scalar> NodeTable<T> {
    pub fn new(
        features: Tensor<T>,
        feature_names: Vec<String>,
        s: Vec<u8>,
        protected_name: impl Into<String>,
    ) -> Result<Self> {
        if feature_names.len() != features.cols() {
            return Err(Error::Invalid(format!(
                "{} feature names for {} feature columns",
                feature_names.len(),
                features.cols()
            )));
        }
        if s.len() != features.rows() {
            return Err(Error::Invalid(format!(
                "protected attribute length {} does not match {} rows",
                s.len(),
                features.rows()
            )));
        }
        if let Some(row) = s.iter().position(|&v| v > 1) {
            return Err(Error::Invalid(format!(
                "protected attribute must be binary; row {row} has value {}",
                s[row]
            )));
        }
        Ok(Self {
            features,
            feature_names,
            s,
            protected_name: protected_name.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn protected_name(&self) -> &str {
        &self.protected_name
    }

    pub fn s(&self) -> &[u8] {
        &self.s
    }

    pub fn group_sizes(&self) -> (usize, usize) {
        let n1 = self.s.iter().filter(|&&v| v == 1).count();
        (self.s.len() - n1, n1)
    }

    /// Row `i` extended with the protected attribute: `(x_i, s_i)`.
    pub fn extended_row(&self, i: usize) -> Vec<T> {
        let mut row = self.features.row(i).to_vec();
        row.push(T::cast(usize::from(self.s[i])));
        row
    }

    /// Rows kept by an induced-subgraph index map, in new-index order.
    pub fn subset(&self, map: &IndexMap) -> NodeTable<T> {
        let kept = map.kept();
        let mut data = Vec::with_capacity(kept.len() * self.feature_dim());
        let mut s = Vec::with_capacity(kept.len());
        for &old in kept {
            data.extend_from_slice(self.features.row(old));
            s.push(self.s[old]);
        }
        NodeTable {
            features: Tensor::from_vec(kept.len(), self.feature_dim(), data)
                .expect("sized feature data"),
            feature_names: self.feature_names.clone(),
            s,
            protected_name: self.protected_name.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{induced_subgraph, Graph, NodeMask};

    fn table() -> NodeTable<f64> {
        NodeTable::new(
            Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
            vec!["a".into(), "b".into()],
            vec![0, 1, 0],
            "s",
        )
        .unwrap()
    }

    #[test]
    fn non_binary_protected_rejected_with_row() {
        let err = NodeTable::new(
            Tensor::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap(),
            vec!["a".into()],
            vec![0, 1, 2],
            "s",
        )
        .unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn extended_row_appends_s() {
        let t = table();
        assert_eq!(t.extended_row(1), vec![3.0, 4.0, 1.0]);
    }

    #[test]
    fn subset_follows_index_map() {
        let g = Graph::build(&[(0, 1), (1, 2)], 3).unwrap();
        let mask = NodeMask::from_indices(3, &[0, 2]).unwrap();
        let (_, map) = induced_subgraph(&g, &mask).unwrap();
        let sub = table().subset(&map);
        assert_eq!(sub.n(), 2);
        assert_eq!(sub.features().row(1), &[5.0, 6.0]);
        assert_eq!(sub.s(), &[0, 0]);
    }
}
