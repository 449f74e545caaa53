//! Undirected graphs in compressed sparse row form.

use std::collections::BTreeSet;

use crate::autodiff::SparseMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Immutable undirected graph. The adjacency is stored symmetrically
/// (every edge appears in both rows), there are no self-loops, and
/// column indices within each row are strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    degree: Vec<usize>,
}

impl Graph {
    /// Build from an edge list. Input edges may be directed, duplicated,
    /// or contain self-loops; the result is deduplicated, symmetrized,
    /// and self-loop free.
    pub fn build(edges: &[(usize, usize)], n: usize) -> Result<Graph> {
        let mut set: BTreeSet<(usize, usize)> = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n {
                return Err(Error::IndexOutOfRange { index: a, n });
            }
            if b >= n {
                return Err(Error::IndexOutOfRange { index: b, n });
            }
            if a == b {
                continue; // a_ii = 0 by construction
            }
            set.insert((a, b));
            set.insert((b, a));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(set.len());
        row_ptr.push(0);
        let mut cur = 0usize;
        for (i, j) in set {
            while cur < i {
                row_ptr.push(col_idx.len());
                cur += 1;
            }
            col_idx.push(j);
        }
        while cur < n {
            row_ptr.push(col_idx.len());
            cur += 1;
        }
        debug_assert_eq!(row_ptr.len(), n + 1);
        let degree = (0..n).map(|i| row_ptr[i + 1] - row_ptr[i]).collect();
        Ok(Graph {
            n,
            row_ptr,
            col_idx,
            degree,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Directed CSR entries; twice the undirected edge count.
    pub fn entry_count(&self) -> usize {
        self.col_idx.len()
    }

    pub fn edge_count(&self) -> usize {
        self.col_idx.len() / 2
    }

    pub fn degree(&self, i: usize) -> usize {
        self.degree[i]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degree
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// All undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .filter(move |&&j| i < j)
                .map(move |&j| (i, j))
        })
    }

    /// Unit-weight adjacency as a sparse operator.
    pub fn adjacency<T: Scalar>(&self) -> SparseMatrix<T> {
        let vals = vec![T::one(); self.col_idx.len()];
        SparseMatrix::new(self.n, self.n, self.row_ptr.clone(), self.col_idx.clone(), vals)
            .expect("graph CSR is consistent")
    }

    /// Row-normalized adjacency: entry `(i, j)` is `1/degree(i)`.
    /// Rows of isolated nodes are empty, so their aggregate is zero.
    pub fn neighbor_mean_matrix<T: Scalar>(&self) -> SparseMatrix<T> {
        let mut vals = Vec::with_capacity(self.col_idx.len());
        for i in 0..self.n {
            let d = T::cast(self.degree[i].max(1));
            for _ in self.neighbors(i) {
                vals.push(T::one() / d);
            }
        }
        SparseMatrix::new(self.n, self.n, self.row_ptr.clone(), self.col_idx.clone(), vals)
            .expect("graph CSR is consistent")
    }

    /// Symmetric degree-normalized adjacency with self-loops:
    /// entry `(i, j)` of `A + I` carries `((deg_i + 1) * (deg_j + 1))^(-1/2)`.
    pub fn normalized_adjacency_with_self_loops<T: Scalar>(&self) -> SparseMatrix<T> {
        let inv_sqrt: Vec<T> = (0..self.n)
            .map(|i| T::one() / T::cast(self.degree[i] + 1).sqrt())
            .collect();
        let (row_ptr, col_idx) = self.pattern_with_self_loops();
        let mut vals = Vec::with_capacity(col_idx.len());
        for i in 0..self.n {
            for &j in &col_idx[row_ptr[i]..row_ptr[i + 1]] {
                vals.push(inv_sqrt[i] * inv_sqrt[j]);
            }
        }
        SparseMatrix::new(self.n, self.n, row_ptr, col_idx, vals).expect("consistent CSR")
    }

    /// Sparsity pattern of `A + I` (each row: sorted neighbors plus self).
    pub fn self_loop_pattern<T: Scalar>(&self) -> SparseMatrix<T> {
        let (row_ptr, col_idx) = self.pattern_with_self_loops();
        let vals = vec![T::one(); col_idx.len()];
        SparseMatrix::new(self.n, self.n, row_ptr, col_idx, vals).expect("consistent CSR")
    }

    fn pattern_with_self_loops(&self) -> (Vec<usize>, Vec<usize>) {
        let mut row_ptr = Vec::with_capacity(self.n + 1);
        let mut col_idx = Vec::with_capacity(self.col_idx.len() + self.n);
        row_ptr.push(0);
        for i in 0..self.n {
            let mut inserted = false;
            for &j in self.neighbors(i) {
                if !inserted && j > i {
                    col_idx.push(i);
                    inserted = true;
                }
                col_idx.push(j);
            }
            if !inserted {
                col_idx.push(i);
            }
            row_ptr.push(col_idx.len());
        }
        (row_ptr, col_idx)
    }
}

/// Node subset of a fixed graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeMask {
    bits: Vec<bool>,
}

impl NodeMask {
    pub fn new_empty(n: usize) -> Self {
        Self {
            bits: vec![false; n],
        }
    }

    pub fn full(n: usize) -> Self {
        Self {
            bits: vec![true; n],
        }
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; n];
        for &i in indices {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, n });
            }
            bits[i] = true;
        }
        Ok(Self { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, v: bool) {
        self.bits[i] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
    }

    pub fn union(&self, other: &NodeMask) -> NodeMask {
        assert_eq!(self.len(), other.len(), "mask length mismatch");
        NodeMask {
            bits: self
                .bits
                .iter()
                .zip(other.bits.iter())
                .map(|(&a, &b)| a || b)
                .collect(),
        }
    }

    pub fn intersects(&self, other: &NodeMask) -> bool {
        self.bits
            .iter()
            .zip(other.bits.iter())
            .any(|(&a, &b)| a && b)
    }
}

/// Old-to-new index correspondence produced by [`induced_subgraph`].
#[derive(Debug, Clone)]
pub struct IndexMap {
    old_to_new: Vec<Option<usize>>,
    new_to_old: Vec<usize>,
}

impl IndexMap {
    pub fn new_index(&self, old: usize) -> Option<usize> {
        self.old_to_new[old]
    }

    pub fn old_index(&self, new: usize) -> usize {
        self.new_to_old[new]
    }

    pub fn kept(&self) -> &[usize] {
        &self.new_to_old
    }

    pub fn len(&self) -> usize {
        self.new_to_old.len()
    }

    pub fn is_empty(&self) -> bool {
        self.new_to_old.is_empty()
    }
}

/// Subgraph on the masked nodes: keeps only edges with both endpoints in
/// the mask, reindexes densely, and recomputes degrees.
pub fn induced_subgraph(g: &Graph, mask: &NodeMask) -> Result<(Graph, IndexMap)> {
    if mask.len() != g.n() {
        return Err(Error::Invalid(format!(
            "mask length {} does not match graph size {}",
            mask.len(),
            g.n()
        )));
    }
    let new_to_old: Vec<usize> = mask.indices().collect();
    if new_to_old.is_empty() {
        return Err(Error::Invalid("empty node mask: no subgraph".into()));
    }
    let mut old_to_new = vec![None; g.n()];
    for (new, &old) in new_to_old.iter().enumerate() {
        old_to_new[old] = Some(new);
    }
    let mut edges = Vec::new();
    for (i, j) in g.edges() {
        if let (Some(a), Some(b)) = (old_to_new[i], old_to_new[j]) {
            edges.push((a, b));
        }
    }
    let sub = Graph::build(&edges, new_to_old.len())?;
    Ok((
        sub,
        IndexMap {
            old_to_new,
            new_to_old,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_edge_symmetrized() {
        let g = Graph::build(&[(0, 1)], 2).unwrap();
        assert_eq!(g.degrees(), &[1, 1]);
        assert_eq!(g.entry_count(), 2);
    }

    #[test]
    fn duplicate_and_self_loop_cleanup_is_idempotent() {
        let g1 = Graph::build(&[(0, 1)], 2).unwrap();
        let g2 = Graph::build(&[(0, 1), (1, 0), (0, 0)], 2).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn empty_edge_list_gives_isolated_nodes() {
        let g = Graph::build(&[], 3).unwrap();
        assert_eq!(g.degrees(), &[0, 0, 0]);
        assert_eq!(g.entry_count(), 0);
    }

    #[test]
    fn out_of_range_index_rejected() {
        assert!(Graph::build(&[(0, 5)], 3).is_err());
    }

    #[test]
    fn full_mask_subgraph_is_identity() {
        let g = Graph::build(&[(0, 1), (1, 2), (2, 3)], 4).unwrap();
        let (sub, map) = induced_subgraph(&g, &NodeMask::full(4)).unwrap();
        assert_eq!(sub, g);
        assert_eq!(map.kept(), &[0, 1, 2, 3]);
    }

    #[test]
    fn cutting_the_middle_of_a_path_isolates_ends() {
        let g = Graph::build(&[(0, 1), (1, 2)], 3).unwrap();
        let mask = NodeMask::from_indices(3, &[0, 2]).unwrap();
        let (sub, map) = induced_subgraph(&g, &mask).unwrap();
        assert_eq!(sub.n(), 2);
        assert_eq!(sub.degrees(), &[0, 0]);
        assert_eq!(map.new_index(2), Some(1));
        assert_eq!(map.new_index(1), None);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let g = Graph::build(&[(0, 1)], 2).unwrap();
        assert!(induced_subgraph(&g, &NodeMask::new_empty(2)).is_err());
    }

    #[test]
    fn gcn_normalization_matches_dense_oracle() {
        let g = Graph::build(&[(0, 1), (1, 2), (0, 2), (2, 3)], 5).unwrap();
        let norm = g.normalized_adjacency_with_self_loops::<f64>().to_dense();
        // dense oracle: D^(-1/2) (A + I) D^(-1/2)
        let n = g.n();
        for i in 0..n {
            for j in 0..n {
                let a_hat = if i == j {
                    1.0
                } else if g.has_edge(i, j) {
                    1.0
                } else {
                    0.0
                };
                let want = a_hat
                    / ((g.degree(i) as f64 + 1.0).sqrt() * (g.degree(j) as f64 + 1.0).sqrt());
                assert!((norm.get(i, j) - want).abs() < 1e-12);
            }
        }
        // row sums match the closed form
        for i in 0..n {
            let sum: f64 = (0..n).map(|j| norm.get(i, j)).sum();
            let want: f64 = (0..n)
                .filter(|&j| j == i || g.has_edge(i, j))
                .map(|j| {
                    1.0 / ((g.degree(i) as f64 + 1.0).sqrt() * (g.degree(j) as f64 + 1.0).sqrt())
                })
                .sum();
            assert!((sum - want).abs() < 1e-12);
        }
    }

    #[test]
    fn neighbor_mean_rows_sum_to_one_or_zero() {
        let g = Graph::build(&[(0, 1), (1, 2)], 4).unwrap();
        let m = g.neighbor_mean_matrix::<f64>().to_dense();
        for i in 0..4 {
            let sum: f64 = (0..4).map(|j| m.get(i, j)).sum();
            let want = if g.degree(i) == 0 { 0.0 } else { 1.0 };
            assert!((sum - want).abs() < 1e-12);
        }
    }

    fn arb_edges(max_n: usize) -> impl Strategy<Value = (Vec<(usize, usize)>, usize)> {
        (2..max_n).prop_flat_map(|n| {
            (
                proptest::collection::vec((0..n, 0..n), 0..3 * n),
                Just(n),
            )
        })
    }

    proptest! {
        #[test]
        fn symmetry_and_degree_consistency((edges, n) in arb_edges(60)) {
            let g = Graph::build(&edges, n).unwrap();
            for i in 0..n {
                prop_assert_eq!(g.degree(i), g.neighbors(i).len());
                for &j in g.neighbors(i) {
                    prop_assert!(g.has_edge(j, i));
                    prop_assert_ne!(j, i);
                }
                // strictly increasing column indices
                prop_assert!(g.neighbors(i).windows(2).all(|w| w[0] < w[1]));
            }
        }

        #[test]
        fn subgraph_matches_brute_force_filter((edges, n) in arb_edges(50), keep_bits in proptest::collection::vec(any::<bool>(), 50)) {
            let g = Graph::build(&edges, n).unwrap();
            let mut mask = NodeMask::new_empty(n);
            let mut any = false;
            for i in 0..n {
                if keep_bits[i % keep_bits.len()] {
                    mask.set(i, true);
                    any = true;
                }
            }
            prop_assume!(any);
            let (sub, map) = induced_subgraph(&g, &mask).unwrap();
            // brute-force oracle: every original edge inside the mask and
            // nothing else survives
            let mut want: Vec<(usize, usize)> = g.edges()
                .filter(|&(i, j)| mask.contains(i) && mask.contains(j))
                .map(|(i, j)| (map.new_index(i).unwrap(), map.new_index(j).unwrap()))
                .collect();
            want.sort_unstable();
            let mut got: Vec<(usize, usize)> = sub.edges().collect();
            got.sort_unstable();
            prop_assert_eq!(got, want);
        }
    }
}
