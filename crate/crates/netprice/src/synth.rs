//! Synthetic two-block social networks.
//!
//! The generator is a stochastic block model keyed to the protected
//! attribute: nodes in the same group connect with `p_intra`, nodes in
//! different groups with `p_inter`. Features are Gaussian with per-group
//! means, so group membership can leak into both topology and features.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::scalar::Scalar;
use crate::seeding::{self};
use crate::table::NodeTable;

/// Two-block stochastic block model configuration. The two blocks are
/// the protected groups (`s = 0`, `s = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct SbmConfig {
    block_sizes: (usize, usize),
    p_intra: f64,
    p_inter: f64,
}

impl SbmConfig {
    pub fn new(block_sizes: (usize, usize), p_intra: f64, p_inter: f64) -> Result<Self> {
        if block_sizes.0 == 0 || block_sizes.1 == 0 {
            return Err(Error::Config("sbm block sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&p_inter) || !(0.0..=1.0).contains(&p_intra) {
            return Err(Error::Config("sbm edge probabilities must lie in [0, 1]".into()));
        }
        if p_inter > p_intra {
            return Err(Error::Config(format!(
                "sbm requires p_inter <= p_intra, got {p_inter} > {p_intra}"
            )));
        }
        Ok(Self {
            block_sizes,
            p_intra,
            p_inter,
        })
    }

    pub fn n(&self) -> usize {
        self.block_sizes.0 + self.block_sizes.1
    }

    pub fn block_sizes(&self) -> (usize, usize) {
        self.block_sizes
    }
}

/// Per-group Gaussian feature specification. `means[g][k]` is the mean of
/// feature `k` in group `g`; all features share one standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    means: [Vec<f64>; 2],
    std: f64,
    names: Vec<String>,
}

impl FeatureSpec {
    pub fn new(means0: Vec<f64>, means1: Vec<f64>, std: f64) -> Result<Self> {
        if means0.len() != means1.len() {
            return Err(Error::Config(format!(
                "feature mean vectors differ in length: {} vs {}",
                means0.len(),
                means1.len()
            )));
        }
        if means0.is_empty() {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if std <= 0.0 {
            return Err(Error::Config(format!("feature std must be positive, got {std}")));
        }
        let names = (0..means0.len()).map(|k| format!("f{k}")).collect();
        Ok(Self {
            means: [means0, means1],
            std,
            names,
        })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Sample a graph and node table. Identical seeds yield bit-identical
/// output: block membership is positional, pairs are visited in a fixed
/// order, and features are drawn row-major after the edges.
pub fn sbm_generate<T: Scalar>(
    cfg: &SbmConfig,
    features: &FeatureSpec,
    seed: u64,
) -> Result<(Graph, NodeTable<T>)> {
    let n = cfg.n();
    let s: Vec<u8> = (0..n)
        .map(|i| u8::from(i >= cfg.block_sizes.0))
        .collect();

    let mut rng = seeding::stream(seed, "sbm.edges");
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if s[i] == s[j] { cfg.p_intra } else { cfg.p_inter };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let graph = Graph::build(&edges, n)?;

    let mut frng = seeding::stream(seed, "sbm.features");
    let normal = Normal::new(0.0, features.std).expect("positive std");
    let m = features.dim();
    let mut data = Vec::with_capacity(n * m);
    for (i, &si) in s.iter().enumerate().take(n) {
        let means = &features.means[usize::from(si)];
        let _ = i;
        for &mean in means.iter().take(m) {
            data.push(T::cast(mean + normal.sample(&mut frng)));
        }
    }
    let table = NodeTable::new(
        Tensor::from_vec(n, m, data)?,
        features.names().to_vec(),
        s,
        "s",
    )?;
    Ok((graph, table))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(dim: usize) -> FeatureSpec {
        FeatureSpec::new(vec![0.0; dim], vec![1.0; dim], 1.0).unwrap()
    }

    #[test]
    fn degenerate_probabilities_give_two_cliques() {
        let cfg = SbmConfig::new((3, 3), 1.0, 0.0).unwrap();
        let (g, t) = sbm_generate::<f64>(&cfg, &spec(2), 1).unwrap();
        assert_eq!(g.edge_count(), 6); // two triangles
        let cross = g
            .edges()
            .filter(|&(i, j)| t.s()[i] != t.s()[j])
            .count();
        assert_eq!(cross, 0);
    }

    #[test]
    fn zero_probabilities_give_edgeless_graph() {
        let cfg = SbmConfig::new((4, 4), 0.0, 0.0).unwrap();
        let (g, _) = sbm_generate::<f64>(&cfg, &spec(2), 1).unwrap();
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn edge_count_within_four_sigma_of_binomial_expectation() {
        // blocks (50, 50), p_intra 0.2, p_inter 0.05:
        // within-pairs 2*C(50,2) = 2450, cross-pairs 2500
        let cfg = SbmConfig::new((50, 50), 0.2, 0.05).unwrap();
        let (g, _) = sbm_generate::<f64>(&cfg, &spec(2), 7).unwrap();
        let within_pairs = 2.0 * (50.0 * 49.0 / 2.0);
        let cross_pairs = 2500.0;
        let mean = within_pairs * 0.2 + cross_pairs * 0.05;
        let var = within_pairs * 0.2 * 0.8 + cross_pairs * 0.05 * 0.95;
        let dev = (g.edge_count() as f64 - mean).abs();
        assert!(dev <= 4.0 * var.sqrt(), "edges {} vs mean {mean}", g.edge_count());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = SbmConfig::new((20, 30), 0.3, 0.1).unwrap();
        let a = sbm_generate::<f64>(&cfg, &spec(3), 42).unwrap();
        let b = sbm_generate::<f64>(&cfg, &spec(3), 42).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = sbm_generate::<f64>(&cfg, &spec(3), 43).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn zero_block_rejected() {
        assert!(SbmConfig::new((0, 5), 0.5, 0.1).is_err());
    }

    #[test]
    fn group_feature_means_separate() {
        let cfg = SbmConfig::new((200, 200), 0.01, 0.01).unwrap();
        let spec = FeatureSpec::new(vec![-1.0], vec![1.0], 0.5).unwrap();
        let (_, t) = sbm_generate::<f64>(&cfg, &spec, 3).unwrap();
        let mean_of = |g: u8| {
            let rows: Vec<f64> = (0..t.n())
                .filter(|&i| t.s()[i] == g)
                .map(|i| t.features().get(i, 0))
                .collect();
            rows.iter().sum::<f64>() / rows.len() as f64
        };
        assert!(mean_of(0) < -0.7);
        assert!(mean_of(1) > 0.7);
    }
}
