//! Market model: willingness to pay, demand families, perceived
//! unfairness, group price gap, evaluation metrics, and the uniform
//! pricing baseline.
//!
//! Everything here is a pure function of immutable inputs. The training
//! module builds differentiable mirrors of these formulas on the tape;
//! this module is the reference the metrics are computed with.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeMask};
use crate::scalar::Scalar;
use crate::table::NodeTable;

/// Demand family: willingness to pay uniform on `(0, g)` (linear demand)
/// or exponential with rate `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemandFamily {
    Linear,
    Exponential,
}

/// Affine score over the extended feature vector `(x, s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFunction<T> {
    pub intercept: T,
    /// One weight per feature column, then one for the protected attribute.
    pub weights: Vec<T>,
}

impl<T: Scalar> ScoreFunction<T> {
    /// Resolve named coefficients against a table's feature names plus its
    /// protected column. Unknown names are rejected; missing names get
    /// weight zero.
    pub fn from_named<S: AsRef<str>>(
        intercept: T,
        coefficients: &[(S, T)],
        table: &NodeTable<T>,
    ) -> Result<Self> {
        let mut weights = vec![T::zero(); table.feature_dim() + 1];
        for (name, w) in coefficients {
            let name = name.as_ref();
            let idx = if name == table.protected_name() {
                table.feature_dim()
            } else {
                table
                    .feature_names()
                    .iter()
                    .position(|f| f == name)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "demand coefficient '{name}' matches no feature column"
                        ))
                    })?
            };
            weights[idx] = *w;
        }
        Ok(Self { intercept, weights })
    }

    pub fn eval(&self, extended_row: &[T]) -> Result<T> {
        if extended_row.len() != self.weights.len() {
            return Err(Error::Invalid(format!(
                "score function over {} coefficients applied to {} features",
                self.weights.len(),
                extended_row.len()
            )));
        }
        let mut t = self.intercept;
        for (w, x) in self.weights.iter().zip(extended_row.iter()) {
            t = t + *w * *x;
        }
        Ok(t)
    }
}

/// Demand model: family plus the score function defining the
/// willingness-to-pay parameter `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandModel<T> {
    family: DemandFamily,
    score: ScoreFunction<T>,
    /// Exponential only: `g = a + b * sigmoid(t)`.
    exp_a: T,
    exp_b: T,
}

impl<T: Scalar> DemandModel<T> {
    /// Linear demand: `g = max(0, t)`.
    pub fn linear(score: ScoreFunction<T>) -> Self {
        Self {
            family: DemandFamily::Linear,
            score,
            exp_a: T::zero(),
            exp_b: T::zero(),
        }
    }

    /// Exponential demand with rate `g = a + b * sigmoid(t)`; requires
    /// `a > 0` and `b >= 0` so the rate stays positive.
    pub fn exponential(score: ScoreFunction<T>, a: T, b: T) -> Result<Self> {
        if a <= T::zero() {
            return Err(Error::Config(format!(
                "exponential demand requires a > 0, got {a}"
            )));
        }
        if b < T::zero() {
            return Err(Error::Config(format!(
                "exponential demand requires b >= 0, got {b}"
            )));
        }
        Ok(Self {
            family: DemandFamily::Exponential,
            score,
            exp_a: a,
            exp_b: b,
        })
    }

    pub fn family(&self) -> DemandFamily {
        self.family
    }

    /// Willingness-to-pay parameter for one customer.
    pub fn wtp_param(&self, extended_row: &[T]) -> Result<T> {
        let t = self.score.eval(extended_row)?;
        Ok(match self.family {
            DemandFamily::Linear => t.max(T::zero()),
            DemandFamily::Exponential => self.exp_a + self.exp_b * t.sigmoid(),
        })
    }

    /// Willingness-to-pay parameters for every row of a table.
    pub fn wtp_params(&self, table: &NodeTable<T>) -> Result<Vec<T>> {
        (0..table.n())
            .map(|i| self.wtp_param(&table.extended_row(i)))
            .collect()
    }

    /// Baseline expected demand at price `p`, in `[0, 1]`.
    pub fn base_demand(&self, g: T, p: T) -> Result<T> {
        if p < T::zero() {
            return Err(Error::Invalid(format!("negative price {p}")));
        }
        Ok(match self.family {
            DemandFamily::Linear => {
                if p == T::zero() {
                    T::one()
                } else if g <= T::zero() {
                    T::zero()
                } else {
                    (T::one() - p / g).max(T::zero())
                }
            }
            DemandFamily::Exponential => (-g * p).exp(),
        })
    }
}

/// Sensitivities of perceived unfairness; `0 < alpha < beta` encodes
/// stronger reactions to disadvantageous differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerceptionParams<T> {
    pub alpha: T,
    pub beta: T,
}

impl<T: Scalar> PerceptionParams<T> {
    pub fn new(alpha: T, beta: T) -> Result<Self> {
        if !(alpha > T::zero() && alpha < beta) {
            return Err(Error::Config(format!(
                "perception.alpha must be positive and < perception.beta, got alpha={alpha}, beta={beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }
}

/// Marginal cost and pricing upper bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketConfig<T> {
    pub cost: T,
    pub p_max: T,
}

impl<T: Scalar> MarketConfig<T> {
    pub fn new(cost: T, p_max: T) -> Result<Self> {
        if cost <= T::zero() {
            return Err(Error::Config(format!("market.cost must be positive, got {cost}")));
        }
        if p_max <= cost {
            return Err(Error::Config(format!(
                "market.p_max must exceed market.cost, got p_max={p_max}, cost={cost}"
            )));
        }
        Ok(Self { cost, p_max })
    }
}

/// Realized price difference against the neighbor-mean reference.
/// Computed as the mean of pairwise differences, so a uniform price
/// vector collapses to exact zeros; isolated nodes get zero.
pub fn price_difference<T: Scalar>(graph: &Graph, prices: &[T]) -> Result<Vec<T>> {
    if prices.len() != graph.n() {
        return Err(Error::Invalid(format!(
            "{} prices for {} nodes",
            prices.len(),
            graph.n()
        )));
    }
    Ok((0..graph.n())
        .map(|i| {
            let r = graph.degree(i);
            if r == 0 {
                return T::zero();
            }
            let mut sum = T::zero();
            for &j in graph.neighbors(i) {
                sum = sum + (prices[i] - prices[j]);
            }
            sum / T::cast(r)
        })
        .collect())
}

/// Perceived unfairness: `tanh(alpha * delta)` when at or below the
/// reference, `tanh(beta * delta)` above it. Mathematically the value
/// lies in the open interval (-1, 1); for very large arguments floating
/// point saturates tanh at exactly +-1.
pub fn perception<T: Scalar>(delta: &[T], params: &PerceptionParams<T>) -> Vec<T> {
    delta
        .iter()
        .map(|&d| {
            if d <= T::zero() {
                (params.alpha * d).tanh()
            } else {
                (params.beta * d).tanh()
            }
        })
        .collect()
}

/// Unfairness-adjusted demand `(1 - eta) * d`.
pub fn adjusted_demand<T: Scalar>(demand: &[T], eta: &[T]) -> Vec<T> {
    demand
        .iter()
        .zip(eta.iter())
        .map(|(&d, &e)| (T::one() - e) * d)
        .collect()
}

fn group_gap_over<T: Scalar>(pairs: impl Iterator<Item = (T, u8)> + Clone) -> Result<T> {
    // Shift by the first price so that a uniform vector yields exactly
    // zero; the shift cancels in the difference of means.
    let reference = pairs
        .clone()
        .next()
        .map(|(p, _)| p)
        .ok_or_else(|| Error::Invalid("group gap over an empty population".into()))?;
    let mut sum = [T::zero(), T::zero()];
    let mut count = [0usize, 0usize];
    for (p, s) in pairs {
        sum[usize::from(s)] = sum[usize::from(s)] + (p - reference);
        count[usize::from(s)] += 1;
    }
    for g in 0..2 {
        if count[g] == 0 {
            return Err(Error::EmptyGroup { group: g as u8 });
        }
    }
    let mean0 = sum[0] / T::cast(count[0]);
    let mean1 = sum[1] / T::cast(count[1]);
    Ok((mean0 - mean1).abs())
}

/// Absolute difference between the two groups' mean prices.
pub fn group_price_gap<T: Scalar>(prices: &[T], s: &[u8]) -> Result<T> {
    if prices.len() != s.len() {
        return Err(Error::Invalid(format!(
            "{} prices for {} protected attributes",
            prices.len(),
            s.len()
        )));
    }
    group_gap_over(prices.iter().copied().zip(s.iter().copied()))
}

/// The four evaluation metrics over a node subset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport<T> {
    pub pi_avg: T,
    pub p_diff: T,
    pub delta_avg: T,
    pub eta_avg: T,
    pub group_mean: [T; 2],
    pub group_size: [usize; 2],
}

/// Evaluate a price vector. Neighbor references (`delta`) use the whole
/// graph; the averages run over `eval_mask`.
pub fn metrics<T: Scalar>(
    graph: &Graph,
    table: &NodeTable<T>,
    model: &DemandModel<T>,
    params: &PerceptionParams<T>,
    cfg: &MarketConfig<T>,
    prices: &[T],
    eval_mask: &NodeMask,
) -> Result<MetricsReport<T>> {
    if table.n() != graph.n() || eval_mask.len() != graph.n() {
        return Err(Error::Invalid(
            "graph, table, and mask must cover the same nodes".into(),
        ));
    }
    if eval_mask.count() == 0 {
        return Err(Error::Invalid("empty evaluation mask".into()));
    }
    let g = model.wtp_params(table)?;
    let delta = price_difference(graph, prices)?;
    let eta = perception(&delta, params);

    let mut pi_sum = T::zero();
    let mut delta_sum = T::zero();
    let mut eta_sum = T::zero();
    let mut group_sum = [T::zero(), T::zero()];
    let mut group_size = [0usize, 0usize];
    for i in eval_mask.indices() {
        let d = model.base_demand(g[i], prices[i])?;
        let d_bar = (T::one() - eta[i]) * d;
        pi_sum = pi_sum + (prices[i] - cfg.cost) * d_bar;
        delta_sum = delta_sum + delta[i];
        eta_sum = eta_sum + eta[i];
        let gi = usize::from(table.s()[i]);
        group_sum[gi] = group_sum[gi] + prices[i];
        group_size[gi] += 1;
    }
    let k = T::cast(eval_mask.count());
    let p_diff = group_gap_over(
        eval_mask
            .indices()
            .map(|i| (prices[i], table.s()[i]))
            .collect::<Vec<_>>()
            .into_iter(),
    )?;
    Ok(MetricsReport {
        pi_avg: pi_sum / k,
        p_diff,
        delta_avg: delta_sum / k,
        eta_avg: eta_sum / k,
        group_mean: [
            if group_size[0] > 0 { group_sum[0] / T::cast(group_size[0]) } else { T::zero() },
            if group_size[1] > 0 { group_sum[1] / T::cast(group_size[1]) } else { T::zero() },
        ],
        group_size,
    })
}

/// Best single price on the grid `{0, step, ..., p_max}` by mean profit
/// over the masked population. Under a uniform price every realized
/// difference is zero, so adjusted demand equals baseline demand. Ties
/// break toward the lower price.
pub fn optimal_uniform_price<T: Scalar>(
    table: &NodeTable<T>,
    model: &DemandModel<T>,
    cfg: &MarketConfig<T>,
    grid_step: T,
    mask: &NodeMask,
) -> Result<(T, T)> {
    if grid_step <= T::zero() {
        return Err(Error::Config(format!("grid step must be positive, got {grid_step}")));
    }
    if mask.count() == 0 {
        return Err(Error::Invalid("empty population for uniform pricing".into()));
    }
    let g = model.wtp_params(table)?;
    let population: Vec<T> = mask.indices().map(|i| g[i]).collect();
    let k = T::cast(population.len());
    let mean_profit = |price: T| -> Result<T> {
        let mut sum = T::zero();
        for &gi in &population {
            sum = sum + (price - cfg.cost) * model.base_demand(gi, price)?;
        }
        Ok(sum / k)
    };

    let mut best_price = T::zero();
    let mut best_profit = mean_profit(T::zero())?;
    let mut idx = 1usize;
    let mut last = T::zero();
    loop {
        let price = grid_step * T::cast(idx);
        if price > cfg.p_max {
            break;
        }
        let profit = mean_profit(price)?;
        if profit > best_profit {
            best_profit = profit;
            best_price = price;
        }
        last = price;
        idx += 1;
    }
    if last < cfg.p_max {
        let profit = mean_profit(cfg.p_max)?;
        if profit > best_profit {
            best_profit = profit;
            best_price = cfg.p_max;
        }
    }
    Ok((best_price, best_profit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::seeding;
    use proptest::prelude::*;
    use rand::Rng;

    fn single_customer_table(feature: f64, s: u8) -> NodeTable<f64> {
        NodeTable::new(
            Tensor::from_vec(1, 1, vec![feature]).unwrap(),
            vec!["f0".into()],
            vec![s],
            "s",
        )
        .unwrap()
    }

    fn constant_model(g: f64) -> DemandModel<f64> {
        DemandModel::linear(ScoreFunction {
            intercept: g,
            weights: vec![0.0, 0.0],
        })
    }

    #[test]
    fn wtp_clamps_negative_linear_score() {
        let m = DemandModel::linear(ScoreFunction { intercept: -5.0, weights: vec![0.0] });
        assert_eq!(m.wtp_param(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn wtp_exponential_affine_of_sigmoid() {
        let m = DemandModel::exponential(
            ScoreFunction { intercept: 0.0, weights: vec![0.0] },
            0.008,
            0.022,
        )
        .unwrap();
        assert_eq!(m.wtp_param(&[0.0]).unwrap(), 0.008 + 0.022 * 0.5);
    }

    #[test]
    fn wtp_constant_score_is_intercept() {
        let m = DemandModel::linear(ScoreFunction { intercept: 80.0, weights: vec![0.0, 0.0] });
        assert_eq!(m.wtp_param(&[3.1, 1.0]).unwrap(), 80.0);
    }

    #[test]
    fn wtp_dimension_mismatch_rejected() {
        let m = constant_model(10.0);
        assert!(m.wtp_param(&[1.0]).is_err());
    }

    #[test]
    fn linear_demand_values() {
        let m = constant_model(100.0);
        assert_eq!(m.base_demand(100.0, 100.0).unwrap(), 0.0);
        assert_eq!(m.base_demand(100.0, 25.0).unwrap(), 0.75);
        assert_eq!(m.base_demand(0.0, 5.0).unwrap(), 0.0);
        assert_eq!(m.base_demand(0.0, 0.0).unwrap(), 1.0);
        assert!(m.base_demand(100.0, -1.0).is_err());
    }

    #[test]
    fn exponential_demand_value() {
        let m = DemandModel::exponential(
            ScoreFunction { intercept: 0.0, weights: vec![] },
            0.01,
            0.0,
        )
        .unwrap();
        let d = m.base_demand(0.01, 100.0).unwrap();
        assert!((d - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn price_difference_two_connected_nodes() {
        let g = Graph::build(&[(0, 1)], 2).unwrap();
        let delta = price_difference(&g, &[10.0, 14.0]).unwrap();
        assert_eq!(delta, vec![-4.0, 4.0]);
    }

    #[test]
    fn isolated_node_has_zero_difference() {
        let g = Graph::build(&[(0, 1)], 3).unwrap();
        let delta = price_difference(&g, &[10.0, 14.0, 999.0]).unwrap();
        assert_eq!(delta[2], 0.0);
    }

    #[test]
    fn uniform_prices_give_exactly_zero_differences() {
        let g = Graph::build(&[(0, 1), (1, 2), (0, 2), (2, 3)], 4).unwrap();
        let delta = price_difference(&g, &[0.1; 4]).unwrap();
        assert!(delta.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn perception_tanh_values() {
        let params = PerceptionParams::new(0.1, 0.2).unwrap();
        let eta = perception(&[0.0, -10.0, 10.0], &params);
        assert_eq!(eta[0], 0.0);
        assert!((eta[1] - (-1.0f64).tanh()).abs() < 1e-15);
        assert!((eta[2] - 2.0f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn adjusted_demand_values() {
        assert_eq!(adjusted_demand(&[0.5], &[0.0]), vec![0.5]);
        assert_eq!(adjusted_demand(&[0.5], &[-0.5]), vec![0.75]);
        assert_eq!(adjusted_demand(&[0.0], &[0.9]), vec![0.0]);
    }

    #[test]
    fn group_gap_values() {
        assert_eq!(group_price_gap(&[10.0, 12.0], &[0, 1]).unwrap(), 2.0);
        assert_eq!(group_price_gap(&[5.0, 5.0, 5.0], &[0, 1, 0]).unwrap(), 0.0);
        assert!(matches!(
            group_price_gap(&[1.0, 2.0], &[0, 0]),
            Err(Error::EmptyGroup { group: 1 })
        ));
    }

    #[test]
    fn uniform_gap_exactly_zero_with_unequal_group_sizes() {
        // 3 vs 4 copies of 0.1: naive group means differ in the last ulp
        let prices = vec![0.1; 7];
        let s = vec![0, 0, 0, 1, 1, 1, 1];
        assert_eq!(group_price_gap(&prices, &s).unwrap(), 0.0);
    }

    #[test]
    fn metrics_two_node_market() {
        let g = Graph::build(&[(0, 1)], 2).unwrap();
        let table = NodeTable::new(
            Tensor::from_vec(2, 1, vec![0.0, 0.0]).unwrap(),
            vec!["f0".into()],
            vec![0, 1],
            "s",
        )
        .unwrap();
        let model = constant_model(100.0);
        let params = PerceptionParams::new(0.1, 0.2).unwrap();
        let cfg = MarketConfig::new(20.0, 400.0).unwrap();
        let r = metrics(&g, &table, &model, &params, &cfg, &[60.0, 60.0], &NodeMask::full(2)).unwrap();
        // (60 - 20) * (1 - 0.6) = 16 for both customers
        assert_eq!(r.pi_avg, 16.0);
        assert_eq!(r.p_diff, 0.0);
        assert_eq!(r.delta_avg, 0.0);
        assert_eq!(r.eta_avg, 0.0);
        assert_eq!(r.group_size, [1, 1]);
    }

    #[test]
    fn prices_at_cost_give_zero_profit() {
        let g = Graph::build(&[(0, 1)], 2).unwrap();
        let table = NodeTable::new(
            Tensor::from_vec(2, 1, vec![0.0, 0.0]).unwrap(),
            vec!["f0".into()],
            vec![0, 1],
            "s",
        )
        .unwrap();
        let model = constant_model(100.0);
        let params = PerceptionParams::new(0.1, 0.2).unwrap();
        let cfg = MarketConfig::new(20.0, 400.0).unwrap();
        let r = metrics(&g, &table, &model, &params, &cfg, &[20.0, 20.0], &NodeMask::full(2)).unwrap();
        assert_eq!(r.pi_avg, 0.0);
    }

    #[test]
    fn uniform_price_single_customer_linear_matches_closed_form() {
        let table = single_customer_table(0.0, 0);
        // one customer cannot populate both groups; gap is not part of
        // the uniform search
        let model = constant_model(100.0);
        let cfg = MarketConfig::new(20.0, 400.0).unwrap();
        let (p, _) =
            optimal_uniform_price(&table, &model, &cfg, 0.1, &NodeMask::full(1)).unwrap();
        assert!((p - 60.0).abs() <= 0.1 + 1e-9, "p = {p}");
    }

    #[test]
    fn uniform_price_single_customer_exponential_matches_closed_form() {
        let table = single_customer_table(0.0, 0);
        let model = DemandModel::exponential(
            ScoreFunction { intercept: -100.0, weights: vec![0.0, 0.0] },
            0.01,
            0.0,
        )
        .unwrap();
        let cfg = MarketConfig::new(20.0, 400.0).unwrap();
        let (p, _) =
            optimal_uniform_price(&table, &model, &cfg, 0.1, &NodeMask::full(1)).unwrap();
        // argmax of (p - c) exp(-g p) is c + 1/g = 120
        assert!((p - 120.0).abs() <= 0.1 + 1e-9, "p = {p}");
    }

    #[test]
    fn uniform_price_two_customers_matches_fine_grid_oracle() {
        let table = NodeTable::new(
            Tensor::from_vec(2, 1, vec![100.0, 200.0]).unwrap(),
            vec!["f0".into()],
            vec![0, 1],
            "s",
        )
        .unwrap();
        let model = DemandModel::linear(ScoreFunction { intercept: 0.0, weights: vec![1.0, 0.0] });
        let cfg = MarketConfig::new(20.0, 400.0).unwrap();
        let (p, profit) =
            optimal_uniform_price(&table, &model, &cfg, 0.1, &NodeMask::full(2)).unwrap();

        // brute force at ten times the resolution
        let mut best = (0.0f64, f64::MIN);
        let mut k = 0usize;
        loop {
            let cand = 0.01 * k as f64;
            if cand > 400.0 {
                break;
            }
            let d0 = (1.0f64 - cand / 100.0).max(0.0);
            let d1 = (1.0f64 - cand / 200.0).max(0.0);
            let pr = (cand - 20.0) * (d0 + d1) / 2.0;
            if pr > best.1 {
                best = (cand, pr);
            }
            k += 1;
        }
        assert!((p - best.0).abs() <= 0.1 + 1e-9, "p = {p}, oracle = {}", best.0);
        assert!(profit <= best.1 + 1e-9);
    }

    #[test]
    fn grid_search_profit_dominates_every_grid_point() {
        let table = NodeTable::new(
            Tensor::from_vec(3, 1, vec![80.0, 150.0, 50.0]).unwrap(),
            vec!["f0".into()],
            vec![0, 1, 0],
            "s",
        )
        .unwrap();
        let model = DemandModel::linear(ScoreFunction { intercept: 0.0, weights: vec![1.0, 0.0] });
        let cfg = MarketConfig::new(10.0, 200.0).unwrap();
        let step = 0.5;
        let (_, best) = optimal_uniform_price(&table, &model, &cfg, step, &NodeMask::full(3)).unwrap();
        let mut k = 0usize;
        loop {
            let cand = step * k as f64;
            if cand > 200.0 {
                break;
            }
            let pr: f64 = (0..3)
                .map(|i| {
                    let g = table.features().get(i, 0);
                    (cand - 10.0) * (1.0 - cand / g).max(0.0)
                })
                .sum::<f64>()
                / 3.0;
            assert!(best >= pr - 1e-12);
            k += 1;
        }
    }

    #[test]
    fn perception_params_validated() {
        assert!(PerceptionParams::new(0.2, 0.1).is_err());
        assert!(PerceptionParams::new(0.0, 0.1).is_err());
        assert!(PerceptionParams::new(0.1, 0.2).is_ok());
    }

    #[test]
    fn market_config_validated() {
        assert!(MarketConfig::new(0.0, 10.0).is_err());
        assert!(MarketConfig::new(10.0, 5.0).is_err());
        assert!(MarketConfig::new(10.0, 50.0).is_ok());
    }

    proptest! {
        /// Degree-weighted conservation: sum_i r_i * delta_i = 0 on every
        /// symmetric graph (pairwise differences cancel).
        #[test]
        fn degree_weighted_differences_conserve(
            seed in 0u64..500,
            n in 2usize..60,
        ) {
            let mut rng = seeding::stream(seed, "conservation");
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.gen::<f64>() < 0.15 {
                        edges.push((i, j));
                    }
                }
            }
            let g = Graph::build(&edges, n).unwrap();
            let prices: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..300.0)).collect();
            let delta = price_difference(&g, &prices).unwrap();
            let weighted: f64 = (0..n).map(|i| g.degree(i) as f64 * delta[i]).sum();
            prop_assert!(weighted.abs() < 1e-9, "residual {weighted}");
        }

        /// Asymmetry: a positive difference is felt at least as strongly as
        /// the equal negative one, and strictly so for delta > 0.
        #[test]
        fn perception_asymmetry_and_monotonicity(
            delta in 0.0f64..100.0,
            alpha in 0.01f64..0.5,
            gap in 0.01f64..0.5,
        ) {
            let params = PerceptionParams::new(alpha, alpha + gap).unwrap();
            let eta = perception(&[delta, -delta], &params);
            prop_assert!(eta[0].abs() >= eta[1].abs() - 1e-15);
            // strictly stronger above the reference, until tanh saturates
            if delta > 0.0 && (params.beta * delta).abs() < 19.0 {
                prop_assert!(eta[0].abs() > eta[1].abs());
            }
            // monotone in delta
            let eta2 = perception(&[delta + 1.0], &params);
            prop_assert!(eta2[0] >= eta[0]);
            // range: open interval until tanh saturates in f64
            prop_assert!((-1.0..=1.0).contains(&eta[0]));
            if (params.beta * delta).abs() < 19.0 {
                prop_assert!(eta[0] > -1.0 && eta[0] < 1.0);
            }
        }

        /// Demand ranges and monotonicity in price for both families.
        #[test]
        fn demand_in_unit_interval_and_nonincreasing(
            g in 0.0f64..300.0,
            p1 in 0.0f64..400.0,
            bump in 0.0f64..50.0,
        ) {
            for family in [DemandFamily::Linear, DemandFamily::Exponential] {
                let model = match family {
                    DemandFamily::Linear => constant_model(g),
                    DemandFamily::Exponential => DemandModel::exponential(
                        ScoreFunction { intercept: 0.0, weights: vec![0.0, 0.0] },
                        0.001 + g / 30000.0,
                        0.0,
                    ).unwrap(),
                };
                let rate = match family {
                    DemandFamily::Linear => g,
                    DemandFamily::Exponential => 0.001 + g / 30000.0,
                };
                let d1 = model.base_demand(rate, p1).unwrap();
                let d2 = model.base_demand(rate, p1 + bump).unwrap();
                prop_assert!((0.0..=1.0).contains(&d1));
                prop_assert!(d2 <= d1 + 1e-15);
            }
        }
    }
}
