//! Alternating minimax training: profit loss, group-gap regularizer,
//! adversarial debiasing, candidate selection under the group-fairness
//! threshold, and the Jensen-Shannon divergence diagnostic.

use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{AdamConfig, GroupSnapshot, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{induced_subgraph, Graph, NodeMask};
use crate::market::{self, DemandFamily, DemandModel, MarketConfig, PerceptionParams};
use crate::policy::{
    encode, forward_prices, forward_representations, price_head, EncodeMode, EncoderConfig,
    Policy, POLICY_GROUP,
};
use crate::scalar::Scalar;
use crate::seeding::{self, Rng64};
use crate::table::NodeTable;

/// Parameter group name for the adversary.
pub const ADVERSARY_GROUP: &str = "adversary";

/// Probability clamp for the cross-entropy terms.
pub const PROB_EPS: f64 = 1e-7;

/// Full-batch Adam steps used to fit a probe classifier.
pub const PROBE_STEPS: usize = 300;
/// Learning rate for probe classifiers.
pub const PROBE_LR: f64 = 0.02;
/// Fraction of rows a held-out probe trains on.
pub const PROBE_TRAIN_FRACTION: f64 = 0.8;

fn glorot<T: Scalar>(rng: &mut Rng64, rows: usize, cols: usize) -> Tensor<T> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::cast(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized data")
}

/// Linear classifier predicting the protected attribute from final-layer
/// representations.
pub struct Adversary<T> {
    weight: Tensor<T>,
    bias: Tensor<T>,
}

impl<T: Scalar> Adversary<T> {
    pub fn init(representation_dim: usize, seed: u64) -> Self {
        let mut rng = seeding::stream(seed, "adversary.init");
        Self {
            weight: glorot(&mut rng, representation_dim, 1),
            bias: Tensor::zeros(1, 1),
        }
    }

    pub fn install_params(&self, store: &mut ParamStore<T>) -> Result<()> {
        store.register(ADVERSARY_GROUP, "adversary.weight", self.weight.clone())?;
        store.register(ADVERSARY_GROUP, "adversary.bias", self.bias.clone())?;
        Ok(())
    }
}

fn linear_sigmoid<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    h: Var,
    weight_name: &str,
    bias_name: &str,
) -> Result<Var> {
    let w = store
        .id(weight_name)
        .ok_or_else(|| Error::Invalid(format!("parameter '{weight_name}' not registered")))?;
    let b = store
        .id(bias_name)
        .ok_or_else(|| Error::Invalid(format!("parameter '{bias_name}' not registered")))?;
    let wv = tape.param(store, w);
    let bv = tape.param(store, b);
    let z = tape.matmul(h, wv)?;
    let z = tape.add_bias(z, bv)?;
    Ok(tape.sigmoid(z))
}

/// Predicted probability that `s = 1` for each representation row.
pub fn adversary_scores<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    h: Var,
) -> Result<Var> {
    linear_sigmoid(tape, store, h, "adversary.weight", "adversary.bias")
}

fn column_constant<T: Scalar>(tape: &mut Tape<T>, values: Vec<T>) -> Var {
    let n = values.len();
    tape.constant(Tensor::from_vec(n, 1, values).expect("sized data"))
}

/// Negative average unfairness-adjusted profit over the masked nodes,
/// differentiable through the neighbor-mean reference and the perception
/// branch (the tanh branch indicator is held constant at its forward
/// value, with the alpha branch at exactly zero difference).
pub fn profit_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    prices: Var,
    graph: &Graph,
    wtp: &[T],
    family: DemandFamily,
    perception: &PerceptionParams<T>,
    cost: T,
    mask: &NodeMask,
) -> Result<Var> {
    let n = graph.n();
    if tape.value(prices).shape() != (n, 1) {
        return Err(Error::DimMismatch {
            op: "profit_loss",
            lhs: tape.value(prices).shape(),
            rhs: (n, 1),
        });
    }
    if wtp.len() != n || mask.len() != n {
        return Err(Error::Invalid("wtp/mask length does not match the graph".into()));
    }
    let k = mask.count();
    if k == 0 {
        return Err(Error::Invalid("empty training mask".into()));
    }

    let demand = match family {
        DemandFamily::Linear => {
            let inv_g: Vec<T> = wtp
                .iter()
                .map(|&g| if g > T::zero() { T::one() / g } else { T::zero() })
                .collect();
            let pos_g: Vec<T> = wtp
                .iter()
                .map(|&g| if g > T::zero() { T::one() } else { T::zero() })
                .collect();
            let inv_gv = column_constant(tape, inv_g);
            let pos_gv = column_constant(tape, pos_g);
            let ratio = tape.mul(prices, inv_gv)?;
            let neg = tape.scale(ratio, -T::one());
            let one_minus = tape.add_scalar(neg, T::one());
            let clamped = tape.relu(one_minus);
            tape.mul(clamped, pos_gv)?
        }
        DemandFamily::Exponential => {
            let neg_g: Vec<T> = wtp.iter().map(|&g| -g).collect();
            let neg_gv = column_constant(tape, neg_g);
            let exponent = tape.mul(prices, neg_gv)?;
            tape.exp(exponent)
        }
    };

    let neighbor_mean = Rc::new(graph.neighbor_mean_matrix::<T>());
    let reference = tape.sparse_matmul(neighbor_mean, prices)?;
    let raw_delta = tape.sub(prices, reference)?;
    let has_neighbors: Vec<T> = (0..n)
        .map(|i| if graph.degree(i) > 0 { T::one() } else { T::zero() })
        .collect();
    let has_nv = column_constant(tape, has_neighbors);
    let delta = tape.mul(raw_delta, has_nv)?;

    let coeff: Vec<T> = tape
        .value(delta)
        .data()
        .iter()
        .map(|&d| if d <= T::zero() { perception.alpha } else { perception.beta })
        .collect();
    let coeff_v = column_constant(tape, coeff);
    let scaled = tape.mul(delta, coeff_v)?;
    let eta = tape.tanh_act(scaled);
    let neg_eta = tape.scale(eta, -T::one());
    let one_minus_eta = tape.add_scalar(neg_eta, T::one());

    let margin = tape.add_scalar(prices, -cost);
    let partial = tape.mul(margin, one_minus_eta)?;
    let profit = tape.mul(partial, demand)?;

    let inv_k = T::one() / T::cast(k);
    let weights: Vec<T> = (0..n)
        .map(|i| if mask.contains(i) { inv_k } else { T::zero() })
        .collect();
    let wv = column_constant(tape, weights);
    let weighted = tape.mul(profit, wv)?;
    let total = tape.sum_all(weighted);
    Ok(tape.scale(total, -T::one()))
}

/// Absolute gap between the two groups' mean prices over the masked
/// nodes; the subgradient at the kink is zero.
pub fn group_gap_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    prices: Var,
    s: &[u8],
    mask: &NodeMask,
) -> Result<Var> {
    let n = s.len();
    if tape.value(prices).shape() != (n, 1) || mask.len() != n {
        return Err(Error::Invalid("prices/mask length does not match s".into()));
    }
    let mut counts = [0usize; 2];
    let mut first_masked = None;
    for i in mask.indices() {
        counts[usize::from(s[i])] += 1;
        first_masked.get_or_insert(i);
    }
    for g in 0..2 {
        if counts[g] == 0 {
            return Err(Error::EmptyGroup { group: g as u8 });
        }
    }
    // shift by one observed price; the shift cancels in the difference of
    // means and carries no gradient
    let reference = tape.value(prices).get(first_masked.expect("non-empty mask"), 0);
    let shifted = tape.add_scalar(prices, -reference);
    let weights: Vec<T> = (0..n)
        .map(|i| {
            if !mask.contains(i) {
                T::zero()
            } else if s[i] == 0 {
                T::one() / T::cast(counts[0])
            } else {
                -(T::one() / T::cast(counts[1]))
            }
        })
        .collect();
    let wv = column_constant(tape, weights);
    let weighted = tape.mul(shifted, wv)?;
    let gap = tape.sum_all(weighted);
    Ok(tape.abs(gap))
}

fn log_terms<T: Scalar>(tape: &mut Tape<T>, s_hat: Var) -> (Var, Var) {
    let eps = T::cast(PROB_EPS);
    let clamped = tape.clamp(s_hat, eps, T::one() - eps);
    let ln_pos = tape.ln(clamped);
    let neg = tape.scale(clamped, -T::one());
    let one_minus = tape.add_scalar(neg, T::one());
    let ln_neg = tape.ln(one_minus);
    (ln_pos, ln_neg)
}

/// Mean binary cross-entropy of the adversary's predictions over the
/// masked nodes, with probabilities clamped away from 0 and 1.
pub fn bce_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    s_hat: Var,
    s: &[u8],
    mask: &NodeMask,
) -> Result<Var> {
    let n = s.len();
    if tape.value(s_hat).shape() != (n, 1) || mask.len() != n {
        return Err(Error::Invalid("scores/mask length does not match s".into()));
    }
    let k = mask.count();
    if k == 0 {
        return Err(Error::Invalid("empty mask for cross-entropy".into()));
    }
    let inv_k = T::one() / T::cast(k);
    let (ln_pos, ln_neg) = log_terms(tape, s_hat);
    let w_pos: Vec<T> = (0..n)
        .map(|i| if mask.contains(i) && s[i] == 1 { inv_k } else { T::zero() })
        .collect();
    let w_neg: Vec<T> = (0..n)
        .map(|i| if mask.contains(i) && s[i] == 0 { inv_k } else { T::zero() })
        .collect();
    let wp = column_constant(tape, w_pos);
    let wn = column_constant(tape, w_neg);
    let tp = tape.mul(ln_pos, wp)?;
    let tn = tape.mul(ln_neg, wn)?;
    let sp = tape.sum_all(tp);
    let sn = tape.sum_all(tn);
    let sum = tape.add(sp, sn)?;
    Ok(tape.scale(sum, -T::one()))
}

/// Empirical value function of the adversarial game: per-group means of
/// `ln s_hat` (group 1) and `ln(1 - s_hat)` (group 0).
pub fn value_fn_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    s_hat: Var,
    s: &[u8],
    mask: &NodeMask,
) -> Result<Var> {
    let n = s.len();
    let mut counts = [0usize; 2];
    for i in mask.indices() {
        counts[usize::from(s[i])] += 1;
    }
    for g in 0..2 {
        if counts[g] == 0 {
            return Err(Error::EmptyGroup { group: g as u8 });
        }
    }
    let (ln_pos, ln_neg) = log_terms(tape, s_hat);
    let w_pos: Vec<T> = (0..n)
        .map(|i| {
            if mask.contains(i) && s[i] == 1 {
                T::one() / T::cast(counts[1])
            } else {
                T::zero()
            }
        })
        .collect();
    let w_neg: Vec<T> = (0..n)
        .map(|i| {
            if mask.contains(i) && s[i] == 0 {
                T::one() / T::cast(counts[0])
            } else {
                T::zero()
            }
        })
        .collect();
    let wp = column_constant(tape, w_pos);
    let wn = column_constant(tape, w_neg);
    let tp = tape.mul(ln_pos, wp)?;
    let tn = tape.mul(ln_neg, wn)?;
    let sp = tape.sum_all(tp);
    let sn = tape.sum_all(tn);
    tape.add(sp, sn)
}

/// `JSD = (V + log 4) / 2`, clamped at zero.
pub fn jsd_from_value(v: f64) -> f64 {
    ((v + 4f64.ln()) / 2.0).max(0.0)
}

#[derive(Debug, Clone, Copy)]
pub struct JsdReport {
    pub value_fn: f64,
    pub jsd: f64,
}

fn select_rows<T: Scalar>(h: &Tensor<T>, rows: &[usize]) -> Tensor<T> {
    let mut data = Vec::with_capacity(rows.len() * h.cols());
    for &i in rows {
        data.extend_from_slice(h.row(i));
    }
    Tensor::from_vec(rows.len(), h.cols(), data).expect("sized data")
}

/// Fit a linear probe maximizing the empirical value function on the
/// given representation rows.
fn fit_probe<T: Scalar>(h: &Tensor<T>, s: &[u8], rows: &[usize], seed: u64) -> Result<ParamStore<T>> {
    let sub_h = select_rows(h, rows);
    let sub_s: Vec<u8> = rows.iter().map(|&i| s[i]).collect();
    let mask = NodeMask::full(rows.len());
    let mut store = ParamStore::new();
    let mut rng = seeding::stream(seed, "probe.init");
    store.register("probe", "probe.weight", glorot(&mut rng, h.cols(), 1))?;
    store.register("probe", "probe.bias", Tensor::zeros(1, 1))?;
    let adam = AdamConfig::new(T::cast(PROBE_LR), T::zero());
    for _ in 0..PROBE_STEPS {
        store.zero_grads();
        let mut tape = Tape::new();
        let hv = tape.constant(sub_h.clone());
        let scores = linear_sigmoid(&mut tape, &store, hv, "probe.weight", "probe.bias")?;
        let v = value_fn_on_tape(&mut tape, scores, &sub_s, &mask)?;
        let loss = tape.scale(v, -T::one());
        tape.backward(loss, &mut store)?;
        store.adam_step("probe", &adam)?;
    }
    Ok(store)
}

/// Estimate the divergence between the two groups' representation
/// distributions with a freshly trained probe adversary.
pub fn estimate_jsd<T: Scalar>(h: &Tensor<T>, s: &[u8], seed: u64) -> Result<JsdReport> {
    let all: Vec<usize> = (0..h.rows()).collect();
    let store = fit_probe(h, s, &all, seed)?;
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let scores = linear_sigmoid(&mut tape, &store, hv, "probe.weight", "probe.bias")?;
    let v = value_fn_on_tape(&mut tape, scores, s, &NodeMask::full(h.rows()))?;
    let value_fn = tape.scalar_value(v).as_f64();
    Ok(JsdReport {
        value_fn,
        jsd: jsd_from_value(value_fn),
    })
}

/// Train a probe on 80% of the rows and report its accuracy on the rest.
pub fn probe_heldout_accuracy<T: Scalar>(h: &Tensor<T>, s: &[u8], seed: u64) -> Result<f64> {
    let n = h.rows();
    if n < 5 {
        return Err(Error::Invalid("too few rows for a held-out probe".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeding::stream(seed, "probe.split"));
    let n_train = ((n as f64) * PROBE_TRAIN_FRACTION).floor() as usize;
    let n_train = n_train.clamp(1, n - 1);
    let (train_rows, test_rows) = idx.split_at(n_train);
    let store = fit_probe(h, s, train_rows, seed)?;
    let sub_h = select_rows(h, test_rows);
    let mut tape = Tape::new();
    let hv = tape.constant(sub_h);
    let scores = linear_sigmoid(&mut tape, &store, hv, "probe.weight", "probe.bias")?;
    let values = tape.value(scores);
    let correct = test_rows
        .iter()
        .enumerate()
        .filter(|&(row, &i)| (values.get(row, 0).as_f64() > 0.5) == (s[i] == 1))
        .count();
    Ok(correct as f64 / test_rows.len() as f64)
}

/// Scalar hyperparameters of one training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig<T> {
    pub lambda: T,
    pub phi: T,
    pub tau: T,
    pub lr: T,
    /// The adversary steps at `lr * adv_lr_scale`; values above 1 let the
    /// one-step-per-epoch adversary track the encoder.
    pub adv_lr_scale: T,
    pub weight_decay: T,
    pub max_epochs: usize,
    pub eval_every: usize,
    pub seed: u64,
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < T::zero() || self.phi < T::zero() || self.tau < T::zero() {
            return Err(Error::Config("train.lambda/phi/tau must be nonnegative".into()));
        }
        if self.lr <= T::zero() {
            return Err(Error::Config(format!("train.lr must be positive, got {}", self.lr)));
        }
        if self.adv_lr_scale <= T::zero() {
            return Err(Error::Config(format!(
                "train.adv_lr_scale must be positive, got {}",
                self.adv_lr_scale
            )));
        }
        if self.weight_decay < T::zero() {
            return Err(Error::Config("train.weight_decay must be nonnegative".into()));
        }
        if self.max_epochs == 0 || self.eval_every == 0 {
            return Err(Error::Config("train.max_epochs and train.eval_every must be positive".into()));
        }
        Ok(())
    }
}

/// The market and masks one training run operates on. The training graph
/// is the induced subgraph of `train_mask`; candidates are evaluated on
/// the induced subgraph of `selection_mask` (train plus validation).
pub struct TrainInputs<'a, T> {
    pub graph: &'a Graph,
    pub table: &'a NodeTable<T>,
    pub model: &'a DemandModel<T>,
    pub perception: &'a PerceptionParams<T>,
    pub market: &'a MarketConfig<T>,
    pub train_mask: &'a NodeMask,
    pub selection_mask: &'a NodeMask,
}

/// Selection metrics recorded at one evaluation epoch.
#[derive(Debug, Clone, Copy)]
pub struct EvalRecord {
    pub pi_avg: f64,
    pub p_diff: f64,
    pub jsd: Option<f64>,
}

/// One epoch of the training log.
#[derive(Debug, Clone, Copy)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_profit: f64,
    /// Absent when the training population holds a single protected group.
    pub loss_reg: Option<f64>,
    pub loss_adv: f64,
    pub total: f64,
    pub eval: Option<EvalRecord>,
}

/// Checkpointed candidate with its selection-mask metrics.
pub struct Candidate<T> {
    pub epoch: usize,
    pub pi_avg: f64,
    pub p_diff: f64,
    pub snapshot: GroupSnapshot<T>,
}

/// Per-epoch log plus the full candidate pool of one run.
pub struct TrainRun<T> {
    pub epochs: Vec<EpochRecord>,
    pub pool: Vec<Candidate<T>>,
}

/// A selected policy together with its run diagnostics.
pub struct TrainOutcome<T> {
    pub policy: Policy<T>,
    pub selected_epoch: usize,
    pub run: TrainRun<T>,
}

/// Training failure. `Infeasible` carries the full run so callers can
/// diagnose or deliberately fall back; it is never silently converted
/// into a selected policy.
pub enum TrainFailure<T> {
    Infeasible {
        tau: f64,
        run: TrainRun<T>,
        config: EncoderConfig,
        p_max: T,
    },
    Error(Error),
}

impl<T> From<Error> for TrainFailure<T> {
    fn from(e: Error) -> Self {
        TrainFailure::Error(e)
    }
}

impl<T: Scalar> TrainFailure<T> {
    pub fn into_error(self) -> Error {
        match self {
            TrainFailure::Error(e) => e,
            TrainFailure::Infeasible { tau, run, .. } => {
                let best = run
                    .pool
                    .iter()
                    .min_by(|a, b| a.p_diff.partial_cmp(&b.p_diff).expect("finite p_diff"));
                Error::Infeasible {
                    tau,
                    best_p_diff: best.map_or(f64::NAN, |c| c.p_diff),
                    best_epoch: best.map_or(0, |c| c.epoch),
                }
            }
        }
    }
}

/// Highest-profit candidate among those with `p_diff <= tau`; ties break
/// toward the earlier epoch.
pub fn select_feasible_max_profit<T>(pool: &[Candidate<T>], tau: f64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in pool.iter().enumerate() {
        if c.p_diff > tau {
            continue;
        }
        match best {
            Some(b) if pool[b].pi_avg >= c.pi_avg => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Fallback selection when no candidate satisfies the threshold: lowest
/// gap among candidates keeping at least `profit_floor_ratio` of the
/// pool's best profit.
pub fn select_lowest_gap_with_profit_floor<T>(
    pool: &[Candidate<T>],
    profit_floor_ratio: f64,
) -> Option<usize> {
    let best_pi = pool.iter().map(|c| c.pi_avg).fold(f64::NEG_INFINITY, f64::max);
    let floor = profit_floor_ratio * best_pi;
    let mut best: Option<usize> = None;
    for (i, c) in pool.iter().enumerate() {
        if c.pi_avg < floor {
            continue;
        }
        match best {
            Some(b) if pool[b].p_diff <= c.p_diff => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Pure profit selection, ignoring the fairness threshold entirely.
pub fn select_max_profit_unconstrained<T>(pool: &[Candidate<T>]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in pool.iter().enumerate() {
        match best {
            Some(b) if pool[b].pi_avg >= c.pi_avg => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Rebuild a policy from a checkpointed candidate.
pub fn policy_from_candidate<T: Scalar>(
    config: &EncoderConfig,
    p_max: T,
    candidate: &Candidate<T>,
) -> Result<Policy<T>> {
    let mut store = ParamStore::new();
    for (name, value) in &candidate.snapshot.values {
        store.register(POLICY_GROUP, name, value.clone())?;
    }
    Policy::from_parts(config.clone(), p_max, store)
}

/// Mean profit and group gap of a price vector over a whole evaluation
/// graph. When the population holds a single protected group the gap is
/// reported as zero (no disparity is measurable).
fn selection_metrics<T: Scalar>(
    graph: &Graph,
    table: &NodeTable<T>,
    model: &DemandModel<T>,
    perception: &PerceptionParams<T>,
    market_cfg: &MarketConfig<T>,
    prices: &[T],
) -> Result<(f64, f64)> {
    let g = model.wtp_params(table)?;
    let delta = market::price_difference(graph, prices)?;
    let eta = market::perception(&delta, perception);
    let mut pi = T::zero();
    for i in 0..graph.n() {
        let d = model.base_demand(g[i], prices[i])?;
        // same association as market::metrics, so evaluate-from-checkpoint
        // reproduces these values bit-identically
        let d_bar = (T::one() - eta[i]) * d;
        pi = pi + (prices[i] - market_cfg.cost) * d_bar;
    }
    pi = pi / T::cast(graph.n());
    let (n0, n1) = table.group_sizes();
    let p_diff = if n0 > 0 && n1 > 0 {
        market::group_price_gap(prices, table.s())?.as_f64()
    } else {
        0.0
    };
    Ok((pi.as_f64(), p_diff))
}

/// Alternating minimax training. Each epoch: (1) fix the adversary and
/// Adam-step the policy on `L_profit + lambda L_reg - phi L_adv`;
/// (2) fix the policy, recompute representations, and Adam-step the
/// adversary up the cross-entropy. Every `eval_every` epochs (and at the
/// final epoch) a candidate is checkpointed with eval-mode metrics on the
/// selection graph. Returns the highest-profit candidate with
/// `p_diff <= tau`, or the full run as [`TrainFailure::Infeasible`].
pub fn train<T: Scalar>(
    policy: Policy<T>,
    adversary: Adversary<T>,
    inputs: &TrainInputs<'_, T>,
    cfg: &TrainConfig<T>,
) -> std::result::Result<TrainOutcome<T>, TrainFailure<T>> {
    cfg.validate()?;
    let (train_graph, train_map) = induced_subgraph(inputs.graph, inputs.train_mask)?;
    let train_table = inputs.table.subset(&train_map);
    let (sel_graph, sel_map) = induced_subgraph(inputs.graph, inputs.selection_mask)?;
    let sel_table = inputs.table.subset(&sel_map);

    let wtp_train = inputs.model.wtp_params(&train_table)?;
    let family = inputs.model.family();
    let enc_cfg = policy.config().clone();
    let p_max = policy.p_max();

    let mut store = ParamStore::new();
    policy.install_params(&mut store)?;
    adversary.install_params(&mut store)?;

    let adam = AdamConfig::new(cfg.lr, cfg.weight_decay);
    let adv_adam = AdamConfig::new(cfg.lr * cfg.adv_lr_scale, cfg.weight_decay);
    let mut drop_rng = seeding::stream(cfg.seed, "train.dropout");

    let train_all = NodeMask::full(train_graph.n());
    let s_train = train_table.s().to_vec();
    let lambda_active = cfg.lambda > T::zero();
    let phi_active = cfg.phi > T::zero();
    let groups_present = {
        let (n0, n1) = train_table.group_sizes();
        n0 > 0 && n1 > 0
    };
    if lambda_active && !groups_present {
        let (n0, _) = train_table.group_sizes();
        return Err(Error::EmptyGroup {
            group: u8::from(n0 > 0),
        }
        .into());
    }

    let mut epochs = Vec::with_capacity(cfg.max_epochs);
    let mut pool: Vec<Candidate<T>> = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        // (1) policy step against the full objective
        store.zero_grads();
        let mut tape = Tape::new();
        let xv = tape.constant(train_table.features().clone());
        let h = {
            let mut mode = EncodeMode::Train { rng: &mut drop_rng };
            encode(&mut tape, &store, &enc_cfg, xv, &train_graph, &mut mode)?
        };
        let p = price_head(&mut tape, &store, p_max, h)?;
        let lp = profit_loss_on_tape(
            &mut tape,
            p,
            &train_graph,
            &wtp_train,
            family,
            inputs.perception,
            inputs.market.cost,
            &train_all,
        )?;
        let reg = if groups_present {
            Some(group_gap_loss_on_tape(&mut tape, p, &s_train, &train_all)?)
        } else {
            None
        };
        let s_hat = adversary_scores(&mut tape, &store, h)?;
        let ladv = bce_loss_on_tape(&mut tape, s_hat, &s_train, &train_all)?;
        let mut total = lp;
        if lambda_active {
            let term = tape.scale(reg.expect("groups present"), cfg.lambda);
            total = tape.add(total, term)?;
        }
        if phi_active {
            let term = tape.scale(ladv, -cfg.phi);
            total = tape.add(total, term)?;
        }
        tape.backward(total, &mut store)?;
        store.adam_step(POLICY_GROUP, &adam)?;

        let record_losses = (
            tape.scalar_value(lp).as_f64(),
            reg.map(|r| tape.scalar_value(r).as_f64()),
            tape.scalar_value(ladv).as_f64(),
            tape.scalar_value(total).as_f64(),
        );
        drop(tape);

        // (2) adversary step: ascend the cross-entropy on fresh
        // representations, policy fixed
        store.zero_grads();
        let mut tape2 = Tape::new();
        let xv2 = tape2.constant(train_table.features().clone());
        let h2 = {
            let mut mode = EncodeMode::Train { rng: &mut drop_rng };
            encode(&mut tape2, &store, &enc_cfg, xv2, &train_graph, &mut mode)?
        };
        let s_hat2 = adversary_scores(&mut tape2, &store, h2)?;
        let ladv2 = bce_loss_on_tape(&mut tape2, s_hat2, &s_train, &train_all)?;
        let ascent = tape2.scale(ladv2, -T::one());
        tape2.backward(ascent, &mut store)?;
        store.adam_step(ADVERSARY_GROUP, &adv_adam)?;
        drop(tape2);

        let eval = if epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs {
            let prices = forward_prices(&store, &enc_cfg, p_max, sel_table.features(), &sel_graph)?;
            let (pi_avg, p_diff) = selection_metrics(
                &sel_graph,
                &sel_table,
                inputs.model,
                inputs.perception,
                inputs.market,
                &prices,
            )?;
            let jsd = if groups_present {
                let reps = forward_representations(
                    &store,
                    &enc_cfg,
                    train_table.features(),
                    &train_graph,
                )?;
                let probe_seed = seeding::derive_seed(cfg.seed, &format!("probe.{epoch}"));
                Some(estimate_jsd(&reps, &s_train, probe_seed)?.jsd)
            } else {
                None
            };
            pool.push(Candidate {
                epoch,
                pi_avg,
                p_diff,
                snapshot: store.snapshot_group(POLICY_GROUP)?,
            });
            Some(EvalRecord { pi_avg, p_diff, jsd })
        } else {
            None
        };

        epochs.push(EpochRecord {
            epoch,
            loss_profit: record_losses.0,
            loss_reg: record_losses.1,
            loss_adv: record_losses.2,
            total: record_losses.3,
            eval,
        });
    }

    let run = TrainRun { epochs, pool };
    match select_feasible_max_profit(&run.pool, cfg.tau.as_f64()) {
        Some(idx) => {
            let candidate = &run.pool[idx];
            let selected = policy_from_candidate(&enc_cfg, p_max, candidate)?;
            Ok(TrainOutcome {
                policy: selected,
                selected_epoch: candidate.epoch,
                run,
            })
        }
        None => Err(TrainFailure::Infeasible {
            tau: cfg.tau.as_f64(),
            run,
            config: enc_cfg,
            p_max,
        }),
    }
}

/// Gradient-check cases for the three loss heads composed with a GCN
/// encoder, plus the profit loss with prices as a free parameter.
pub fn gradcheck_cases<T: Scalar>(
) -> Vec<(String, ParamStore<T>, Box<crate::autodiff::LossBuilder<T>>)> {
    let mut cases: Vec<(String, ParamStore<T>, Box<crate::autodiff::LossBuilder<T>>)> = Vec::new();
    let graph = Graph::build(&[(0, 1), (1, 2), (2, 3), (3, 0), (1, 3)], 5).expect("fixture");
    let s = vec![0u8, 1, 0, 1, 0];
    let perception = PerceptionParams {
        alpha: T::cast(0.1),
        beta: T::cast(0.2),
    };

    // profit loss through delta and eta, prices as the parameter
    {
        let graph = graph.clone();
        let mut store = ParamStore::new();
        store
            .register(
                "g",
                "prices",
                Tensor::from_vec(5, 1, vec![
                    T::cast(55.0),
                    T::cast(80.0),
                    T::cast(40.0),
                    T::cast(95.0),
                    T::cast(62.0),
                ])
                .expect("sized"),
            )
            .expect("fresh store");
        let wtp: Vec<T> = [100.0, 120.0, 90.0, 150.0, 110.0].iter().map(|&g| T::cast(g)).collect();
        cases.push((
            "loss_profit_linear".into(),
            store,
            Box::new(move |tape, store| {
                let p = tape.param(store, store.id("prices").expect("registered"));
                profit_loss_on_tape(
                    tape,
                    p,
                    &graph,
                    &wtp,
                    DemandFamily::Linear,
                    &perception,
                    T::cast(20.0),
                    &NodeMask::full(5),
                )
            }),
        ));
    }

    // same composition, exponential demand
    {
        let graph = graph.clone();
        let mut store = ParamStore::new();
        store
            .register(
                "g",
                "prices",
                Tensor::from_vec(5, 1, vec![
                    T::cast(55.0),
                    T::cast(80.0),
                    T::cast(40.0),
                    T::cast(95.0),
                    T::cast(62.0),
                ])
                .expect("sized"),
            )
            .expect("fresh store");
        let wtp: Vec<T> = [0.01, 0.02, 0.015, 0.008, 0.012].iter().map(|&g| T::cast(g)).collect();
        cases.push((
            "loss_profit_exponential".into(),
            store,
            Box::new(move |tape, store| {
                let p = tape.param(store, store.id("prices").expect("registered"));
                profit_loss_on_tape(
                    tape,
                    p,
                    &graph,
                    &wtp,
                    DemandFamily::Exponential,
                    &perception,
                    T::cast(20.0),
                    &NodeMask::full(5),
                )
            }),
        ));
    }

    // group gap through abs
    {
        let s = s.clone();
        let mut store = ParamStore::new();
        store
            .register(
                "g",
                "prices",
                Tensor::from_vec(5, 1, vec![
                    T::cast(55.0),
                    T::cast(80.0),
                    T::cast(40.0),
                    T::cast(95.0),
                    T::cast(62.0),
                ])
                .expect("sized"),
            )
            .expect("fresh store");
        cases.push((
            "loss_reg".into(),
            store,
            Box::new(move |tape, store| {
                let p = tape.param(store, store.id("prices").expect("registered"));
                group_gap_loss_on_tape(tape, p, &s, &NodeMask::full(5))
            }),
        ));
    }

    // full objective through a GCN encoder and the adversary
    {
        let graph = graph.clone();
        let s = s.clone();
        let enc = EncoderConfig {
            architecture: crate::policy::Architecture::Gcn,
            input_dim: 2,
            hidden_dim: 3,
            output_dim: 3,
            hidden_layers: 1,
            heads: vec![],
            leaky_slope: 0.05,
            dropout: 0.0,
        };
        let mut store = ParamStore::new();
        let mut rng = seeding::stream(202, "train.gradcheck");
        crate::policy::register_policy_params(&mut store, &enc, &mut rng).expect("valid config");
        Adversary::init(3, 203).install_params(&mut store).expect("fresh store");
        let x = {
            let mut xr = seeding::stream(204, "train.gradcheck.x");
            let data = (0..10).map(|_| T::cast(xr.gen_range(-1.0..1.0))).collect();
            Tensor::from_vec(5, 2, data).expect("sized")
        };
        let wtp: Vec<T> = [100.0, 120.0, 90.0, 150.0, 110.0].iter().map(|&g| T::cast(g)).collect();
        cases.push((
            "objective_gcn".into(),
            store,
            Box::new(move |tape, store| {
                let xv = tape.constant(x.clone());
                let h = encode(tape, store, &enc, xv, &graph, &mut EncodeMode::Eval)?;
                let p = price_head(tape, store, T::cast(300.0), h)?;
                let mask = NodeMask::full(5);
                let lp = profit_loss_on_tape(
                    tape,
                    p,
                    &graph,
                    &wtp,
                    DemandFamily::Linear,
                    &perception,
                    T::cast(20.0),
                    &mask,
                )?;
                let reg = group_gap_loss_on_tape(tape, p, &s, &mask)?;
                let s_hat = adversary_scores(tape, store, h)?;
                let ladv = bce_loss_on_tape(tape, s_hat, &s, &mask)?;
                let reg_term = tape.scale(reg, T::cast(0.3));
                let adv_term = tape.scale(ladv, T::cast(-0.2));
                let sum = tape.add(lp, reg_term)?;
                tape.add(sum, adv_term)
            }),
        ));
    }

    cases
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::ScoreFunction;
    use crate::policy::Architecture;
    use crate::synth::{sbm_generate, FeatureSpec, SbmConfig};

    fn constant_linear_model(g: f64, dim: usize) -> DemandModel<f64> {
        DemandModel::linear(ScoreFunction {
            intercept: g,
            weights: vec![0.0; dim + 1],
        })
    }

    #[test]
    fn profit_loss_single_isolated_customer() {
        // (60 - 20) * 0.4 = 16; eta = 0 for an isolated node
        let graph = Graph::build(&[], 1).unwrap();
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::from_vec(1, 1, vec![60.0]).unwrap());
        let params = PerceptionParams::new(0.1, 0.2).unwrap();
        let loss = profit_loss_on_tape(
            &mut tape,
            p,
            &graph,
            &[100.0],
            DemandFamily::Linear,
            &params,
            20.0,
            &NodeMask::full(1),
        )
        .unwrap();
        assert!((tape.scalar_value(loss) - (-16.0)).abs() < 1e-12);
    }

    #[test]
    fn profit_loss_zero_at_cost() {
        let graph = Graph::build(&[(0, 1)], 2).unwrap();
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::from_vec(2, 1, vec![20.0, 20.0]).unwrap());
        let params = PerceptionParams::new(0.1, 0.2).unwrap();
        let loss = profit_loss_on_tape(
            &mut tape,
            p,
            &graph,
            &[100.0, 100.0],
            DemandFamily::Linear,
            &params,
            20.0,
            &NodeMask::full(2),
        )
        .unwrap();
        assert_eq!(tape.scalar_value(loss), 0.0);
    }

    #[test]
    fn loss_gradients_pass_finite_differences() {
        for (name, mut store, build) in gradcheck_cases::<f64>() {
            let report =
                crate::autodiff::check_gradients(&name, &mut store, build.as_ref(), 1e-5).unwrap();
            assert!(
                report.passes(1e-4),
                "{name}: {} at {}",
                report.max_rel_err,
                report.worst_param
            );
        }
    }

    #[test]
    fn group_gap_loss_value_and_gradient() {
        let mut store = ParamStore::new();
        let id = store
            .register("g", "prices", Tensor::from_vec(2, 1, vec![10.0, 12.0]).unwrap())
            .unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let loss = group_gap_loss_on_tape(&mut tape, p, &[0, 1], &NodeMask::full(2)).unwrap();
        assert_eq!(tape.scalar_value(loss), 2.0);
        tape.backward(loss, &mut store).unwrap();
        // gap = mean0 - mean1 = -2, so d|gap|/dp0 = -1, d|gap|/dp1 = +1
        assert_eq!(store.grad(id).data(), &[-1.0, 1.0]);
    }

    #[test]
    fn group_gap_loss_is_positively_homogeneous() {
        let prices = [31.0, 47.0, 12.0, 55.0];
        let s = [0u8, 1, 1, 0];
        let value = |scale: f64| {
            let mut tape = Tape::<f64>::new();
            let scaled: Vec<f64> = prices.iter().map(|&p| p * scale).collect();
            let p = tape.constant(Tensor::from_vec(4, 1, scaled).unwrap());
            let loss = group_gap_loss_on_tape(&mut tape, p, &s, &NodeMask::full(4)).unwrap();
            tape.scalar_value(loss)
        };
        assert!((value(3.0) - 3.0 * value(1.0)).abs() < 1e-9);
    }

    #[test]
    fn bce_uninformative_perfect_and_clamped() {
        let run = |scores: Vec<f64>, s: Vec<u8>| {
            let n = scores.len();
            let mut tape = Tape::<f64>::new();
            let v = tape.constant(Tensor::from_vec(n, 1, scores).unwrap());
            let loss = bce_loss_on_tape(&mut tape, v, &s, &NodeMask::full(n)).unwrap();
            tape.scalar_value(loss)
        };
        let half = run(vec![0.5, 0.5], vec![0, 1]);
        assert!((half - 2f64.ln()).abs() < 1e-12);
        let perfect = run(vec![0.0, 1.0], vec![0, 1]);
        assert!(perfect < 1e-6);
        let inverted = run(vec![1.0, 0.0], vec![0, 1]);
        assert!((inverted - (-PROB_EPS.ln())).abs() < 1e-6);
        assert!(inverted.is_finite());
    }

    #[test]
    fn jsd_of_uninformative_probe_is_zero() {
        // V at a constant-half probe is -2 ln 2, the game's minimum
        let v = 2.0 * 0.5f64.ln();
        assert_eq!(jsd_from_value(v), 0.0);
    }

    #[test]
    fn jsd_of_separable_representations_approaches_ln2() {
        let n = 40;
        let mut data = Vec::new();
        let mut s = Vec::new();
        for i in 0..n {
            let group = u8::from(i % 2 == 0);
            data.push(if group == 1 { 5.0 } else { -5.0 });
            s.push(group);
        }
        let h = Tensor::from_vec(n, 1, data).unwrap();
        let report = estimate_jsd(&h, &s, 11).unwrap();
        assert!(report.jsd > 0.6, "jsd = {}", report.jsd);
        assert!(report.jsd <= 2f64.ln() + 1e-9);
    }

    #[test]
    fn probe_accuracy_high_on_separable_low_on_identical() {
        let n = 50;
        let s: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
        let separable = Tensor::from_vec(
            n,
            1,
            s.iter().map(|&g| if g == 1 { 3.0 } else { -3.0 }).collect(),
        )
        .unwrap();
        assert!(probe_heldout_accuracy(&separable, &s, 7).unwrap() > 0.9);
        let identical = Tensor::filled(n, 1, 1.0);
        let acc = probe_heldout_accuracy(&identical, &s, 7).unwrap();
        assert!(acc <= 0.7, "acc = {acc}");
    }

    #[test]
    fn selection_rule_picks_best_feasible() {
        let pool: Vec<Candidate<f64>> = [(10.0, 0.6), (9.0, 0.3), (8.0, 0.2)]
            .iter()
            .enumerate()
            .map(|(i, &(pi, gap))| Candidate {
                epoch: i + 1,
                pi_avg: pi,
                p_diff: gap,
                snapshot: GroupSnapshot {
                    group: POLICY_GROUP.into(),
                    values: vec![],
                },
            })
            .collect();
        let idx = select_feasible_max_profit(&pool, 0.5).unwrap();
        assert_eq!(pool[idx].pi_avg, 9.0);
        assert!(select_feasible_max_profit(&pool, 0.1).is_none());
        assert_eq!(select_max_profit_unconstrained(&pool).unwrap(), 0);
    }

    fn tiny_inputs() -> (Graph, NodeTable<f64>, DemandModel<f64>, PerceptionParams<f64>, MarketConfig<f64>)
    {
        let cfg = SbmConfig::new((12, 12), 0.3, 0.1).unwrap();
        let spec = FeatureSpec::new(vec![0.0, -0.5], vec![0.0, 0.5], 1.0).unwrap();
        let (graph, table) = sbm_generate::<f64>(&cfg, &spec, 5).unwrap();
        let model = DemandModel::linear(
            ScoreFunction::from_named(100.0, &[("f0", 20.0), ("s", 15.0)], &table).unwrap(),
        );
        let perception = PerceptionParams::new(0.1, 0.2).unwrap();
        let market_cfg = MarketConfig::new(20.0, 300.0).unwrap();
        (graph, table, model, perception, market_cfg)
    }

    fn tiny_encoder() -> EncoderConfig {
        EncoderConfig {
            architecture: Architecture::Gcn,
            input_dim: 2,
            hidden_dim: 4,
            output_dim: 4,
            hidden_layers: 1,
            heads: vec![],
            leaky_slope: 0.05,
            dropout: 0.1,
        }
    }

    fn run_tiny(phi: f64, adversary_seed: u64) -> (Vec<f64>, Vec<EpochRecord>) {
        let (graph, table, model, perception, market_cfg) = tiny_inputs();
        let train_mask = NodeMask::full(graph.n());
        let cfg = TrainConfig {
            lambda: 0.1,
            phi,
            tau: 10.0,
            lr: 0.01,
            adv_lr_scale: 1.0,
            weight_decay: 0.0,
            max_epochs: 6,
            eval_every: 3,
            seed: 9,
        };
        let policy = Policy::init(tiny_encoder(), 300.0, 31).unwrap();
        let adversary = Adversary::init(4, adversary_seed);
        let inputs = TrainInputs {
            graph: &graph,
            table: &table,
            model: &model,
            perception: &perception,
            market: &market_cfg,
            train_mask: &train_mask,
            selection_mask: &train_mask,
        };
        let outcome = train(policy, adversary, &inputs, &cfg)
            .map_err(|e| match e {
                TrainFailure::Error(err) => err,
                TrainFailure::Infeasible { .. } => Error::Invalid("unexpected infeasible".into()),
            })
            .unwrap();
        let flat: Vec<f64> = outcome
            .policy
            .params()
            .ids()
            .flat_map(|id| outcome.policy.params().value(id).data().to_vec())
            .collect();
        (flat, outcome.run.epochs)
    }

    #[test]
    fn zero_phi_isolates_policy_from_adversary() {
        // with phi = 0 the adversary still trains, but the policy
        // trajectory must not depend on it at all
        let (a, _) = run_tiny(0.0, 1);
        let (b, _) = run_tiny(0.0, 2);
        assert_eq!(a, b);
        let (c, _) = run_tiny(0.5, 1);
        let (d, _) = run_tiny(0.5, 2);
        assert_ne!(c, d);
    }

    #[test]
    fn logged_total_decomposes_into_components() {
        let (_, epochs) = run_tiny(0.25, 3);
        for row in &epochs {
            let want = row.loss_profit + 0.1 * row.loss_reg.unwrap() - 0.25 * row.loss_adv;
            assert!((row.total - want).abs() < 1e-10, "epoch {}", row.epoch);
        }
    }

    #[test]
    fn training_is_reproducible() {
        let (a, ea) = run_tiny(0.3, 4);
        let (b, eb) = run_tiny(0.3, 4);
        assert_eq!(a, b);
        let last = ea.len() - 1;
        assert_eq!(ea[last].total.to_bits(), eb[last].total.to_bits());
    }

    #[test]
    fn infeasible_threshold_reports_failure_with_pool() {
        let (graph, table, model, perception, market_cfg) = tiny_inputs();
        let train_mask = NodeMask::full(graph.n());
        let cfg = TrainConfig {
            lambda: 0.0,
            phi: 0.0,
            tau: 0.0,
            lr: 0.01,
            adv_lr_scale: 1.0,
            weight_decay: 0.0,
            max_epochs: 4,
            eval_every: 2,
            seed: 9,
        };
        let policy = Policy::init(tiny_encoder(), 300.0, 31).unwrap();
        let adversary = Adversary::init(4, 1);
        let inputs = TrainInputs {
            graph: &graph,
            table: &table,
            model: &model,
            perception: &perception,
            market: &market_cfg,
            train_mask: &train_mask,
            selection_mask: &train_mask,
        };
        match train(policy, adversary, &inputs, &cfg) {
            Err(TrainFailure::Infeasible { run, .. }) => {
                assert!(!run.pool.is_empty());
            }
            _ => panic!("expected infeasible failure at tau = 0"),
        }
    }
}
