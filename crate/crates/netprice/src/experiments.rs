//! Experiment orchestration: splits, the main method comparison,
//! generalization analysis, ablations, hyperparameter sweeps, and the
//! degree-decile post-hoc, each over multiple seeds with mean and
//! standard error aggregation. Cells are independent jobs executed on a
//! bounded worker pool; results are reduced in input order, so output is
//! deterministic regardless of scheduling.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::config::{method_architecture, RunConfig};
use crate::error::{Error, Result};
use crate::graph::{induced_subgraph, Graph, NodeMask};
use crate::io::LoadReport;
use crate::market::{self, MetricsReport};
use crate::policy::{Architecture, Policy};
use crate::scalar::Scalar;
use crate::seeding;
use crate::table::NodeTable;
use crate::training::{
    estimate_jsd, policy_from_candidate, select_lowest_gap_with_profit_floor,
    select_max_profit_unconstrained, train, Adversary, EpochRecord, TrainFailure, TrainInputs,
};
use crate::Real;

/// Profit floor used by the fallback selection rule: a fallback candidate
/// must keep at least this share of the pool's best profit.
pub const FALLBACK_PROFIT_FLOOR: f64 = 0.95;

/// A graph plus its node table.
pub struct Dataset {
    pub graph: Graph,
    pub table: NodeTable<Real>,
}

impl Dataset {
    pub fn from_config(cfg: &RunConfig) -> Result<(Dataset, Option<LoadReport>)> {
        let (graph, table, report) = cfg.load_dataset()?;
        Ok((Dataset { graph, table }, report))
    }
}

/// Train/validation/test ratios plus the shuffle seed.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
}

/// Disjoint covering masks.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: NodeMask,
    pub val: NodeMask,
    pub test: NodeMask,
}

impl Split {
    pub fn selection(&self) -> NodeMask {
        self.train.union(&self.val)
    }

    pub fn evaluation(&self) -> NodeMask {
        self.train.union(&self.test)
    }
}

/// Random node partition. Validation and test sizes round down, the
/// residue goes to train; every mask must be nonempty.
pub fn split_nodes(n: usize, spec: &SplitSpec) -> Result<Split> {
    if n < 3 {
        return Err(Error::Invalid(format!("cannot split {n} nodes three ways")));
    }
    let [r_train, r_val, r_test] = spec.ratios;
    if r_train <= 0.0 || r_val <= 0.0 || r_test <= 0.0 {
        return Err(Error::Config("split ratios must be positive".into()));
    }
    if (r_train + r_val + r_test - 1.0).abs() > 1e-9 {
        return Err(Error::Config("split ratios must sum to 1".into()));
    }
    let n_val = (r_val * n as f64).floor() as usize;
    let n_test = (r_test * n as f64).floor() as usize;
    let n_train = n - n_val - n_test;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Invalid(format!(
            "split of {n} nodes leaves an empty mask (sizes {n_train}/{n_val}/{n_test})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeding::stream(spec.seed, "split"));
    let train = NodeMask::from_indices(n, &order[..n_train])?;
    let val = NodeMask::from_indices(n, &order[n_train..n_train + n_val])?;
    let test = NodeMask::from_indices(n, &order[n_train + n_val..])?;
    Ok(Split { train, val, test })
}

/// Flat `f64` copy of a metrics report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMetrics {
    pub pi_avg: f64,
    pub p_diff: f64,
    pub delta_avg: f64,
    pub eta_avg: f64,
    pub n0: usize,
    pub n1: usize,
}

impl CellMetrics {
    fn from_report(r: &MetricsReport<Real>) -> Self {
        Self {
            pi_avg: r.pi_avg,
            p_diff: r.p_diff,
            delta_avg: r.delta_avg,
            eta_avg: r.eta_avg,
            n0: r.group_size[0],
            n1: r.group_size[1],
        }
    }
}

/// How the reported model was selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionFlag {
    /// Highest profit subject to `p_diff <= tau`.
    Standard,
    /// Threshold infeasible; lowest gap kept under the profit floor.
    FallbackLowestGap,
    /// Pure profit, threshold ignored (the no-fairness arm).
    Unconstrained,
}

impl SelectionFlag {
    pub fn label(self) -> &'static str {
        match self {
            SelectionFlag::Standard => "standard",
            SelectionFlag::FallbackLowestGap => "fallback_lowest_gap",
            SelectionFlag::Unconstrained => "unconstrained",
        }
    }
}

/// Outcome of one experiment cell.
pub struct CellOutcome {
    pub label: String,
    pub seed: u64,
    pub metrics: Option<CellMetrics>,
    pub flag: SelectionFlag,
    pub selected_epoch: Option<usize>,
    pub jsd: Option<f64>,
    pub log: Vec<EpochRecord>,
    pub policy: Option<Policy<Real>>,
    pub error: Option<String>,
    /// `(epoch, pi_avg, p_diff)` of every checkpointed candidate.
    pub pool_summary: Vec<(usize, f64, f64)>,
}

impl CellOutcome {
    fn failed(label: String, seed: u64, err: &Error) -> Self {
        CellOutcome {
            label,
            seed,
            metrics: None,
            flag: SelectionFlag::Standard,
            selected_epoch: None,
            jsd: None,
            log: Vec::new(),
            policy: None,
            error: Some(err.to_string()),
            pool_summary: Vec::new(),
        }
    }
}

/// Mean and standard error (`sample std / sqrt(k)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
    pub k: usize,
}

pub fn mean_stderr(values: &[f64]) -> MeanStderr {
    let k = values.len();
    if k == 0 {
        return MeanStderr {
            mean: f64::NAN,
            stderr: f64::NAN,
            k,
        };
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return MeanStderr {
            mean,
            stderr: 0.0,
            k,
        };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k as f64 - 1.0);
    MeanStderr {
        mean,
        stderr: var.sqrt() / (k as f64).sqrt(),
        k,
    }
}

/// Aggregate of one method/arm over its successful seeds.
#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub label: String,
    pub pi_avg: MeanStderr,
    pub p_diff: MeanStderr,
    pub delta_avg: MeanStderr,
    pub eta_avg: MeanStderr,
    pub seeds: usize,
    pub flagged: usize,
    pub failed: usize,
}

pub fn aggregate_cells(label: &str, cells: &[&CellOutcome]) -> AggregateRow {
    let ok: Vec<&CellMetrics> = cells.iter().filter_map(|c| c.metrics.as_ref()).collect();
    let pick = |f: fn(&CellMetrics) -> f64| -> Vec<f64> { ok.iter().map(|m| f(m)).collect() };
    AggregateRow {
        label: label.to_string(),
        pi_avg: mean_stderr(&pick(|m| m.pi_avg)),
        p_diff: mean_stderr(&pick(|m| m.p_diff)),
        delta_avg: mean_stderr(&pick(|m| m.delta_avg)),
        eta_avg: mean_stderr(&pick(|m| m.eta_avg)),
        seeds: cells.len(),
        flagged: cells
            .iter()
            .filter(|c| c.metrics.is_some() && c.flag != SelectionFlag::Standard)
            .count(),
        failed: cells.iter().filter(|c| c.error.is_some()).count(),
    }
}

/// Run metadata attached to every experiment result.
#[derive(Debug, Clone)]
pub struct RunMeta {
    pub config_hash: u64,
    pub seeds: Vec<u64>,
}

impl RunMeta {
    fn from_config(cfg: &RunConfig) -> Self {
        Self {
            config_hash: cfg.config_hash(),
            seeds: cfg.experiment.seeds.clone(),
        }
    }
}

fn run_cells<I, F>(inputs: Vec<I>, workers: usize, f: F) -> Vec<CellOutcome>
where
    I: Send + Sync,
    F: Fn(&I) -> CellOutcome + Send + Sync,
{
    match workers {
        1 => inputs.iter().map(f).collect(),
        0 => inputs.par_iter().map(f).collect(),
        w => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .expect("worker pool")
            .install(|| inputs.par_iter().map(f).collect()),
    }
}

struct CellSpec {
    label: String,
    arch: Option<Architecture>,
    seed: u64,
    lambda: f64,
    phi: f64,
    selection: SelectionFlag,
    ratios: [f64; 3],
    /// Retrained arm of the generalization analysis: train directly on
    /// the evaluation network, no fallback.
    retrain_on_evaluation: bool,
}

/// One complete cell: split, train (or grid-search the uniform price),
/// evaluate on the combined train+test subgraph.
fn run_cell(dataset: &Dataset, cfg: &RunConfig, spec: &CellSpec) -> CellOutcome {
    match run_cell_inner(dataset, cfg, spec) {
        Ok(cell) => cell,
        Err(e) => CellOutcome::failed(spec.label.clone(), spec.seed, &e),
    }
}

/// The seed-derived split every cell of a run uses.
pub fn cell_split(n: usize, cfg: &RunConfig, seed: u64) -> Result<Split> {
    split_nodes(
        n,
        &SplitSpec {
            ratios: cfg.ratios()?,
            seed: seeding::derive_seed(seed, "split"),
        },
    )
}

fn spec_training(
    dataset: &Dataset,
    cfg: &RunConfig,
    spec: &CellSpec,
) -> std::result::Result<crate::training::TrainOutcome<Real>, TrainFailure<Real>> {
    let split = split_nodes(
        dataset.graph.n(),
        &SplitSpec {
            ratios: spec.ratios,
            seed: seeding::derive_seed(spec.seed, "split"),
        },
    )?;
    let arch = spec.arch.ok_or_else(|| Error::Invalid("training requires an architecture".into()))?;
    let model = cfg.demand_model(&dataset.table)?;
    let perception = cfg.perception()?;
    let market_cfg = cfg.market()?;
    let encoder = cfg.encoder(dataset.table.feature_dim(), arch)?;
    let mut train_cfg = cfg.train_config(seeding::derive_seed(spec.seed, "train"))?;
    train_cfg.lambda = spec.lambda;
    train_cfg.phi = spec.phi;

    let (train_mask, selection_mask) = if spec.retrain_on_evaluation {
        let eval = split.evaluation();
        (eval.clone(), eval)
    } else {
        (split.train.clone(), split.selection())
    };
    let policy = Policy::init(
        encoder.clone(),
        market_cfg.p_max,
        seeding::derive_seed(spec.seed, &format!("policy.{}", arch.name())),
    )?;
    let adversary = Adversary::init(
        encoder.output_dim,
        seeding::derive_seed(spec.seed, "adversary"),
    );
    let inputs = TrainInputs {
        graph: &dataset.graph,
        table: &dataset.table,
        model: &model,
        perception: &perception,
        market: &market_cfg,
        train_mask: &train_mask,
        selection_mask: &selection_mask,
    };
    train(policy, adversary, &inputs, &train_cfg)
}

/// One standard training run, exactly as an experiment cell executes it
/// (identical seed derivations and masks). Infeasibility is returned to
/// the caller rather than falling back.
pub fn train_single(
    dataset: &Dataset,
    cfg: &RunConfig,
    arch: Architecture,
    seed: u64,
) -> std::result::Result<crate::training::TrainOutcome<Real>, TrainFailure<Real>> {
    let ratios = cfg.ratios()?;
    let spec = CellSpec {
        label: arch.name().to_string(),
        arch: Some(arch),
        seed,
        lambda: cfg.train.lambda,
        phi: cfg.train.phi,
        selection: SelectionFlag::Standard,
        ratios,
        retrain_on_evaluation: false,
    };
    spec_training(dataset, cfg, &spec)
}

fn run_cell_inner(dataset: &Dataset, cfg: &RunConfig, spec: &CellSpec) -> Result<CellOutcome> {
    let n = dataset.graph.n();
    let split = split_nodes(
        n,
        &SplitSpec {
            ratios: spec.ratios,
            seed: seeding::derive_seed(spec.seed, "split"),
        },
    )?;
    let eval_mask = split.evaluation();
    let (eval_graph, eval_map) = induced_subgraph(&dataset.graph, &eval_mask)?;
    let eval_table = dataset.table.subset(&eval_map);
    let model = cfg.demand_model(&dataset.table)?;
    let perception = cfg.perception()?;
    let market_cfg = cfg.market()?;

    let Some(arch) = spec.arch else {
        // uniform baseline: price chosen on train+validation, evaluated
        // like every other method
        let sel_mask = split.selection();
        let (price, _) = market::optimal_uniform_price(
            &dataset.table,
            &model,
            &market_cfg,
            cfg.train.grid_step,
            &sel_mask,
        )?;
        let prices = vec![price; eval_graph.n()];
        let report = market::metrics(
            &eval_graph,
            &eval_table,
            &model,
            &perception,
            &market_cfg,
            &prices,
            &NodeMask::full(eval_graph.n()),
        )?;
        return Ok(CellOutcome {
            label: spec.label.clone(),
            seed: spec.seed,
            metrics: Some(CellMetrics::from_report(&report)),
            flag: SelectionFlag::Standard,
            selected_epoch: None,
            jsd: None,
            log: Vec::new(),
            policy: None,
            error: None,
            pool_summary: Vec::new(),
        });
    };

    let encoder = cfg.encoder(dataset.table.feature_dim(), arch)?;
    let train_mask = if spec.retrain_on_evaluation {
        eval_mask.clone()
    } else {
        split.train.clone()
    };

    let (selected, selected_epoch, flag, run) = match spec_training(dataset, cfg, spec) {
        Ok(outcome) => match spec.selection {
            SelectionFlag::Unconstrained => {
                let idx = select_max_profit_unconstrained(&outcome.run.pool)
                    .ok_or_else(|| Error::Invalid("empty candidate pool".into()))?;
                let cand = &outcome.run.pool[idx];
                let policy = policy_from_candidate(&encoder, market_cfg.p_max, cand)?;
                (policy, cand.epoch, SelectionFlag::Unconstrained, outcome.run)
            }
            _ => (
                outcome.policy,
                outcome.selected_epoch,
                SelectionFlag::Standard,
                outcome.run,
            ),
        },
        Err(TrainFailure::Infeasible { tau, run, config, p_max }) => {
            let (rule, flag) = match spec.selection {
                SelectionFlag::Unconstrained => (
                    select_max_profit_unconstrained(&run.pool),
                    SelectionFlag::Unconstrained,
                ),
                _ if spec.retrain_on_evaluation => {
                    // the retrained arm has no fallback: report the failure
                    return Err(TrainFailure::<Real>::Infeasible {
                        tau,
                        run,
                        config,
                        p_max,
                    }
                    .into_error());
                }
                _ => (
                    select_lowest_gap_with_profit_floor(&run.pool, FALLBACK_PROFIT_FLOOR),
                    SelectionFlag::FallbackLowestGap,
                ),
            };
            let idx = rule.ok_or_else(|| Error::Invalid("empty candidate pool".into()))?;
            let cand = &run.pool[idx];
            let policy = policy_from_candidate(&config, p_max, cand)?;
            (policy, cand.epoch, flag, run)
        }
        Err(f @ TrainFailure::Error(_)) => return Err(f.into_error()),
    };

    let prices = selected.assign_prices(eval_table.features(), &eval_graph)?;
    let report = market::metrics(
        &eval_graph,
        &eval_table,
        &model,
        &perception,
        &market_cfg,
        &prices,
        &NodeMask::full(eval_graph.n()),
    )?;

    // divergence diagnostic for the selected model, on the training graph
    let jsd = {
        let (train_graph, train_map) = induced_subgraph(&dataset.graph, &train_mask)?;
        let train_table = dataset.table.subset(&train_map);
        let reps = selected.representations(train_table.features(), &train_graph)?;
        let (n0, n1) = train_table.group_sizes();
        if n0 > 0 && n1 > 0 {
            Some(
                estimate_jsd(
                    &reps,
                    train_table.s(),
                    seeding::derive_seed(spec.seed, "probe.final"),
                )?
                .jsd,
            )
        } else {
            None
        }
    };

    Ok(CellOutcome {
        label: spec.label.clone(),
        seed: spec.seed,
        metrics: Some(CellMetrics::from_report(&report)),
        flag,
        selected_epoch: Some(selected_epoch),
        jsd,
        log: run.epochs,
        policy: Some(selected),
        error: None,
        pool_summary: run
            .pool
            .iter()
            .map(|c| (c.epoch, c.pi_avg, c.p_diff))
            .collect(),
    })
}

/// Main comparison result: per-cell outcomes plus per-method aggregates.
pub struct ComparisonResult {
    pub cells: Vec<CellOutcome>,
    pub aggregates: Vec<AggregateRow>,
    pub meta: RunMeta,
}

fn aggregate_by_label(labels: &[String], cells: &[CellOutcome]) -> Vec<AggregateRow> {
    labels
        .iter()
        .map(|label| {
            let group: Vec<&CellOutcome> = cells.iter().filter(|c| &c.label == label).collect();
            aggregate_cells(label, &group)
        })
        .collect()
}

/// Method comparison over the configured seeds (the main protocol).
pub fn run_main(dataset: &Dataset, cfg: &RunConfig) -> Result<ComparisonResult> {
    let ratios = cfg.ratios()?;
    let mut specs = Vec::new();
    for method in &cfg.experiment.methods {
        let arch = method_architecture(method)?;
        for &seed in &cfg.experiment.seeds {
            specs.push(CellSpec {
                label: method.clone(),
                arch,
                seed,
                lambda: cfg.train.lambda,
                phi: cfg.train.phi,
                selection: SelectionFlag::Standard,
                ratios,
                retrain_on_evaluation: false,
            });
        }
    }
    let cells = run_cells(specs, cfg.experiment.workers, |s| run_cell(dataset, cfg, s));
    let aggregates = aggregate_by_label(&cfg.experiment.methods, &cells);
    Ok(ComparisonResult {
        cells,
        aggregates,
        meta: RunMeta::from_config(cfg),
    })
}

/// One proportion of the generalization analysis.
#[derive(Debug, Clone)]
pub struct GeneralizationRow {
    pub proportion: f64,
    pub ratio: MeanStderr,
    pub gen_pi: MeanStderr,
    pub retr_pi: MeanStderr,
    pub gen_p_diff: MeanStderr,
    pub retr_p_diff: MeanStderr,
    pub gen_delta: MeanStderr,
    pub gen_eta: MeanStderr,
    pub retr_delta: MeanStderr,
    pub retr_eta: MeanStderr,
    pub skipped: usize,
}

pub struct GeneralizationResult {
    pub rows: Vec<GeneralizationRow>,
    pub cells: Vec<CellOutcome>,
    pub meta: RunMeta,
}

/// Frozen-policy generalization versus retraining on the grown network,
/// across training proportions. The remainder of each proportion is
/// split evenly between validation and test.
pub fn run_generalization(dataset: &Dataset, cfg: &RunConfig) -> Result<GeneralizationResult> {
    let arch = Architecture::parse(&cfg.encoder.architecture)?;
    let mut specs = Vec::new();
    for &p in &cfg.experiment.proportions {
        let rest = (1.0 - p) / 2.0;
        let ratios = [p, rest, rest];
        for &seed in &cfg.experiment.seeds {
            specs.push(CellSpec {
                label: format!("gen@{p}"),
                arch: Some(arch),
                seed,
                lambda: cfg.train.lambda,
                phi: cfg.train.phi,
                selection: SelectionFlag::Standard,
                ratios,
                retrain_on_evaluation: false,
            });
            specs.push(CellSpec {
                label: format!("retr@{p}"),
                arch: Some(arch),
                seed,
                lambda: cfg.train.lambda,
                phi: cfg.train.phi,
                selection: SelectionFlag::Standard,
                ratios,
                retrain_on_evaluation: true,
            });
        }
    }
    let cells = run_cells(specs, cfg.experiment.workers, |s| run_cell(dataset, cfg, s));

    let mut rows = Vec::new();
    for &p in &cfg.experiment.proportions {
        let gen_label = format!("gen@{p}");
        let retr_label = format!("retr@{p}");
        let mut ratios = Vec::new();
        let mut gen_pi = Vec::new();
        let mut retr_pi = Vec::new();
        let mut gen_gap = Vec::new();
        let mut retr_gap = Vec::new();
        let mut gen_delta = Vec::new();
        let mut gen_eta = Vec::new();
        let mut retr_delta = Vec::new();
        let mut retr_eta = Vec::new();
        let mut skipped = 0usize;
        for &seed in &cfg.experiment.seeds {
            let find = |label: &str| {
                cells
                    .iter()
                    .find(|c| c.label == label && c.seed == seed)
                    .and_then(|c| c.metrics.as_ref())
            };
            match (find(&gen_label), find(&retr_label)) {
                (Some(g), Some(r)) => {
                    ratios.push(g.pi_avg / r.pi_avg);
                    gen_pi.push(g.pi_avg);
                    retr_pi.push(r.pi_avg);
                    gen_gap.push(g.p_diff);
                    retr_gap.push(r.p_diff);
                    gen_delta.push(g.delta_avg);
                    gen_eta.push(g.eta_avg);
                    retr_delta.push(r.delta_avg);
                    retr_eta.push(r.eta_avg);
                }
                _ => skipped += 1,
            }
        }
        rows.push(GeneralizationRow {
            proportion: p,
            ratio: mean_stderr(&ratios),
            gen_pi: mean_stderr(&gen_pi),
            retr_pi: mean_stderr(&retr_pi),
            gen_p_diff: mean_stderr(&gen_gap),
            retr_p_diff: mean_stderr(&retr_gap),
            gen_delta: mean_stderr(&gen_delta),
            gen_eta: mean_stderr(&gen_eta),
            retr_delta: mean_stderr(&retr_delta),
            retr_eta: mean_stderr(&retr_eta),
            skipped,
        });
    }
    Ok(GeneralizationResult {
        rows,
        cells,
        meta: RunMeta::from_config(cfg),
    })
}

/// The four ablation arms of the base (GCN) variant.
pub const ABLATION_ARMS: [&str; 4] = ["full", "wo_adv", "wo_reg", "wo_adv_reg"];

/// Ablation of the debiasing module and the price regularizer. The
/// `wo_adv_reg` arm models a retailer without fairness machinery and
/// selects purely by profit.
pub fn run_ablation(dataset: &Dataset, cfg: &RunConfig) -> Result<ComparisonResult> {
    let ratios = cfg.ratios()?;
    let mut specs = Vec::new();
    for &arm in &ABLATION_ARMS {
        let (lambda, phi, selection) = match arm {
            "full" => (cfg.train.lambda, cfg.train.phi, SelectionFlag::Standard),
            "wo_adv" => (cfg.train.lambda, 0.0, SelectionFlag::Standard),
            "wo_reg" => (0.0, cfg.train.phi, SelectionFlag::Standard),
            _ => (0.0, 0.0, SelectionFlag::Unconstrained),
        };
        for &seed in &cfg.experiment.seeds {
            specs.push(CellSpec {
                label: arm.to_string(),
                arch: Some(Architecture::Gcn),
                seed,
                lambda,
                phi,
                selection,
                ratios,
                retrain_on_evaluation: false,
            });
        }
    }
    let cells = run_cells(specs, cfg.experiment.workers, |s| run_cell(dataset, cfg, s));
    let labels: Vec<String> = ABLATION_ARMS.iter().map(|s| s.to_string()).collect();
    let aggregates = aggregate_by_label(&labels, &cells);
    Ok(ComparisonResult {
        cells,
        aggregates,
        meta: RunMeta::from_config(cfg),
    })
}

/// One sweep cell aggregate.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub lambda: f64,
    pub phi: f64,
    pub pi_avg: MeanStderr,
    pub p_diff: MeanStderr,
    pub seeds: usize,
    pub flagged: usize,
    pub failed: usize,
}

pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub cells: Vec<CellOutcome>,
    pub meta: RunMeta,
}

/// Grid sweep over the regularization and adversarial weights. An empty
/// grid axis pins that weight at its configured value; infeasible cells
/// fall back to the lowest-gap rule and are flagged.
pub fn run_sweep(dataset: &Dataset, cfg: &RunConfig) -> Result<SweepResult> {
    let ratios = cfg.ratios()?;
    let arch = Architecture::parse(&cfg.encoder.architecture)?;
    let lambdas = if cfg.experiment.lambda_grid.is_empty() {
        vec![cfg.train.lambda]
    } else {
        cfg.experiment.lambda_grid.clone()
    };
    let phis = if cfg.experiment.phi_grid.is_empty() {
        vec![cfg.train.phi]
    } else {
        cfg.experiment.phi_grid.clone()
    };
    let mut grid = Vec::new();
    let mut specs = Vec::new();
    for &lambda in &lambdas {
        for &phi in &phis {
            grid.push((lambda, phi));
            for &seed in &cfg.experiment.seeds {
                specs.push(CellSpec {
                    label: format!("l{lambda}_p{phi}"),
                    arch: Some(arch),
                    seed,
                    lambda,
                    phi,
                    selection: SelectionFlag::Standard,
                    ratios,
                    retrain_on_evaluation: false,
                });
            }
        }
    }
    let cells = run_cells(specs, cfg.experiment.workers, |s| run_cell(dataset, cfg, s));
    let rows = grid
        .iter()
        .map(|&(lambda, phi)| {
            let label = format!("l{lambda}_p{phi}");
            let group: Vec<&CellOutcome> = cells.iter().filter(|c| c.label == label).collect();
            let agg = aggregate_cells(&label, &group);
            SweepRow {
                lambda,
                phi,
                pi_avg: agg.pi_avg,
                p_diff: agg.p_diff,
                seeds: agg.seeds,
                flagged: agg.flagged,
                failed: agg.failed,
            }
        })
        .collect();
    Ok(SweepResult {
        rows,
        cells,
        meta: RunMeta::from_config(cfg),
    })
}

/// One degree decile: node count, average degree, average price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecileRow {
    pub decile: usize,
    pub nodes: usize,
    pub avg_degree: f64,
    pub avg_price: f64,
}

#[derive(Debug, Clone)]
pub struct DecileTable {
    pub rows: Vec<DecileRow>,
}

impl DecileTable {
    /// Spearman rank correlation between decile index and average price
    /// (ties in prices get averaged ranks).
    pub fn spearman(&self) -> f64 {
        let prices: Vec<f64> = self.rows.iter().map(|r| r.avg_price).collect();
        let ranks = average_ranks(&prices);
        let idx: Vec<f64> = (0..self.rows.len()).map(|i| i as f64).collect();
        pearson(&idx, &ranks)
    }
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

/// Average assigned price per degree decile. Nodes are ranked by degree
/// (ties broken by node index) and split into ten segments; the
/// remainder is spread from the lowest decile up.
pub fn posthoc_deciles<T: Scalar>(
    policy: &Policy<T>,
    graph: &Graph,
    table: &NodeTable<T>,
) -> Result<DecileTable> {
    let n = graph.n();
    if n < 10 {
        return Err(Error::Invalid(format!("need at least 10 nodes for deciles, got {n}")));
    }
    let prices = policy.assign_prices(table.features(), graph)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (graph.degree(i), i));
    let base = n / 10;
    let remainder = n % 10;
    let mut rows = Vec::with_capacity(10);
    let mut start = 0usize;
    for decile in 0..10 {
        let size = base + usize::from(decile < remainder);
        let nodes = &order[start..start + size];
        let avg_degree = nodes.iter().map(|&i| graph.degree(i) as f64).sum::<f64>() / size as f64;
        let avg_price = nodes.iter().map(|&i| prices[i].as_f64()).sum::<f64>() / size as f64;
        rows.push(DecileRow {
            decile,
            nodes: size,
            avg_degree,
            avg_price,
        });
        start += size;
    }
    Ok(DecileTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::EncoderConfig;

    #[test]
    fn split_sizes_match_ratios_with_residue_to_train() {
        let s = split_nodes(
            10,
            &SplitSpec {
                ratios: [0.8, 0.1, 0.1],
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(s.train.count(), 8);
        assert_eq!(s.val.count(), 1);
        assert_eq!(s.test.count(), 1);
    }

    #[test]
    fn split_is_deterministic_and_a_partition() {
        for seed in 0..20u64 {
            let s = split_nodes(
                53,
                &SplitSpec {
                    ratios: [0.6, 0.2, 0.2],
                    seed,
                },
            )
            .unwrap();
            let s2 = split_nodes(
                53,
                &SplitSpec {
                    ratios: [0.6, 0.2, 0.2],
                    seed,
                },
            )
            .unwrap();
            assert_eq!(s.train, s2.train);
            assert_eq!(s.val, s2.val);
            assert_eq!(s.test, s2.test);
            for i in 0..53 {
                let hits = usize::from(s.train.contains(i))
                    + usize::from(s.val.contains(i))
                    + usize::from(s.test.contains(i));
                assert_eq!(hits, 1, "node {i} covered {hits} times");
            }
        }
    }

    #[test]
    fn split_rejects_empty_masks() {
        assert!(split_nodes(
            3,
            &SplitSpec {
                ratios: [0.98, 0.01, 0.01],
                seed: 0
            }
        )
        .is_err());
    }

    #[test]
    fn stderr_matches_direct_recomputation() {
        let vals = [3.0, 5.0, 7.0, 9.0];
        let ms = mean_stderr(&vals);
        let mean = 6.0;
        let sample_var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!((ms.mean - mean).abs() < 1e-15);
        assert!((ms.stderr - (sample_var.sqrt() / 2.0)).abs() < 1e-15);
        assert_eq!(mean_stderr(&[4.2]).stderr, 0.0);
    }

    #[test]
    fn decile_sizes_partition_and_uniform_prices_flatten() {
        // n = 23: three deciles of 3, seven of 2
        let edges: Vec<(usize, usize)> = (0..22).map(|i| (i, i + 1)).collect();
        let graph = Graph::build(&edges, 23).unwrap();
        let table = NodeTable::new(
            crate::autodiff::Tensor::zeros(23, 2),
            vec!["f0".into(), "f1".into()],
            vec![0; 23],
            "s",
        )
        .unwrap();
        let mut policy = Policy::init(
            EncoderConfig {
                architecture: Architecture::Mlp,
                input_dim: 2,
                hidden_dim: 3,
                output_dim: 3,
                hidden_layers: 1,
                heads: vec![],
                leaky_slope: 0.05,
                dropout: 0.0,
            },
            100.0,
            3,
        )
        .unwrap();
        let wid = policy.params_mut().id("policy.head.weight").unwrap();
        policy.params_mut().value_mut(wid).data_mut().fill(0.0);
        let tbl = posthoc_deciles(&policy, &graph, &table).unwrap();
        let total: usize = tbl.rows.iter().map(|r| r.nodes).sum();
        assert_eq!(total, 23);
        let sizes: Vec<usize> = tbl.rows.iter().map(|r| r.nodes).collect();
        assert!(sizes.iter().all(|&s| s == 2 || s == 3));
        assert_eq!(sizes.iter().filter(|&&s| s == 3).count(), 3);
        // uniform policy: every decile averages the same price
        let first = tbl.rows[0].avg_price;
        assert!(tbl.rows.iter().all(|r| (r.avg_price - first).abs() < 1e-12));
        assert_eq!(tbl.spearman(), 0.0);
    }

    #[test]
    fn spearman_detects_monotone_prices() {
        let rows: Vec<DecileRow> = (0..10)
            .map(|d| DecileRow {
                decile: d,
                nodes: 1,
                avg_degree: d as f64,
                avg_price: 10.0 + d as f64,
            })
            .collect();
        assert!((DecileTable { rows }.spearman() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn average_ranks_handle_ties() {
        let r = average_ranks(&[1.0, 2.0, 2.0, 3.0]);
        assert_eq!(r, vec![1.0, 2.5, 2.5, 4.0]);
    }
}
