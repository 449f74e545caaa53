//! Run configuration: one sectioned TOML file per run, strict keys,
//! every invariant validated before any work starts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::io::{self, LoadReport};
use crate::market::{DemandModel, MarketConfig, PerceptionParams, ScoreFunction};
use crate::policy::{Architecture, EncoderConfig};
use crate::synth::{sbm_generate, FeatureSpec, SbmConfig};
use crate::table::NodeTable;
use crate::training::TrainConfig;
use crate::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    /// "sbm" generates a synthetic network; "files" loads an edge list
    /// and node table.
    #[serde(default = "default_source")]
    pub source: String,
    #[serde(default)]
    pub edge_list: String,
    #[serde(default)]
    pub node_table: String,
    #[serde(default = "default_protected")]
    pub protected_column: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    #[serde(default = "default_block_sizes")]
    pub block_sizes: Vec<usize>,
    #[serde(default = "default_p_intra")]
    pub p_intra: f64,
    #[serde(default = "default_p_inter")]
    pub p_inter: f64,
    #[serde(default = "default_means0")]
    pub feature_means_0: Vec<f64>,
    #[serde(default = "default_means1")]
    pub feature_means_1: Vec<f64>,
    #[serde(default = "default_feature_std")]
    pub feature_std: f64,
    #[serde(default = "default_sbm_seed")]
    pub sbm_seed: u64,
}

fn default_source() -> String {
    "sbm".into()
}
fn default_protected() -> String {
    "s".into()
}
fn default_delimiter() -> String {
    ",".into()
}
fn default_block_sizes() -> Vec<usize> {
    vec![250, 250]
}
fn default_p_intra() -> f64 {
    0.05
}
fn default_p_inter() -> f64 {
    0.005
}
fn default_means0() -> Vec<f64> {
    vec![0.0, 0.0, 0.0, -0.8, -0.8, -0.8]
}
fn default_means1() -> Vec<f64> {
    vec![0.0, 0.0, 0.0, 0.8, 0.8, 0.8]
}
fn default_feature_std() -> f64 {
    1.0
}
fn default_sbm_seed() -> u64 {
    7777
}

impl Default for GraphSection {
    fn default() -> Self {
        toml::from_str("").expect("empty section deserializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSection {
    /// "linear" or "exponential".
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default = "default_intercept")]
    pub intercept: f64,
    /// Score coefficients keyed by feature name (the protected column
    /// name addresses the protected attribute).
    #[serde(default = "default_coef")]
    pub coef: BTreeMap<String, f64>,
    /// Exponential rate map `g = a + b * sigmoid(t)`.
    #[serde(default = "default_exp_a")]
    pub a: f64,
    #[serde(default = "default_exp_b")]
    pub b: f64,
}

fn default_family() -> String {
    "linear".into()
}
fn default_intercept() -> f64 {
    120.0
}
fn default_coef() -> BTreeMap<String, f64> {
    [
        ("f0", 25.0),
        ("f1", 15.0),
        ("f2", 10.0),
        ("f3", 5.0),
        ("f4", 5.0),
        ("f5", 5.0),
        ("s", 30.0),
    ]
    .iter()
    .map(|&(k, v)| (k.to_string(), v))
    .collect()
}
fn default_exp_a() -> f64 {
    0.008
}
fn default_exp_b() -> f64 {
    0.022
}

impl Default for DemandSection {
    fn default() -> Self {
        toml::from_str("").expect("empty section deserializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptionSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_alpha() -> f64 {
    0.1
}
fn default_beta() -> f64 {
    0.2
}

impl Default for PerceptionSection {
    fn default() -> Self {
        toml::from_str("").expect("empty section deserializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    #[serde(default = "default_cost")]
    pub cost: f64,
    #[serde(default = "default_p_max")]
    pub p_max: f64,
}

fn default_cost() -> f64 {
    20.0
}
fn default_p_max() -> f64 {
    300.0
}

impl Default for MarketSection {
    fn default() -> Self {
        toml::from_str("").expect("empty section deserializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    #[serde(default = "default_arch")]
    pub architecture: String,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_output_dim")]
    pub output_dim: usize,
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
    #[serde(default = "default_heads")]
    pub heads: Vec<usize>,
    #[serde(default = "default_leaky_slope")]
    pub leaky_slope: f64,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

fn default_arch() -> String {
    "gcn".into()
}
fn default_hidden_dim() -> usize {
    32
}
fn default_output_dim() -> usize {
    32
}
fn default_hidden_layers() -> usize {
    1
}
fn default_heads() -> Vec<usize> {
    vec![4]
}
fn default_leaky_slope() -> f64 {
    0.05
}
fn default_dropout() -> f64 {
    0.1
}

impl Default for EncoderSection {
    fn default() -> Self {
        toml::from_str("").expect("empty section deserializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_phi")]
    pub phi: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_adv_lr_scale")]
    pub adv_lr_scale: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_lambda() -> f64 {
    0.1
}
fn default_phi() -> f64 {
    0.01
}
fn default_tau() -> f64 {
    0.5
}
fn default_lr() -> f64 {
    0.001
}
fn default_adv_lr_scale() -> f64 {
    1.0
}
fn default_weight_decay() -> f64 {
    0.0005
}
fn default_max_epochs() -> usize {
    400
}
fn default_eval_every() -> usize {
    5
}
fn default_grid_step() -> f64 {
    0.1
}

impl Default for TrainSection {
    fn default() -> Self {
        toml::from_str("").expect("empty section deserializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_ratios")]
    pub ratios: Vec<f64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_proportions")]
    pub proportions: Vec<f64>,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_phi_grid")]
    pub phi_grid: Vec<f64>,
    /// Worker threads for independent cells; 0 uses all cores.
    #[serde(default)]
    pub workers: usize,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}
fn default_ratios() -> Vec<f64> {
    vec![0.8, 0.1, 0.1]
}
fn default_methods() -> Vec<String> {
    ["uniform", "mlp", "gcn", "gat", "graphsage"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}
fn default_proportions() -> Vec<f64> {
    vec![0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3]
}
fn default_lambda_grid() -> Vec<f64> {
    vec![0.1, 0.2, 0.5, 1.0, 2.0]
}
fn default_phi_grid() -> Vec<f64> {
    vec![0.001, 0.01, 0.1, 1.0]
}

impl Default for ExperimentSection {
    fn default() -> Self {
        toml::from_str("").expect("empty section deserializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: String,
}

fn default_dir() -> String {
    "runs".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        toml::from_str("").expect("empty section deserializes")
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub graph: GraphSection,
    #[serde(default)]
    pub demand: DemandSection,
    #[serde(default)]
    pub perception: PerceptionSection,
    #[serde(default)]
    pub market: MarketSection,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn parse(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Validate everything that does not need the dataset (coefficient
    /// names are checked against the table at load time).
    pub fn validate(&self) -> Result<()> {
        match self.graph.source.as_str() {
            "sbm" => {
                if self.graph.block_sizes.len() != 2 {
                    return Err(Error::Config(
                        "graph.block_sizes must list exactly two blocks".into(),
                    ));
                }
                self.sbm_config()?;
                self.feature_spec()?;
            }
            "files" => {
                if self.graph.edge_list.is_empty() || self.graph.node_table.is_empty() {
                    return Err(Error::Config(
                        "graph.source = \"files\" requires graph.edge_list and graph.node_table".into(),
                    ));
                }
                self.delimiter()?;
            }
            other => {
                return Err(Error::Config(format!(
                    "graph.source must be \"sbm\" or \"files\", got '{other}'"
                )))
            }
        }
        match self.demand.family.as_str() {
            "linear" => {}
            "exponential" => {
                if self.demand.a <= 0.0 {
                    return Err(Error::Config("demand.a must be positive".into()));
                }
                if self.demand.b < 0.0 {
                    return Err(Error::Config("demand.b must be nonnegative".into()));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "demand.family must be \"linear\" or \"exponential\", got '{other}'"
                )))
            }
        }
        self.perception()?;
        self.market()?;
        Architecture::parse(&self.encoder.architecture)?;
        // encoder dims are validated against the dataset's feature count
        self.train_config(self.train.seed)?.validate()?;
        if self.train.grid_step <= 0.0 {
            return Err(Error::Config(format!(
                "train.grid_step must be positive, got {}",
                self.train.grid_step
            )));
        }
        self.ratios()?;
        if self.experiment.seeds.is_empty() {
            return Err(Error::Config("experiment.seeds must not be empty".into()));
        }
        for &p in &self.experiment.proportions {
            if !(0.0 < p && p < 1.0) {
                return Err(Error::Config(format!(
                    "experiment.proportions entries must lie in (0, 1), got {p}"
                )));
            }
        }
        for name in &self.experiment.methods {
            method_architecture(name)?;
        }
        Ok(())
    }

    fn delimiter(&self) -> Result<char> {
        let mut chars = self.graph.delimiter.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Ok(c),
            _ => Err(Error::Config(format!(
                "graph.delimiter must be a single character, got '{}'",
                self.graph.delimiter
            ))),
        }
    }

    fn sbm_config(&self) -> Result<SbmConfig> {
        SbmConfig::new(
            (self.graph.block_sizes[0], self.graph.block_sizes[1]),
            self.graph.p_intra,
            self.graph.p_inter,
        )
    }

    fn feature_spec(&self) -> Result<FeatureSpec> {
        FeatureSpec::new(
            self.graph.feature_means_0.clone(),
            self.graph.feature_means_1.clone(),
            self.graph.feature_std,
        )
    }

    pub fn ratios(&self) -> Result<[f64; 3]> {
        if self.experiment.ratios.len() != 3 {
            return Err(Error::Config(
                "experiment.ratios must list train/validation/test".into(),
            ));
        }
        let r = &self.experiment.ratios;
        if r.iter().any(|&x| x <= 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "experiment.ratios must be positive and sum to 1, got {r:?}"
            )));
        }
        Ok([r[0], r[1], r[2]])
    }

    /// Load or generate the dataset named by the `[graph]` section.
    pub fn load_dataset(&self) -> Result<(Graph, NodeTable<Real>, Option<LoadReport>)> {
        match self.graph.source.as_str() {
            "sbm" => {
                let (graph, table) =
                    sbm_generate(&self.sbm_config()?, &self.feature_spec()?, self.graph.sbm_seed)?;
                Ok((graph, table, None))
            }
            "files" => {
                let (graph, table, report) = io::load_dataset(
                    Path::new(&self.graph.edge_list),
                    Path::new(&self.graph.node_table),
                    self.delimiter()?,
                    &self.graph.protected_column,
                )?;
                Ok((graph, table, Some(report)))
            }
            other => Err(Error::Config(format!("unknown graph.source '{other}'"))),
        }
    }

    /// Resolve the demand model against a table's feature names.
    pub fn demand_model(&self, table: &NodeTable<Real>) -> Result<DemandModel<Real>> {
        let coefs: Vec<(String, Real)> = self
            .demand
            .coef
            .iter()
            .map(|(k, &v)| (k.clone(), v))
            .collect();
        let score = ScoreFunction::from_named(self.demand.intercept, &coefs, table)?;
        match self.demand.family.as_str() {
            "linear" => Ok(DemandModel::linear(score)),
            "exponential" => DemandModel::exponential(score, self.demand.a, self.demand.b),
            other => Err(Error::Config(format!("unknown demand.family '{other}'"))),
        }
    }

    pub fn perception(&self) -> Result<PerceptionParams<Real>> {
        PerceptionParams::new(self.perception.alpha, self.perception.beta)
    }

    pub fn market(&self) -> Result<MarketConfig<Real>> {
        MarketConfig::new(self.market.cost, self.market.p_max)
    }

    pub fn encoder(&self, input_dim: usize, architecture: Architecture) -> Result<EncoderConfig> {
        let cfg = EncoderConfig {
            architecture,
            input_dim,
            hidden_dim: self.encoder.hidden_dim,
            output_dim: self.encoder.output_dim,
            hidden_layers: self.encoder.hidden_layers,
            heads: if architecture == Architecture::Gat {
                self.encoder.heads.clone()
            } else {
                vec![]
            },
            leaky_slope: self.encoder.leaky_slope,
            dropout: self.encoder.dropout,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig<Real>> {
        let cfg = TrainConfig {
            lambda: self.train.lambda,
            phi: self.train.phi,
            tau: self.train.tau,
            lr: self.train.lr,
            adv_lr_scale: self.train.adv_lr_scale,
            weight_decay: self.train.weight_decay,
            max_epochs: self.train.max_epochs,
            eval_every: self.train.eval_every,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// FNV-1a hash of the canonical serialized form.
    pub fn config_hash(&self) -> u64 {
        crate::report::fnv1a(self.to_toml().as_bytes())
    }
}

/// Architecture behind a method label; `None` is the uniform baseline.
pub fn method_architecture(name: &str) -> Result<Option<Architecture>> {
    if name == "uniform" {
        return Ok(None);
    }
    Architecture::parse(name).map(Some)
}

/// The frozen synthetic benchmark: the desk-scale market every
/// directional check runs on. Differs from the bare defaults only in the
/// knobs that desk-scale training needs.
pub fn benchmark() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.train.lr = 0.005;
    cfg.train.max_epochs = 600;
    cfg.train.eval_every = 10;
    cfg.train.phi = 1.0;
    cfg
}
