//! Pricing policies: encoder (MLP, GCN, GAT, GraphSAGE) plus the sigmoid
//! pricing head mapping each node representation to a price in
//! `[0, p_max]`. The policy reads only features and topology, never the
//! protected attribute.

use std::fs;
use std::io::BufRead;
use std::path::Path;
use std::rc::Rc;

use rand::Rng;

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::scalar::Scalar;
use crate::seeding::{self, Rng64};

/// Parameter group name used for encoder and pricing-head parameters.
pub const POLICY_GROUP: &str = "policy";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Mlp,
    Gcn,
    Gat,
    GraphSage,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Mlp => "mlp",
            Architecture::Gcn => "gcn",
            Architecture::Gat => "gat",
            Architecture::GraphSage => "graphsage",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Architecture::Mlp),
            "gcn" => Ok(Architecture::Gcn),
            "gat" => Ok(Architecture::Gat),
            "graphsage" => Ok(Architecture::GraphSage),
            other => Err(Error::Config(format!(
                "unknown architecture '{other}' (expected mlp|gcn|gat|graphsage)"
            ))),
        }
    }
}

/// Encoder layout. `hidden_layers` counts layers before the output layer;
/// hidden layers use relu and train-mode dropout, the output layer is
/// linear. GAT hidden layers concatenate `heads[k]` attention heads, the
/// GAT output layer always uses a single head.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub hidden_layers: usize,
    pub heads: Vec<usize>,
    pub leaky_slope: f64,
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "encoder.dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.architecture == Architecture::Gat {
            if self.heads.len() != self.hidden_layers {
                return Err(Error::Config(format!(
                    "encoder.heads must list one head count per hidden layer ({} expected, {} given)",
                    self.hidden_layers,
                    self.heads.len()
                )));
            }
            if self.heads.iter().any(|&h| h == 0) {
                return Err(Error::Config("encoder.heads entries must be positive".into()));
            }
            if self.leaky_slope <= 0.0 {
                return Err(Error::Config(format!(
                    "encoder.leaky_slope must be positive, got {}",
                    self.leaky_slope
                )));
            }
        }
        Ok(())
    }

    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.hidden_layers + 1
    }

    /// Representation width entering layer `k`.
    fn layer_input_width(&self, k: usize) -> usize {
        if k == 0 {
            return self.input_dim;
        }
        match self.architecture {
            Architecture::Gat => self.heads[k - 1] * self.hidden_dim,
            _ => self.hidden_dim,
        }
    }

    fn layer_output_width(&self, k: usize) -> usize {
        if k == self.depth() - 1 {
            self.output_dim
        } else {
            self.hidden_dim
        }
    }
}

fn glorot<T: Scalar>(rng: &mut Rng64, rows: usize, cols: usize) -> Tensor<T> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::cast(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized data")
}

/// Register encoder and pricing-head parameters under [`POLICY_GROUP`].
/// Registration order is deterministic, so snapshots restore by name.
pub fn register_policy_params<T: Scalar>(
    store: &mut ParamStore<T>,
    cfg: &EncoderConfig,
    rng: &mut Rng64,
) -> Result<()> {
    cfg.validate()?;
    for k in 0..cfg.depth() {
        let d_in = cfg.layer_input_width(k);
        let d_out = cfg.layer_output_width(k);
        match cfg.architecture {
            Architecture::Mlp | Architecture::Gcn => {
                store.register(POLICY_GROUP, &format!("policy.layer{k}.weight"), glorot(rng, d_in, d_out))?;
                store.register(POLICY_GROUP, &format!("policy.layer{k}.bias"), Tensor::zeros(1, d_out))?;
            }
            Architecture::GraphSage => {
                store.register(
                    POLICY_GROUP,
                    &format!("policy.layer{k}.weight"),
                    glorot(rng, 2 * d_in, d_out),
                )?;
                store.register(POLICY_GROUP, &format!("policy.layer{k}.bias"), Tensor::zeros(1, d_out))?;
            }
            Architecture::Gat => {
                let heads = if k == cfg.depth() - 1 { 1 } else { cfg.heads[k] };
                for h in 0..heads {
                    store.register(
                        POLICY_GROUP,
                        &format!("policy.layer{k}.head{h}.weight"),
                        glorot(rng, d_in, d_out),
                    )?;
                    store.register(
                        POLICY_GROUP,
                        &format!("policy.layer{k}.head{h}.att_src"),
                        glorot(rng, d_out, 1),
                    )?;
                    store.register(
                        POLICY_GROUP,
                        &format!("policy.layer{k}.head{h}.att_dst"),
                        glorot(rng, d_out, 1),
                    )?;
                }
                store.register(
                    POLICY_GROUP,
                    &format!("policy.layer{k}.bias"),
                    Tensor::zeros(1, heads * d_out),
                )?;
            }
        }
    }
    store.register(POLICY_GROUP, "policy.head.weight", glorot(rng, cfg.output_dim, 1))?;
    store.register(POLICY_GROUP, "policy.head.bias", Tensor::zeros(1, 1))?;
    Ok(())
}

/// Forward mode: training applies dropout, evaluation is deterministic.
pub enum EncodeMode<'a> {
    Eval,
    Train { rng: &'a mut Rng64 },
}

fn get_param<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, name: &str) -> Result<Var> {
    let id = store
        .id(name)
        .ok_or_else(|| Error::Invalid(format!("parameter '{name}' not registered")))?;
    Ok(tape.param(store, id))
}

/// Run the encoder, recording onto the tape; returns the `n x q`
/// representation variable.
pub fn encode<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    cfg: &EncoderConfig,
    x: Var,
    graph: &Graph,
    mode: &mut EncodeMode<'_>,
) -> Result<Var> {
    let (n, m) = tape.value(x).shape();
    if n != graph.n() || m != cfg.input_dim {
        return Err(Error::DimMismatch {
            op: "encode",
            lhs: (n, m),
            rhs: (graph.n(), cfg.input_dim),
        });
    }
    let gcn_norm = match cfg.architecture {
        Architecture::Gcn => Some(Rc::new(graph.normalized_adjacency_with_self_loops::<T>())),
        _ => None,
    };
    let neighbor_mean = match cfg.architecture {
        Architecture::GraphSage => Some(Rc::new(graph.neighbor_mean_matrix::<T>())),
        _ => None,
    };
    let gat_pattern = match cfg.architecture {
        Architecture::Gat => Some(Rc::new(graph.self_loop_pattern::<T>())),
        _ => None,
    };

    let mut h = x;
    for k in 0..cfg.depth() {
        let is_output = k == cfg.depth() - 1;
        let mut z = match cfg.architecture {
            Architecture::Mlp => {
                let w = get_param(tape, store, &format!("policy.layer{k}.weight"))?;
                let b = get_param(tape, store, &format!("policy.layer{k}.bias"))?;
                let hw = tape.matmul(h, w)?;
                tape.add_bias(hw, b)?
            }
            Architecture::Gcn => {
                let w = get_param(tape, store, &format!("policy.layer{k}.weight"))?;
                let b = get_param(tape, store, &format!("policy.layer{k}.bias"))?;
                let hw = tape.matmul(h, w)?;
                let agg = tape.sparse_matmul(Rc::clone(gcn_norm.as_ref().unwrap()), hw)?;
                tape.add_bias(agg, b)?
            }
            Architecture::GraphSage => {
                let w = get_param(tape, store, &format!("policy.layer{k}.weight"))?;
                let b = get_param(tape, store, &format!("policy.layer{k}.bias"))?;
                let nm = tape.sparse_matmul(Rc::clone(neighbor_mean.as_ref().unwrap()), h)?;
                let cat = tape.concat_cols(h, nm)?;
                let hw = tape.matmul(cat, w)?;
                tape.add_bias(hw, b)?
            }
            Architecture::Gat => {
                let heads = if is_output { 1 } else { cfg.heads[k] };
                let pattern = gat_pattern.as_ref().unwrap();
                let ones_row = tape.constant(Tensor::filled(1, n, T::one()));
                let mut head_outputs = Vec::with_capacity(heads);
                for hd in 0..heads {
                    let w = get_param(tape, store, &format!("policy.layer{k}.head{hd}.weight"))?;
                    let a_src = get_param(tape, store, &format!("policy.layer{k}.head{hd}.att_src"))?;
                    let a_dst = get_param(tape, store, &format!("policy.layer{k}.head{hd}.att_dst"))?;
                    let hw = tape.matmul(h, w)?;
                    let u = tape.matmul(hw, a_src)?;
                    let v = tape.matmul(hw, a_dst)?;
                    // score(i, j) = u_i + v_j over neighbors plus self
                    let broadcast = tape.matmul(u, ones_row)?;
                    let v_row = tape.transpose(v);
                    let scores = tape.add_bias(broadcast, v_row)?;
                    let scored = tape.leaky_relu(scores, T::cast(cfg.leaky_slope));
                    let att = tape.row_softmax_masked(scored, Rc::clone(pattern))?;
                    head_outputs.push(tape.matmul(att, hw)?);
                }
                let mut cat = head_outputs[0];
                for &out in &head_outputs[1..] {
                    cat = tape.concat_cols(cat, out)?;
                }
                let b = get_param(tape, store, &format!("policy.layer{k}.bias"))?;
                tape.add_bias(cat, b)?
            }
        };
        if !is_output {
            z = tape.relu(z);
            if cfg.dropout > 0.0 {
                if let EncodeMode::Train { rng } = mode {
                    z = tape.dropout(z, T::cast(cfg.dropout), rng)?;
                }
            }
        }
        h = z;
    }
    Ok(h)
}

/// Map representations to prices: `p = p_max * sigmoid(H w + b)`.
pub fn price_head<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    p_max: T,
    representations: Var,
) -> Result<Var> {
    let w = get_param(tape, store, "policy.head.weight")?;
    let b = get_param(tape, store, "policy.head.bias")?;
    let z = tape.matmul(representations, w)?;
    let z = tape.add_bias(z, b)?;
    let s = tape.sigmoid(z);
    Ok(tape.scale(s, p_max))
}

/// Deterministic eval-mode price assignment against an arbitrary store.
pub fn forward_prices<T: Scalar>(
    store: &ParamStore<T>,
    cfg: &EncoderConfig,
    p_max: T,
    x: &Tensor<T>,
    graph: &Graph,
) -> Result<Vec<T>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let h = encode(&mut tape, store, cfg, xv, graph, &mut EncodeMode::Eval)?;
    let p = price_head(&mut tape, store, p_max, h)?;
    Ok(tape.value(p).data().to_vec())
}

/// Deterministic eval-mode representations against an arbitrary store.
pub fn forward_representations<T: Scalar>(
    store: &ParamStore<T>,
    cfg: &EncoderConfig,
    x: &Tensor<T>,
    graph: &Graph,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let h = encode(&mut tape, store, cfg, xv, graph, &mut EncodeMode::Eval)?;
    Ok(tape.value(h).clone())
}

/// Encoder parameters plus the pricing head; maps `(X, A)` to prices.
pub struct Policy<T> {
    config: EncoderConfig,
    p_max: T,
    params: ParamStore<T>,
}

impl<T: Scalar> Policy<T> {
    /// Fresh policy with Glorot-initialized weights.
    pub fn init(config: EncoderConfig, p_max: T, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = seeding::stream(seed, "policy.init");
        register_policy_params(&mut params, &config, &mut rng)?;
        Ok(Self {
            config,
            p_max,
            params,
        })
    }

    pub fn from_parts(config: EncoderConfig, p_max: T, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            p_max,
            params,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn p_max(&self) -> T {
        self.p_max
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Copy this policy's parameters into another store (same names,
    /// [`POLICY_GROUP`] group), preserving registration order.
    pub fn install_params(&self, store: &mut ParamStore<T>) -> Result<()> {
        for id in self.params.ids() {
            store.register(POLICY_GROUP, self.params.name(id), self.params.value(id).clone())?;
        }
        Ok(())
    }

    /// Deterministic price vector for every node; eval mode (dropout off).
    pub fn assign_prices(&self, x: &Tensor<T>, graph: &Graph) -> Result<Vec<T>> {
        forward_prices(&self.params, &self.config, self.p_max, x, graph)
    }

    /// Final-layer representations in eval mode.
    pub fn representations(&self, x: &Tensor<T>, graph: &Graph) -> Result<Tensor<T>> {
        forward_representations(&self.params, &self.config, x, graph)
    }

    /// Write the checkpoint: encoder config header plus the parameter
    /// container. Loading reproduces `assign_prices` bit-identically.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        use std::io::Write;
        writeln!(out, "netprice-policy v1")?;
        writeln!(out, "architecture {}", self.config.architecture.name())?;
        writeln!(out, "input_dim {}", self.config.input_dim)?;
        writeln!(out, "hidden_dim {}", self.config.hidden_dim)?;
        writeln!(out, "output_dim {}", self.config.output_dim)?;
        writeln!(out, "hidden_layers {}", self.config.hidden_layers)?;
        let heads: Vec<String> = self.config.heads.iter().map(|h| h.to_string()).collect();
        writeln!(out, "heads {}", heads.join(" "))?;
        writeln!(out, "leaky_slope {}", self.config.leaky_slope)?;
        writeln!(out, "dropout {}", self.config.dropout)?;
        writeln!(out, "p_max {}", self.p_max.as_f64())?;
        self.params.write_text(&mut out)?;
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        let mut reader = std::io::BufReader::new(file);
        fn next(reader: &mut impl BufRead) -> Result<String> {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 {
                return Err(Error::Checkpoint("unexpected end of checkpoint".into()));
            }
            Ok(line.trim_end().to_string())
        }
        fn field(reader: &mut impl BufRead, key: &str) -> Result<String> {
            let l = next(reader)?;
            l.strip_prefix(key)
                .map(|rest| rest.trim().to_string())
                .ok_or_else(|| Error::Checkpoint(format!("expected '{key} ...', got '{l}'")))
        }
        fn parse_usize(s: String, key: &str) -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Checkpoint(format!("bad {key} value '{s}'")))
        }
        fn parse_f64(s: String, key: &str) -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Checkpoint(format!("bad {key} value '{s}'")))
        }

        let header = next(&mut reader)?;
        if header != "netprice-policy v1" {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint header '{header}'"
            )));
        }
        let architecture = Architecture::parse(&field(&mut reader, "architecture")?)?;
        let input_dim = parse_usize(field(&mut reader, "input_dim")?, "input_dim")?;
        let hidden_dim = parse_usize(field(&mut reader, "hidden_dim")?, "hidden_dim")?;
        let output_dim = parse_usize(field(&mut reader, "output_dim")?, "output_dim")?;
        let hidden_layers = parse_usize(field(&mut reader, "hidden_layers")?, "hidden_layers")?;
        let heads_line = field(&mut reader, "heads")?;
        let heads: Vec<usize> = heads_line
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Checkpoint(format!("bad heads value '{t}'")))
            })
            .collect::<Result<_>>()?;
        let leaky_slope = parse_f64(field(&mut reader, "leaky_slope")?, "leaky_slope")?;
        let dropout = parse_f64(field(&mut reader, "dropout")?, "dropout")?;
        let p_max = T::cast(parse_f64(field(&mut reader, "p_max")?, "p_max")?);
        let params = ParamStore::read_text(&mut reader)?;
        Policy::from_parts(
            EncoderConfig {
                architecture,
                input_dim,
                hidden_dim,
                output_dim,
                hidden_layers,
                heads,
                leaky_slope,
                dropout,
            },
            p_max,
            params,
        )
    }
}

/// Gradient-check cases: one end-to-end encode + price head composition
/// per architecture, eval mode, on a small fixed graph.
pub fn gradcheck_cases<T: Scalar>(
) -> Vec<(String, ParamStore<T>, Box<crate::autodiff::LossBuilder<T>>)> {
    let mut cases: Vec<(String, ParamStore<T>, Box<crate::autodiff::LossBuilder<T>>)> = Vec::new();
    let edges = [(0usize, 1usize), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3), (5, 0)];
    let graph = Graph::build(&edges, 7).expect("valid fixture graph");

    for arch in [
        Architecture::Mlp,
        Architecture::Gcn,
        Architecture::Gat,
        Architecture::GraphSage,
    ] {
        let cfg = EncoderConfig {
            architecture: arch,
            input_dim: 3,
            hidden_dim: 4,
            output_dim: 3,
            hidden_layers: 1,
            heads: if arch == Architecture::Gat { vec![2] } else { vec![] },
            leaky_slope: 0.05,
            dropout: 0.0,
        };
        let mut store = ParamStore::new();
        let mut rng = seeding::stream(97, arch.name());
        register_policy_params(&mut store, &cfg, &mut rng).expect("valid config");
        let mut xrng = seeding::stream(98, arch.name());
        let x = {
            let data = (0..7 * 3).map(|_| T::cast(xrng.gen_range(-1.0..1.0))).collect();
            Tensor::from_vec(7, 3, data).expect("sized data")
        };
        let graph = graph.clone();
        cases.push((
            format!("encode_{}", arch.name()),
            store,
            Box::new(move |tape, store| {
                let xv = tape.constant(x.clone());
                let h = encode(tape, store, &cfg, xv, &graph, &mut EncodeMode::Eval)?;
                let p = price_head(tape, store, T::cast(10.0), h)?;
                let sq = tape.mul(p, p)?;
                Ok(tape.sum_all(sq))
            }),
        ));
    }
    cases
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(arch: Architecture, input_dim: usize) -> EncoderConfig {
        EncoderConfig {
            architecture: arch,
            input_dim,
            hidden_dim: 4,
            output_dim: 3,
            hidden_layers: 1,
            heads: if arch == Architecture::Gat { vec![2] } else { vec![] },
            leaky_slope: 0.05,
            dropout: 0.1,
        }
    }

    fn ring(n: usize) -> Graph {
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::build(&edges, n).unwrap()
    }

    fn random_features(n: usize, m: usize, seed: u64) -> Tensor<f64> {
        let mut rng = seeding::stream(seed, "x");
        let data = (0..n * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(n, m, data).unwrap()
    }

    const ALL_ARCHS: [Architecture; 4] = [
        Architecture::Mlp,
        Architecture::Gcn,
        Architecture::Gat,
        Architecture::GraphSage,
    ];

    #[test]
    fn zero_head_params_price_at_half_p_max() {
        let g = ring(6);
        let x = random_features(6, 2, 1);
        let mut p = Policy::init(cfg(Architecture::Mlp, 2), 400.0, 3).unwrap();
        let wid = p.params.id("policy.head.weight").unwrap();
        p.params.value_mut(wid).data_mut().fill(0.0);
        let prices = p.assign_prices(&x, &g).unwrap();
        assert!(prices.iter().all(|&v| v == 200.0));
    }

    #[test]
    fn large_head_bias_saturates_at_p_max() {
        let g = ring(5);
        let x = random_features(5, 2, 2);
        let mut p = Policy::init(cfg(Architecture::Mlp, 2), 400.0, 3).unwrap();
        let bid = p.params.id("policy.head.bias").unwrap();
        p.params.value_mut(bid).data_mut().fill(50.0);
        let prices = p.assign_prices(&x, &g).unwrap();
        for v in prices {
            assert!((v - 400.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_representations_get_identical_prices() {
        let g = Graph::build(&[], 2).unwrap();
        let x = Tensor::from_vec(2, 2, vec![0.3, -0.7, 0.3, -0.7]).unwrap();
        let p = Policy::init(cfg(Architecture::Mlp, 2), 100.0, 5).unwrap();
        let prices = p.assign_prices(&x, &g).unwrap();
        assert_eq!(prices[0], prices[1]);
    }

    #[test]
    fn fresh_policy_prices_in_open_range_and_deterministic() {
        let g = ring(8);
        let x = random_features(8, 3, 4);
        for arch in ALL_ARCHS {
            let p = Policy::init(cfg(arch, 3), 300.0, 11).unwrap();
            let a = p.assign_prices(&x, &g).unwrap();
            let b = p.assign_prices(&x, &g).unwrap();
            assert_eq!(a, b, "{arch:?} eval not deterministic");
            assert!(
                a.iter().all(|&v| v > 0.0 && v < 300.0),
                "{arch:?} price out of range"
            );
        }
    }

    #[test]
    fn gcn_identity_layers_on_isolated_node_pass_relu_through() {
        // isolated node: normalized adjacency with self-loop is exactly 1
        let g = Graph::build(&[], 1).unwrap();
        let c = EncoderConfig {
            architecture: Architecture::Gcn,
            input_dim: 2,
            hidden_dim: 2,
            output_dim: 2,
            hidden_layers: 1,
            heads: vec![],
            leaky_slope: 0.05,
            dropout: 0.0,
        };
        let mut p = Policy::init(c, 100.0, 9).unwrap();
        for k in 0..2 {
            let wid = p.params.id(&format!("policy.layer{k}.weight")).unwrap();
            let w = p.params.value_mut(wid);
            for i in 0..2 {
                for j in 0..2 {
                    w.set(i, j, if i == j { 1.0 } else { 0.0 });
                }
            }
        }
        let x = Tensor::from_vec(1, 2, vec![-2.0, 3.0]).unwrap();
        let h = p.representations(&x, &g).unwrap();
        assert_eq!(h.data(), &[0.0, 3.0]); // relu(x) through identity layers
    }

    #[test]
    fn mlp_equals_gcn_on_edgeless_graph() {
        // with no edges the normalized adjacency reduces to the identity
        let g = Graph::build(&[], 7).unwrap();
        let x = random_features(7, 3, 6);
        let mlp = Policy::init(cfg(Architecture::Mlp, 3), 250.0, 21).unwrap();
        let gcn = Policy::init(cfg(Architecture::Gcn, 3), 250.0, 21).unwrap();
        assert_eq!(
            mlp.assign_prices(&x, &g).unwrap(),
            gcn.assign_prices(&x, &g).unwrap()
        );
    }

    #[test]
    fn permutation_equivariance_all_architectures() {
        let n = 9;
        let g = Graph::build(
            &[(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (1, 7), (7, 8)],
            n,
        )
        .unwrap();
        let x = random_features(n, 3, 8);
        let perm: Vec<usize> = (0..n).map(|i| (i + 4) % n).collect();
        let mut xp = Tensor::zeros(n, 3);
        for i in 0..n {
            for j in 0..3 {
                xp.set(perm[i], j, x.get(i, j));
            }
        }
        let edges_p: Vec<(usize, usize)> = g.edges().map(|(a, b)| (perm[a], perm[b])).collect();
        let gp = Graph::build(&edges_p, n).unwrap();
        for arch in ALL_ARCHS {
            let p = Policy::init(cfg(arch, 3), 300.0, 13).unwrap();
            let base = p.assign_prices(&x, &g).unwrap();
            let permuted = p.assign_prices(&xp, &gp).unwrap();
            for i in 0..n {
                assert!(
                    (base[i] - permuted[perm[i]]).abs() < 1e-9,
                    "{arch:?} node {i}: {} vs {}",
                    base[i],
                    permuted[perm[i]]
                );
            }
        }
    }

    #[test]
    fn grown_graph_still_prices_every_node() {
        let g_small = ring(6);
        let x_small = random_features(6, 3, 10);
        let p = Policy::init(cfg(Architecture::GraphSage, 3), 300.0, 17).unwrap();
        let _ = p.assign_prices(&x_small, &g_small).unwrap();
        let mut edges: Vec<(usize, usize)> = g_small.edges().collect();
        edges.push((0, 6));
        edges.push((6, 7));
        let g_big = Graph::build(&edges, 8).unwrap();
        let x_big = random_features(8, 3, 10);
        let prices = p.assign_prices(&x_big, &g_big).unwrap();
        assert_eq!(prices.len(), 8);
        assert!(prices.iter().all(|&v| v > 0.0 && v < 300.0));
    }

    #[test]
    fn eval_mode_ignores_dropout() {
        let g = ring(6);
        let x = random_features(6, 2, 12);
        let mut c = cfg(Architecture::Gcn, 2);
        c.dropout = 0.5;
        let p = Policy::init(c, 300.0, 19).unwrap();
        assert_eq!(
            p.assign_prices(&x, &g).unwrap(),
            p.assign_prices(&x, &g).unwrap()
        );
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_identical() {
        let dir = tempfile::TempDir::new().unwrap();
        let g = ring(7);
        let x = random_features(7, 3, 14);
        for arch in ALL_ARCHS {
            let p = Policy::init(cfg(arch, 3), 350.0, 23).unwrap();
            let path = dir.path().join(format!("{}.policy", arch.name()));
            p.save(&path).unwrap();
            let q = Policy::<f64>::load(&path).unwrap();
            assert_eq!(
                p.assign_prices(&x, &g).unwrap(),
                q.assign_prices(&x, &g).unwrap()
            );
        }
    }

    #[test]
    fn gat_heads_must_match_hidden_layers() {
        let mut c = cfg(Architecture::Gat, 3);
        c.heads = vec![2, 2];
        assert!(Policy::<f64>::init(c, 300.0, 1).is_err());
    }

    #[test]
    fn end_to_end_gradients_pass_finite_differences() {
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
}
