//! `netprice`: config-driven batch runner for the pricing engine.
//!
//! Every subcommand reads one TOML config, writes its artifacts under
//! `<output root>/<subcommand>/`, and always leaves a machine-readable
//! manifest there, even on failure. Exit codes: 0 success, 1 operational
//! error, 2 no candidate model satisfied the group-fairness threshold.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use netprice::config::{method_architecture, RunConfig};
use netprice::error::Error;
use netprice::experiments::{
    cell_split, posthoc_deciles, run_ablation, run_generalization, run_main, run_sweep,
    train_single, Dataset,
};
use netprice::graph::{induced_subgraph, NodeMask};
use netprice::io;
use netprice::market;
use netprice::policy::{Architecture, Policy};
use netprice::report;
use netprice::training::TrainFailure;
use netprice::Real;

const EXIT_ERROR: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;

/// Environment variable overriding the configured output root.
const OUTPUT_ENV: &str = "NETPRICE_OUT";

#[derive(Parser)]
#[command(name = "netprice", version, about = "Fair personalized pricing on social networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic dataset and write it to disk.
    Generate {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Run one training job and write its log, checkpoint, and metrics.
    Train {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on the configured selection network.
    Evaluate {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Method comparison across seeds (uniform and policy variants).
    Main {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Frozen-policy generalization versus retraining, by proportion.
    Generalize {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Ablation of the debiasing module and the price regularizer.
    Ablate {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Grid sweep over the regularization and adversarial weights.
    Sweep {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Average price per degree decile for a trained checkpoint.
    Posthoc {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Finite-difference verification of every gradient path.
    Gradcheck {
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}

fn fail(msg: impl std::fmt::Display) -> u8 {
    eprintln!("error: {msg}");
    EXIT_ERROR
}

fn output_dir(cfg: &RunConfig, subcommand: &str) -> PathBuf {
    let root = std::env::var(OUTPUT_ENV).unwrap_or_else(|_| cfg.output.dir.clone());
    Path::new(&root).join(subcommand)
}

fn load_config(path: &Path) -> Result<RunConfig, u8> {
    RunConfig::parse(path).map_err(fail)
}

/// Run a step that yields a final manifest status; the manifest is
/// written as `running` first so a crash still leaves a record.
fn with_manifest<F>(dir: &Path, subcommand: &str, cfg: &RunConfig, body: F) -> Result<(), u8>
where
    F: FnOnce(&Path) -> Result<(), (u8, String)>,
{
    report::write_manifest(dir, subcommand, cfg, "running", None).map_err(fail)?;
    match body(dir) {
        Ok(()) => {
            report::write_manifest(dir, subcommand, cfg, "ok", None).map_err(fail)?;
            Ok(())
        }
        Err((code, reason)) => {
            let status = if code == EXIT_INFEASIBLE { "infeasible" } else { "failed" };
            let _ = report::write_manifest(dir, subcommand, cfg, status, Some(&reason));
            eprintln!("error: {reason}");
            Err(code)
        }
    }
}

fn op_err(e: Error) -> (u8, String) {
    let code = if matches!(e, Error::Infeasible { .. }) {
        EXIT_INFEASIBLE
    } else {
        EXIT_ERROR
    };
    (code, e.to_string())
}

fn dispatch(cmd: Command) -> Result<(), u8> {
    match cmd {
        Command::Generate { config } => {
            let cfg = load_config(&config)?;
            let dir = output_dir(&cfg, "generate");
            with_manifest(&dir, "generate", &cfg, |dir| {
                if cfg.graph.source != "sbm" {
                    return Err((
                        EXIT_ERROR,
                        "generate requires graph.source = \"sbm\"".to_string(),
                    ));
                }
                let (dataset, _) = Dataset::from_config(&cfg).map_err(op_err)?;
                io::write_edge_list(&dir.join("edges.txt"), &dataset.graph).map_err(op_err)?;
                io::write_node_table(&dir.join("nodes.csv"), &dataset.table, ',')
                    .map_err(op_err)?;
                let report_text = format!(
                    "nodes {}\nedges {}\nseed {}\n",
                    dataset.graph.n(),
                    dataset.graph.edge_count(),
                    cfg.graph.sbm_seed
                );
                fs::write(dir.join("report.txt"), report_text)
                    .map_err(|e| (EXIT_ERROR, e.to_string()))?;
                println!(
                    "generated {} nodes, {} edges",
                    dataset.graph.n(),
                    dataset.graph.edge_count()
                );
                Ok(())
            })
        }
        Command::Train { config } => {
            let cfg = load_config(&config)?;
            let dir = output_dir(&cfg, "train");
            with_manifest(&dir, "train", &cfg, |dir| {
                let (dataset, _) = Dataset::from_config(&cfg).map_err(op_err)?;
                let arch = Architecture::parse(&cfg.encoder.architecture).map_err(op_err)?;
                match train_single(&dataset, &cfg, arch, cfg.train.seed) {
                    Ok(outcome) => {
                        fs::write(
                            dir.join("log.csv"),
                            report::render_training_log(&outcome.run.epochs),
                        )
                        .map_err(|e| (EXIT_ERROR, e.to_string()))?;
                        outcome
                            .policy
                            .save(&dir.join("selected.policy"))
                            .map_err(op_err)?;
                        let cand = outcome
                            .run
                            .pool
                            .iter()
                            .find(|c| c.epoch == outcome.selected_epoch)
                            .expect("selected epoch is in the pool");
                        fs::write(
                            dir.join("selection_metrics.csv"),
                            format!(
                                "selected_epoch,pi_avg,p_diff\n{},{},{}\n",
                                cand.epoch, cand.pi_avg, cand.p_diff
                            ),
                        )
                        .map_err(|e| (EXIT_ERROR, e.to_string()))?;
                        println!(
                            "selected epoch {} (pi_avg {}, p_diff {})",
                            cand.epoch, cand.pi_avg, cand.p_diff
                        );
                        Ok(())
                    }
                    Err(TrainFailure::Infeasible { tau, run, .. }) => {
                        let _ = fs::write(
                            dir.join("log.csv"),
                            report::render_training_log(&run.epochs),
                        );
                        let best = run
                            .pool
                            .iter()
                            .min_by(|a, b| a.p_diff.partial_cmp(&b.p_diff).expect("finite"))
                            .map(|c| format!("best p_diff {} at epoch {}", c.p_diff, c.epoch))
                            .unwrap_or_else(|| "empty candidate pool".into());
                        Err((
                            EXIT_INFEASIBLE,
                            format!("no candidate satisfied p_diff <= {tau}; {best}"),
                        ))
                    }
                    Err(f) => Err(op_err(f.into_error())),
                }
            })
        }
        Command::Evaluate { config, checkpoint } => {
            let cfg = load_config(&config)?;
            let dir = output_dir(&cfg, "evaluate");
            with_manifest(&dir, "evaluate", &cfg, |dir| {
                let (dataset, _) = Dataset::from_config(&cfg).map_err(op_err)?;
                let policy = Policy::<Real>::load(&checkpoint).map_err(op_err)?;
                let split =
                    cell_split(dataset.graph.n(), &cfg, cfg.train.seed).map_err(op_err)?;
                let sel_mask = split.selection();
                let (sel_graph, sel_map) =
                    induced_subgraph(&dataset.graph, &sel_mask).map_err(op_err)?;
                let sel_table = dataset.table.subset(&sel_map);
                let prices = policy
                    .assign_prices(sel_table.features(), &sel_graph)
                    .map_err(op_err)?;
                let model = cfg.demand_model(&dataset.table).map_err(op_err)?;
                let metrics = market::metrics(
                    &sel_graph,
                    &sel_table,
                    &model,
                    &cfg.perception().map_err(op_err)?,
                    &cfg.market().map_err(op_err)?,
                    &prices,
                    &NodeMask::full(sel_graph.n()),
                )
                .map_err(op_err)?;
                let cell = netprice::experiments::CellMetrics {
                    pi_avg: metrics.pi_avg,
                    p_diff: metrics.p_diff,
                    delta_avg: metrics.delta_avg,
                    eta_avg: metrics.eta_avg,
                    n0: metrics.group_size[0],
                    n1: metrics.group_size[1],
                };
                fs::write(dir.join("metrics.csv"), report::render_metrics_row(&cell))
                    .map_err(|e| (EXIT_ERROR, e.to_string()))?;
                fs::write(dir.join("prices.csv"), report::render_prices(&prices))
                    .map_err(|e| (EXIT_ERROR, e.to_string()))?;
                println!("pi_avg {} p_diff {}", metrics.pi_avg, metrics.p_diff);
                Ok(())
            })
        }
        Command::Main { config } => {
            let cfg = load_config(&config)?;
            let dir = output_dir(&cfg, "main");
            with_manifest(&dir, "main", &cfg, |dir| {
                for m in &cfg.experiment.methods {
                    method_architecture(m).map_err(op_err)?;
                }
                let (dataset, _) = Dataset::from_config(&cfg).map_err(op_err)?;
                let result = run_main(&dataset, &cfg).map_err(op_err)?;
                report::write_comparison(dir, &result).map_err(op_err)?;
                for row in &result.aggregates {
                    println!(
                        "{}: pi_avg {:.4} ({:.4}), p_diff {:.4} ({:.4})",
                        row.label,
                        row.pi_avg.mean,
                        row.pi_avg.stderr,
                        row.p_diff.mean,
                        row.p_diff.stderr
                    );
                }
                Ok(())
            })
        }
        Command::Generalize { config } => {
            let cfg = load_config(&config)?;
            let dir = output_dir(&cfg, "generalize");
            with_manifest(&dir, "generalize", &cfg, |dir| {
                let (dataset, _) = Dataset::from_config(&cfg).map_err(op_err)?;
                let result = run_generalization(&dataset, &cfg).map_err(op_err)?;
                fs::write(dir.join("aggregate.csv"), report::render_generalization(&result))
                    .map_err(|e| (EXIT_ERROR, e.to_string()))?;
                fs::write(dir.join("cells.csv"), report::render_cells(&result.cells))
                    .map_err(|e| (EXIT_ERROR, e.to_string()))?;
                report::write_cell_artifacts(dir, &result.cells).map_err(op_err)?;
                for row in &result.rows {
                    println!(
                        "proportion {}: pi ratio {:.4} ({:.4})",
                        row.proportion, row.ratio.mean, row.ratio.stderr
                    );
                }
                Ok(())
            })
        }
        Command::Ablate { config } => {
            let cfg = load_config(&config)?;
            let dir = output_dir(&cfg, "ablate");
            with_manifest(&dir, "ablate", &cfg, |dir| {
                let (dataset, _) = Dataset::from_config(&cfg).map_err(op_err)?;
                let result = run_ablation(&dataset, &cfg).map_err(op_err)?;
                report::write_comparison(dir, &result).map_err(op_err)?;
                for row in &result.aggregates {
                    println!(
                        "{}: pi_avg {:.4} ({:.4}), p_diff {:.4} ({:.4})",
                        row.label,
                        row.pi_avg.mean,
                        row.pi_avg.stderr,
                        row.p_diff.mean,
                        row.p_diff.stderr
                    );
                }
                Ok(())
            })
        }
        Command::Sweep { config } => {
            let cfg = load_config(&config)?;
            let dir = output_dir(&cfg, "sweep");
            with_manifest(&dir, "sweep", &cfg, |dir| {
                let (dataset, _) = Dataset::from_config(&cfg).map_err(op_err)?;
                let result = run_sweep(&dataset, &cfg).map_err(op_err)?;
                fs::write(dir.join("aggregate.csv"), report::render_sweep(&result))
                    .map_err(|e| (EXIT_ERROR, e.to_string()))?;
                fs::write(dir.join("cells.csv"), report::render_cells(&result.cells))
                    .map_err(|e| (EXIT_ERROR, e.to_string()))?;
                report::write_cell_artifacts(dir, &result.cells).map_err(op_err)?;
                for row in &result.rows {
                    println!(
                        "lambda {} phi {}: pi_avg {:.4}, p_diff {:.4}{}",
                        row.lambda,
                        row.phi,
                        row.pi_avg.mean,
                        row.p_diff.mean,
                        if row.flagged > 0 {
                            format!(" [{} flagged]", row.flagged)
                        } else {
                            String::new()
                        }
                    );
                }
                Ok(())
            })
        }
        Command::Posthoc { config, checkpoint } => {
            let cfg = load_config(&config)?;
            let dir = output_dir(&cfg, "posthoc");
            with_manifest(&dir, "posthoc", &cfg, |dir| {
                let (dataset, _) = Dataset::from_config(&cfg).map_err(op_err)?;
                let policy = Policy::<Real>::load(&checkpoint).map_err(op_err)?;
                let table = posthoc_deciles(&policy, &dataset.graph, &dataset.table)
                    .map_err(op_err)?;
                fs::write(dir.join("deciles.csv"), report::render_deciles(&table))
                    .map_err(|e| (EXIT_ERROR, e.to_string()))?;
                println!("decile price spearman {:.4}", table.spearman());
                Ok(())
            })
        }
        Command::Gradcheck { config } => {
            let reports = gradcheck_reports().map_err(fail)?;
            let mut all_pass = true;
            let mut csv = String::from(report::GRADCHECK_HEADER);
            csv.push('\n');
            for r in &reports {
                let pass = r.passes(1e-4);
                all_pass &= pass;
                println!(
                    "{:<28} max_rel_err {:.3e}  {}",
                    r.name,
                    r.max_rel_err,
                    if pass { "ok" } else { "FAIL" }
                );
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    r.name, r.max_rel_err, r.worst_param, pass
                ));
            }
            if let Some(path) = config {
                let cfg = load_config(&path)?;
                let dir = output_dir(&cfg, "gradcheck");
                let status = if all_pass { "ok" } else { "failed" };
                report::write_manifest(&dir, "gradcheck", &cfg, status, None).map_err(fail)?;
                fs::write(dir.join("gradcheck.csv"), csv).map_err(fail)?;
            }
            if all_pass {
                Ok(())
            } else {
                Err(EXIT_ERROR)
            }
        }
    }
}

/// Every gradient path in the system: tape ops, each encoder end to end,
/// and the training losses.
fn gradcheck_reports() -> Result<Vec<netprice::autodiff::GradReport>, Error> {
    let mut reports = netprice::autodiff::op_suite_reports::<Real>(1e-5)?;
    for (name, mut store, build) in netprice::policy::gradcheck_cases::<Real>() {
        reports.push(netprice::autodiff::check_gradients(
            &name,
            &mut store,
            build.as_ref(),
            1e-5,
        )?);
    }
    for (name, mut store, build) in netprice::training::gradcheck_cases::<Real>() {
        reports.push(netprice::autodiff::check_gradients(
            &name,
            &mut store,
            build.as_ref(),
            1e-5,
        )?);
    }
    Ok(reports)
}
