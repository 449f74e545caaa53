//! Output layout: CSV schemas, training logs, and run manifests.
//!
//! Every experiment directory holds `manifest.toml` (run metadata),
//! `config.resolved.toml` (the exact configuration, re-parseable), and
//! the CSV tables below. Nothing here carries wall-clock state, so a
//! repeated run reproduces every byte.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::Result;
use crate::experiments::{
    AggregateRow, CellOutcome, ComparisonResult, DecileTable, GeneralizationResult, SweepResult,
};
use crate::training::EpochRecord;

pub const TRAINING_LOG_HEADER: &str =
    "epoch,loss_profit,loss_reg,loss_adv,sel_pi_avg,sel_p_diff,jsd_estimate";
pub const CELLS_HEADER: &str =
    "label,seed,pi_avg,p_diff,delta_avg,eta_avg,n0,n1,flag,selected_epoch,jsd,error";
pub const AGGREGATE_HEADER: &str = "label,pi_avg,pi_avg_mean,pi_avg_stderr,p_diff,p_diff_mean,p_diff_stderr,delta_avg,delta_avg_mean,delta_avg_stderr,eta_avg,eta_avg_mean,eta_avg_stderr,seeds,flagged,failed";
pub const GENERALIZATION_HEADER: &str = "proportion,pi_ratio_mean,pi_ratio_stderr,gen_pi_mean,gen_pi_stderr,retr_pi_mean,retr_pi_stderr,gen_p_diff_mean,gen_p_diff_stderr,retr_p_diff_mean,retr_p_diff_stderr,gen_delta_avg_mean,gen_eta_avg_mean,retr_delta_avg_mean,retr_eta_avg_mean,seeds,skipped";
pub const SWEEP_HEADER: &str =
    "lambda,phi,pi_avg_mean,pi_avg_stderr,p_diff_mean,p_diff_stderr,seeds,flagged,failed";
pub const DECILES_HEADER: &str = "decile,nodes,avg_degree,avg_price";
pub const GRADCHECK_HEADER: &str = "case,max_rel_err,worst_param,pass";
pub const METRICS_HEADER: &str = "pi_avg,p_diff,delta_avg,eta_avg,n0,n1";
pub const PRICES_HEADER: &str = "node,price";

/// FNV-1a over arbitrary bytes; used for config hashes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Training log CSV: one row per epoch, selection metrics only on
/// evaluation epochs.
pub fn render_training_log(epochs: &[EpochRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{TRAINING_LOG_HEADER}");
    for e in epochs {
        let (pi, gap, jsd) = match &e.eval {
            Some(ev) => (Some(ev.pi_avg), Some(ev.p_diff), ev.jsd),
            None => (None, None, None),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.epoch,
            e.loss_profit,
            opt(e.loss_reg),
            e.loss_adv,
            opt(pi),
            opt(gap),
            opt(jsd)
        );
    }
    out
}

pub fn render_cells(cells: &[CellOutcome]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CELLS_HEADER}");
    for c in cells {
        let (pi, gap, delta, eta, n0, n1) = match &c.metrics {
            Some(m) => (
                m.pi_avg.to_string(),
                m.p_diff.to_string(),
                m.delta_avg.to_string(),
                m.eta_avg.to_string(),
                m.n0.to_string(),
                m.n1.to_string(),
            ),
            None => Default::default(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            c.label,
            c.seed,
            pi,
            gap,
            delta,
            eta,
            n0,
            n1,
            c.flag.label(),
            c.selected_epoch.map(|e| e.to_string()).unwrap_or_default(),
            opt(c.jsd),
            c.error.clone().unwrap_or_default().replace(',', ";"),
        );
    }
    out
}

fn display_pair(mean: f64, stderr: f64) -> String {
    if mean.is_nan() {
        return "-".into();
    }
    format!("{mean:.4} ({stderr:.4})")
}

pub fn render_aggregate(rows: &[AggregateRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{AGGREGATE_HEADER}");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.label,
            display_pair(r.pi_avg.mean, r.pi_avg.stderr),
            r.pi_avg.mean,
            r.pi_avg.stderr,
            display_pair(r.p_diff.mean, r.p_diff.stderr),
            r.p_diff.mean,
            r.p_diff.stderr,
            display_pair(r.delta_avg.mean, r.delta_avg.stderr),
            r.delta_avg.mean,
            r.delta_avg.stderr,
            display_pair(r.eta_avg.mean, r.eta_avg.stderr),
            r.eta_avg.mean,
            r.eta_avg.stderr,
            r.seeds,
            r.flagged,
            r.failed,
        );
    }
    out
}

pub fn render_generalization(result: &GeneralizationResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{GENERALIZATION_HEADER}");
    for r in &result.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.proportion,
            r.ratio.mean,
            r.ratio.stderr,
            r.gen_pi.mean,
            r.gen_pi.stderr,
            r.retr_pi.mean,
            r.retr_pi.stderr,
            r.gen_p_diff.mean,
            r.gen_p_diff.stderr,
            r.retr_p_diff.mean,
            r.retr_p_diff.stderr,
            r.gen_delta.mean,
            r.gen_eta.mean,
            r.retr_delta.mean,
            r.retr_eta.mean,
            r.ratio.k,
            r.skipped,
        );
    }
    out
}

pub fn render_sweep(result: &SweepResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SWEEP_HEADER}");
    for r in &result.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.lambda,
            r.phi,
            r.pi_avg.mean,
            r.pi_avg.stderr,
            r.p_diff.mean,
            r.p_diff.stderr,
            r.seeds,
            r.flagged,
            r.failed,
        );
    }
    out
}

pub fn render_deciles(table: &DecileTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{DECILES_HEADER}");
    for r in &table.rows {
        let _ = writeln!(out, "{},{},{},{}", r.decile, r.nodes, r.avg_degree, r.avg_price);
    }
    out
}

pub fn render_metrics_row(m: &crate::experiments::CellMetrics) -> String {
    format!(
        "{METRICS_HEADER}\n{},{},{},{},{},{}\n",
        m.pi_avg, m.p_diff, m.delta_avg, m.eta_avg, m.n0, m.n1
    )
}

pub fn render_prices(prices: &[f64]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{PRICES_HEADER}");
    for (i, p) in prices.iter().enumerate() {
        let _ = writeln!(out, "{i},{p}");
    }
    out
}

/// Write the per-cell artifacts of a comparison-style result: training
/// logs and selected checkpoints under `cells/`.
pub fn write_cell_artifacts(dir: &Path, cells: &[CellOutcome]) -> Result<()> {
    let cell_dir = dir.join("cells");
    fs::create_dir_all(&cell_dir)?;
    for c in cells {
        let stem = format!("{}_seed{}", c.label.replace(['@', '.'], "_"), c.seed);
        if !c.log.is_empty() {
            fs::write(cell_dir.join(format!("{stem}_log.csv")), render_training_log(&c.log))?;
        }
        if let Some(policy) = &c.policy {
            policy.save(&cell_dir.join(format!("{stem}.policy")))?;
        }
    }
    Ok(())
}

pub fn write_comparison(dir: &Path, result: &ComparisonResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("cells.csv"), render_cells(&result.cells))?;
    fs::write(dir.join("aggregate.csv"), render_aggregate(&result.aggregates))?;
    write_cell_artifacts(dir, &result.cells)?;
    Ok(())
}

/// Run manifest: subcommand, version, config hash, status. Paired with
/// `config.resolved.toml`, it is sufficient to re-execute the run.
pub fn write_manifest(
    dir: &Path,
    subcommand: &str,
    cfg: &RunConfig,
    status: &str,
    reason: Option<&str>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "[run]");
    let _ = writeln!(manifest, "subcommand = \"{subcommand}\"");
    let _ = writeln!(manifest, "version = \"{}\"", crate::VERSION);
    let _ = writeln!(manifest, "config_hash = \"{:016x}\"", cfg.config_hash());
    let _ = writeln!(manifest, "seeds = {:?}", cfg.experiment.seeds);
    let _ = writeln!(manifest, "status = \"{status}\"");
    if let Some(reason) = reason {
        let _ = writeln!(manifest, "reason = \"{}\"", reason.replace('"', "'"));
    }
    fs::write(dir.join("manifest.toml"), manifest)?;
    fs::write(dir.join("config.resolved.toml"), cfg.to_toml())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::EvalRecord;

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn training_log_schema_and_blank_fields() {
        let rows = vec![
            EpochRecord {
                epoch: 1,
                loss_profit: -1.5,
                loss_reg: Some(0.25),
                loss_adv: 0.7,
                total: -1.475,
                eval: None,
            },
            EpochRecord {
                epoch: 2,
                loss_profit: -1.6,
                loss_reg: None,
                loss_adv: 0.69,
                total: -1.6,
                eval: Some(EvalRecord {
                    pi_avg: 3.25,
                    p_diff: 0.125,
                    jsd: Some(0.5),
                }),
            },
        ];
        let text = render_training_log(&rows);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), TRAINING_LOG_HEADER);
        assert_eq!(lines.next().unwrap(), "1,-1.5,0.25,0.7,,,");
        assert_eq!(lines.next().unwrap(), "2,-1.6,,0.69,3.25,0.125,0.5");
    }

    #[test]
    fn manifest_roundtrips_config() {
        let dir = tempfile::TempDir::new().unwrap();
        let cfg = crate::config::benchmark();
        write_manifest(dir.path(), "main", &cfg, "ok", None).unwrap();
        let reparsed = RunConfig::parse(&dir.path().join("config.resolved.toml")).unwrap();
        assert_eq!(cfg, reparsed);
        let manifest = std::fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
        assert!(manifest.contains("subcommand = \"main\""));
        assert!(manifest.contains(&format!("{:016x}", cfg.config_hash())));
    }
}
