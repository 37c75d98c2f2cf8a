//! Subcommand bodies. Each returns its in-memory results so tests can check
//! them without re-parsing the files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sgnn_core::checkpoint::{load_stack, save_stack};
use sgnn_core::dataset::{generate_sbm, save_dataset, write_atomic, write_matrix_csv};
use sgnn_core::metrics::{classification_accuracy, clustering_accuracy, kmeans, nmi};
use sgnn_core::theory::{sweep, Plant, Regime, SweepReport, SweepSpec};
use sgnn_core::trainer::{embed, final_ft_loss, predict_logits, train_stack};
use sgnn_core::{Data, Stack, TrainTrace};

use crate::config::EvalTask;
use crate::{CliError, RunConfig};

pub const MODEL_FILE: &str = "model.sgnn";
pub const TRACE_FILE: &str = "trace.csv";
pub const EMBED_FILE: &str = "embeddings.csv";
pub const CONFIG_FILE: &str = "config.resolved.toml";
pub const METRICS_FILE: &str = "metrics.json";
pub const ETA_SWEEP_FILE: &str = "eta_sweep.csv";
pub const BENCH_FILE: &str = "bench.csv";
pub const BENCH_DETAIL_FILE: &str = "bench_detail.csv";
pub const THEORY_FILE: &str = "theory.csv";
pub const THEORY_SUMMARY_FILE: &str = "theory_summary.json";

/// η grid for the sensitivity sweep: 0 (no backward term), then 1e-5..1e5.
pub fn eta_grid() -> Vec<f64> {
    std::iter::once(0.0).chain((-5..=5).map(|e| 10f64.powi(e))).collect()
}

fn prepare_out(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| sgnn_core::Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    write_atomic(&out.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub stack: Stack,
    pub trace: TrainTrace,
    pub final_loss: f64,
}

/// Loads the data, validates everything, then trains.
pub fn train_on(cfg: &RunConfig, data: &Data) -> Result<TrainOutcome, CliError> {
    let sc = cfg.stack_config(data.feature_dim())?;
    // fail before any training work, e.g. classification without labels
    sc.validate_for(data).map_err(|e| CliError::Config(e.to_string()))?;
    let (stack, trace) = train_stack(&sc, data)?;
    let final_loss = final_ft_loss(&stack, data)?;
    Ok(TrainOutcome {
        stack,
        trace,
        final_loss,
    })
}

/// `train`: checkpoint, trace, embeddings, resolved config, and optionally
/// the η sweep.
pub fn train(cfg: &RunConfig, out: &Path, eta_sweep: bool) -> Result<TrainOutcome, CliError> {
    let data = cfg.load_data()?;
    cfg.stack_config(data.feature_dim())?
        .validate_for(&data)
        .map_err(|e| CliError::Config(e.to_string()))?;
    prepare_out(cfg, out)?;
    let outcome = train_on(cfg, &data)?;
    save_stack(&outcome.stack, &out.join(MODEL_FILE))?;
    write_atomic(&out.join(TRACE_FILE), outcome.trace.to_csv().as_bytes())?;
    write_matrix_csv(&out.join(EMBED_FILE), &embed(&outcome.stack, &data)?)?;
    println!(
        "trained {} modules, {} updates, final loss {:.6}",
        outcome.stack.modules.len(),
        outcome.trace.update_count(),
        outcome.final_loss
    );
    if eta_sweep {
        let csv = run_eta_sweep(cfg, &data)?;
        write_atomic(&out.join(ETA_SWEEP_FILE), csv.as_bytes())?;
    }
    Ok(outcome)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn run_eta_sweep(cfg: &RunConfig, data: &Data) -> Result<String, CliError> {
    let mut csv = String::from("eta,final_loss,acc,nmi,test_acc\n");
    for eta in eta_grid() {
        let mut c = cfg.clone();
        c.train.eta = eta;
        let o = train_on(&c, data)?;
        let m = score(&c, &o.stack, data)?;
        csv.push_str(&format!(
            "{eta:e},{:.6},{},{},{}\n",
            o.final_loss,
            fmt_opt(m.acc),
            fmt_opt(m.nmi),
            fmt_opt(m.test_acc)
        ));
    }
    Ok(csv)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Metrics {
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
    pub test_acc: Option<f64>,
    pub seeds: Vec<u64>,
    pub config_hash: String,
}

impl Metrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// Scores a trained stack on `data` according to the configured task.
pub fn score(cfg: &RunConfig, stack: &Stack, data: &Data) -> Result<Metrics, CliError> {
    let mut m = Metrics {
        acc: None,
        nmi: None,
        test_acc: None,
        seeds: vec![cfg.seed],
        config_hash: cfg.hash(),
    };
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| CliError::Config("evaluation needs labels".into()))?;
    match cfg.eval_task()? {
        EvalTask::Clustering => {
            let h = embed(stack, data)?;
            let k = data.num_classes;
            let clusters = kmeans(&h, k, cfg.seed, cfg.eval.kmeans_restarts)?;
            m.acc = Some(clustering_accuracy(&clusters.assignments, labels)?);
            m.nmi = Some(nmi(&clusters.assignments, labels)?);
        }
        EvalTask::Classification => {
            let split = data
                .split
                .as_ref()
                .ok_or_else(|| CliError::Config("classification evaluation needs a split".into()))?;
            let logits = predict_logits(stack, data)?;
            m.test_acc = Some(classification_accuracy(&logits, labels, &split.test)?);
        }
    }
    Ok(m)
}

/// `eval`: metrics for a checkpoint on the configured dataset.
pub fn eval(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<Metrics, CliError> {
    let data = cfg.load_data()?;
    let stack: Stack = load_stack(checkpoint)?;
    let d0 = stack.modules.first().map(|m| m.in_dim()).unwrap_or(0);
    if d0 != data.feature_dim() {
        return Err(CliError::Config(format!(
            "checkpoint expects {d0} input features, dataset has {}",
            data.feature_dim()
        )));
    }
    prepare_out(cfg, out)?;
    let m = score(cfg, &stack, &data)?;
    write_atomic(&out.join(METRICS_FILE), m.to_json().as_bytes())?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub nnz: usize,
    pub preproc_ms: f64,
    pub updates: usize,
    pub expected_updates: usize,
    /// From the start of data generation to the end of training.
    pub total_ms: f64,
    /// `total_ms / updates`.
    pub ms_per_update: f64,
    pub median_update_ms: f64,
    pub peak_rss_bytes: Option<u64>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Peak resident set size from `/proc`, where available.
fn peak_rss_bytes() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("n,preproc_ms,updates,ms_per_update\n");
    for r in rows {
        s.push_str(&format!("{},{:.3},{},{:.6}\n", r.n, r.preproc_ms, r.updates, r.ms_per_update));
    }
    s
}

pub fn bench_detail_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("n,nnz,preproc_ms,updates,expected_updates,total_ms,ms_per_update,median_update_ms,peak_rss_bytes\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.3},{},{},{:.3},{:.6},{:.6},{}\n",
            r.n,
            r.nnz,
            r.preproc_ms,
            r.updates,
            r.expected_updates,
            r.total_ms,
            r.ms_per_update,
            r.median_update_ms,
            r.peak_rss_bytes.map(|b| b.to_string()).unwrap_or_default()
        ));
    }
    s
}

/// `bench`: one SBM training run per size with per-update timing.
pub fn bench(cfg: &RunConfig, out: &Path) -> Result<Vec<BenchRow>, CliError> {
    let blocks = cfg.dataset.blocks.max(1);
    if cfg.bench.sizes.is_empty() {
        return Err(CliError::Config("bench.sizes is empty".into()));
    }
    let mut run_cfg = cfg.clone();
    run_cfg.train.epochs = Some(cfg.bench.epochs);
    run_cfg.train.trace_timing = true;
    prepare_out(&run_cfg, out)?;
    let mut rows = Vec::new();
    for &n in &cfg.bench.sizes {
        if n % blocks != 0 {
            return Err(CliError::Config(format!("bench size {n} is not a multiple of {blocks} blocks")));
        }
        let start = Instant::now();
        let data: Data = generate_sbm(&run_cfg.sbm_spec(Some(n / blocks)))?;
        let sc = run_cfg.stack_config(data.feature_dim())?;
        let outcome = train_on(&run_cfg, &data)?;
        let total_ms = start.elapsed().as_secs_f64() * 1e3;
        let updates = outcome.trace.update_count();
        if updates == 0 {
            return Err(CliError::Config(format!("no updates ran for n = {n}")));
        }
        let row = BenchRow {
            n,
            nnz: data.graph.nnz(),
            preproc_ms: outcome.trace.preprocess_ms,
            updates,
            expected_updates: sc.expected_updates(n),
            total_ms,
            ms_per_update: total_ms / updates as f64,
            median_update_ms: median(outcome.trace.update_times_ms()),
            peak_rss_bytes: peak_rss_bytes(),
        };
        eprintln!(
            "n={} nnz={} preproc {:.1} ms, {} updates, {:.3} ms/update (median {:.3})",
            row.n, row.nnz, row.preproc_ms, row.updates, row.ms_per_update, row.median_update_ms
        );
        rows.push(row);
    }
    write_atomic(&out.join(BENCH_FILE), bench_csv(&rows).as_bytes())?;
    write_atomic(&out.join(BENCH_DETAIL_FILE), bench_detail_csv(&rows).as_bytes())?;
    Ok(rows)
}

pub fn theory_spec(cfg: &RunConfig, out: &Path) -> Result<SweepSpec, CliError> {
    let t = &cfg.theory;
    let plant = match t.plant.as_str() {
        "all" => None,
        name => Some(Plant::parse(name).ok_or_else(|| {
            CliError::Config(format!(
                "theory.plant must be all, theorem1, corollary_lowrank, theorem2 or generic, got {name:?}"
            ))
        })?),
    };
    Ok(SweepSpec {
        trials: t.trials,
        n: t.n,
        d: t.d,
        k: t.k,
        seed: cfg.seed,
        plant,
        dump_dir: Some(out.join("violations")),
    })
}

fn theory_csv(report: &SweepReport) -> String {
    let mut s = String::from(
        "trial,plant,seed,regime,verdict,epsilon,bound,w0_residual,constructed_residual,assumption1\n",
    );
    for t in &report.trials {
        let r = &t.report;
        s.push_str(&format!(
            "{},{},{},{},{},{:e},{:e},{:e},{:e},{}\n",
            t.trial,
            t.plant.name(),
            t.seed,
            r.regime.name(),
            r.verdict.name(),
            r.epsilon,
            r.bound,
            r.w0_residual,
            r.constructed_residual,
            r.assumption1.holds
        ));
    }
    s
}

#[derive(Serialize)]
struct RegimeSummary {
    regime: &'static str,
    holds: usize,
    violated: usize,
    not_applicable: usize,
}

/// Runs the sweep and writes its tables; the caller decides on the exit.
pub fn theory_sweep(cfg: &RunConfig, out: &Path) -> Result<SweepReport, CliError> {
    let spec = theory_spec(cfg, out)?;
    prepare_out(cfg, out)?;
    let report = sweep(&spec).map_err(|e| match e {
        sgnn_core::Error::Config(m) | sgnn_core::Error::Contract(m) => CliError::Config(m),
        other => other.into(),
    })?;
    write_atomic(&out.join(THEORY_FILE), theory_csv(&report).as_bytes())?;
    let summary: Vec<RegimeSummary> = Regime::ALL
        .iter()
        .map(|&g| {
            let c = report.counts(g);
            RegimeSummary {
                regime: g.name(),
                holds: c.holds,
                violated: c.violated,
                not_applicable: c.not_applicable,
            }
        })
        .collect();
    let json = serde_json::json!({
        "trials": report.trials.len(),
        "violations": report.violations(),
        "regimes": summary,
        "config_hash": cfg.hash(),
    });
    write_atomic(
        &out.join(THEORY_SUMMARY_FILE),
        serde_json::to_string_pretty(&json).expect("summary serializes").as_bytes(),
    )?;
    Ok(report)
}

/// `theory-check`: exit 4 when any applicable bound fails.
pub fn theory_check(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let report = theory_sweep(cfg, out)?;
    for g in Regime::ALL {
        let c = report.counts(g);
        println!(
            "{:<18} holds {:>4}  violated {:>4}  not applicable {:>4}",
            g.name(),
            c.holds,
            c.violated,
            c.not_applicable
        );
    }
    match report.violations() {
        0 => Ok(()),
        v => Err(CliError::BoundViolation(v, out.join("violations"))),
    }
}

/// `sbm-gen`: dataset files plus the resolved config.
pub fn sbm_gen(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let data: Data = generate_sbm(&cfg.sbm_spec(None))?;
    prepare_out(cfg, out)?;
    let files = save_dataset(&data, out)?;
    println!(
        "wrote {} nodes, {} stored entries to {}",
        data.n(),
        data.graph.nnz(),
        files.graph.parent().map(PathBuf::from).unwrap_or_default().display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta_grid_is_decades() {
        let g = eta_grid();
        assert_eq!(g.len(), 12);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 1e-5).abs() < 1e-20);
        assert_eq!(g[11], 1e5);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![]).is_nan());
    }

    #[test]
    fn bench_csv_header() {
        let rows = vec![BenchRow {
            n: 8,
            nnz: 10,
            preproc_ms: 1.0,
            updates: 4,
            expected_updates: 4,
            total_ms: 8.0,
            ms_per_update: 2.0,
            median_update_ms: 1.5,
            peak_rss_bytes: None,
        }];
        let csv = bench_csv(&rows);
        assert_eq!(csv, "n,preproc_ms,updates,ms_per_update\n8,1.000,4,2.000000\n");
    }
}
