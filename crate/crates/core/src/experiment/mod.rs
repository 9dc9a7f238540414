//! Configuration, the training loop, comparisons, ablations and routing sweeps.

mod ablation;
mod compare;
mod config;
mod metrics;
mod runner;

use std::fmt::Write as _;
use std::path::Path;

pub use ablation::{
    ablation_csv, ablation_variants, final_mean_reward, run_ablation, AblationAxis, AblationRecord, AblationVariant,
    RANK_WEIGHT_SWEEP,
};
pub use compare::{
    compare, comparison_configs, comparison_from_runs, outcomes_csv, query_pool, route_sweep, train_estimator_on_stream,
    Comparison, RegimeOutcome, RouteOutcome,
};
pub use config::{DapoSpec, ExperimentConfig, OfflineSpec, PolicySpec, PoolSpec, RouterSpec};
pub use metrics::{mean_over, read_metrics, MetricsWriter, Record, StepMetrics};
pub use runner::{build_pool, run_experiment, run_on_pool, RunResult};

pub use crate::scheduler::Regime;

use crate::accounting::CostLedger;
use crate::error::{Error, Result};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Per-step cost table: `step,sample,rollout,adv_compute,reward,estimator,weighted`.
pub fn ledger_csv(ledger: &CostLedger) -> String {
    let mut out = String::from("step,sample,rollout,adv_compute,reward,estimator,weighted\n");
    for (i, c) in ledger.steps.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{},{}",
            c.sample,
            c.rollout,
            c.adv_compute,
            c.reward,
            c.estimator,
            c.weighted_total(&ledger.weights)
        );
    }
    out
}

/// Trains one regime and writes `config.toml`, `metrics.jsonl`, `costs.csv`,
/// `policy.json` and `estimator.json` under `dir`. Metrics are streamed as
/// the run progresses.
pub fn train_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<RunResult> {
    create_dir(dir)?;
    write(&dir.join("config.toml"), &cfg.to_toml())?;
    let pool = build_pool(cfg)?;
    let mut sink = MetricsWriter::create(&dir.join("metrics.jsonl"))?;
    let run = run_on_pool(cfg, &pool, Some(&mut sink))?;
    write_artifacts(&run, dir)?;
    Ok(run)
}

fn write_artifacts(run: &RunResult, dir: &Path) -> Result<()> {
    write(&dir.join("costs.csv"), &ledger_csv(&run.ledger))?;
    run.policy.save(&dir.join("policy.json"))?;
    run.estimator.save(&dir.join("estimator.json"))
}

fn write_metrics(run: &RunResult, path: &Path) -> Result<()> {
    let mut w = MetricsWriter::create(path)?;
    let io = |e| Error::io(path, e);
    w.config(&run.config).map_err(io)?;
    for m in &run.metrics {
        w.step(m).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Runs [`compare`] and writes one subdirectory per regime plus
/// `costs.csv` and `summary.csv`.
pub fn compare_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<Comparison> {
    create_dir(dir)?;
    write(&dir.join("config.toml"), &cfg.to_toml())?;
    let cmp = compare(cfg)?;
    for run in &cmp.runs {
        let sub = dir.join(run.config.regime.name());
        create_dir(&sub)?;
        write_metrics(run, &sub.join("metrics.jsonl"))?;
        write_artifacts(run, &sub)?;
    }
    cmp.costs.write_csv(&dir.join("costs.csv"))?;
    write(&dir.join("summary.csv"), &outcomes_csv(&cmp.outcomes))?;
    Ok(cmp)
}

pub fn ablate_to_dir(cfg: &ExperimentConfig, axis: AblationAxis, dir: &Path) -> Result<Vec<AblationRecord>> {
    create_dir(dir)?;
    write(&dir.join("config.toml"), &cfg.to_toml())?;
    let out = run_ablation(cfg, axis)?;
    for (record, run) in &out {
        let sub = dir.join(record.variant.replace(['=', '.'], "_"));
        create_dir(&sub)?;
        write_metrics(run, &sub.join("metrics.jsonl"))?;
    }
    let records: Vec<AblationRecord> = out.into_iter().map(|(r, _)| r).collect();
    write(&dir.join(format!("ablation_{axis}.csv")), &ablation_csv(&records))?;
    Ok(records)
}

pub fn route_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<RouteOutcome> {
    create_dir(dir)?;
    write(&dir.join("config.toml"), &cfg.to_toml())?;
    let out = route_sweep(cfg)?;
    crate::router::write_reports_csv(&out.reports, &dir.join("routing.csv"))?;
    let mut buckets = String::from("tau,bucket,accuracy,small_only,large_only,n_small,n_large\n");
    for r in &out.reports {
        for (b, s) in r.buckets.iter().enumerate() {
            let _ = writeln!(
                buckets,
                "{},{b},{},{},{},{},{}",
                r.tau, s.accuracy, s.small_only_accuracy, s.large_only_accuracy, s.queries_to_small, s.queries_to_large
            );
        }
    }
    write(&dir.join("routing_buckets.csv"), &buckets)?;
    out.estimator.save(&dir.join("estimator.json"))?;
    Ok(out)
}
