use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::mean_over;
use super::runner::{build_pool, run_on_pool, RunResult};
use crate::error::{Error, Result};
use crate::estimator::{predict_difficulty_score, EstimatorLossConfig, LossForm};
use crate::experiment::metrics::MetricsWriter;
use crate::scheduler::Regime;
use crate::sim::{std_dev, PromptPool};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    /// Sweep the ranking weight over 0, 1, 3, 6, 10.
    RankWeight,
    /// Bernoulli likelihood against squared error on the success head.
    LossForm,
    /// Full loss against the loss without the ranking term.
    DropRank,
    /// Full, without ranking, and without both ranking and distillation.
    DropRankAndDistill,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 4] =
        [AblationAxis::RankWeight, AblationAxis::LossForm, AblationAxis::DropRank, AblationAxis::DropRankAndDistill];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::RankWeight => "rank_weight",
            AblationAxis::LossForm => "loss_form",
            AblationAxis::DropRank => "drop_rank",
            AblationAxis::DropRankAndDistill => "drop_rank_and_distill",
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config("axis", format!("unknown ablation axis `{s}`")))
    }
}

pub const RANK_WEIGHT_SWEEP: [f64; 5] = [0.0, 1.0, 3.0, 6.0, 10.0];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationVariant {
    pub name: String,
    pub estimator: EstimatorLossConfig,
}

pub fn ablation_variants(axis: AblationAxis, base: &EstimatorLossConfig) -> Vec<AblationVariant> {
    let with = |name: &str, f: &dyn Fn(&mut EstimatorLossConfig)| {
        let mut estimator = base.clone();
        f(&mut estimator);
        AblationVariant { name: name.to_string(), estimator }
    };
    match axis {
        AblationAxis::RankWeight => RANK_WEIGHT_SWEEP
            .iter()
            .map(|&w| with(&format!("w_rank={w}"), &|c| c.w_rank = w))
            .collect(),
        AblationAxis::LossForm => vec![
            with("bce", &|c| c.loss_form = LossForm::Bce),
            with("mse", &|c| c.loss_form = LossForm::Mse),
        ],
        AblationAxis::DropRank => vec![with("full", &|_| {}), with("no_rank", &|c| c.w_rank = 0.0)],
        AblationAxis::DropRankAndDistill => vec![
            with("full", &|_| {}),
            with("no_rank", &|c| c.w_rank = 0.0),
            with("no_rank_no_distill", &|c| {
                c.w_rank = 0.0;
                c.w_distill = 0.0;
            }),
        ],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRecord {
    pub variant: String,
    pub w_rank: f64,
    pub w_distill: f64,
    pub loss_form: LossForm,
    /// Mean reward over the last tenth of training.
    pub final_mean_reward: f64,
    /// Mean filter ratio once the filter is active.
    pub mean_filter_ratio: f64,
    pub tracking_mae: f64,
    /// Spread of the final estimator's scores over the pool.
    pub prediction_std: f64,
    pub weighted_cost: f64,
}

/// Mean reward over the last tenth of the run (at least one step).
pub fn final_mean_reward(run: &RunResult) -> f64 {
    let n = run.metrics.len();
    let from = n - (n / 10).max(1).min(n);
    mean_over(&run.metrics, from, |m| m.mean_reward).unwrap_or(0.0)
}

pub fn record_for(variant: &AblationVariant, run: &RunResult, pool: &PromptPool) -> AblationRecord {
    let warmup = run.config.filter.warmup_steps;
    let scores: Vec<f64> = pool.prompts.iter().map(|p| predict_difficulty_score(&run.estimator, p)).collect();
    AblationRecord {
        variant: variant.name.clone(),
        w_rank: variant.estimator.w_rank,
        w_distill: variant.estimator.w_distill,
        loss_form: variant.estimator.loss_form,
        final_mean_reward: final_mean_reward(run),
        mean_filter_ratio: mean_over(&run.metrics, warmup, |m| Some(m.filter_ratio)).unwrap_or(0.0),
        tracking_mae: mean_over(&run.metrics, warmup, |m| m.tracking_mae).unwrap_or(0.0),
        prediction_std: std_dev(&scores),
        weighted_cost: run.ledger.weighted_total(),
    }
}

/// Runs every variant of `axis` as a DEPO run on the same seed and pool, in parallel.
pub fn run_ablation(cfg: &ExperimentConfig, axis: AblationAxis) -> Result<Vec<(AblationRecord, RunResult)>> {
    let pool = build_pool(cfg)?;
    let variants = ablation_variants(axis, &cfg.estimator);
    let results: Vec<Result<RunResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = variants
            .iter()
            .map(|v| {
                let mut c = cfg.clone();
                c.regime = Regime::Depo;
                c.estimator = v.estimator.clone();
                let pool = &pool;
                s.spawn(move || run_on_pool(&c, pool, None::<&mut MetricsWriter<std::io::Sink>>))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("ablation worker panicked")).collect()
    });
    variants
        .iter()
        .zip(results)
        .map(|(v, r)| r.map(|run| (record_for(v, &run, &pool), run)))
        .collect()
}

pub fn ablation_csv(records: &[AblationRecord]) -> String {
    let mut out = String::from(
        "variant,w_rank,w_distill,loss_form,final_mean_reward,mean_filter_ratio,tracking_mae,prediction_std,weighted_cost\n",
    );
    for r in records {
        let form = match r.loss_form {
            LossForm::Bce => "bce",
            LossForm::Mse => "mse",
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.variant,
            r.w_rank,
            r.w_distill,
            form,
            r.final_mean_reward,
            r.mean_filter_ratio,
            r.tracking_mae,
            r.prediction_std,
            r.weighted_cost
        );
    }
    out
}
