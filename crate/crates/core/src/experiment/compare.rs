use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ablation::final_mean_reward;
use super::config::ExperimentConfig;
use super::metrics::{mean_over, MetricsWriter};
use super::runner::{build_pool, run_on_pool, RunResult};
use crate::accounting::{summarize, CostSummary};
use crate::error::Result;
use crate::estimator::{EstimatorModel, OnlineEstimator};
use crate::policy::{sample_rollouts, PolicyState};
use crate::rng::{streams, RngState};
use crate::router::{cascade_eval, RouterConfig, RoutingReport};
use crate::scheduler::{make_targets, CandidateStream, Regime};
use crate::sim::{generate_pool, PromptPool};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeOutcome {
    pub regime: Regime,
    /// Mean reward over the steps after the filter warm-up.
    pub mean_reward: f64,
    pub final_mean_reward: f64,
    pub mean_filter_ratio: f64,
    pub informative_per_step: f64,
    pub rollouts_per_step: f64,
    pub weighted_cost: f64,
    pub ratio_vs_grpo: f64,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub runs: Vec<RunResult>,
    pub costs: CostSummary,
    pub outcomes: Vec<RegimeOutcome>,
}

impl Comparison {
    pub fn run(&self, regime: Regime) -> Option<&RunResult> {
        self.runs.iter().find(|r| r.config.regime == regime)
    }

    pub fn outcome(&self, regime: Regime) -> Option<&RegimeOutcome> {
        self.outcomes.iter().find(|o| o.regime == regime)
    }
}

/// The per-regime configs `compare` runs. DEPO refills its batch after
/// filtering so that every regime trains on a comparable number of groups.
pub fn comparison_configs(cfg: &ExperimentConfig) -> Vec<ExperimentConfig> {
    Regime::ALL
        .iter()
        .map(|&regime| {
            let mut c = cfg.clone();
            c.regime = regime;
            if regime == Regime::Depo {
                c.filter.refill = true;
            }
            c
        })
        .collect()
}

/// Runs all four regimes on the same seed and pool, in parallel.
pub fn compare(cfg: &ExperimentConfig) -> Result<Comparison> {
    let pool = build_pool(cfg)?;
    let configs = comparison_configs(cfg);
    let results: Vec<Result<RunResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| {
                let pool = &pool;
                s.spawn(move || run_on_pool(c, pool, None::<&mut MetricsWriter<std::io::Sink>>))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("compare worker panicked")).collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    comparison_from_runs(runs)
}

pub fn comparison_from_runs(runs: Vec<RunResult>) -> Result<Comparison> {
    let ledgers: Vec<_> = runs.iter().map(|r| (r.config.regime, &r.ledger)).collect();
    let costs = summarize(&ledgers)?;
    let outcomes = runs
        .iter()
        .map(|r| {
            let warmup = r.config.filter.warmup_steps;
            let row = costs.row(r.config.regime).expect("every run has a cost row");
            RegimeOutcome {
                regime: r.config.regime,
                mean_reward: mean_over(&r.metrics, warmup, |m| m.mean_reward).unwrap_or(0.0),
                final_mean_reward: final_mean_reward(r),
                mean_filter_ratio: mean_over(&r.metrics, warmup, |m| Some(m.filter_ratio)).unwrap_or(0.0),
                informative_per_step: mean_over(&r.metrics, 0, |m| Some(m.informative_groups as f64)).unwrap_or(0.0),
                rollouts_per_step: mean_over(&r.metrics, 0, |m| Some(m.cost.rollout)).unwrap_or(0.0),
                weighted_cost: row.total,
                ratio_vs_grpo: row.ratio_vs_grpo,
            }
        })
        .collect();
    Ok(Comparison { runs, costs, outcomes })
}

pub fn outcomes_csv(outcomes: &[RegimeOutcome]) -> String {
    let mut out = String::from(
        "regime,mean_reward,final_mean_reward,mean_filter_ratio,informative_per_step,rollouts_per_step,weighted_cost,ratio_vs_grpo\n",
    );
    for o in outcomes {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            o.regime,
            o.mean_reward,
            o.final_mean_reward,
            o.mean_filter_ratio,
            o.informative_per_step,
            o.rollouts_per_step,
            o.weighted_cost,
            o.ratio_vs_grpo
        );
    }
    out
}

/// Trains an estimator on rollouts of a fixed `policy` for `steps` steps of
/// `batch_size` prompts each. Returns the estimator and its per-step losses.
pub fn train_estimator_on_stream(
    cfg: &ExperimentConfig,
    pool: &PromptPool,
    policy: &PolicyState,
    steps: usize,
) -> Result<(EstimatorModel, Vec<f64>)> {
    let root = RngState::new(cfg.seed);
    let model = EstimatorModel::init(pool.dim(), cfg.estimator.hidden, &mut root.fork(streams::ESTIMATOR_INIT));
    let mut est = OnlineEstimator::new(model, cfg.estimator.clone(), root.fork(streams::ESTIMATOR_PAIRS));
    let mut cand_rng = root.fork(streams::CANDIDATES);
    let mut rollout_rng = root.fork(streams::ROLLOUTS);
    let all: Vec<usize> = (0..pool.len()).collect();
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let ids: Vec<usize> = CandidateStream::new(all.clone(), &mut cand_rng).take(cfg.batch_size).collect();
        let groups: Vec<_> =
            ids.iter().map(|&id| sample_rollouts(policy, pool.get(id), cfg.group_size, &mut rollout_rng)).collect();
        let targets = make_targets(&groups, policy, pool);
        let prompts: Vec<_> = ids.iter().map(|&id| pool.get(id)).collect();
        losses.push(est.train(&prompts, &targets)?.joint);
    }
    Ok((est.model, losses))
}

pub struct RouteOutcome {
    pub estimator: EstimatorModel,
    pub small: PolicyState,
    pub large: PolicyState,
    pub queries: PromptPool,
    pub reports: Vec<RoutingReport>,
}

/// Held-out queries drawn from the training pool's profile.
pub fn query_pool(cfg: &ExperimentConfig, train_pool: &PromptPool) -> Result<PromptPool> {
    let profile = train_pool.profile.clone().unwrap_or_else(|| cfg.pool.profile.clone());
    let mut rng = RngState::new(cfg.seed).fork(streams::QUERIES);
    generate_pool(&profile, cfg.router.queries, train_pool.dim() - 2, cfg.pool.noise_scale, &mut rng)
}

/// Trains (or loads) an estimator against the small policy, then sweeps
/// `router.taus` on held-out queries.
pub fn route_sweep(cfg: &ExperimentConfig) -> Result<RouteOutcome> {
    let pool = build_pool(cfg)?;
    let dim = pool.dim();
    let small = PolicyState::skill(dim, cfg.policy.init_bias);
    let large = PolicyState::skill(dim, cfg.policy.init_bias + cfg.router.skill_shift);
    let estimator = match &cfg.router.estimator_file {
        Some(path) => EstimatorModel::load(path)?,
        None => train_estimator_on_stream(cfg, &pool, &small, cfg.router.estimator_steps)?.0,
    };
    let queries = query_pool(cfg, &pool)?;
    let rng = RngState::new(cfg.seed);
    let reports = cfg
        .router
        .taus
        .iter()
        .map(|&tau| {
            let rc = RouterConfig::new(tau, small.clone(), large.clone(), cfg.router.eval_rollouts)?;
            Ok(cascade_eval(&queries, &estimator, &rc, &rng))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RouteOutcome { estimator, small, large, queries, reports })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig { steps: 20, batch_size: 8, seed: 4, ..ExperimentConfig::default() };
        cfg.pool.size = 150;
        cfg.filter.warmup_steps = 5;
        cfg.offline.stage_interval = 10;
        cfg.router.queries = 100;
        cfg.router.estimator_steps = 20;
        cfg.resolved().unwrap()
    }

    #[test]
    fn compare_runs_all_regimes() {
        let c = compare(&small_cfg()).unwrap();
        assert_eq!(c.runs.len(), 4);
        assert_eq!(c.outcome(Regime::Grpo).unwrap().ratio_vs_grpo, 1.0);
        assert!(c.run(Regime::Depo).unwrap().config.filter.refill);
        assert_eq!(outcomes_csv(&c.outcomes).lines().count(), 5);
    }

    #[test]
    fn route_sweep_reports_each_tau() {
        let out = route_sweep(&small_cfg()).unwrap();
        assert_eq!(out.reports.len(), 4);
        assert!(out.reports.iter().all(|r| r.overall.total() == 100));
        // a higher threshold never routes more queries to the small model
        assert!(out.reports.windows(2).all(|w| w[0].overall.queries_to_small >= w[1].overall.queries_to_small));
    }
}
