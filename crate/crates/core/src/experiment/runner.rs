use std::io::Write;

use super::config::ExperimentConfig;
use super::metrics::{MetricsWriter, StepMetrics};
use crate::accounting::{CostCategory, CostLedger};
use crate::error::{Error, Result};
use crate::estimator::{predict_difficulty_score, EstimatorModel, LossBreakdown, OnlineEstimator};
use crate::grpo::{group_advantages, grpo_step, AdvantageVector, BatchItem, StepFragment};
use crate::policy::{sample_rollouts, PolicyState, RolloutGroup};
use crate::rng::{streams, RngState};
use crate::scheduler::{
    dapo_dynamic_sampling, depo_filter, grpo_plain, make_targets, offline_stage_prune, BatchPlan, CandidateStream, Regime,
};
use crate::sim::{generate_pool, PromptPool};

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub metrics: Vec<StepMetrics>,
    pub policy: PolicyState,
    pub estimator: EstimatorModel,
    pub ledger: CostLedger,
}

/// The configured pool: loaded from `pool.file` or generated from the seed.
pub fn build_pool(cfg: &ExperimentConfig) -> Result<PromptPool> {
    match &cfg.pool.file {
        Some(path) => PromptPool::load(path),
        None => {
            let mut rng = RngState::new(cfg.seed).fork(streams::POOL);
            generate_pool(&cfg.pool.profile, cfg.pool.size, cfg.pool.noise_dims, cfg.pool.noise_scale, &mut rng)
        }
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    let pool = build_pool(cfg)?;
    run_on_pool(cfg, &pool, None::<&mut MetricsWriter<std::io::Sink>>)
}

/// What one step planned and rolled out.
struct StepPlan {
    plan: BatchPlan,
    /// Groups entering the actor update.
    train: Vec<RolloutGroup>,
    /// Rolled out but not trained on (uniform groups DAPO discarded).
    extra: Vec<RolloutGroup>,
}

struct Loop<'a> {
    cfg: &'a ExperimentConfig,
    pool: &'a PromptPool,
    policy: PolicyState,
    reference: PolicyState,
    estimator: OnlineEstimator,
    ledger: CostLedger,
    active: Vec<usize>,
    cand_rng: RngState,
    rollout_rng: RngState,
    eval_rng: RngState,
    charge_estimator: bool,
}

impl Loop<'_> {
    fn roll(&mut self, ids: &[usize]) -> Vec<RolloutGroup> {
        let g = self.cfg.group_size;
        ids.iter().map(|&id| sample_rollouts(&self.policy, self.pool.get(id), g, &mut self.rollout_rng)).collect()
    }

    fn offline_stage(&mut self, step: usize) -> Result<()> {
        let off = &self.cfg.offline;
        if !step.is_multiple_of(off.stage_interval) {
            return Ok(());
        }
        // each stage re-evaluates the full pool with the current policy
        let all: Vec<usize> = (0..self.pool.len()).collect();
        let k = self.cfg.k_eval();
        let out = offline_stage_prune(&self.policy, self.pool, &all, k, off.keep_lo..=off.keep_hi, &mut self.eval_rng)?;
        self.ledger.charge(CostCategory::Rollout, out.rollouts as f64);
        self.ledger.charge(CostCategory::Reward, out.rollouts as f64);
        self.active = out.retained;
        Ok(())
    }

    fn plan(&mut self, step: usize) -> StepPlan {
        let cfg = self.cfg;
        let b = cfg.batch_size;
        let ids = self.active.clone();
        match cfg.regime {
            Regime::Grpo | Regime::Offline => {
                let mut plan = grpo_plain(CandidateStream::new(ids, &mut self.cand_rng), b);
                plan.regime = cfg.regime;
                let train = self.roll(&plan.kept);
                StepPlan { plan, train, extra: Vec::new() }
            }
            Regime::Depo => {
                let plan = self.depo_plan(ids, step);
                let train = self.roll(&plan.kept);
                StepPlan { plan, train, extra: Vec::new() }
            }
            Regime::Dapo => {
                let mut stream = CandidateStream::new(ids, &mut self.cand_rng);
                let out = dapo_dynamic_sampling(
                    &self.policy,
                    self.pool,
                    &mut stream,
                    b,
                    cfg.group_size,
                    cfg.dapo.max_oversample,
                    cfg.dapo.discard_uniform,
                    &mut self.rollout_rng,
                );
                StepPlan { plan: out.plan, train: out.kept_groups, extra: out.discarded_groups }
            }
        }
    }

    fn depo_plan(&mut self, ids: Vec<usize>, step: usize) -> BatchPlan {
        let cfg = self.cfg;
        let b = cfg.batch_size;
        let filter = &cfg.filter;
        let mut stream = CandidateStream::new(ids, &mut self.cand_rng);
        let first: Vec<usize> = stream.by_ref().take(b).collect();
        let prompts: Vec<_> = first.iter().map(|&id| self.pool.get(id)).collect();
        let mut plan = depo_filter(&self.estimator.model, &prompts, step, filter);
        if !filter.active_at(step) {
            plan.short_batch = plan.kept.len() < b;
            return plan;
        }
        // refill draws more candidates until B prompts survive or the budget runs out
        let budget = ((cfg.dapo.max_oversample * b as f64).floor() as usize).max(b);
        while filter.refill && plan.kept.len() < b && plan.candidates_seen < budget {
            let want = (b - plan.kept.len()).min(budget - plan.candidates_seen);
            let more: Vec<usize> = stream.by_ref().take(want).collect();
            if more.is_empty() {
                break;
            }
            let prompts: Vec<_> = more.iter().map(|&id| self.pool.get(id)).collect();
            let extra = depo_filter(&self.estimator.model, &prompts, step, filter);
            plan.kept.extend(extra.kept);
            plan.dropped.extend(extra.dropped);
            plan.candidates_seen += extra.candidates_seen;
        }
        plan.short_batch = filter.refill && plan.kept.len() < b;
        if self.charge_estimator {
            self.ledger.charge(CostCategory::Estimator, plan.candidates_seen as f64);
        }
        plan
    }

    fn step(&mut self, step: usize) -> Result<StepMetrics> {
        if self.cfg.regime == Regime::Offline {
            self.offline_stage(step)?;
        }
        let StepPlan { plan, train, extra } = self.plan(step);
        let g = self.cfg.group_size as f64;
        let rolled = train.len() + extra.len();
        self.ledger.charge(CostCategory::Rollout, rolled as f64 * g);
        self.ledger.charge(CostCategory::Reward, rolled as f64 * g);
        self.ledger.charge(CostCategory::AdvCompute, rolled as f64);
        self.ledger.charge(CostCategory::Sample, train.len() as f64 * g);

        let advantages: Vec<AdvantageVector> =
            train.iter().map(|grp| group_advantages(&grp.rewards, self.cfg.grpo.std_floor)).collect();
        let batch: Vec<BatchItem<'_>> = train
            .iter()
            .zip(&advantages)
            .map(|(group, advantages)| BatchItem { prompt: self.pool.get(group.prompt_id), group, advantages })
            .collect();
        let rollout_policy = self.policy.clone();
        let (fragment, skipped) = if batch.iter().any(|b| !b.advantages.is_zero_variance) {
            let (next, fragment) = grpo_step(&self.policy, &self.reference, &batch, &self.cfg.grpo)?;
            if next.theta.iter().any(|t| !t.is_finite()) {
                return Err(Error::TrainingFault { step, detail: "actor parameters became non-finite".into() });
            }
            self.policy = next;
            (fragment, false)
        } else {
            // nothing to learn from; still report the reward that was observed
            let rewards: Vec<f64> = train.iter().flat_map(|grp| grp.rewards.iter().copied()).collect();
            let mean_reward = if rewards.is_empty() { 0.0 } else { rewards.iter().sum::<f64>() / rewards.len() as f64 };
            (StepFragment { mean_reward, ..StepFragment::default() }, true)
        };

        let groups: Vec<RolloutGroup> = train.iter().chain(&extra).cloned().collect();
        let targets = make_targets(&groups, &rollout_policy, self.pool);
        let prompts: Vec<_> = targets.iter().map(|t| self.pool.get(t.prompt_id)).collect();
        let (mae, predicted, realized) = if targets.is_empty() {
            (None, None, None)
        } else {
            let n = targets.len() as f64;
            let scores: Vec<f64> = prompts.iter().map(|p| predict_difficulty_score(&self.estimator.model, p)).collect();
            let mae = scores.iter().zip(&targets).map(|(s, t)| (s - t.a).abs()).sum::<f64>() / n;
            let predicted = scores.iter().sum::<f64>() / n;
            let realized = targets.iter().map(|t| t.a).sum::<f64>() / n;
            (Some(mae), Some(predicted), Some(realized))
        };
        let losses = if targets.is_empty() { LossBreakdown::default() } else { self.estimator.train(&prompts, &targets)? };
        if self.charge_estimator {
            self.ledger.charge(CostCategory::Estimator, targets.len() as f64);
        }
        let cost = self.ledger.end_step();

        Ok(StepMetrics {
            step,
            regime: self.cfg.regime,
            mean_reward: (!train.is_empty()).then_some(fragment.mean_reward),
            filter_ratio: plan.filter_ratio(),
            candidates_seen: plan.candidates_seen,
            kept: plan.kept.len(),
            dropped: plan.dropped.len(),
            groups_rolled_out: rolled,
            informative_groups: advantages.iter().filter(|a| !a.is_zero_variance).count(),
            short_batch: plan.short_batch,
            update_skipped: skipped,
            loss_de: losses.de,
            loss_distill: losses.distill,
            loss_rank: losses.rank,
            loss_joint: losses.joint,
            tracking_mae: mae,
            mean_predicted: predicted,
            mean_realized: realized,
            mean_abs_advantage: fragment.mean_abs_advantage,
            kl: fragment.kl,
            cost_weighted: cost.weighted_total(&self.ledger.weights),
            cost,
            policy_version: self.policy.version,
            estimator_version: self.estimator.model.version,
        })
    }
}

/// Runs `cfg.steps` training steps on `pool`, streaming records to `sink`
/// when one is given.
pub fn run_on_pool<W: Write>(
    cfg: &ExperimentConfig,
    pool: &PromptPool,
    mut sink: Option<&mut MetricsWriter<W>>,
) -> Result<RunResult> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::config("pool.size", "the prompt pool is empty"));
    }
    let root = RngState::new(cfg.seed);
    let dim = pool.dim();
    let policy = PolicyState::skill(dim, cfg.policy.init_bias);
    let model = EstimatorModel::init(dim, cfg.estimator.hidden, &mut root.fork(streams::ESTIMATOR_INIT));
    let mut lp = Loop {
        cfg,
        pool,
        reference: policy.clone(),
        policy,
        estimator: OnlineEstimator::new(model, cfg.estimator.clone(), root.fork(streams::ESTIMATOR_PAIRS)),
        ledger: CostLedger::new(cfg.costs),
        active: (0..pool.len()).collect(),
        cand_rng: root.fork(streams::CANDIDATES),
        rollout_rng: root.fork(streams::ROLLOUTS),
        eval_rng: root.fork(streams::OFFLINE_EVAL),
        charge_estimator: cfg.regime == Regime::Depo && cfg.filter.enabled,
    };

    let io_err = |e: std::io::Error| Error::Io { path: "<metrics>".into(), source: e };
    if let Some(w) = sink.as_deref_mut() {
        w.config(cfg).map_err(io_err)?;
    }
    let mut metrics = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let m = match lp.step(step) {
            Ok(m) => m,
            Err(e) => {
                if let Some(w) = sink.as_deref_mut() {
                    // best effort: the original error matters more than a failed write
                    let _ = w.fault(step, &e.to_string()).and_then(|()| w.flush());
                }
                return Err(e);
            }
        };
        if let Some(w) = sink.as_deref_mut() {
            w.step(&m).map_err(io_err)?;
        }
        metrics.push(m);
    }
    if let Some(w) = sink {
        w.flush().map_err(io_err)?;
    }
    Ok(RunResult { config: cfg.clone(), metrics, policy: lp.policy, estimator: lp.estimator.model, ledger: lp.ledger })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(regime: Regime) -> ExperimentConfig {
        let mut cfg = ExperimentConfig { regime, seed: 7, steps: 30, batch_size: 16, ..ExperimentConfig::default() };
        cfg.pool.size = 300;
        cfg.filter.warmup_steps = 10;
        cfg.offline.stage_interval = 10;
        cfg.resolved().unwrap()
    }

    #[test]
    fn every_regime_runs_and_logs_each_step() {
        for regime in Regime::ALL {
            let r = run_experiment(&small(regime)).unwrap();
            assert_eq!(r.metrics.len(), 30);
            assert!(r.metrics.iter().enumerate().all(|(i, m)| m.step == i && m.regime == regime));
            assert_eq!(r.ledger.steps.len(), 30);
            assert!(r.policy.theta.iter().all(|t| t.is_finite()));
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let a = run_experiment(&small(Regime::Depo)).unwrap();
        let b = run_experiment(&small(Regime::Depo)).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.estimator, b.estimator);
    }

    #[test]
    fn disabled_filter_matches_grpo() {
        let grpo = run_experiment(&small(Regime::Grpo)).unwrap();
        let mut cfg = small(Regime::Depo);
        cfg.filter.enabled = false;
        let depo = run_experiment(&cfg).unwrap();
        assert_eq!(grpo.policy.theta, depo.policy.theta);
        assert_eq!(grpo.ledger.totals(), depo.ledger.totals());
        let rewards = |r: &RunResult| r.metrics.iter().map(|m| m.mean_reward).collect::<Vec<_>>();
        assert_eq!(rewards(&grpo), rewards(&depo));
    }

    #[test]
    fn warmup_keeps_everything() {
        let r = run_experiment(&small(Regime::Depo)).unwrap();
        for m in &r.metrics[..10] {
            assert_eq!((m.kept, m.dropped, m.filter_ratio), (16, 0, 0.0));
            // no scoring during warm-up, only training
            assert_eq!(m.cost.estimator, 16.0);
        }
    }

    #[test]
    fn grpo_costs_are_linear_in_groups() {
        let r = run_experiment(&small(Regime::Grpo)).unwrap();
        for c in &r.ledger.steps {
            assert_eq!((c.rollout, c.reward, c.adv_compute, c.sample, c.estimator), (128.0, 128.0, 16.0, 128.0, 0.0));
        }
    }

    #[test]
    fn zero_steps_is_empty() {
        let cfg = ExperimentConfig { steps: 0, ..small(Regime::Dapo) };
        let r = run_experiment(&cfg).unwrap();
        assert!(r.metrics.is_empty() && r.ledger.steps.is_empty());
    }
}
