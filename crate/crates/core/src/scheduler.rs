//! Batch planning for the four training regimes.
//!
//! - GRPO rolls out the first `B` candidates.
//! - DEPO scores candidates with the estimator and drops predicted
//!   zero-variance prompts before any rollout happens.
//! - DAPO rolls out candidates in full and discards uniform groups afterwards,
//!   oversampling until it has `B` informative groups or runs out of budget.
//! - OFFLINE periodically evaluates the whole pool and prunes trivial and
//!   intractable prompts between stages.

use std::ops::RangeBounds;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{predict_difficulty_score, EstimatorModel, EstimatorTarget};
use crate::policy::{binary_entropy_from_logit, sample_rollouts, PolicyState, RolloutGroup};
use crate::rng::RngState;
use crate::sim::{Prompt, PromptPool};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    #[default]
    Grpo,
    Depo,
    Dapo,
    Offline,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Grpo, Regime::Depo, Regime::Dapo, Regime::Offline];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Grpo => "grpo",
            Regime::Depo => "depo",
            Regime::Dapo => "dapo",
            Regime::Offline => "offline",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown regime `{s}` (expected grpo, depo, dapo or offline)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub warmup_steps: usize,
    /// Lower edge of the keep band on the predicted score. Defaults to `1/(2G)`.
    pub keep_low: Option<f64>,
    /// Upper edge of the keep band. Defaults to `1 - 1/(2G)`.
    pub keep_high: Option<f64>,
    pub enabled: bool,
    /// Keep drawing candidates after filtering until the batch is full again.
    pub refill: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { warmup_steps: 100, keep_low: None, keep_high: None, enabled: true, refill: false }
    }
}

impl FilterConfig {
    /// Fills in the band defaults for group size `g`.
    pub fn resolve(&mut self, group_size: usize) {
        let half_step = 1.0 / (2.0 * group_size as f64);
        self.keep_low.get_or_insert(half_step);
        self.keep_high.get_or_insert(1.0 - half_step);
    }

    pub fn band(&self) -> (f64, f64) {
        (self.keep_low.unwrap_or(1.0 / 16.0), self.keep_high.unwrap_or(15.0 / 16.0))
    }

    /// True when the filter is consulted at `step`.
    pub fn active_at(&self, step: usize) -> bool {
        self.enabled && step >= self.warmup_steps
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.band();
        if !(lo > 0.0 && lo < 1.0) {
            return Err(Error::config("keep_low", format!("{lo} is outside (0, 1)")));
        }
        if !(hi > 0.0 && hi < 1.0) {
            return Err(Error::config("keep_high", format!("{hi} is outside (0, 1)")));
        }
        if lo >= hi {
            return Err(Error::config("keep_low", "keep_low must be below keep_high"));
        }
        Ok(())
    }
}

/// Which candidates a step trains on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub regime: Regime,
    pub kept: Vec<usize>,
    /// DEPO: filtered before rollout. DAPO: discarded after rollout.
    pub dropped: Vec<usize>,
    pub candidates_seen: usize,
    pub short_batch: bool,
}

impl BatchPlan {
    /// `|dropped| / candidates_seen`, 0 when nothing was seen.
    pub fn filter_ratio(&self) -> f64 {
        if self.candidates_seen == 0 {
            0.0
        } else {
            self.dropped.len() as f64 / self.candidates_seen as f64
        }
    }
}

/// Draws prompt ids without replacement in uniformly random order
/// (a lazily evaluated Fisher-Yates shuffle).
pub struct CandidateStream<'r> {
    ids: Vec<usize>,
    pos: usize,
    rng: &'r mut RngState,
}

impl<'r> CandidateStream<'r> {
    pub fn new(ids: Vec<usize>, rng: &'r mut RngState) -> Self {
        Self { ids, pos: 0, rng }
    }
}

impl Iterator for CandidateStream<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.pos >= self.ids.len() {
            return None;
        }
        let j = self.rng.random_range(self.pos..self.ids.len());
        self.ids.swap(self.pos, j);
        self.pos += 1;
        Some(self.ids[self.pos - 1])
    }
}

/// Keeps a prompt iff its predicted score lies in the keep band; during
/// warm-up or when disabled every candidate is kept.
pub fn depo_filter(estimator: &EstimatorModel, candidates: &[&Prompt], step: usize, cfg: &FilterConfig) -> BatchPlan {
    let mut plan = BatchPlan { regime: Regime::Depo, candidates_seen: candidates.len(), ..BatchPlan::default() };
    if !cfg.active_at(step) {
        plan.kept = candidates.iter().map(|p| p.id).collect();
        return plan;
    }
    let (lo, hi) = cfg.band();
    for p in candidates {
        let score = predict_difficulty_score(estimator, p);
        if (lo..=hi).contains(&score) {
            plan.kept.push(p.id);
        } else {
            plan.dropped.push(p.id);
        }
    }
    plan
}

/// The first `batch_size` candidates, nothing dropped.
pub fn grpo_plain(candidates: impl IntoIterator<Item = usize>, batch_size: usize) -> BatchPlan {
    let kept: Vec<usize> = candidates.into_iter().take(batch_size).collect();
    BatchPlan {
        regime: Regime::Grpo,
        candidates_seen: kept.len(),
        short_batch: kept.len() < batch_size,
        kept,
        dropped: Vec::new(),
    }
}

#[derive(Clone, Debug)]
pub struct DapoOutcome {
    pub plan: BatchPlan,
    /// Groups of `plan.kept`, in order.
    pub kept_groups: Vec<RolloutGroup>,
    /// Groups rolled out and then discarded as uniform.
    pub discarded_groups: Vec<RolloutGroup>,
    pub rollouts: usize,
}

/// Dynamic sampling: full rollouts on candidates until `batch_size`
/// informative groups are collected or `max_oversample · batch_size`
/// candidates have been consumed.
#[allow(clippy::too_many_arguments)]
pub fn dapo_dynamic_sampling(
    policy: &PolicyState,
    pool: &PromptPool,
    candidates: &mut dyn Iterator<Item = usize>,
    batch_size: usize,
    group_size: usize,
    max_oversample: f64,
    discard_uniform: bool,
    rng: &mut RngState,
) -> DapoOutcome {
    assert!(max_oversample >= 1.0, "max_oversample must be at least 1");
    let budget = ((max_oversample * batch_size as f64).floor() as usize).max(batch_size);
    let mut plan = BatchPlan { regime: Regime::Dapo, ..BatchPlan::default() };
    let mut kept_groups = Vec::new();
    let mut discarded_groups = Vec::new();
    let mut rollouts = 0;
    while kept_groups.len() < batch_size && plan.candidates_seen < budget {
        let Some(id) = candidates.next() else { break };
        plan.candidates_seen += 1;
        let group = sample_rollouts(policy, pool.get(id), group_size, rng);
        rollouts += group_size;
        if discard_uniform && group.is_uniform() {
            plan.dropped.push(id);
            discarded_groups.push(group);
        } else {
            plan.kept.push(id);
            kept_groups.push(group);
        }
    }
    plan.short_batch = kept_groups.len() < batch_size;
    DapoOutcome { plan, kept_groups, discarded_groups, rollouts }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneOutcome {
    pub retained: Vec<usize>,
    pub rollouts: usize,
    /// Avg@k of every evaluated prompt, in evaluation order.
    pub avg_at_k: Vec<f64>,
}

/// Evaluates Avg@`k_eval` for every prompt in `active` and keeps those whose
/// mean reward falls in `band`.
pub fn offline_stage_prune(
    policy: &PolicyState,
    pool: &PromptPool,
    active: &[usize],
    k_eval: usize,
    band: impl RangeBounds<f64>,
    rng: &mut RngState,
) -> Result<PruneOutcome> {
    let mut retained = Vec::new();
    let mut avg_at_k = Vec::with_capacity(active.len());
    for &id in active {
        let mean = sample_rollouts(policy, pool.get(id), k_eval, rng).mean_reward();
        avg_at_k.push(mean);
        if band.contains(&mean) {
            retained.push(id);
        }
    }
    if retained.is_empty() {
        return Err(Error::config("offline.keep_lo", "offline pruning removed every prompt"));
    }
    Ok(PruneOutcome { retained, rollouts: active.len() * k_eval, avg_at_k })
}

/// Estimator targets from this step's rollouts: the group mean reward and the
/// perplexity proxy of `policy` (the policy that produced the rollouts).
pub fn make_targets(groups: &[RolloutGroup], policy: &PolicyState, pool: &PromptPool) -> Vec<EstimatorTarget> {
    groups
        .iter()
        .map(|g| EstimatorTarget {
            prompt_id: g.prompt_id,
            a: g.mean_reward(),
            p: binary_entropy_from_logit(policy.logit(pool.get(g.prompt_id))),
        })
        .collect()
}
