//! Group-relative advantages, the clipped surrogate, the Bernoulli KL
//! penalty and the actor update.
//!
//! The batch objective averages over informative groups only: a group whose
//! rewards are all equal has no advantage signal and is left out of both the
//! numerator and the denominator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{log_prob, PolicyState, RolloutGroup};
use crate::sim::{dot, log_sigmoid, mean, sigmoid, Prompt};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub inner_epochs: usize,
    /// Kept in sync with the experiment's group size.
    #[serde(skip)]
    pub group_size: usize,
    pub std_floor: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self { clip_eps: 0.2, kl_beta: 2.0, learning_rate: 0.05, inner_epochs: 2, group_size: 8, std_floor: 1e-8 }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::config("clip_eps", format!("{} is outside (0, 1)", self.clip_eps)));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return Err(Error::config("kl_beta", "must be finite and nonnegative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.inner_epochs == 0 {
            return Err(Error::config("inner_epochs", "must be at least 1"));
        }
        if self.std_floor.is_nan() || self.std_floor < 0.0 {
            return Err(Error::config("std_floor", "must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageVector {
    pub values: Vec<f64>,
    pub is_zero_variance: bool,
}

/// `A_i = (r_i - mean) / std` with the population standard deviation.
/// Groups whose std does not exceed `std_floor` get exact zeros.
pub fn group_advantages(rewards: &[f64], std_floor: f64) -> AdvantageVector {
    assert!(rewards.len() >= 2, "group advantages need at least two rewards");
    let m = mean(rewards);
    let s = crate::sim::std_dev(rewards);
    if s <= std_floor {
        return AdvantageVector { values: vec![0.0; rewards.len()], is_zero_variance: true };
    }
    AdvantageVector { values: rewards.iter().map(|r| (r - m) / s).collect(), is_zero_variance: false }
}

/// `min(r·A, clip(r, 1-ε, 1+ε)·A)`.
#[inline]
pub fn clipped_term(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage;
    unclipped.min(clipped)
}

/// True where the minimum is realized by the unclipped branch (ties included).
#[inline]
fn unclipped_active(ratio: f64, advantage: f64, clip_eps: f64) -> bool {
    ratio * advantage <= ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage
}

/// Exact `KL(Bern(σ(a)) ‖ Bern(σ(b)))`.
pub fn kl_bernoulli(logit_theta: f64, logit_ref: f64) -> f64 {
    if logit_theta == logit_ref {
        return 0.0;
    }
    let p = sigmoid(logit_theta);
    let q = sigmoid(-logit_theta);
    let kl = p * (log_sigmoid(logit_theta) - log_sigmoid(logit_ref))
        + q * (log_sigmoid(-logit_theta) - log_sigmoid(-logit_ref));
    kl.max(0.0)
}

/// d KL / d logit_theta = p(1-p)(a - b).
#[inline]
fn kl_bernoulli_grad(logit_theta: f64, logit_ref: f64) -> f64 {
    let p = sigmoid(logit_theta);
    p * (1.0 - p) * (logit_theta - logit_ref)
}

/// One prompt's contribution to an actor update.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a> {
    pub prompt: &'a Prompt,
    pub group: &'a RolloutGroup,
    pub advantages: &'a AdvantageVector,
}

fn informative<'a, 'b>(batch: &'b [BatchItem<'a>]) -> impl Iterator<Item = &'b BatchItem<'a>> {
    batch.iter().filter(|item| !item.advantages.is_zero_variance)
}

/// Scalar objective at parameters `theta`.
pub fn grpo_objective(theta: &[f64], reference: &PolicyState, batch: &[BatchItem<'_>], cfg: &GrpoConfig) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for item in informative(batch) {
        let z = dot(theta, &item.prompt.features);
        let z_ref = reference.logit(item.prompt);
        let g = item.group.group_size() as f64;
        let surrogate: f64 = item
            .group
            .outcomes
            .iter()
            .zip(&item.advantages.values)
            .map(|(&o, &a)| {
                let ratio = (log_prob(z, o) - log_prob(item.group.old_logit, o)).exp();
                clipped_term(ratio, a, cfg.clip_eps)
            })
            .sum::<f64>()
            / g;
        total += surrogate - cfg.kl_beta * kl_bernoulli(z, z_ref);
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Gradient of [`grpo_objective`] with respect to `theta`.
pub fn grpo_objective_grad(theta: &[f64], reference: &PolicyState, batch: &[BatchItem<'_>], cfg: &GrpoConfig) -> Vec<f64> {
    let mut grad = vec![0.0; theta.len()];
    let mut count = 0usize;
    for item in informative(batch) {
        let phi = &item.prompt.features;
        let z = dot(theta, phi);
        let z_ref = reference.logit(item.prompt);
        let p = sigmoid(z);
        let g = item.group.group_size() as f64;
        let mut dz = 0.0;
        for (&o, &a) in item.group.outcomes.iter().zip(&item.advantages.values) {
            let ratio = (log_prob(z, o) - log_prob(item.group.old_logit, o)).exp();
            if unclipped_active(ratio, a, cfg.clip_eps) {
                // d log π / dz = o - p
                dz += a * ratio * (f64::from(o) - p);
            }
        }
        dz /= g;
        dz -= cfg.kl_beta * kl_bernoulli_grad(z, z_ref);
        for (gj, xj) in grad.iter_mut().zip(phi) {
            *gj += dz * xj;
        }
        count += 1;
    }
    if count > 0 {
        let inv = 1.0 / count as f64;
        grad.iter_mut().for_each(|x| *x *= inv);
    }
    grad
}

/// Summary of one actor update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepFragment {
    pub mean_reward: f64,
    pub mean_abs_advantage: f64,
    /// Mean KL to the reference policy over the batch prompts, after the update.
    pub kl: f64,
    pub informative_groups: usize,
}

/// `inner_epochs` steps of gradient ascent on the surrogate with the
/// rollout-time logits held fixed.
pub fn grpo_step(
    policy: &PolicyState,
    reference: &PolicyState,
    batch: &[BatchItem<'_>],
    cfg: &GrpoConfig,
) -> Result<(PolicyState, StepFragment)> {
    if batch.is_empty() {
        return Err(Error::NoInformativeSamples);
    }
    let mut theta = policy.theta.clone();
    for _ in 0..cfg.inner_epochs {
        let grad = grpo_objective_grad(&theta, reference, batch, cfg);
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t += cfg.learning_rate * g;
        }
    }
    let updated = PolicyState { version: policy.version + 1, theta };

    let rewards: Vec<f64> = batch.iter().flat_map(|item| item.group.rewards.iter().copied()).collect();
    let abs_adv: Vec<f64> = batch.iter().flat_map(|item| item.advantages.values.iter().map(|a| a.abs())).collect();
    let kls: Vec<f64> = batch
        .iter()
        .map(|item| kl_bernoulli(updated.logit(item.prompt), reference.logit(item.prompt)))
        .collect();
    let fragment = StepFragment {
        mean_reward: mean(&rewards),
        mean_abs_advantage: mean(&abs_adv),
        kl: mean(&kls),
        informative_groups: informative(batch).count(),
    };
    Ok((updated, fragment))
}
