//! Cascade routing with a frozen difficulty estimator.
//!
//! A query goes to the small model when the estimator's score (its
//! predicted success rate for the small model) clears `tau`, and to the large
//! model otherwise. Small-only, large-only and routed accuracies are all
//! measured on common random numbers, so the comparisons are exact.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{predict_difficulty_score, EstimatorModel};
use crate::policy::{success_prob, PolicyState};
use crate::rng::{streams, RngState};
use crate::sim::PromptPool;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    Small,
    Large,
}

/// `score >= tau` goes to the small model.
pub fn route(score: f64, tau: f64) -> Route {
    if score >= tau {
        Route::Small
    } else {
        Route::Large
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RouterConfig {
    pub tau: f64,
    pub small_policy: PolicyState,
    pub large_policy: PolicyState,
    pub eval_rollouts: usize,
    pub buckets: usize,
}

impl RouterConfig {
    pub fn new(tau: f64, small_policy: PolicyState, large_policy: PolicyState, eval_rollouts: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::config("router.tau", format!("{tau} is outside [0, 1]")));
        }
        if eval_rollouts == 0 {
            return Err(Error::config("router.eval_rollouts", "must be at least 1"));
        }
        if small_policy.dim() != large_policy.dim() {
            return Err(Error::config("router.skill_shift", "small and large policies differ in dimension"));
        }
        Ok(Self { tau, small_policy, large_policy, eval_rollouts, buckets: 5 })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoutingStats {
    pub accuracy: f64,
    pub small_only_accuracy: f64,
    pub large_only_accuracy: f64,
    pub queries_to_small: usize,
    pub queries_to_large: usize,
    pub delta_vs_small: f64,
    pub delta_vs_large: f64,
}

impl RoutingStats {
    pub fn total(&self) -> usize {
        self.queries_to_small + self.queries_to_large
    }

    pub fn pct_small(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            100.0 * self.queries_to_small as f64 / self.total() as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingReport {
    pub tau: f64,
    pub overall: RoutingStats,
    /// Difficulty buckets, easiest first (equal-count quantiles of latent difficulty).
    pub buckets: Vec<RoutingStats>,
}

#[derive(Default)]
struct Accum {
    routed: f64,
    small: f64,
    large: f64,
    to_small: usize,
    to_large: usize,
}

impl Accum {
    fn finish(&self) -> RoutingStats {
        let n = (self.to_small + self.to_large) as f64;
        let avg = |x: f64| if n == 0.0 { 0.0 } else { x / n };
        let (accuracy, small, large) = (avg(self.routed), avg(self.small), avg(self.large));
        RoutingStats {
            accuracy,
            small_only_accuracy: small,
            large_only_accuracy: large,
            queries_to_small: self.to_small,
            queries_to_large: self.to_large,
            delta_vs_small: accuracy - small,
            delta_vs_large: accuracy - large,
        }
    }
}

/// Routes every query and measures accuracy as the mean reward over
/// `eval_rollouts` responses from the chosen model.
pub fn cascade_eval(queries: &PromptPool, estimator: &EstimatorModel, cfg: &RouterConfig, rng: &RngState) -> RoutingReport {
    let n = queries.len();
    let buckets = cfg.buckets.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        queries.prompts[a].latent_difficulty.total_cmp(&queries.prompts[b].latent_difficulty).then(a.cmp(&b))
    });
    let mut bucket_of = vec![0usize; n];
    for (rank, &i) in order.iter().enumerate() {
        bucket_of[i] = rank * buckets / n.max(1);
    }

    let mut overall = Accum::default();
    let mut per_bucket: Vec<Accum> = (0..buckets).map(|_| Accum::default()).collect();
    let k = cfg.eval_rollouts as f64;
    for (i, q) in queries.prompts.iter().enumerate() {
        // common random numbers: the same uniforms decide every model's outcomes
        let mut qrng = rng.fork2(streams::ROUTER, i as u64);
        let p_small = success_prob(&cfg.small_policy, q);
        let p_large = success_prob(&cfg.large_policy, q);
        let (mut small_hits, mut large_hits) = (0.0, 0.0);
        for _ in 0..cfg.eval_rollouts {
            let u: f64 = qrng.random();
            small_hits += f64::from(u8::from(u < p_small));
            large_hits += f64::from(u8::from(u < p_large));
        }
        let (small_acc, large_acc) = (small_hits / k, large_hits / k);
        let choice = route(predict_difficulty_score(estimator, q), cfg.tau);
        for acc in [&mut overall, &mut per_bucket[bucket_of[i]]] {
            acc.small += small_acc;
            acc.large += large_acc;
            match choice {
                Route::Small => {
                    acc.routed += small_acc;
                    acc.to_small += 1;
                }
                Route::Large => {
                    acc.routed += large_acc;
                    acc.to_large += 1;
                }
            }
        }
    }
    RoutingReport { tau: cfg.tau, overall: overall.finish(), buckets: per_bucket.iter().map(Accum::finish).collect() }
}

/// Table with columns `tau,accuracy,n_small,n_large,pct_small,delta_vs_small,delta_vs_large`.
pub fn reports_to_csv(reports: &[RoutingReport]) -> String {
    let mut out = String::from("tau,accuracy,n_small,n_large,pct_small,delta_vs_small,delta_vs_large\n");
    for r in reports {
        let o = &r.overall;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.tau,
            o.accuracy,
            o.queries_to_small,
            o.queries_to_large,
            o.pct_small(),
            o.delta_vs_small,
            o.delta_vs_large
        );
    }
    out
}

pub fn write_reports_csv(reports: &[RoutingReport], path: &Path) -> Result<()> {
    std::fs::write(path, reports_to_csv(reports)).map_err(|e| Error::io(path, e))
}
