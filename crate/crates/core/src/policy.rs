//! The simulated actor: one Bernoulli outcome per response, with success
//! probability `σ(θ · φ(q))`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::sim::{dot, log_sigmoid, sigmoid, Prompt};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub version: u64,
    pub theta: Vec<f64>,
}

impl PolicyState {
    pub fn new(theta: Vec<f64>) -> Self {
        Self { version: 0, theta }
    }

    /// `θ = [bias, 1, 0, ...]`: success odds fall off with difficulty, shifted by `bias`.
    pub fn skill(dim: usize, bias: f64) -> Self {
        assert!(dim >= 2, "policy needs at least the bias and difficulty slots");
        let mut theta = vec![0.0; dim];
        theta[0] = bias;
        theta[1] = 1.0;
        Self::new(theta)
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn logit(&self, prompt: &Prompt) -> f64 {
        assert_eq!(self.theta.len(), prompt.dim(), "policy/prompt dimension mismatch");
        dot(&self.theta, &prompt.features)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("policy serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let policy: Self = serde_json::from_str(&text).map_err(|e| Error::Record {
            path: path.into(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if policy.theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Record { path: path.into(), line: 0, message: "non-finite theta".into() });
        }
        Ok(policy)
    }
}

/// `G` sampled responses for one prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt_id: usize,
    pub outcomes: Vec<u8>,
    pub rewards: Vec<f64>,
    /// Logit of the sampling policy, `θ_old · φ(q)`.
    pub old_logit: f64,
}

impl RolloutGroup {
    pub fn group_size(&self) -> usize {
        self.outcomes.len()
    }

    pub fn mean_reward(&self) -> f64 {
        crate::sim::mean(&self.rewards)
    }

    /// All rewards identical.
    pub fn is_uniform(&self) -> bool {
        self.rewards.windows(2).all(|w| w[0] == w[1])
    }
}

pub fn success_prob(policy: &PolicyState, prompt: &Prompt) -> f64 {
    sigmoid(policy.logit(prompt))
}

pub fn sample_rollouts(policy: &PolicyState, prompt: &Prompt, group_size: usize, rng: &mut RngState) -> RolloutGroup {
    assert!(group_size >= 1, "group size must be at least 1");
    let old_logit = policy.logit(prompt);
    let p = sigmoid(old_logit);
    let outcomes: Vec<u8> = (0..group_size).map(|_| u8::from(rng.random::<f64>() < p)).collect();
    let rewards = outcomes.iter().map(|&o| f64::from(o)).collect();
    RolloutGroup { prompt_id: prompt.id, outcomes, rewards, old_logit }
}

/// Binary entropy (bits) of the success probability. Lies in `[0, 1]`, so it
/// serves directly as the normalized perplexity target.
pub fn actor_ppl_proxy(policy: &PolicyState, prompt: &Prompt) -> f64 {
    binary_entropy_from_logit(policy.logit(prompt))
}

pub fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    (term(p) + term(1.0 - p)).clamp(0.0, 1.0)
}

/// Binary entropy computed from a logit, exact at saturation where `p` rounds to 1.
pub fn binary_entropy_from_logit(logit: f64) -> f64 {
    let p = sigmoid(logit);
    let q = sigmoid(-logit);
    let term = |x: f64, lx: f64| if x <= 0.0 { 0.0 } else { -x * lx };
    let nats = term(p, log_sigmoid(logit)) + term(q, log_sigmoid(-logit));
    (nats / std::f64::consts::LN_2).clamp(0.0, 1.0)
}

/// `log π(outcome | logit)`.
#[inline]
pub fn log_prob(logit: f64, outcome: u8) -> f64 {
    if outcome == 1 {
        log_sigmoid(logit)
    } else {
        log_sigmoid(-logit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn prompt(features: Vec<f64>) -> Prompt {
        Prompt { id: 0, latent_difficulty: -features[1], features }
    }

    #[test]
    fn success_prob_examples() {
        let q = Prompt::new(0, 1.3, &[0.4, -2.0]);
        assert_eq!(success_prob(&PolicyState::new(vec![0.0; 4]), &q), 0.5);
        assert_eq!(success_prob(&PolicyState::skill(4, 0.0), &q), sigmoid(-1.3));
        let p = success_prob(&PolicyState::new(vec![0.5, 1.0, 0.0]), &prompt(vec![1.0, -2.0, 3.0]));
        // 0.5 - 2 + 0 = -1.5
        assert!((p - 0.182_425_523_806_356_2).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "dimension mismatch")]
    fn dimension_mismatch_panics() {
        success_prob(&PolicyState::new(vec![0.0; 3]), &Prompt::new(0, 0.0, &[]));
    }

    #[test]
    fn saturated_policy_always_succeeds() {
        let q = Prompt::new(0, 0.0, &[]);
        let policy = PolicyState::new(vec![1000.0, 0.0]);
        let g = sample_rollouts(&policy, &q, 64, &mut RngState::new(1));
        assert!(g.outcomes.iter().all(|&o| o == 1));
        assert_eq!(g.rewards, vec![1.0; 64]);
        assert!(g.is_uniform());
    }

    #[test]
    fn fair_coin_mean_matches_binomial() {
        let q = Prompt::new(0, 0.0, &[]);
        let g = sample_rollouts(&PolicyState::new(vec![0.0, 0.0]), &q, 10_000, &mut RngState::new(2));
        // Binomial(10000, 0.5) sd of the mean is 0.005; 0.02 is four sd.
        assert!((g.mean_reward() - 0.5).abs() < 0.02);
        assert_eq!(g.group_size(), 10_000);
    }

    #[test]
    fn rollouts_are_deterministic() {
        let q = Prompt::new(0, 0.3, &[0.1]);
        let policy = PolicyState::skill(3, 0.2);
        let a = sample_rollouts(&policy, &q, 32, &mut RngState::new(17));
        let b = sample_rollouts(&policy, &q, 32, &mut RngState::new(17));
        assert_eq!(a, b);
        assert_eq!(a.old_logit, policy.logit(&q));
    }

    #[test]
    fn ppl_proxy_examples() {
        let q = Prompt::new(0, 0.0, &[]);
        assert_eq!(actor_ppl_proxy(&PolicyState::new(vec![0.0, 0.0]), &q), 1.0);
        assert_eq!(actor_ppl_proxy(&PolicyState::new(vec![800.0, 0.0]), &q), 0.0);
        // -0.9 log2 0.9 - 0.1 log2 0.1
        assert!((binary_entropy(0.9) - 0.468_995_593_589_281_2).abs() < 1e-12);
        let logit_09 = (0.9f64 / 0.1).ln();
        assert!((binary_entropy_from_logit(logit_09) - 0.469_00).abs() < 1e-5);
    }

    #[test]
    fn log_prob_examples() {
        assert!((log_prob(0.0, 1) + std::f64::consts::LN_2).abs() < 1e-15);
        // ln(1 - σ(2)) = -ln(1 + e^2)
        assert!((log_prob(2.0, 0) + 2.126_928_011_042_972_5).abs() < 1e-12);
        assert!(log_prob(700.0, 0).is_finite());
        assert!((log_prob(-700.0, 1) + 700.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn log_prob_normalizes(x in -700.0f64..700.0) {
            let total = log_prob(x, 1).exp() + log_prob(x, 0).exp();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(log_prob(x, 1) <= 0.0 && log_prob(x, 0) <= 0.0);
        }

        #[test]
        fn easier_prompts_succeed_more(d in -10.0f64..10.0, delta in 0.01f64..5.0) {
            let policy = PolicyState::skill(3, 0.0);
            let easy = Prompt::new(0, d - delta, &[0.3]);
            let hard = Prompt::new(1, d, &[0.3]);
            prop_assert!(success_prob(&policy, &easy) > success_prob(&policy, &hard));
        }

        #[test]
        fn entropy_symmetry(p in 0.0f64..=1.0) {
            prop_assert!((binary_entropy(p) - binary_entropy(1.0 - p)).abs() < 1e-12);
        }
    }
}
