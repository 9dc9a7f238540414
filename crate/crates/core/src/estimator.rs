//! Online difficulty estimator.
//!
//! A one-hidden-layer network with two linear heads: the advantage head
//! predicts the group mean reward (as a logit) and the perplexity head
//! predicts the actor's normalized perplexity. It is trained with
//!
//! ```text
//! L = L_DE + w_distill · L_distill + w_rank · L_rank
//! ```
//!
//! where `L_DE` and `L_distill` are binary cross-entropies on the two heads
//! and `L_rank` is a pairwise hinge that keeps easier prompts scored above
//! harder ones by a margin. Gradients are computed by hand and checked
//! against finite differences in the tests.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::sim::{sigmoid, softplus, Prompt};

/// Which loss drives the advantage head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossForm {
    #[default]
    Bce,
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorLossConfig {
    pub w_distill: f64,
    pub w_rank: f64,
    /// Hinge margin, in logit units.
    pub margin: f64,
    /// Minimum target gap (reward units) for a pair to enter the ranking set.
    pub pair_gap: f64,
    pub learning_rate: f64,
    pub max_pairs: usize,
    pub hidden: usize,
    pub loss_form: LossForm,
    /// Optimizer steps per training step of the actor.
    pub updates_per_step: usize,
}

impl Default for EstimatorLossConfig {
    fn default() -> Self {
        Self {
            w_distill: 0.5,
            w_rank: 3.0,
            margin: 0.75,
            pair_gap: 0.25,
            learning_rate: 1e-2,
            max_pairs: 512,
            hidden: 16,
            loss_form: LossForm::Bce,
            updates_per_step: 1,
        }
    }
}

impl EstimatorLossConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("w_distill", self.w_distill), ("w_rank", self.w_rank), ("margin", self.margin), ("pair_gap", self.pair_gap)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be finite and nonnegative"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden", "must be at least 1"));
        }
        if self.updates_per_step == 0 {
            return Err(Error::config("updates_per_step", "must be at least 1"));
        }
        Ok(())
    }
}

/// Training target for one prompt.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorTarget {
    pub prompt_id: usize,
    /// Group mean reward.
    pub a: f64,
    /// Normalized perplexity proxy.
    pub p: f64,
}

/// Encoder `tanh(W x + b)` followed by two linear heads.
///
/// Parameters live in one flat vector laid out as
/// `[W (hidden × input, row-major), b (hidden), adv_w (hidden), adv_b, ppl_w (hidden), ppl_b]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorModel {
    pub input_dim: usize,
    pub hidden: usize,
    pub params: Vec<f64>,
    pub version: u64,
}

struct Layout {
    w1: usize,
    b1: usize,
    adv_w: usize,
    adv_b: usize,
    ppl_w: usize,
    ppl_b: usize,
    len: usize,
}

impl Layout {
    fn new(input: usize, hidden: usize) -> Self {
        let w1 = 0;
        let b1 = hidden * input;
        let adv_w = b1 + hidden;
        let adv_b = adv_w + hidden;
        let ppl_w = adv_b + 1;
        let ppl_b = ppl_w + hidden;
        Self { w1, b1, adv_w, adv_b, ppl_w, ppl_b, len: ppl_b + 1 }
    }
}

/// Hidden activations and logits of one forward pass.
struct Activations {
    hidden: Vec<f64>,
    a_logit: f64,
    p_logit: f64,
}

impl EstimatorModel {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let len = Layout::new(input_dim, hidden).len;
        Self { input_dim, hidden, params: vec![0.0; len], version: 0 }
    }

    /// Uniform `±1/sqrt(fan_in)` weights, zero biases.
    pub fn init(input_dim: usize, hidden: usize, rng: &mut RngState) -> Self {
        let mut model = Self::zeros(input_dim, hidden);
        let l = model.layout();
        let enc = 1.0 / (input_dim as f64).sqrt();
        let head = 1.0 / (hidden as f64).sqrt();
        for w in &mut model.params[l.w1..l.b1] {
            *w = rng.random_range(-enc..enc);
        }
        for range in [l.adv_w..l.adv_b, l.ppl_w..l.ppl_b] {
            for w in &mut model.params[range] {
                *w = rng.random_range(-head..head);
            }
        }
        model
    }

    fn layout(&self) -> Layout {
        Layout::new(self.input_dim, self.hidden)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn activations(&self, features: &[f64]) -> Activations {
        assert_eq!(features.len(), self.input_dim, "estimator input dimension mismatch");
        let l = self.layout();
        let p = &self.params;
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &p[l.w1 + j * self.input_dim..l.w1 + (j + 1) * self.input_dim];
                let pre: f64 = row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>() + p[l.b1 + j];
                pre.tanh()
            })
            .collect();
        let a_logit = hidden.iter().zip(&p[l.adv_w..l.adv_b]).map(|(h, w)| h * w).sum::<f64>() + p[l.adv_b];
        let p_logit = hidden.iter().zip(&p[l.ppl_w..l.ppl_b]).map(|(h, w)| h * w).sum::<f64>() + p[l.ppl_b];
        Activations { hidden, a_logit, p_logit }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("estimator serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text).map_err(|e| Error::Record {
            path: path.into(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if model.params.len() != Layout::new(model.input_dim, model.hidden).len {
            return Err(Error::Record { path: path.into(), line: 0, message: "parameter count does not match shape".into() });
        }
        if model.params.iter().any(|x| !x.is_finite()) {
            return Err(Error::Record { path: path.into(), line: 0, message: "non-finite weights".into() });
        }
        Ok(model)
    }
}

/// `(advantage logit, perplexity logit)`.
pub fn estimator_forward(model: &EstimatorModel, features: &[f64]) -> (f64, f64) {
    let act = model.activations(features);
    (act.a_logit, act.p_logit)
}

/// Predicted group mean reward in `(0, 1)`; higher means easier.
pub fn predict_difficulty_score(model: &EstimatorModel, prompt: &Prompt) -> f64 {
    sigmoid(estimator_forward(model, &prompt.features).0)
}

/// Binary cross-entropy `-[A log σ(x) + (1-A) log(1-σ(x))] = softplus(x) - A x`.
#[inline]
pub fn loss_de(a_logit: f64, a: f64) -> f64 {
    softplus(a_logit) - a * a_logit
}

#[inline]
pub fn loss_de_grad(a_logit: f64, a: f64) -> f64 {
    sigmoid(a_logit) - a
}

#[inline]
pub fn loss_mse(a_logit: f64, a: f64) -> f64 {
    let d = a - sigmoid(a_logit);
    0.5 * d * d
}

#[inline]
pub fn loss_mse_grad(a_logit: f64, a: f64) -> f64 {
    let s = sigmoid(a_logit);
    (s - a) * s * (1.0 - s)
}

#[inline]
pub fn loss_distill(p_logit: f64, p: f64) -> f64 {
    loss_de(p_logit, p)
}

#[inline]
pub fn loss_distill_grad(p_logit: f64, p: f64) -> f64 {
    loss_de_grad(p_logit, p)
}

/// An ordered pair of batch indices: `easy` has the higher target reward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct RankPair {
    pub easy: usize,
    pub hard: usize,
}

/// All pairs with `A_easy - A_hard >= pair_gap`, as indices into `targets`.
pub fn build_rank_pairs(targets: &[EstimatorTarget], pair_gap: f64) -> Vec<RankPair> {
    let mut pairs = Vec::new();
    for (i, ti) in targets.iter().enumerate() {
        for (j, tj) in targets.iter().enumerate() {
            let gap = ti.a - tj.a;
            if i != j && gap > 0.0 && gap >= pair_gap {
                pairs.push(RankPair { easy: i, hard: j });
            }
        }
    }
    pairs
}

/// Keeps at most `max_pairs` pairs, chosen uniformly without replacement.
pub fn cap_pairs(pairs: Vec<RankPair>, max_pairs: usize, rng: &mut RngState) -> Vec<RankPair> {
    if pairs.len() <= max_pairs {
        return pairs;
    }
    let mut picked = rand::seq::index::sample(rng, pairs.len(), max_pairs).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| pairs[i]).collect()
}

/// `(1/|Q|) Σ max(0, m - (Â_easy - Â_hard))`, zero for an empty set.
pub fn loss_rank(pairs: &[RankPair], a_logits: &[f64], margin: f64) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|q| (margin - (a_logits[q.easy] - a_logits[q.hard])).max(0.0)).sum::<f64>() / pairs.len() as f64
}

/// Loss terms of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub de: f64,
    pub distill: f64,
    pub rank: f64,
    pub joint: f64,
}

/// One training example.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub features: &'a [f64],
    pub target: EstimatorTarget,
}

/// Joint loss over a batch and its exact gradient over all parameters.
///
/// `pairs` index into `batch`. The hinge subgradient at the kink is taken as 0.
pub fn joint_loss_and_grad(
    model: &EstimatorModel,
    batch: &[Example<'_>],
    pairs: &[RankPair],
    cfg: &EstimatorLossConfig,
) -> (LossBreakdown, Vec<f64>) {
    assert!(!batch.is_empty(), "estimator batch must be non-empty");
    let l = model.layout();
    let n = batch.len() as f64;
    let acts: Vec<Activations> = batch.iter().map(|ex| model.activations(ex.features)).collect();

    let mut d_a = vec![0.0; batch.len()];
    let mut d_p = vec![0.0; batch.len()];
    let mut de = 0.0;
    let mut distill = 0.0;
    for (i, (ex, act)) in batch.iter().zip(&acts).enumerate() {
        let (loss, grad) = match cfg.loss_form {
            LossForm::Bce => (loss_de(act.a_logit, ex.target.a), loss_de_grad(act.a_logit, ex.target.a)),
            LossForm::Mse => (loss_mse(act.a_logit, ex.target.a), loss_mse_grad(act.a_logit, ex.target.a)),
        };
        de += loss;
        d_a[i] = grad / n;
        distill += loss_distill(act.p_logit, ex.target.p);
        d_p[i] = cfg.w_distill * loss_distill_grad(act.p_logit, ex.target.p) / n;
    }
    de /= n;
    distill /= n;

    let a_logits: Vec<f64> = acts.iter().map(|a| a.a_logit).collect();
    let rank = loss_rank(pairs, &a_logits, cfg.margin);
    if !pairs.is_empty() && cfg.w_rank != 0.0 {
        let scale = cfg.w_rank / pairs.len() as f64;
        for q in pairs {
            if cfg.margin - (a_logits[q.easy] - a_logits[q.hard]) > 0.0 {
                d_a[q.easy] -= scale;
                d_a[q.hard] += scale;
            }
        }
    }

    let mut grad = vec![0.0; model.num_params()];
    let p = &model.params;
    for ((ex, act), (&da, &dp)) in batch.iter().zip(&acts).zip(d_a.iter().zip(&d_p)) {
        grad[l.adv_b] += da;
        grad[l.ppl_b] += dp;
        for j in 0..model.hidden {
            let h = act.hidden[j];
            grad[l.adv_w + j] += da * h;
            grad[l.ppl_w + j] += dp * h;
            let dh = da * p[l.adv_w + j] + dp * p[l.ppl_w + j];
            let dpre = dh * (1.0 - h * h);
            grad[l.b1 + j] += dpre;
            let row = l.w1 + j * model.input_dim;
            for (g, x) in grad[row..row + model.input_dim].iter_mut().zip(ex.features) {
                *g += dpre * x;
            }
        }
    }

    let joint = de + cfg.w_distill * distill + cfg.w_rank * rank;
    (LossBreakdown { de, distill, rank, joint }, grad)
}

/// Scalar joint loss only; used by finite-difference checks.
pub fn joint_loss(model: &EstimatorModel, batch: &[Example<'_>], pairs: &[RankPair], cfg: &EstimatorLossConfig) -> f64 {
    joint_loss_and_grad(model, batch, pairs, cfg).0.joint
}

/// First and second moment state for the estimator optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self { m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One adaptive-moment descent step. Rejects non-finite gradients.
pub fn estimator_update(
    model: &EstimatorModel,
    gradient: &[f64],
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<EstimatorModel> {
    assert_eq!(gradient.len(), model.num_params(), "gradient length mismatch");
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::TrainingFault {
            step: model.version as usize,
            detail: format!("non-finite estimator gradient at parameter {i}"),
        });
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    let mut next = model.clone();
    for (i, (w, &g)) in next.params.iter_mut().zip(gradient).enumerate() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        *w -= learning_rate * m_hat / (v_hat.sqrt() + state.eps);
    }
    next.version += 1;
    Ok(next)
}

/// Estimator plus optimizer state, trained online from rollout targets.
#[derive(Clone, Debug)]
pub struct OnlineEstimator {
    pub model: EstimatorModel,
    pub adam: AdamState,
    pub cfg: EstimatorLossConfig,
    pair_rng: RngState,
}

impl OnlineEstimator {
    pub fn new(model: EstimatorModel, cfg: EstimatorLossConfig, pair_rng: RngState) -> Self {
        let adam = AdamState::new(model.num_params());
        Self { model, adam, cfg, pair_rng }
    }

    /// Trains on `(prompt, target)` pairs; returns the losses of the first
    /// optimizer step (before any update this call).
    pub fn train(&mut self, prompts: &[&Prompt], targets: &[EstimatorTarget]) -> Result<LossBreakdown> {
        assert_eq!(prompts.len(), targets.len());
        if prompts.is_empty() {
            return Ok(LossBreakdown::default());
        }
        let batch: Vec<Example<'_>> =
            prompts.iter().zip(targets).map(|(p, &target)| Example { features: &p.features, target }).collect();
        let pairs = if self.cfg.w_rank > 0.0 {
            cap_pairs(build_rank_pairs(targets, self.cfg.pair_gap), self.cfg.max_pairs, &mut self.pair_rng)
        } else {
            Vec::new()
        };
        let mut first = None;
        for _ in 0..self.cfg.updates_per_step {
            let (losses, grad) = joint_loss_and_grad(&self.model, &batch, &pairs, &self.cfg);
            if !losses.joint.is_finite() {
                return Err(Error::TrainingFault {
                    step: self.model.version as usize,
                    detail: "non-finite estimator loss".into(),
                });
            }
            first.get_or_insert(losses);
            self.model = estimator_update(&self.model, &grad, &mut self.adam, self.cfg.learning_rate)?;
        }
        Ok(first.expect("at least one update"))
    }

    pub fn score(&self, prompt: &Prompt) -> f64 {
        predict_difficulty_score(&self.model, prompt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn target(a: f64, p: f64) -> EstimatorTarget {
        EstimatorTarget { prompt_id: 0, a, p }
    }

    #[test]
    fn zero_model_outputs_zero_logits() {
        let model = EstimatorModel::zeros(4, 3);
        assert_eq!(estimator_forward(&model, &[1.0, 2.0, -1.0, 0.5]), (0.0, 0.0));
        assert_eq!(predict_difficulty_score(&model, &Prompt::new(0, 1.0, &[0.0, 0.0])), 0.5);
    }

    #[test]
    fn tiny_model_forward_by_hand() {
        let mut model = EstimatorModel::zeros(2, 1);
        model.params.iter_mut().for_each(|w| *w = 1.0);
        // h = tanh(1·1 + 1·0 + 1) = tanh 2; each head = tanh 2 + 1
        let expected = 2.0f64.tanh() + 1.0;
        let (a, p) = estimator_forward(&model, &[1.0, 0.0]);
        assert!((a - expected).abs() < 1e-15 && (p - expected).abs() < 1e-15);
        assert!((a - 1.964_027_580_075_817).abs() < 1e-12);
        assert_eq!(estimator_forward(&model, &[1.0, 0.0]), (a, p));
    }

    #[test]
    #[should_panic(expected = "dimension mismatch")]
    fn forward_rejects_wrong_dimension() {
        estimator_forward(&EstimatorModel::zeros(3, 2), &[1.0]);
    }

    #[test]
    fn bce_and_mse_examples() {
        assert!((loss_de(0.0, 0.5) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(loss_de(40.0, 1.0) < 1e-15);
        assert!(loss_de(800.0, 1.0).is_finite() && loss_de(-800.0, 0.0).is_finite());
        assert_eq!(loss_mse(0.0, 0.5), 0.0);
        assert!(loss_mse_grad(10.0, 0.0).abs() < 1e-4);
        assert!(loss_de_grad(10.0, 0.0).abs() > 0.9999);
        assert!((loss_distill(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((loss_distill(0.0, 0.5) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn rank_pair_examples() {
        assert_eq!(build_rank_pairs(&[target(1.0, 0.0), target(0.0, 0.0)], 0.25), vec![RankPair { easy: 0, hard: 1 }]);
        assert!(build_rank_pairs(&[target(0.5, 0.0); 4], 0.25).is_empty());
        let t = [target(1.0, 0.0), target(0.5, 0.0), target(0.0, 0.0)];
        let pairs = build_rank_pairs(&t, 0.25);
        let mut brute = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                if t[i].a - t[j].a >= 0.25 {
                    brute.push(RankPair { easy: i, hard: j });
                }
            }
        }
        assert_eq!(pairs, brute);
        assert_eq!(pairs.len(), 3);
    }

    #[test]
    fn rank_loss_examples() {
        let pair = [RankPair { easy: 0, hard: 1 }];
        assert_eq!(loss_rank(&pair, &[1.5, 1.0], 0.5), 0.0);
        assert_eq!(loss_rank(&pair, &[0.3, 0.3], 0.5), 0.5);
        assert_eq!(loss_rank(&[], &[0.3, 0.3], 0.5), 0.0);
        // beyond the margin, pushing the easy logit further changes nothing
        assert_eq!(loss_rank(&pair, &[2.0, 1.0], 0.5), loss_rank(&pair, &[2.7, 1.0], 0.5));
    }

    #[test]
    fn pair_cap_is_deterministic() {
        let targets: Vec<_> = (0..40).map(|i| target(i as f64 / 40.0, 0.0)).collect();
        let pairs = build_rank_pairs(&targets, 0.0);
        assert!(pairs.len() > 512);
        let a = cap_pairs(pairs.clone(), 512, &mut RngState::new(3));
        let b = cap_pairs(pairs, 512, &mut RngState::new(3));
        assert_eq!(a.len(), 512);
        assert_eq!(a, b);
    }

    fn random_batch(rng: &mut RngState, n: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<EstimatorTarget>) {
        let feats = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
        let targets = (0..n)
            .map(|i| EstimatorTarget { prompt_id: i, a: f64::from(rng.random_range(0..=8u8)) / 8.0, p: rng.random() })
            .collect();
        (feats, targets)
    }

    #[test]
    fn weight_zeroing_reduces_to_mean_bce() {
        let mut rng = RngState::new(12);
        let model = EstimatorModel::init(3, 5, &mut rng);
        let (feats, targets) = random_batch(&mut rng, 6, 3);
        let batch: Vec<_> = feats.iter().zip(&targets).map(|(f, &t)| Example { features: f, target: t }).collect();
        let pairs = build_rank_pairs(&targets, 0.25);
        let cfg = EstimatorLossConfig { w_distill: 0.0, w_rank: 0.0, ..EstimatorLossConfig::default() };
        let (losses, _) = joint_loss_and_grad(&model, &batch, &pairs, &cfg);
        let oracle = batch.iter().map(|ex| loss_de(estimator_forward(&model, ex.features).0, ex.target.a)).sum::<f64>() / 6.0;
        assert!((losses.joint - oracle).abs() < 1e-14);
    }

    #[test]
    fn joint_gradient_matches_finite_differences() {
        let mut rng = RngState::new(77);
        for form in [LossForm::Bce, LossForm::Mse] {
            let model = EstimatorModel::init(4, 6, &mut rng);
            let (feats, targets) = random_batch(&mut rng, 10, 4);
            let batch: Vec<_> = feats.iter().zip(&targets).map(|(f, &t)| Example { features: f, target: t }).collect();
            let pairs = build_rank_pairs(&targets, 0.25);
            let cfg = EstimatorLossConfig { loss_form: form, margin: 5.0, ..EstimatorLossConfig::default() };
            let (_, grad) = joint_loss_and_grad(&model, &batch, &pairs, &cfg);
            let h = 1e-5;
            for k in 0..model.num_params() {
                let mut up = model.clone();
                let mut dn = model.clone();
                up.params[k] += h;
                dn.params[k] -= h;
                let fd = (joint_loss(&up, &batch, &pairs, &cfg) - joint_loss(&dn, &batch, &pairs, &cfg)) / (2.0 * h);
                let scale = grad[k].abs().max(fd.abs()).max(1e-3);
                assert!((grad[k] - fd).abs() / scale < 1e-5, "{form:?} param {k}: {} vs {fd}", grad[k]);
            }
        }
    }

    #[test]
    fn perfect_predictions_have_negligible_loss() {
        // adv head bias +40 for everything, targets A = 1 and P = 1 → BCE ≈ 0, no pairs
        let mut model = EstimatorModel::zeros(2, 2);
        let l = model.layout();
        model.params[l.adv_b] = 40.0;
        model.params[l.ppl_b] = 40.0;
        let feats = [vec![1.0, 0.3], vec![1.0, -0.2]];
        let batch: Vec<_> = feats.iter().map(|f| Example { features: f, target: target(1.0, 1.0) }).collect();
        let (losses, grad) = joint_loss_and_grad(&model, &batch, &[], &EstimatorLossConfig::default());
        assert!(losses.joint < 1e-15);
        assert!(grad.iter().map(|g| g * g).sum::<f64>().sqrt() < 1e-8);
    }

    #[test]
    fn zero_gradient_update_only_bumps_version() {
        let model = EstimatorModel::init(3, 4, &mut RngState::new(1));
        let mut adam = AdamState::new(model.num_params());
        let next = estimator_update(&model, &vec![0.0; model.num_params()], &mut adam, 1e-2).unwrap();
        assert_eq!(next.params, model.params);
        assert_eq!(next.version, model.version + 1);
    }

    #[test]
    fn non_finite_gradient_is_a_training_fault() {
        let model = EstimatorModel::zeros(2, 2);
        let mut adam = AdamState::new(model.num_params());
        let mut grad = vec![0.0; model.num_params()];
        grad[3] = f64::NAN;
        assert!(matches!(estimator_update(&model, &grad, &mut adam, 1e-2), Err(Error::TrainingFault { .. })));
    }

    #[test]
    fn loss_decreases_on_separable_batch() {
        let mut rng = RngState::new(2);
        let model = EstimatorModel::init(3, 16, &mut rng);
        let prompts: Vec<Prompt> = (0..16).map(|i| Prompt::new(i, -2.0 + 0.25 * i as f64, &[0.1 * i as f64])).collect();
        let targets: Vec<_> = prompts
            .iter()
            .map(|p| {
                // hard targets, so the irreducible part of every term is zero
                let a = f64::from(u8::from(p.latent_difficulty < 0.0));
                EstimatorTarget { prompt_id: p.id, a, p: a }
            })
            .collect();
        let refs: Vec<&Prompt> = prompts.iter().collect();
        let mut online = OnlineEstimator::new(model, EstimatorLossConfig::default(), RngState::new(9));
        let losses: Vec<f64> = (0..100).map(|_| online.train(&refs, &targets).unwrap().joint).collect();
        // Adam is not a descent method step by step, so compare 10-step windows
        let windows: Vec<f64> = losses.chunks(10).map(|c| c.iter().sum::<f64>() / 10.0).collect();
        assert!(windows.windows(2).all(|w| w[1] < w[0]), "{windows:?}");
        assert!(losses[99] < 0.2 * losses[0], "{} -> {}", losses[0], losses[99]);
    }

    #[test]
    fn training_is_deterministic() {
        let prompts: Vec<Prompt> = (0..8).map(|i| Prompt::new(i, i as f64 - 4.0, &[0.2])).collect();
        let refs: Vec<&Prompt> = prompts.iter().collect();
        let targets: Vec<_> = prompts.iter().map(|p| EstimatorTarget { prompt_id: p.id, a: sigmoid(-p.latent_difficulty), p: 0.3 }).collect();
        let run = || {
            let model = EstimatorModel::init(3, 8, &mut RngState::new(4));
            let mut online = OnlineEstimator::new(model, EstimatorLossConfig::default(), RngState::new(5));
            for _ in 0..10 {
                online.train(&refs, &targets).unwrap();
            }
            online.model
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn snapshot_round_trip() {
        let model = EstimatorModel::init(5, 7, &mut RngState::new(8));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("est.json");
        model.save(&path).unwrap();
        assert_eq!(EstimatorModel::load(&path).unwrap(), model);
    }

    proptest! {
        #[test]
        fn bce_gradient_is_prediction_error(x in -30.0f64..30.0, a in 0.0f64..=1.0) {
            prop_assert_eq!(loss_de_grad(x, a), sigmoid(x) - a);
            let h = 1e-6;
            let fd = (loss_de(x + h, a) - loss_de(x - h, a)) / (2.0 * h);
            prop_assert!((fd - (sigmoid(x) - a)).abs() < 1e-7);
        }

        #[test]
        fn mse_gradient_is_attenuated(x in -30.0f64..30.0, a in 0.0f64..=1.0) {
            let err = (sigmoid(x) - a).abs();
            prop_assert!(loss_mse_grad(x, a).abs() <= 0.25 * err + 1e-18);
        }

        #[test]
        fn hinge_flat_beyond_margin(e in -5.0f64..5.0, extra in 0.0f64..3.0, bump in 0.0f64..3.0) {
            let pair = [RankPair { easy: 0, hard: 1 }];
            let hard = e - 0.5 - extra - 1e-9;
            prop_assert_eq!(loss_rank(&pair, &[e, hard], 0.5), 0.0);
            prop_assert_eq!(loss_rank(&pair, &[e + bump, hard], 0.5), 0.0);
        }
    }
}
