//! Prompts, prompt pools and the numeric primitives shared by every module.
//!
//! A prompt is a feature vector `[1, -difficulty, noise...]`. The bias slot
//! lets linear models learn an offset, the second slot carries the true
//! difficulty, and the remaining slots are distractors the estimator has to
//! learn to ignore.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;

/// Logistic function, stable for any finite input.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln σ(x)`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dimension mismatch in dot product");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: usize,
    #[serde(rename = "difficulty")]
    pub latent_difficulty: f64,
    pub features: Vec<f64>,
}

impl Prompt {
    /// Builds the feature vector from a difficulty and distractor values.
    pub fn new(id: usize, latent_difficulty: f64, noise: &[f64]) -> Self {
        let mut features = Vec::with_capacity(2 + noise.len());
        features.push(1.0);
        features.push(-latent_difficulty);
        features.extend_from_slice(noise);
        Self { id, latent_difficulty, features }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// Distribution of latent difficulty (logit units; higher is harder).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DifficultyProfile {
    Uniform { lo: f64, hi: f64 },
    /// Three-component mixture: `easy_mass` uniform on
    /// `[mid_lo - easy_tail, mid_lo]`, `hard_mass` uniform on
    /// `[mid_hi, mid_hi + hard_tail]`, and the remainder uniform on
    /// `[mid_lo, mid_hi]`.
    JShaped {
        easy_mass: f64,
        hard_mass: f64,
        mid_lo: f64,
        mid_hi: f64,
        #[serde(default = "default_easy_tail")]
        easy_tail: f64,
        #[serde(default = "default_hard_tail")]
        hard_tail: f64,
    },
    /// Two unit-variance normal clusters; `mix` is the probability of the easy one.
    TwoCluster { mu_easy: f64, mu_hard: f64, mix: f64 },
}

fn default_easy_tail() -> f64 {
    2.5
}

fn default_hard_tail() -> f64 {
    9.5
}

impl DifficultyProfile {
    /// J-shaped profile with the default tail widths.
    pub fn j_shaped(easy_mass: f64, hard_mass: f64, mid_lo: f64, mid_hi: f64) -> Self {
        DifficultyProfile::JShaped {
            easy_mass,
            hard_mass,
            mid_lo,
            mid_hi,
            easy_tail: default_easy_tail(),
            hard_tail: default_hard_tail(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |key: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("pool.profile.{key}"), "must be finite"))
            }
        };
        match *self {
            DifficultyProfile::Uniform { lo, hi } => {
                finite("lo", lo)?;
                finite("hi", hi)?;
                if lo > hi {
                    return Err(Error::config("pool.profile.lo", format!("lo {lo} exceeds hi {hi}")));
                }
            }
            DifficultyProfile::JShaped { easy_mass, hard_mass, mid_lo, mid_hi, easy_tail, hard_tail } => {
                for (k, v) in [
                    ("easy_mass", easy_mass),
                    ("hard_mass", hard_mass),
                    ("mid_lo", mid_lo),
                    ("mid_hi", mid_hi),
                    ("easy_tail", easy_tail),
                    ("hard_tail", hard_tail),
                ] {
                    finite(k, v)?;
                }
                if easy_mass < 0.0 {
                    return Err(Error::config("pool.profile.easy_mass", "must be nonnegative"));
                }
                if hard_mass < 0.0 {
                    return Err(Error::config("pool.profile.hard_mass", "must be nonnegative"));
                }
                if easy_mass + hard_mass > 1.0 + 1e-12 {
                    return Err(Error::config(
                        "pool.profile.hard_mass",
                        "easy_mass + hard_mass must not exceed 1",
                    ));
                }
                if mid_lo > mid_hi {
                    return Err(Error::config("pool.profile.mid_lo", "mid_lo exceeds mid_hi"));
                }
                if easy_tail < 0.0 || hard_tail < 0.0 {
                    return Err(Error::config("pool.profile.easy_tail", "tail widths must be nonnegative"));
                }
            }
            DifficultyProfile::TwoCluster { mu_easy, mu_hard, mix } => {
                finite("mu_easy", mu_easy)?;
                finite("mu_hard", mu_hard)?;
                if !(0.0..=1.0).contains(&mix) {
                    return Err(Error::config("pool.profile.mix", "must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut RngState) -> f64 {
        let uniform = |rng: &mut RngState, lo: f64, hi: f64| {
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        };
        match *self {
            DifficultyProfile::Uniform { lo, hi } => uniform(rng, lo, hi),
            DifficultyProfile::JShaped { easy_mass, hard_mass, mid_lo, mid_hi, easy_tail, hard_tail } => {
                let u: f64 = rng.random();
                if u < easy_mass {
                    uniform(rng, mid_lo - easy_tail, mid_lo)
                } else if u < easy_mass + hard_mass {
                    uniform(rng, mid_hi, mid_hi + hard_tail)
                } else {
                    uniform(rng, mid_lo, mid_hi)
                }
            }
            DifficultyProfile::TwoCluster { mu_easy, mu_hard, mix } => {
                let u: f64 = rng.random();
                let mu = if u < mix { mu_easy } else { mu_hard };
                let z: f64 = rand_distr::StandardNormal.sample(rng);
                mu + z
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptPool {
    pub prompts: Vec<Prompt>,
    pub profile: Option<DifficultyProfile>,
}

impl PromptPool {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// Feature dimension shared by all prompts (0 for an empty pool).
    pub fn dim(&self) -> usize {
        self.prompts.first().map_or(0, Prompt::dim)
    }

    pub fn get(&self, id: usize) -> &Prompt {
        &self.prompts[id]
    }

    /// Writes one JSON record per prompt.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for p in &self.prompts {
            let line = serde_json::to_string(p).expect("prompt serializes");
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut prompts = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let p: Prompt = serde_json::from_str(&line).map_err(|e| Error::Record {
                path: path.into(),
                line: i + 1,
                message: e.to_string(),
            })?;
            prompts.push(p);
        }
        let pool = Self { prompts, profile: None };
        pool.check().map_err(|message| Error::Record { path: path.into(), line: 0, message })?;
        Ok(pool)
    }

    fn check(&self) -> std::result::Result<(), String> {
        let dim = self.dim();
        for (i, p) in self.prompts.iter().enumerate() {
            if p.id != i {
                return Err(format!("prompt ids must be contiguous from 0, found {} at position {i}", p.id));
            }
            if p.dim() != dim || dim < 2 {
                return Err(format!("prompt {i} has feature length {}, expected {dim} (at least 2)", p.dim()));
            }
            if !p.latent_difficulty.is_finite() || p.features.iter().any(|x| !x.is_finite()) {
                return Err(format!("prompt {i} has non-finite values"));
            }
        }
        Ok(())
    }
}

/// Draws `n` prompts from `profile` with `noise_dims` Gaussian distractors of scale `noise_scale`.
pub fn generate_pool(
    profile: &DifficultyProfile,
    n: usize,
    noise_dims: usize,
    noise_scale: f64,
    rng: &mut RngState,
) -> Result<PromptPool> {
    profile.validate()?;
    if n == 0 {
        return Err(Error::config("pool.size", "must be at least 1"));
    }
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(Error::config("pool.noise_scale", "must be finite and nonnegative"));
    }
    let noise = Normal::new(0.0, noise_scale).expect("validated scale");
    let mut noise_buf = vec![0.0; noise_dims];
    let prompts = (0..n)
        .map(|id| {
            let d = profile.sample(rng);
            for slot in noise_buf.iter_mut() {
                *slot = noise.sample(rng);
            }
            Prompt::new(id, d, &noise_buf)
        })
        .collect();
    Ok(PromptPool { prompts, profile: Some(profile.clone()) })
}
