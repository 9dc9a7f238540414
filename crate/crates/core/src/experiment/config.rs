use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::accounting::UnitWeights;
use crate::error::{Error, Result};
use crate::estimator::EstimatorLossConfig;
use crate::grpo::GrpoConfig;
use crate::scheduler::{FilterConfig, Regime};
use crate::sim::DifficultyProfile;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolSpec {
    pub size: usize,
    pub noise_dims: usize,
    pub noise_scale: f64,
    pub profile: DifficultyProfile,
    /// Load prompts from a line-delimited file instead of generating them.
    pub file: Option<PathBuf>,
}

impl Default for PoolSpec {
    fn default() -> Self {
        Self {
            size: 2000,
            noise_dims: 4,
            noise_scale: 1.0,
            profile: DifficultyProfile::j_shaped(0.4, 0.4, -0.5, 0.5),
            file: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySpec {
    /// Initial `θ[0]`; the difficulty weight starts at 1 and distractor weights at 0.
    pub init_bias: f64,
}

impl Default for PolicySpec {
    fn default() -> Self {
        Self { init_bias: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DapoSpec {
    pub max_oversample: f64,
    pub discard_uniform: bool,
}

impl Default for DapoSpec {
    fn default() -> Self {
        Self { max_oversample: 4.0, discard_uniform: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfflineSpec {
    pub stage_interval: usize,
    pub keep_lo: f64,
    pub keep_hi: f64,
    /// Rollouts per prompt during stage evaluation. Defaults to the group size.
    pub k_eval: Option<usize>,
}

impl Default for OfflineSpec {
    fn default() -> Self {
        Self { stage_interval: 200, keep_lo: 0.1, keep_hi: 0.9, k_eval: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RouterSpec {
    pub taus: Vec<f64>,
    /// Added to the small policy's bias to obtain the large policy.
    pub skill_shift: f64,
    pub eval_rollouts: usize,
    pub queries: usize,
    /// Steps of estimator training against the small policy.
    pub estimator_steps: usize,
    /// Use this frozen estimator instead of training one.
    pub estimator_file: Option<PathBuf>,
}

impl Default for RouterSpec {
    fn default() -> Self {
        Self {
            taus: vec![0.3, 0.5, 0.7, 0.75],
            skill_shift: 2.0,
            eval_rollouts: 8,
            queries: 2000,
            estimator_steps: 500,
            estimator_file: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub regime: Regime,
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub group_size: usize,
    pub out_dir: Option<PathBuf>,
    pub pool: PoolSpec,
    pub policy: PolicySpec,
    pub grpo: GrpoConfig,
    pub estimator: EstimatorLossConfig,
    pub filter: FilterConfig,
    pub dapo: DapoSpec,
    pub offline: OfflineSpec,
    pub costs: UnitWeights,
    pub router: RouterSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Depo,
            seed: 0,
            steps: 1000,
            batch_size: 128,
            group_size: 8,
            out_dir: None,
            pool: PoolSpec::default(),
            policy: PolicySpec::default(),
            grpo: GrpoConfig::default(),
            estimator: EstimatorLossConfig::default(),
            filter: FilterConfig::default(),
            dapo: DapoSpec::default(),
            offline: OfflineSpec::default(),
            costs: UnitWeights::default(),
            router: RouterSpec::default(),
        }
    }
}

fn section(prefix: &str, err: Error) -> Error {
    match err {
        Error::Config { key, reason } => Error::Config { key: format!("{prefix}.{key}"), reason },
        other => other,
    }
}

impl ExperimentConfig {
    /// Parses a TOML document; unknown keys are rejected.
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| Error::ConfigSyntax { path: origin.into(), message: e.to_string() })?;
        cfg.resolved()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    /// Fills derived defaults and validates every section.
    pub fn resolved(mut self) -> Result<Self> {
        self.grpo.group_size = self.group_size;
        self.filter.resolve(self.group_size);
        self.offline.k_eval.get_or_insert(self.group_size);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::config("group_size", "must be at least 2"));
        }
        if self.pool.size == 0 && self.pool.file.is_none() {
            return Err(Error::config("pool.size", "must be at least 1"));
        }
        if !(self.pool.noise_scale >= 0.0 && self.pool.noise_scale.is_finite()) {
            return Err(Error::config("pool.noise_scale", "must be finite and nonnegative"));
        }
        self.pool.profile.validate()?;
        if !self.policy.init_bias.is_finite() {
            return Err(Error::config("policy.init_bias", "must be finite"));
        }
        self.grpo.validate().map_err(|e| section("grpo", e))?;
        self.estimator.validate().map_err(|e| section("estimator", e))?;
        self.filter.validate().map_err(|e| section("filter", e))?;
        self.costs.validate().map_err(|e| section("costs", e))?;
        if !(self.dapo.max_oversample >= 1.0 && self.dapo.max_oversample.is_finite()) {
            return Err(Error::config("dapo.max_oversample", "must be at least 1"));
        }
        let off = &self.offline;
        if off.stage_interval == 0 {
            return Err(Error::config("offline.stage_interval", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&off.keep_lo) || !(0.0..=1.0).contains(&off.keep_hi) || off.keep_lo >= off.keep_hi {
            return Err(Error::config("offline.keep_lo", "need 0 <= keep_lo < keep_hi <= 1"));
        }
        if off.k_eval == Some(0) {
            return Err(Error::config("offline.k_eval", "must be at least 1"));
        }
        let r = &self.router;
        if let Some(t) = r.taus.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::config("router.taus", format!("{t} is outside [0, 1]")));
        }
        if r.eval_rollouts == 0 {
            return Err(Error::config("router.eval_rollouts", "must be at least 1"));
        }
        if r.queries == 0 {
            return Err(Error::config("router.queries", "must be at least 1"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// `k_eval` after resolution.
    pub fn k_eval(&self) -> usize {
        self.offline.k_eval.unwrap_or(self.group_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml_str(text, Path::new("test.toml"))
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = parse("regime = \"grpo\"\nseed = 11\n").unwrap();
        assert_eq!(cfg.regime, Regime::Grpo);
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.steps, 1000);
        assert_eq!(cfg.group_size, 8);
        assert_eq!(cfg.filter.warmup_steps, 100);
        assert_eq!(cfg.estimator.w_distill, 0.5);
        assert_eq!(cfg.estimator.w_rank, 3.0);
        assert_eq!(cfg.filter.keep_low, Some(1.0 / 16.0));
        assert_eq!(cfg.filter.keep_high, Some(15.0 / 16.0));
        assert_eq!(cfg.k_eval(), 8);
    }

    #[test]
    fn invalid_clip_is_named() {
        let err = parse("[grpo]\nclip_eps = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("clip_eps"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse("regime = \"depo\"\nlearning_rat = 3\n").unwrap_err();
        assert!(matches!(err, Error::ConfigSyntax { .. }));
        assert!(err.to_string().contains("learning_rat"), "{err}");
        let err = parse("[filter]\nwarmup = 3\n").unwrap_err();
        assert!(err.to_string().contains("warmup"), "{err}");
    }

    #[test]
    fn malformed_syntax_is_reported() {
        assert!(matches!(parse("regime = ").unwrap_err(), Error::ConfigSyntax { .. }));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = parse("regime = \"dapo\"\nseed = 3\n[pool.profile]\nkind = \"two_cluster\"\nmu_easy = -2.0\nmu_hard = 3.0\nmix = 0.3\n").unwrap();
        let again = parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(ExperimentConfig::load(Path::new("/nonexistent/x.toml")), Err(Error::Io { .. })));
    }

    #[test]
    fn band_and_group_validation() {
        assert!(parse("group_size = 1\n").unwrap_err().to_string().contains("group_size"));
        assert!(parse("[filter]\nkeep_low = 0.9\nkeep_high = 0.1\n").unwrap_err().to_string().contains("filter.keep_low"));
        assert!(parse("[pool.profile]\nkind = \"j_shaped\"\neasy_mass = -0.1\nhard_mass = 0.4\nmid_lo = 0.0\nmid_hi = 1.0\n")
            .unwrap_err()
            .to_string()
            .contains("easy_mass"));
    }
}
