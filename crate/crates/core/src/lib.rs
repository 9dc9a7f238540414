//! Difficulty-estimated policy optimization on a simulated actor.
//!
//! The crate is a desk-scale laboratory for group-relative policy
//! optimization (GRPO) with an online difficulty estimator that filters
//! prompts before they are rolled out. It contains:
//!
//! - [`sim`]: prompts, difficulty profiles, pool generation and numeric helpers.
//! - [`policy`]: a Bernoulli-outcome actor, rollout sampling and log-probabilities.
//! - [`grpo`]: group-relative advantages, the clipped surrogate, the KL
//!   penalty and the actor update.
//! - [`estimator`]: the two-head difficulty estimator and its joint loss.
//! - [`scheduler`]: batch planning for the GRPO, DEPO, DAPO and offline regimes.
//! - [`accounting`]: rollout-cost ledgers and regime comparisons.
//! - [`router`]: confidence-threshold cascade routing with a frozen estimator.
//! - [`experiment`]: configuration, the training loop, ablations and metrics.

pub mod accounting;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod grpo;
pub mod policy;
pub mod rng;
pub mod router;
pub mod scheduler;
pub mod sim;

pub use accounting::{CostCategory, CostLedger, CostSummary, StepCost, UnitWeights};
pub use error::{Error, Result};
pub use estimator::{EstimatorLossConfig, EstimatorModel, EstimatorTarget, LossForm};
pub use experiment::{ExperimentConfig, Regime, RunResult, StepMetrics};
pub use grpo::{AdvantageVector, GrpoConfig};
pub use policy::{PolicyState, RolloutGroup};
pub use rng::RngState;
pub use router::{Route, RouterConfig, RoutingReport};
pub use scheduler::{BatchPlan, FilterConfig};
pub use sim::{DifficultyProfile, Prompt, PromptPool};
