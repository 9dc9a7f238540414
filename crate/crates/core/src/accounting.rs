//! Cost ledgers in abstract units.
//!
//! One unit is one response-level operation:
//!
//! | category      | charged per                                              |
//! |---------------|----------------------------------------------------------|
//! | `sample`      | response entering the actor update (log-probs + update)  |
//! | `rollout`     | response generated                                       |
//! | `adv_compute` | group whose advantages are computed                      |
//! | `reward`      | response graded                                          |
//! | `estimator`   | prompt scored by, or trained into, the estimator         |
//!
//! [`UnitWeights`] translate units into pseudo-seconds for totals.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheduler::Regime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostCategory {
    Sample,
    Rollout,
    AdvCompute,
    Reward,
    Estimator,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepCost {
    pub sample: f64,
    pub rollout: f64,
    pub adv_compute: f64,
    pub reward: f64,
    pub estimator: f64,
}

impl StepCost {
    fn slot(&mut self, category: CostCategory) -> &mut f64 {
        match category {
            CostCategory::Sample => &mut self.sample,
            CostCategory::Rollout => &mut self.rollout,
            CostCategory::AdvCompute => &mut self.adv_compute,
            CostCategory::Reward => &mut self.reward,
            CostCategory::Estimator => &mut self.estimator,
        }
    }

    /// Unweighted sum of all categories.
    pub fn units(&self) -> f64 {
        self.sample + self.rollout + self.adv_compute + self.reward + self.estimator
    }

    pub fn weighted_total(&self, w: &UnitWeights) -> f64 {
        self.sample * w.sample
            + self.rollout * w.rollout
            + self.adv_compute * w.adv_compute
            + self.reward * w.reward
            + self.estimator * w.estimator
    }

    fn add(&mut self, other: &StepCost) {
        self.sample += other.sample;
        self.rollout += other.rollout;
        self.adv_compute += other.adv_compute;
        self.reward += other.reward;
        self.estimator += other.estimator;
    }

    fn weighted(&self, w: &UnitWeights) -> StepCost {
        StepCost {
            sample: self.sample * w.sample,
            rollout: self.rollout * w.rollout,
            adv_compute: self.adv_compute * w.adv_compute,
            reward: self.reward * w.reward,
            estimator: self.estimator * w.estimator,
        }
    }
}

/// Pseudo-seconds per unit. A forward or backward pass of the estimator on
/// one prompt is far cheaper than generating a response, hence the low
/// default estimator weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnitWeights {
    pub sample: f64,
    pub rollout: f64,
    pub adv_compute: f64,
    pub reward: f64,
    pub estimator: f64,
}

impl Default for UnitWeights {
    fn default() -> Self {
        Self { sample: 1.0, rollout: 1.0, adv_compute: 1.0, reward: 1.0, estimator: 0.1 }
    }
}

impl UnitWeights {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("sample", self.sample),
            ("rollout", self.rollout),
            ("adv_compute", self.adv_compute),
            ("reward", self.reward),
            ("estimator", self.estimator),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, "unit weights must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub weights: UnitWeights,
    pub steps: Vec<StepCost>,
    current: StepCost,
}

impl CostLedger {
    pub fn new(weights: UnitWeights) -> Self {
        Self { weights, steps: Vec::new(), current: StepCost::default() }
    }

    pub fn charge(&mut self, category: CostCategory, amount: f64) {
        assert!(amount >= 0.0, "cost charges must be nonnegative, got {amount}");
        *self.current.slot(category) += amount;
    }

    /// Costs charged since the last [`CostLedger::end_step`].
    pub fn current(&self) -> &StepCost {
        &self.current
    }

    /// Closes the current step and returns its record.
    pub fn end_step(&mut self) -> StepCost {
        let record = std::mem::take(&mut self.current);
        self.steps.push(record);
        record
    }

    pub fn totals(&self) -> StepCost {
        let mut t = StepCost::default();
        for s in &self.steps {
            t.add(s);
        }
        t
    }

    pub fn weighted_total(&self) -> f64 {
        self.totals().weighted_total(&self.weights)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub regime: Regime,
    /// Weighted per-category totals.
    pub cost: StepCost,
    pub total: f64,
    pub ratio_vs_grpo: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub steps: usize,
    pub rows: Vec<SummaryRow>,
}

impl CostSummary {
    pub fn row(&self, regime: Regime) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.regime == regime)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("regime,sample,rollout,adv_compute,reward,estimator,total,ratio_vs_grpo\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.regime, r.cost.sample, r.cost.rollout, r.cost.adv_compute, r.cost.reward, r.cost.estimator, r.total, r.ratio_vs_grpo
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Per-regime weighted totals and their ratio to the GRPO row.
pub fn summarize(ledgers: &[(Regime, &CostLedger)]) -> Result<CostSummary> {
    let Some((_, first)) = ledgers.first() else {
        return Err(Error::Comparison("no ledgers to compare".into()));
    };
    let steps = first.steps.len();
    if let Some((regime, l)) = ledgers.iter().find(|(_, l)| l.steps.len() != steps) {
        return Err(Error::Comparison(format!("{regime} ran {} steps, expected {steps}", l.steps.len())));
    }
    let grpo_total = ledgers
        .iter()
        .find(|(r, _)| *r == Regime::Grpo)
        .map(|(_, l)| l.weighted_total())
        .ok_or_else(|| Error::Comparison("a grpo ledger is required as the baseline".into()))?;
    let rows = ledgers
        .iter()
        .map(|(regime, l)| {
            let cost = l.totals().weighted(&l.weights);
            let total = cost.units();
            SummaryRow { regime: *regime, cost, total, ratio_vs_grpo: total / grpo_total }
        })
        .collect();
    Ok(CostSummary { steps, rows })
}
