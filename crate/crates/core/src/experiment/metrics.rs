use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::accounting::StepCost;
use crate::error::{Error, Result};
use crate::scheduler::Regime;

/// Everything logged for one training step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub regime: Regime,
    /// Mean reward over the responses that entered the update; `None` when no
    /// group was rolled out.
    pub mean_reward: Option<f64>,
    pub filter_ratio: f64,
    pub candidates_seen: usize,
    pub kept: usize,
    pub dropped: usize,
    pub groups_rolled_out: usize,
    pub informative_groups: usize,
    pub short_batch: bool,
    pub update_skipped: bool,
    pub loss_de: f64,
    pub loss_distill: f64,
    pub loss_rank: f64,
    pub loss_joint: f64,
    /// Mean |score − realized group mean| over this step's groups, using the
    /// estimator before its update.
    pub tracking_mae: Option<f64>,
    pub mean_predicted: Option<f64>,
    pub mean_realized: Option<f64>,
    pub mean_abs_advantage: f64,
    pub kl: f64,
    pub cost: StepCost,
    pub cost_weighted: f64,
    pub policy_version: u64,
    pub estimator_version: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Config { config: Box<ExperimentConfig> },
    Step(Box<StepMetrics>),
    /// Written before a run aborts.
    Fault { step: usize, detail: String },
}

/// Line-delimited JSON sink: one config record, then one record per step.
pub struct MetricsWriter<W: Write> {
    out: W,
    last_step: Option<usize>,
}

impl MetricsWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(BufWriter::new(file)))
    }
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out, last_step: None }
    }

    fn line(&mut self, record: &Record) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")
    }

    pub fn config(&mut self, cfg: &ExperimentConfig) -> std::io::Result<()> {
        self.line(&Record::Config { config: Box::new(cfg.clone()) })
    }

    pub fn step(&mut self, m: &StepMetrics) -> std::io::Result<()> {
        if let Some(last) = self.last_step {
            assert!(m.step > last, "step records must be strictly increasing ({} after {last})", m.step);
        }
        self.last_step = Some(m.step);
        self.line(&Record::Step(Box::new(m.clone())))
    }

    pub fn fault(&mut self, step: usize, detail: &str) -> std::io::Result<()> {
        self.line(&Record::Fault { step, detail: detail.to_string() })
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Reads a metrics file back; returns the config record (if any) and the steps.
pub fn read_metrics(path: &Path) -> Result<(Option<ExperimentConfig>, Vec<StepMetrics>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut config = None;
    let mut steps = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line)
            .map_err(|e| Error::Record { path: PathBuf::from(path), line: i + 1, message: e.to_string() })?;
        match record {
            Record::Config { config: c } => config = Some(*c),
            Record::Step(m) => steps.push(*m),
            Record::Fault { .. } => {}
        }
    }
    Ok((config, steps))
}

/// Mean of `f` over steps at or after `from`, skipping missing values.
pub fn mean_over(metrics: &[StepMetrics], from: usize, f: impl Fn(&StepMetrics) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = metrics.iter().filter(|m| m.step >= from).filter_map(f).collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut w = MetricsWriter::create(&path).unwrap();
        w.config(&ExperimentConfig::default().resolved().unwrap()).unwrap();
        for step in 0..3 {
            w.step(&StepMetrics { step, mean_reward: Some(0.5), ..StepMetrics::default() }).unwrap();
        }
        w.flush().unwrap();
        drop(w);
        let (cfg, steps) = read_metrics(&path).unwrap();
        assert!(cfg.is_some());
        assert_eq!(steps.iter().map(|m| m.step).collect::<Vec<_>>(), vec![0, 1, 2]);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().next().unwrap().contains("\"kind\":\"config\""));
    }

    #[test]
    #[should_panic(expected = "strictly increasing")]
    fn out_of_order_steps_panic() {
        let mut w = MetricsWriter::new(Vec::new());
        w.step(&StepMetrics { step: 2, ..StepMetrics::default() }).unwrap();
        w.step(&StepMetrics { step: 2, ..StepMetrics::default() }).unwrap();
    }

    #[test]
    fn bad_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, "{\"kind\":\"step\",\"step\":0}\nnot json\n").unwrap();
        match read_metrics(&path) {
            Err(Error::Record { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mean_over_skips_missing() {
        let ms: Vec<StepMetrics> = (0..4)
            .map(|step| StepMetrics { step, mean_reward: if step == 2 { None } else { Some(step as f64) }, ..Default::default() })
            .collect();
        assert_eq!(mean_over(&ms, 1, |m| m.mean_reward), Some(2.0));
        assert_eq!(mean_over(&ms, 9, |m| m.mean_reward), None);
    }
}
