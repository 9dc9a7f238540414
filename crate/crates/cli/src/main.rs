use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use depo_core::experiment::{
    ablate_to_dir, compare_to_dir, route_to_dir, train_to_dir, AblationAxis, ExperimentConfig,
};
use depo_core::Regime;

mod plot;

#[derive(Parser)]
#[command(name = "depo", version, about = "Difficulty-estimated policy optimization lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; defaults are used when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir` in the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the number of training steps.
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training configuration.
    Train {
        #[command(flatten)]
        common: Common,
        /// Overrides the config regime.
        #[arg(long)]
        regime: Option<Regime>,
    },
    /// Run GRPO, DEPO, DAPO and OFFLINE on matched seeds and compare costs and rewards.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep one estimator-loss axis with DEPO runs.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// rank_weight, loss_form, drop_rank or drop_rank_and_distill.
        #[arg(long, default_value = "rank_weight")]
        axis: AblationAxis,
    },
    /// Sweep the routing threshold with a frozen estimator.
    Route {
        #[command(flatten)]
        common: Common,
    },
    /// Render metric series from a run or comparison directory to SVG files.
    Plot {
        /// A metrics.jsonl file or a directory containing run outputs.
        input: PathBuf,
        /// Directory for the images (defaults to the input directory).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common, default_dir: &str) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = common.steps {
        cfg.steps = steps;
    }
    // the output location is kept out of the echoed config so reruns elsewhere stay byte-identical
    let out = common.out.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from(default_dir));
    Ok((cfg.resolved()?, out))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, regime } => {
            let (mut cfg, out) = load(&common, "runs/train")?;
            if let Some(r) = regime {
                cfg.regime = r;
            }
            let run = train_to_dir(&cfg, &out)?;
            let tail = depo_core::experiment::final_mean_reward(&run);
            println!(
                "{} run finished: {} steps, final mean reward {tail:.4}, weighted cost {:.1}, outputs in {}",
                cfg.regime,
                run.metrics.len(),
                run.ledger.weighted_total(),
                out.display()
            );
        }
        Command::Compare { common } => {
            let (cfg, out) = load(&common, "runs/compare")?;
            let cmp = compare_to_dir(&cfg, &out)?;
            println!("{:<8} {:>11} {:>12} {:>13} {:>10}", "regime", "mean_reward", "filter_ratio", "rollouts/step", "cost/grpo");
            for o in &cmp.outcomes {
                println!(
                    "{:<8} {:>11.4} {:>12.3} {:>13.1} {:>10.3}",
                    o.regime.name(),
                    o.mean_reward,
                    o.mean_filter_ratio,
                    o.rollouts_per_step,
                    o.ratio_vs_grpo
                );
            }
            println!("outputs in {}", out.display());
        }
        Command::Ablate { common, axis } => {
            let (cfg, out) = load(&common, "runs/ablate")?;
            let records = ablate_to_dir(&cfg, axis, &out)?;
            println!("{:<20} {:>12} {:>12} {:>9} {:>9}", "variant", "final_reward", "filter_ratio", "mae", "pred_std");
            for r in &records {
                println!(
                    "{:<20} {:>12.4} {:>12.3} {:>9.4} {:>9.4}",
                    r.variant, r.final_mean_reward, r.mean_filter_ratio, r.tracking_mae, r.prediction_std
                );
            }
            println!("outputs in {}", out.display());
        }
        Command::Route { common } => {
            let (cfg, out) = load(&common, "runs/route")?;
            let res = route_to_dir(&cfg, &out)?;
            println!("{:>6} {:>9} {:>8} {:>8} {:>10}", "tau", "accuracy", "n_small", "n_large", "vs_small");
            for r in &res.reports {
                let o = &r.overall;
                println!(
                    "{:>6.2} {:>9.4} {:>8} {:>8} {:>+10.4}",
                    r.tau, o.accuracy, o.queries_to_small, o.queries_to_large, o.delta_vs_small
                );
            }
            println!("outputs in {}", out.display());
        }
        Command::Plot { input, out } => {
            let out = out.unwrap_or_else(|| if input.is_dir() { input.clone() } else { parent(&input) });
            let written = plot::render(&input, &out).with_context(|| format!("plotting {}", input.display()))?;
            for path in written {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn parent(path: &Path) -> PathBuf {
    path.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("depo: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
