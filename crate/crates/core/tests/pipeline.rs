use depo_core::estimator::predict_difficulty_score;
use depo_core::experiment::{
    build_pool, read_metrics, route_sweep, run_experiment, run_on_pool, train_to_dir, ExperimentConfig, MetricsWriter,
};
use depo_core::router::{cascade_eval, RouterConfig};
use depo_core::{Error, Prompt, PromptPool, Regime, RngState};

fn small(regime: Regime, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { regime, seed, steps: 120, batch_size: 16, ..ExperimentConfig::default() };
    cfg.pool.size = 400;
    cfg.filter.warmup_steps = 20;
    cfg.offline.stage_interval = 40;
    cfg.resolved().unwrap()
}

fn trajectory(cfg: &ExperimentConfig) -> (Vec<Option<f64>>, Vec<f64>, Vec<u64>) {
    let run = run_experiment(cfg).unwrap();
    let rewards = run.metrics.iter().map(|m| m.mean_reward).collect();
    let versions = run.metrics.iter().map(|m| m.policy_version).collect();
    (rewards, run.policy.theta, versions)
}

#[test]
fn regime_reductions_agree_with_grpo() {
    let grpo = trajectory(&small(Regime::Grpo, 3));
    let mut depo = small(Regime::Depo, 3);
    depo.filter.enabled = false;
    let mut dapo = small(Regime::Dapo, 3);
    dapo.dapo.max_oversample = 1.0;
    dapo.dapo.discard_uniform = false;
    assert_eq!(trajectory(&depo), grpo);
    assert_eq!(trajectory(&dapo), grpo);
}

#[test]
fn degenerate_runs_complete() {
    for regime in Regime::ALL {
        let mut cfg = small(regime, 1);
        cfg.steps = 0;
        assert!(run_experiment(&cfg).unwrap().metrics.is_empty());

        let mut cfg = small(regime, 1);
        cfg.group_size = 2;
        cfg.steps = 30;
        let cfg = cfg.resolved().unwrap();
        assert_eq!(run_experiment(&cfg).unwrap().metrics.len(), 30);
    }
    // a single prompt never faults
    let one = PromptPool { prompts: vec![Prompt::new(0, 0.3, &[0.1])], profile: None };
    for regime in [Regime::Grpo, Regime::Depo, Regime::Dapo] {
        let cfg = small(regime, 2);
        let run = run_on_pool(&cfg, &one, None::<&mut MetricsWriter<std::io::Sink>>).unwrap();
        assert_eq!(run.metrics.len(), cfg.steps);
        assert!(run.policy.theta.iter().all(|t| t.is_finite()));
    }
}

#[test]
fn offline_stages_charge_full_evaluations() {
    let cfg = small(Regime::Offline, 4);
    let run = run_experiment(&cfg).unwrap();
    let k = cfg.k_eval() as f64;
    for (step, cost) in run.ledger.steps.iter().enumerate() {
        let train = 16.0 * 8.0;
        let eval = if step % 40 == 0 { 400.0 * k } else { 0.0 };
        assert_eq!(cost.rollout, train + eval, "step {step}");
    }
}

#[test]
fn pruned_to_nothing_is_a_configuration_error() {
    let mut cfg = small(Regime::Offline, 4);
    // an unreachable band: no prompt can score strictly inside a point interval this narrow
    cfg.offline.keep_lo = 0.51;
    cfg.offline.keep_hi = 0.52;
    let dir = tempfile::tempdir().unwrap();
    match train_to_dir(&cfg, dir.path()) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "offline.keep_lo"),
        other => panic!("expected a configuration error, got {:?}", other.map(|r| r.metrics.len())),
    }
    let text = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert!(text.lines().last().unwrap().contains("\"kind\":\"fault\""));
}

#[test]
fn depo_refill_keeps_full_batches() {
    let mut cfg = small(Regime::Depo, 5);
    cfg.filter.refill = true;
    let run = run_experiment(&cfg).unwrap();
    let full = run.metrics.iter().filter(|m| m.kept == 16).count();
    assert!(full as f64 >= 0.95 * run.metrics.len() as f64, "{full}");
    assert!(run.metrics.iter().all(|m| (0.0..=1.0).contains(&m.filter_ratio)));
}

#[test]
fn config_file_round_trip_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Regime::Depo, 8);
    let first = train_to_dir(&cfg, &dir.path().join("a")).unwrap();
    let reloaded = ExperimentConfig::load(&dir.path().join("a/config.toml")).unwrap();
    assert_eq!(reloaded, cfg);
    let second = run_experiment(&reloaded).unwrap();
    assert_eq!(first.metrics, second.metrics);
    let (echo, steps) = read_metrics(&dir.path().join("a/metrics.jsonl")).unwrap();
    assert_eq!(echo.unwrap(), cfg);
    assert_eq!(steps, first.metrics);
}

#[test]
fn pool_file_drives_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Regime::Grpo, 9);
    let pool = build_pool(&cfg).unwrap();
    let path = dir.path().join("pool.jsonl");
    pool.save(&path).unwrap();
    let mut from_file = cfg.clone();
    from_file.pool.file = Some(path);
    assert_eq!(run_experiment(&from_file).unwrap().metrics, run_experiment(&cfg).unwrap().metrics);
}

#[test]
fn router_extremes() {
    let mut cfg = small(Regime::Depo, 6);
    cfg.router.queries = 300;
    cfg.router.estimator_steps = 100;
    cfg.router.taus = vec![0.0, 0.3, 0.5, 0.7, 0.75];
    let out = route_sweep(&cfg).unwrap();
    let r0 = &out.reports[0].overall;
    assert_eq!(r0.accuracy, r0.small_only_accuracy);
    let max_score = out.queries.prompts.iter().map(|p| predict_difficulty_score(&out.estimator, p)).fold(0.0, f64::max);
    if max_score < 1.0 {
        let tau = (max_score + 1e-12).min(1.0);
        let rc = RouterConfig::new(tau, out.small.clone(), out.large.clone(), 8).unwrap();
        let top = cascade_eval(&out.queries, &out.estimator, &rc, &RngState::new(cfg.seed)).overall;
        assert_eq!(top.accuracy, top.large_only_accuracy);
        assert_eq!(top.queries_to_small, 0);
    }
    for r in &out.reports {
        for b in &r.buckets {
            assert!(b.small_only_accuracy <= b.accuracy && b.accuracy <= b.large_only_accuracy);
        }
    }
}
