use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use depo_core::estimator::{build_rank_pairs, joint_loss_and_grad, EstimatorLossConfig, EstimatorModel, Example};
use depo_core::experiment::{build_pool, run_on_pool, ExperimentConfig, MetricsWriter};
use depo_core::grpo::{group_advantages, grpo_objective_grad, BatchItem, GrpoConfig};
use depo_core::policy::{sample_rollouts, PolicyState};
use depo_core::scheduler::make_targets;
use depo_core::{Regime, RngState};

fn advantages(c: &mut Criterion) {
    let rewards: Vec<Vec<f64>> = (0..128).map(|i| (0..8).map(|j| f64::from(u8::from((i + j) % 3 == 0))).collect()).collect();
    c.bench_function("group_advantages/128x8", |b| {
        b.iter(|| rewards.iter().map(|r| group_advantages(black_box(r), 1e-8).values[0]).sum::<f64>())
    });
}

fn grpo_gradient(c: &mut Criterion) {
    let cfg = ExperimentConfig { batch_size: 128, ..ExperimentConfig::default() }.resolved().unwrap();
    let pool = build_pool(&cfg).unwrap();
    let policy = PolicyState::skill(pool.dim(), 0.0);
    let mut rng = RngState::new(1);
    let groups: Vec<_> = (0..128).map(|i| sample_rollouts(&policy, pool.get(i), 8, &mut rng)).collect();
    let advs: Vec<_> = groups.iter().map(|g| group_advantages(&g.rewards, 1e-8)).collect();
    let batch: Vec<BatchItem<'_>> = groups
        .iter()
        .zip(&advs)
        .map(|(group, advantages)| BatchItem { prompt: pool.get(group.prompt_id), group, advantages })
        .collect();
    let gcfg = GrpoConfig::default();
    c.bench_function("grpo_objective_grad/B128", |b| {
        b.iter(|| grpo_objective_grad(black_box(&policy.theta), &policy, &batch, &gcfg))
    });

    let targets = make_targets(&groups, &policy, &pool);
    let model = EstimatorModel::init(pool.dim(), 16, &mut rng);
    let examples: Vec<Example<'_>> =
        targets.iter().map(|&t| Example { features: &pool.get(t.prompt_id).features, target: t }).collect();
    let pairs = build_rank_pairs(&targets, 0.25);
    let ecfg = EstimatorLossConfig::default();
    c.bench_function("estimator_joint_grad/B128", |b| {
        b.iter(|| joint_loss_and_grad(black_box(&model), &examples, &pairs, &ecfg))
    });
}

fn training_steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_100_steps_B32");
    group.sample_size(10);
    for regime in Regime::ALL {
        let cfg = ExperimentConfig { regime, steps: 100, batch_size: 32, ..ExperimentConfig::default() };
        let mut cfg = cfg.resolved().unwrap();
        cfg.filter.warmup_steps = 20;
        let pool = build_pool(&cfg).unwrap();
        group.bench_function(regime.name(), |b| {
            b.iter(|| run_on_pool(&cfg, &pool, None::<&mut MetricsWriter<std::io::Sink>>).unwrap().metrics.len())
        });
    }
    group.finish();
}

criterion_group!(benches, advantages, grpo_gradient, training_steps);
criterion_main!(benches);
