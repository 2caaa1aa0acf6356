use std::hint::black_box;

use criterion::Criterion;
use rollout::design::optimal_design;
use rollout::harness::generate_synthetic_panel;
use rollout::panel::split_blocks;
use rollout::tuner::{kmeans_stratify, minimax_error, sa_search, SaConfig};
use rollout::{Estimator, SyntheticEffect, SyntheticModel};

pub fn bench(c: &mut Criterion) {
    let history = generate_synthetic_panel(25, 60, &SyntheticModel::factor(2, 1.0), 5).unwrap();
    let blocks = split_blocks(&history, 7, 20, 2).unwrap();
    let design = optimal_design(25, 7, 5).unwrap();
    let effect = SyntheticEffect::direct(-0.1);

    let mut group = c.benchmark_group("search");
    group.bench_function("minimax_gls_20_blocks", |b| {
        b.iter(|| {
            minimax_error(
                black_box(&design),
                &blocks,
                &effect,
                &Estimator::Gls { k0: 1 },
            )
            .unwrap()
        })
    });
    group.sample_size(10);
    group.bench_function("sa_ols_200_steps", |b| {
        let mut cfg = SaConfig::new(effect.clone(), 1);
        cfg.steps_max = 200;
        b.iter(|| sa_search(black_box(&design), &blocks, &cfg, &Estimator::Ols).unwrap())
    });
    group.bench_function("kmeans_k3", |b| {
        b.iter(|| kmeans_stratify(black_box(&history), 3, 1).unwrap())
    });
    group.finish();
}
