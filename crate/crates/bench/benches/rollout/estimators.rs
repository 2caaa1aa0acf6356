use std::hint::black_box;

use criterion::Criterion;
use rollout::design::optimal_design;
use rollout::estimators::{estimate_feasible_gls, estimate_lrme, estimate_ols};
use rollout::harness::generate_synthetic_panel;
use rollout::panel::apply_synthetic_treatment;
use rollout::{CovariateSpec, LrmeConfig, SyntheticEffect, SyntheticModel};

pub fn bench(c: &mut Criterion) {
    let design = optimal_design(50, 7, 3).unwrap();
    let control = generate_synthetic_panel(50, 7, &SyntheticModel::factor(1, 1.0), 3).unwrap();
    let panel =
        apply_synthetic_treatment(&control, &design, &SyntheticEffect::direct(-0.1)).unwrap();
    let none = CovariateSpec::none();
    let lrme = LrmeConfig::new(1, 1.0).unwrap();

    let mut group = c.benchmark_group("estimators_50x7");
    group.bench_function("ols", |b| {
        b.iter(|| estimate_ols(black_box(&panel), &design, 0, &none).unwrap())
    });
    group.bench_function("gls_k1", |b| {
        b.iter(|| estimate_feasible_gls(black_box(&panel), &design, 0, &none, 1).unwrap())
    });
    group.bench_function("lrme_k1", |b| {
        b.iter(|| estimate_lrme(black_box(&panel), &design, 0, &lrme).unwrap())
    });
    group.finish();
}
