use std::hint::black_box;

use criterion::{BenchmarkId, Criterion};
use rollout::design::{optimal_carryover_path, optimal_design, CarryoverDesignSpec};
use rollout::objective::{brute_force_optimum, ols_variance};
use rollout::ErrorCovarianceSpec;

pub fn bench(c: &mut Criterion) {
    let mut group = c.benchmark_group("designs");
    for t in [7, 20, 100] {
        group.bench_with_input(BenchmarkId::new("carryover_path_l3", t), &t, |b, &t| {
            let spec = CarryoverDesignSpec::new(3, t).unwrap();
            b.iter(|| optimal_carryover_path(black_box(&spec)).unwrap())
        });
    }
    group.bench_function("optimal_design_500x50", |b| {
        b.iter(|| optimal_design(black_box(500), black_box(50), 1).unwrap())
    });
    let design = optimal_design(50, 7, 1).unwrap();
    group.bench_function("ols_variance_50x7", |b| {
        b.iter(|| ols_variance(black_box(&design), 1.0).unwrap())
    });
    let iid = ErrorCovarianceSpec::iid(1.0).unwrap();
    group.bench_function("oracle_n10_t5", |b| {
        b.iter(|| brute_force_optimum(black_box(10), black_box(5), &iid, 0).unwrap())
    });
    group.finish();
}
