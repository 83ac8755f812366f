use std::hint::black_box;

use cfm_bench::{instance, uniform_matrix};
use cfm_core::solver::{initial_relaxed, projected_step};
use cfm_core::{discretize, project_onto_c, solve, solve_lap, ProjectionControl, SolverConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn y_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("y_step");
    for p in [50, 100, 200] {
        let pl = instance(10, p, 1);
        let cfg = SolverConfig::with_k(10);
        let y = initial_relaxed(&pl.instance, &cfg);
        let x = discretize(&y.y).expect("p ≥ k");
        group.bench_with_input(BenchmarkId::from_parameter(p), &p, |b, _| {
            b.iter(|| projected_step(&pl.instance, &y, &x, 1.0, 1e-3, &cfg))
        });
    }
    group.finish();
}

fn projection(c: &mut Criterion) {
    let mut group = c.benchmark_group("projection");
    let ctl = ProjectionControl::default();
    for k in [4, 16, 64] {
        let sizes = vec![2 * k; 10];
        let y = uniform_matrix(20 * k, k, -0.5, 1.5, 2);
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| {
            b.iter(|| project_onto_c(black_box(&y), &sizes, &ctl))
        });
    }
    group.finish();
}

fn lap(c: &mut Criterion) {
    let mut group = c.benchmark_group("lap");
    for k in [10, 50, 200] {
        let cost = uniform_matrix(2 * k, k, -1.0, 1.0, 3);
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| {
            b.iter(|| solve_lap(black_box(&cost)))
        });
    }
    group.finish();
}

fn full_solve(c: &mut Criterion) {
    let pl = instance(10, 20, 4);
    let cfg = SolverConfig::with_k(10);
    let mut group = c.benchmark_group("solve");
    group.sample_size(10);
    group.bench_function("n10_p20_k10", |b| b.iter(|| solve(&pl.instance, &cfg)));
    group.finish();
}

criterion_group!(benches, y_step, projection, lap, full_solve);
criterion_main!(benches);
