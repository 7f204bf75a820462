//! Parallel vs sequential throughput on the data-parallel workloads:
//! phase-diagram sweeps, lossless-prune sampling, and gradient checks.
//!
//! Run with `cargo bench -p catalyst-core`. The parallel variants need the
//! default `parallel` feature; without it both sides run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use catalyst_core::dynamics::logspace;
use catalyst_core::dynamics::sweep::{run_sweep, run_sweep_seq, SweepGrid};
use catalyst_core::verify::{
    gradient_check_models, gradient_check_models_seq, thm2_exactness, thm2_exactness_seq,
    thm3_bifurcation, thm3_bifurcation_seq,
};

fn bench_phase_sweep(c: &mut Criterion) {
    let grid = SweepGrid {
        c0: logspace(0.2, 5.0, 24),
        lambda: vec![1e-3, 3e-3, 1e-2],
        alpha: vec![0.0, 1e-4],
        dim: 16,
        max_steps: 30_000,
        seed: 7,
    };
    let mut group = c.benchmark_group("phase_sweep");
    group.sample_size(10);
    group.bench_with_input(BenchmarkId::new("parallel", grid.len()), &grid, |b, g| {
        b.iter(|| run_sweep(g))
    });
    group.bench_with_input(BenchmarkId::new("sequential", grid.len()), &grid, |b, g| {
        b.iter(|| run_sweep_seq(g))
    });
    group.finish();
}

fn bench_prune_sampling(c: &mut Criterion) {
    let (n_models, n_inputs, seed) = (64, 100, 11);
    let mut group = c.benchmark_group("lossless_prune_sampling");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("parallel", n_models), |b| {
        b.iter(|| thm2_exactness(n_models, n_inputs, seed))
    });
    group.bench_function(BenchmarkId::new("sequential", n_models), |b| {
        b.iter(|| thm2_exactness_seq(n_models, n_inputs, seed))
    });
    group.finish();
}

fn bench_bifurcation(c: &mut Criterion) {
    let (n_traj, seed) = (128, 5);
    let mut group = c.benchmark_group("bifurcation_trajectories");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("parallel", n_traj), |b| {
        b.iter(|| thm3_bifurcation(n_traj, seed))
    });
    group.bench_function(BenchmarkId::new("sequential", n_traj), |b| {
        b.iter(|| thm3_bifurcation_seq(n_traj, seed))
    });
    group.finish();
}

fn bench_gradient_checks(c: &mut Criterion) {
    let (n, seed) = (16, 21);
    let mut group = c.benchmark_group("gradient_checks");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("parallel", n), |b| {
        b.iter(|| gradient_check_models(n, seed))
    });
    group.bench_function(BenchmarkId::new("sequential", n), |b| {
        b.iter(|| gradient_check_models_seq(n, seed))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_phase_sweep,
    bench_prune_sampling,
    bench_bifurcation,
    bench_gradient_checks
);
criterion_main!(benches);
