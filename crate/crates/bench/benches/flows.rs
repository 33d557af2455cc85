//! Throughput benchmarks for the hot paths: kernel applications, one full
//! implicit step, and the generalized entropy prox.

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use wjko::domain::GridDomain;
use wjko::kernels::{GaussianGridKernel, HeatKernel, HeatKernelConfig};
use wjko::laplacian::grid_laplacian;
use wjko::oracle::random_density;
use wjko::prox::{CongestionProx, EntropyProx, ProxFn};
use wjko::{jko_step, FlowParams, KernelOp};

fn bench_gaussian_apply(c: &mut Criterion) {
    let grid = GridDomain::new(64, 64, 1.0 / 64.0, None).unwrap();
    let gamma = 4.0 * grid.spacing * grid.spacing;
    let kernel = GaussianGridKernel::new(&grid, gamma).unwrap();
    let x = random_density(grid.node_count(), 1);
    c.bench_function("gaussian_apply_64x64", |b| {
        b.iter(|| kernel.apply(black_box(&x)).unwrap())
    });
}

fn bench_heat_apply(c: &mut Criterion) {
    let grid = GridDomain::new(64, 64, 1.0 / 64.0, None).unwrap();
    let lap = grid_laplacian(&grid).unwrap();
    let kernel = HeatKernel::new(
        &lap,
        HeatKernelConfig {
            gamma: 4.0 * grid.spacing * grid.spacing,
            ..HeatKernelConfig::default()
        },
    )
    .unwrap();
    let x = random_density(grid.node_count(), 2);
    c.bench_function("heat_apply_64x64_l10", |b| {
        b.iter(|| kernel.apply(black_box(&x)).unwrap())
    });
}

fn bench_jko_step(c: &mut Criterion) {
    let grid = GridDomain::new(32, 32, 1.0 / 32.0, None).unwrap();
    let gamma = 8.0 * grid.spacing * grid.spacing;
    let kernel = GaussianGridKernel::new(&grid, gamma).unwrap();
    let q = random_density(grid.node_count(), 3);
    let kappa = q.iter().cloned().fold(0.0, f64::max);
    let prox = CongestionProx::new(kappa, None).unwrap();
    let params = FlowParams {
        gamma,
        tau: gamma,
        eps: 1e-8,
        max_inner: 100_000,
    };
    c.bench_function("jko_step_congestion_32x32", |b| {
        b.iter(|| jko_step(&kernel, &prox, black_box(&q), &params).unwrap())
    });
}

fn bench_entropy_prox(c: &mut Criterion) {
    let prox = EntropyProx::uniform(1.5).unwrap();
    let q = random_density(10_000, 4);
    c.bench_function("gen_entropy_prox_10k", |b| {
        b.iter(|| prox.evaluate(black_box(&q), 0.8).unwrap())
    });
}

criterion_group!(
    benches,
    bench_gaussian_apply,
    bench_heat_apply,
    bench_jko_step,
    bench_entropy_prox
);
criterion_main!(benches);
