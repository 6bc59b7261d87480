use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kansa_bench::{benchmark_system, geometry};
use kansa_core::kernel::{ScaledKernel, WendlandKernel};
use kansa_core::linalg::{cg_normal_solve, CgOptions, StoppingRule, Storage};
use kansa_core::problem::EllipticOperator;
use kansa_core::Point2;

fn kernel_evaluation(c: &mut Criterion) {
    let base = WendlandKernel::c6_2d();
    let scaled = ScaledKernel::new(base.clone(), 2.0).unwrap();
    let op = EllipticOperator::laplacian();
    let (x, y) = (Point2::xy(0.3, 0.7), Point2::xy(0.55, 0.2));
    let mut group = c.benchmark_group("kernel");
    group.bench_function("radial_derivatives", |b| {
        b.iter(|| base.radial_derivatives(black_box(0.37)).unwrap())
    });
    group.bench_function("scaled_value", |b| {
        b.iter(|| scaled.value(black_box(&x), black_box(&y)))
    });
    group.bench_function("laplacian_image", |b| {
        b.iter(|| scaled.apply_operator(&op, black_box(&x), black_box(&y)).unwrap())
    });
    group.finish();
}

fn assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("assemble");
    group.sample_size(20);
    let g = geometry(3);
    for (name, delta, storage) in [
        ("dense_delta2", 2.0, Storage::Dense),
        ("sparse_delta0.25", 0.25, Storage::Sparse),
    ] {
        group.bench_function(BenchmarkId::new("level3", name), |b| {
            b.iter(|| benchmark_system(black_box(&g), delta, storage))
        });
    }
    group.finish();
}

fn conjugate_gradients(c: &mut Criterion) {
    let mut group = c.benchmark_group("cg_normal");
    group.sample_size(10);
    for j in [2, 3] {
        let g = geometry(j);
        let system = benchmark_system(&g, 2.0, Storage::Auto);
        let n = system.shape().1;
        let tol = g.nominal_h.powf(2.4);
        let options = CgOptions::new(tol, CgOptions::default_max_iter(n)).with_rule(StoppingRule::Absolute);
        group.bench_function(BenchmarkId::new("level", j), |b| {
            b.iter(|| cg_normal_solve(black_box(&system), &options).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, kernel_evaluation, assembly, conjugate_gradients);
criterion_main!(benches);
