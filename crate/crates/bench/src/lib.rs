//! Shared fixtures for the benchmarks.

use kansa_core::geometry::{build_level_with, FillSampling, LevelGeometry};
use kansa_core::kernel::{ScaledKernel, WendlandKernel};
use kansa_core::linalg::{assemble, CollocationSystem, Storage, TestPoints};
use kansa_core::problem::poisson_benchmark;

pub fn geometry(j: usize) -> LevelGeometry {
    build_level_with(j, &FillSampling::coarse()).expect("valid level")
}

/// The benchmark system on level `j` with scale `delta`.
pub fn benchmark_system(geometry: &LevelGeometry, delta: f64, storage: Storage) -> CollocationSystem<2> {
    let bvp = poisson_benchmark();
    let kernel = ScaledKernel::new(WendlandKernel::c6_2d(), delta).expect("positive delta");
    assemble(
        &geometry.trial_centers(),
        TestPoints {
            interior: &geometry.interior_test,
            boundary: &geometry.boundary_test,
        },
        &kernel,
        &bvp.operator,
        bvp.f.as_ref(),
        bvp.g.as_ref(),
        storage,
    )
    .expect("benchmark system assembles")
}
