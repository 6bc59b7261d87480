//! Build self-checks: kernel derivatives against finite differences, Gram
//! positive definiteness, fill distance against brute force, and CG against
//! the direct least-squares solver on small benchmark systems.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{rngs::StdRng, Rng, SeedableRng};

use crate::error::Result;
use crate::geometry::{build_level_with, fill_distance, unit_square_samples, FillSampling, Point2};
use crate::kernel::{ScaledKernel, WendlandKernel};
use crate::linalg::{
    assemble, cg_normal_solve, direct_lsq_solve, CgOptions, StoppingRule, Storage, TestPoints,
};
use crate::problem::{poisson_benchmark, EllipticOperator};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelfCheckOptions {
    /// Relative error injected into the analytic derivatives before comparison.
    pub derivative_perturbation: f64,
    pub seed: u64,
}

impl Default for SelfCheckOptions {
    fn default() -> Self {
        SelfCheckOptions {
            derivative_perturbation: 0.0,
            seed: 20_240_601,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

fn outcome(name: &'static str, result: Result<(bool, String)>) -> CheckResult {
    match result {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

pub const DERIVATIVE_RADII: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Worst relative error of `φ′` (central difference of `φ`, step 1e-6) and of
/// `φ″` (central difference of `φ′`, step 1e-6) over [`DERIVATIVE_RADII`].
pub fn radial_derivative_error(kernel: &WendlandKernel, perturbation: f64) -> Result<f64> {
    let h = 1e-6;
    let mut worst = 0.0f64;
    for r in DERIVATIVE_RADII {
        let d = kernel.radial_derivatives(r)?;
        let fd1 = (kernel.radial_value(r + h)? - kernel.radial_value(r - h)?) / (2.0 * h);
        let fd2 =
            (kernel.radial_derivatives(r + h)?.first - kernel.radial_derivatives(r - h)?.first) / (2.0 * h);
        worst = worst
            .max(rel_err(d.first * (1.0 + perturbation), fd1))
            .max(rel_err(d.second * (1.0 + perturbation), fd2));
    }
    Ok(worst)
}

/// Worst relative error of the analytic Laplacian image `ΔΦ_δ(x − y)` against
/// a 5-point stencil (step 1e-4) over `pairs` random pairs in the unit square.
pub fn laplacian_error(delta: f64, pairs: usize, perturbation: f64, seed: u64) -> Result<f64> {
    let kernel = ScaledKernel::new(WendlandKernel::c6_2d(), delta)?;
    let op = EllipticOperator::laplacian();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let x = Point2::xy(rng.random(), rng.random());
        let y = Point2::xy(rng.random(), rng.random());
        let exact = kernel.apply_operator(&op, &x, &y)? * (1.0 + perturbation);
        let fd = op.apply_fd(&|p| kernel.value(p, &y), &x, 1e-4)?;
        worst = worst.max(rel_err(exact, fd));
    }
    Ok(worst)
}

pub fn check_derivatives(options: &SelfCheckOptions) -> CheckResult {
    outcome(
        "kernel derivatives vs finite differences",
        (|| {
            let radial = radial_derivative_error(&WendlandKernel::c6_2d(), options.derivative_perturbation)?;
            let lap = laplacian_error(2.0, 20, options.derivative_perturbation, options.seed)?;
            Ok((
                radial < 1e-6 && lap < 1e-5,
                format!("radial max rel err {radial:.2e} (< 1e-6), Laplacian max rel err {lap:.2e} (< 1e-5)"),
            ))
        })(),
    )
}

/// Smallest eigenvalue of the Gram matrix `[Φ_δ(x_i − x_j)]`.
pub fn gram_min_eigenvalue(points: &[Point2], delta: f64) -> Result<f64> {
    let kernel = ScaledKernel::new(WendlandKernel::c6_2d(), delta)?;
    let n = points.len();
    let gram = DMatrix::from_fn(n, n, |i, j| kernel.value(&points[i], &points[j]));
    Ok(SymmetricEigen::new(gram).eigenvalues.min())
}

pub fn check_gram(options: &SelfCheckOptions) -> CheckResult {
    outcome(
        "Gram matrix positive definite",
        (|| {
            let mut rng = StdRng::seed_from_u64(options.seed);
            let points: Vec<Point2> = (0..5).map(|_| Point2::xy(rng.random(), rng.random())).collect();
            let min = gram_min_eigenvalue(&points, 1.0)?;
            Ok((
                min > 0.0,
                format!("5 random points, delta 1, min eigenvalue {min:.3e}"),
            ))
        })(),
    )
}

fn brute_force_fill(points: &[Point2], samples: &[Point2]) -> f64 {
    samples
        .iter()
        .map(|s| points.iter().map(|p| p.distance(s)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

pub fn check_fill_distance(_: &SelfCheckOptions) -> CheckResult {
    outcome(
        "fill distance vs brute force",
        (|| {
            let sampling = FillSampling::coarse();
            let geometry = build_level_with(2, &sampling)?;
            let centers = geometry.trial_centers();
            let samples = unit_square_samples(201);
            let fast = fill_distance(&centers, &samples)?;
            let slow = brute_force_fill(&centers, &samples);
            Ok((
                (fast - slow).abs() <= 1e-12,
                format!("level 2: tree {fast:.12}, brute force {slow:.12}"),
            ))
        })(),
    )
}

/// Max difference of the CG (relative rule, tolerance `tol`) and direct
/// least-squares solutions, evaluated at the level-`j` test points.
pub fn cg_direct_gap(j: usize, delta: f64, tol: f64) -> Result<f64> {
    let bvp = poisson_benchmark();
    let geometry = build_level_with(j, &FillSampling::coarse())?;
    let kernel = ScaledKernel::new(WendlandKernel::c6_2d(), delta)?;
    let centers = geometry.trial_centers();
    let system = assemble(
        &centers,
        TestPoints {
            interior: &geometry.interior_test,
            boundary: &geometry.boundary_test,
        },
        &kernel,
        &bvp.operator,
        bvp.f.as_ref(),
        bvp.g.as_ref(),
        Storage::Auto,
    )?;
    let cg = cg_normal_solve(
        &system,
        &CgOptions::new(tol, CgOptions::default_max_iter(centers.len())).with_rule(StoppingRule::Relative),
    )?;
    let direct = direct_lsq_solve(&system)?;
    let eval =
        |c: &[f64], x: &Point2| -> f64 { centers.iter().zip(c).map(|(y, cj)| cj * kernel.value(x, y)).sum() };
    Ok(geometry
        .interior_test
        .iter()
        .chain(&geometry.boundary_test)
        .map(|x| (eval(&cg.coefficients, x) - eval(&direct, x)).abs())
        .fold(0.0, f64::max))
}

pub fn check_oracle(_: &SelfCheckOptions) -> CheckResult {
    outcome(
        "CG vs direct least squares",
        (|| {
            let gaps = [cg_direct_gap(1, 2.0, 1e-10)?, cg_direct_gap(2, 2.0, 1e-10)?];
            Ok((
                gaps.iter().all(|g| *g < 1e-6),
                format!(
                    "max gap at test points: level 1 {:.2e}, level 2 {:.2e} (< 1e-6)",
                    gaps[0], gaps[1]
                ),
            ))
        })(),
    )
}

pub fn run_all(options: &SelfCheckOptions) -> Vec<CheckResult> {
    vec![
        check_derivatives(options),
        check_gram(options),
        check_fill_distance(options),
        check_oracle(options),
    ]
}
