//! One-level unsymmetric collocation: assemble on level `j` trial centers
//! against level `j + 1` test points, solve, and evaluate `s(x) = Σ c_j Φ_δ(x − y_j)`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_level_with, FillSampling, LevelGeometry, Point, Point2};
use crate::kernel::{ScaledKernel, WendlandKernel};
use crate::linalg::{
    assemble, cg_normal_solve, residual_inf, CgOptions, CollocationSystem, ResidualNorms, SolveOutcome,
    StoppingRule, Storage, TestPoints,
};
use crate::metrics::{tolerance_exponent, LevelRow};
use crate::problem::{EllipticBvp, EllipticOperator};

/// Solver knobs shared by the one-level and multilevel drivers.
#[derive(Clone, Debug)]
pub struct LevelOptions {
    pub kernel: WendlandKernel,
    pub rule: StoppingRule,
    /// Iteration cap; `None` means `20 N²`.
    pub max_iter: Option<usize>,
    pub storage: Storage,
    pub sampling: FillSampling,
}

impl Default for LevelOptions {
    fn default() -> Self {
        LevelOptions {
            kernel: WendlandKernel::c6_2d(),
            rule: StoppingRule::Relative,
            max_iter: None,
            storage: Storage::Auto,
            sampling: FillSampling::coarse(),
        }
    }
}

impl LevelOptions {
    pub fn cg_options(&self, tol: f64, n_unknowns: usize) -> CgOptions {
        CgOptions::new(
            tol,
            self.max_iter
                .unwrap_or_else(|| CgOptions::default_max_iter(n_unknowns)),
        )
        .with_rule(self.rule)
    }
}

/// A solved level: the correction (or approximation) `Σ c_j Φ_δ(· − y_j)`.
#[derive(Clone, Debug)]
pub struct LevelSolution<const D: usize> {
    pub kernel: ScaledKernel,
    pub centers: Vec<Point<D>>,
    pub coefficients: Vec<f64>,
    pub diagnostics: SolveOutcome,
    pub residuals: ResidualNorms,
    pub level_index: usize,
}

impl<const D: usize> LevelSolution<D> {
    pub fn delta(&self) -> f64 {
        self.kernel.delta()
    }

    /// `s(x)` at one point; centers outside the support ball are skipped.
    pub fn evaluate_at(&self, x: &Point<D>) -> f64 {
        let delta = self.kernel.delta();
        let d2max = delta * delta;
        self.centers
            .iter()
            .zip(&self.coefficients)
            .filter(|(y, _)| x.distance_squared(y) < d2max)
            .map(|(y, c)| c * self.kernel.value(x, y))
            .sum()
    }

    pub fn evaluate(&self, points: &[Point<D>]) -> Vec<f64> {
        points.par_iter().map(|x| self.evaluate_at(x)).collect()
    }

    /// `(L s)(x)` at one point.
    pub fn evaluate_operator_at(&self, op: &EllipticOperator<D>, x: &Point<D>) -> Result<f64> {
        let coeffs = op.coefficients_at(x)?;
        let d2max = self.kernel.delta().powi(2);
        Ok(self
            .centers
            .iter()
            .zip(&self.coefficients)
            .filter(|(y, _)| x.distance_squared(y) < d2max)
            .map(|(y, c)| c * self.kernel.apply_with(&coeffs, x, y))
            .sum())
    }

    pub fn evaluate_operator(&self, op: &EllipticOperator<D>, points: &[Point<D>]) -> Result<Vec<f64>> {
        points
            .par_iter()
            .map(|x| self.evaluate_operator_at(op, x))
            .collect()
    }
}

impl LevelSolution<2> {
    /// Writes `x,y,coefficient` rows plus a JSON sidecar (`<path>.json`)
    /// holding the scale and level. Returns the sidecar path.
    pub fn write_csv(&self, path: &Path) -> Result<PathBuf> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "x,y,coefficient")?;
        for (p, c) in self.centers.iter().zip(&self.coefficients) {
            writeln!(w, "{},{},{}", p.x(), p.y(), c)?;
        }
        w.flush()?;
        let sidecar = sidecar_path(path);
        let meta = SolutionMeta {
            level: self.level_index,
            delta: self.delta(),
            kernel: self.kernel.base().smoothness().tag().to_string(),
            dimension: self.kernel.base().dimension(),
            sobolev_order: self.kernel.base().sobolev_order(),
            centers: self.centers.len(),
        };
        std::fs::write(&sidecar, serde_json::to_string_pretty(&meta)?)?;
        Ok(sidecar)
    }

    /// Reads a solution written by [`LevelSolution::write_csv`]. Solver
    /// diagnostics are not persisted and come back zeroed.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let meta: SolutionMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let text = std::fs::read_to_string(path)?;
        let mut centers = Vec::new();
        let mut coefficients = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let vals: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config {
                    field: format!("{}:{}", path.display(), i + 1),
                    message: e.to_string(),
                })?;
            if vals.len() != 3 {
                return Err(Error::DimensionMismatch {
                    expected: 3,
                    got: vals.len(),
                });
            }
            centers.push(Point2::xy(vals[0], vals[1]));
            coefficients.push(vals[2]);
        }
        let base = WendlandKernel::new(meta.kernel.parse()?, meta.dimension)?;
        Ok(LevelSolution {
            kernel: ScaledKernel::new(base, meta.delta)?,
            diagnostics: SolveOutcome {
                coefficients: coefficients.clone(),
                iterations: 0,
                normal_residual: 0.0,
                normal_residual_abs: 0.0,
                collocation_residual_inf: 0.0,
                converged: true,
                breakdown: false,
            },
            residuals: ResidualNorms {
                interior_inf: 0.0,
                boundary_inf: 0.0,
                combined_inf: 0.0,
            },
            centers,
            coefficients,
            level_index: meta.level,
        })
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Serialize, Deserialize)]
struct SolutionMeta {
    level: usize,
    delta: f64,
    kernel: String,
    dimension: usize,
    sobolev_order: f64,
    centers: usize,
}

/// Assembles and solves one level against arbitrary right-hand sides.
/// Returns the system alongside the solution for callers that dump it.
pub fn solve_on_geometry(
    geometry: &LevelGeometry,
    kernel: ScaledKernel,
    operator: &EllipticOperator<2>,
    rhs_interior: &(dyn Fn(&Point2) -> f64 + Sync),
    rhs_boundary: &(dyn Fn(&Point2) -> f64 + Sync),
    cg_tol: f64,
    options: &LevelOptions,
) -> Result<(LevelSolution<2>, CollocationSystem<2>)> {
    let centers = geometry.trial_centers();
    let system = assemble(
        &centers,
        TestPoints {
            interior: &geometry.interior_test,
            boundary: &geometry.boundary_test,
        },
        &kernel,
        operator,
        rhs_interior,
        rhs_boundary,
        options.storage,
    )?;
    let outcome = cg_normal_solve(&system, &options.cg_options(cg_tol, centers.len()))?;
    let residuals = residual_inf(&system, &outcome.coefficients)?;
    let solution = LevelSolution {
        kernel,
        centers,
        coefficients: outcome.coefficients.clone(),
        diagnostics: outcome,
        residuals,
        level_index: geometry.level_index,
    };
    Ok((solution, system))
}

/// Report row for a solved level; `l2_error`, `order` and `seconds` are left for the caller.
pub fn level_row(geometry: &LevelGeometry, level: &LevelSolution<2>, tolerance: f64) -> Result<LevelRow> {
    let base = level.kernel.base();
    let exponent = tolerance_exponent(base.sobolev_order(), base.dimension())?;
    let target = level.delta().powf(-base.sobolev_order()) * geometry.nominal_h.powf(exponent);
    Ok(LevelRow {
        level: geometry.level_index,
        delta: level.delta(),
        n: geometry.n_interior(),
        l2_error: None,
        order: None,
        tolerance,
        cg_iterations: level.diagnostics.iterations,
        seconds: 0.0,
        converged: level.diagnostics.converged,
        nominal_h: geometry.nominal_h,
        measured_h: geometry.measured_h,
        measured_q: geometry.measured_q,
        residual_inf: level.residuals.combined_inf,
        residual_target: target,
        residual_target_met: level.residuals.combined_inf <= target,
        delta_exceeds_theory: level.kernel.exceeds_theory_range(),
    })
}

/// One-level collocation of `bvp` on level `j` with scale `delta`.
/// A CG run that hits its cap is returned with `diagnostics.converged = false`.
pub fn solve_one_level(
    j: usize,
    delta: f64,
    bvp: &EllipticBvp<2>,
    cg_tol: f64,
    options: &LevelOptions,
) -> Result<LevelSolution<2>> {
    let geometry = build_level_with(j, &options.sampling)?;
    let kernel = ScaledKernel::new(options.kernel.clone(), delta)?;
    solve_on_geometry(
        &geometry,
        kernel,
        &bvp.operator,
        bvp.f.as_ref(),
        bvp.g.as_ref(),
        cg_tol,
        options,
    )
    .map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::poisson_benchmark;

    fn zero_bvp() -> EllipticBvp<2> {
        EllipticBvp::new(EllipticOperator::laplacian(), |_: &Point2| 0.0, |_: &Point2| 0.0)
    }

    fn level_one(tol: f64) -> (LevelSolution<2>, CollocationSystem<2>) {
        let g = build_level_with(1, &FillSampling::coarse()).unwrap();
        let bvp = poisson_benchmark();
        let k = ScaledKernel::new(WendlandKernel::c6_2d(), 2.0).unwrap();
        solve_on_geometry(
            &g,
            k,
            &bvp.operator,
            bvp.f.as_ref(),
            bvp.g.as_ref(),
            tol,
            &LevelOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_data_gives_zero_coefficients() {
        let s = solve_one_level(2, 2.0, &zero_bvp(), 1e-6, &LevelOptions::default()).unwrap();
        assert_eq!(s.diagnostics.iterations, 0);
        assert!(s.coefficients.iter().all(|c| *c == 0.0));
        assert_eq!(s.centers.len(), s.coefficients.len());
    }

    #[test]
    fn evaluation_examples() {
        let k = ScaledKernel::new(WendlandKernel::c6_2d(), 0.5).unwrap();
        let (mut s, _) = level_one(0.1);
        s.kernel = k.clone();
        s.coefficients.iter_mut().for_each(|c| *c = 0.0);
        assert!(s.evaluate(&s.centers.clone()).iter().all(|v| *v == 0.0));
        let lap = EllipticOperator::laplacian();
        assert!(s
            .evaluate_operator(&lap, &s.centers.clone())
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));

        let single = LevelSolution {
            kernel: k,
            centers: vec![Point2::xy(0.5, 0.5)],
            coefficients: vec![1.0],
            ..s
        };
        assert_eq!(single.evaluate_at(&Point2::xy(0.5, 0.5)), 4.0);
        assert_eq!(single.evaluate_at(&Point2::xy(0.0, 0.0)), 0.0);
    }

    #[test]
    fn evaluation_reproduces_the_assembled_rows() {
        let (s, sys) = level_one(1e-3);
        let mut ac = vec![0.0; sys.rhs.len()];
        sys.matrix.mul_vec(&s.coefficients, &mut ac);
        let n_int = sys.n_interior_rows();
        let lap = EllipticOperator::laplacian();
        let interior = s.evaluate_operator(&lap, &sys.row_points[..n_int]).unwrap();
        let boundary = s.evaluate(&sys.row_points[n_int..]);
        for (got, want) in interior.iter().chain(&boundary).zip(&ac) {
            assert!(
                (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                "{got} vs {want}"
            );
        }
        // b − r_B on boundary rows
        let r = sys.residual(&s.coefficients);
        for (k, v) in boundary.iter().enumerate() {
            assert!((v - (sys.rhs[n_int + k] - r[n_int + k])).abs() < 1e-12);
        }
    }

    #[test]
    fn operator_image_matches_finite_differences() {
        let (s, _) = level_one(1e-3);
        let lap = EllipticOperator::laplacian();
        let h = 1e-4;
        for p in [Point2::xy(0.3, 0.3), Point2::xy(0.61, 0.17), Point2::xy(0.9, 0.8)] {
            let exact = s.evaluate_operator_at(&lap, &p).unwrap();
            let v = |dx: f64, dy: f64| s.evaluate_at(&Point2::xy(p.x() + dx, p.y() + dy));
            let fd = (v(h, 0.0) + v(-h, 0.0) + v(0.0, h) + v(0.0, -h) - 4.0 * v(0.0, 0.0)) / (h * h);
            assert!((exact - fd).abs() <= 1e-4 * exact.abs(), "{exact} vs {fd}");
        }
    }

    #[test]
    fn csv_export_round_trip() {
        let (s, _) = level_one(0.1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("level1.csv");
        let sidecar = s.write_csv(&path).unwrap();
        assert!(sidecar.exists());
        let back = LevelSolution::read_csv(&path).unwrap();
        assert_eq!(back.centers, s.centers);
        assert_eq!(back.coefficients, s.coefficients);
        assert_eq!(back.delta(), 2.0);
        assert_eq!(back.level_index, 1);
    }
}
