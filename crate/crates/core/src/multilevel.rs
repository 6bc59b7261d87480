//! Multilevel residual correction.
//!
//! Level `j` solves `L v_j = f_{j-1}` on interior test points and
//! `v_j = g_{j-1}` on boundary test points with scale `δ_j`, where
//! `f_{j-1} = f − Σ_{m<j} L v_m` and `g_{j-1} = g − Σ_{m<j} v_m`.
//! The approximation after level `k` is `u_k = Σ_{j≤k} v_j`.
//!
//! Residual data is never materialized on a grid: it is evaluated at the new
//! level's test points by summing the kernel images of earlier corrections.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::collocation::{level_row, solve_on_geometry, LevelOptions, LevelSolution};
use crate::error::{Error, Result};
use crate::geometry::{build_level_with, Point2};
use crate::kernel::ScaledKernel;
use crate::linalg::CollocationSystem;
use crate::metrics::{cg_tolerance_schedule, ConvergenceReport, EvalGrid, LevelRow, ReportMetadata};
use crate::problem::EllipticBvp;

/// How the kernel scale follows the mesh.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// Same `δ` on every level.
    FixedDelta { delta: f64 },
    /// `δ_j = h_{j-1}`; the matching mesh rule is [`theoretical_h_next`].
    Theoretical { mu: f64, sigma: f64, d: usize },
    /// `δ_j = v (h_j / μ)^{(σ − 2 − d/2) / (2σ)}` with `h_j = μ h_{j-1}`.
    Experimental { mu: f64, v: f64, sigma: f64, d: usize },
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::param("mu", format!("must lie in (0, 1), got {mu}")));
    }
    Ok(())
}

fn check_sigma(sigma: f64, d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::param("d", "dimension must be positive"));
    }
    if !(sigma > d as f64 / 2.0 + 2.0) {
        return Err(Error::param(
            "sigma",
            format!("need σ > d/2 + 2 = {}, got {sigma}", d as f64 / 2.0 + 2.0),
        ));
    }
    Ok(())
}

impl Schedule {
    pub fn fixed(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::param("delta", format!("must be positive, got {delta}")));
        }
        Ok(Schedule::FixedDelta { delta })
    }

    pub fn theoretical(mu: f64, sigma: f64, d: usize) -> Result<Self> {
        check_mu(mu)?;
        check_sigma(sigma, d)?;
        Ok(Schedule::Theoretical { mu, sigma, d })
    }

    pub fn experimental(mu: f64, v: f64, sigma: f64, d: usize) -> Result<Self> {
        check_mu(mu)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::param("v", format!("must be positive, got {v}")));
        }
        check_sigma(sigma, d)?;
        Ok(Schedule::Experimental { mu, v, sigma, d })
    }

    /// Re-runs the constructor checks (for values built by hand or deserialized).
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::FixedDelta { delta } => Schedule::fixed(delta).map(drop),
            Schedule::Theoretical { mu, sigma, d } => Schedule::theoretical(mu, sigma, d).map(drop),
            Schedule::Experimental { mu, v, sigma, d } => Schedule::experimental(mu, v, sigma, d).map(drop),
        }
    }

    /// `δ_j` for level `j` with mesh sizes `h_j` and `h_{j-1}`.
    pub fn delta_for_level(&self, j: usize, h_j: f64, h_prev: f64) -> Result<f64> {
        if j < 1 {
            return Err(Error::InvalidLevel(j));
        }
        if !(h_j > 0.0 && h_prev > 0.0) {
            return Err(Error::param(
                "h",
                format!("mesh sizes must be positive, got {h_j} and {h_prev}"),
            ));
        }
        Ok(match *self {
            Schedule::FixedDelta { delta } => delta,
            Schedule::Theoretical { .. } => h_prev,
            Schedule::Experimental { mu, v, sigma, d } => {
                let exponent = (sigma - 2.0 - d as f64 / 2.0) / (2.0 * sigma);
                v * (h_j / mu).powf(exponent)
            }
        })
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::FixedDelta { delta } => write!(f, "fixed delta={delta}"),
            Schedule::Theoretical { mu, sigma, d } => {
                write!(f, "theoretical delta_j=h_(j-1) (mu={mu}, sigma={sigma}, d={d})")
            }
            Schedule::Experimental { mu, v, sigma, d } => write!(
                f,
                "experimental delta_j=v(h_j/mu)^((sigma-2-d/2)/(2 sigma)) (mu={mu}, v={v}, sigma={sigma}, d={d})"
            ),
        }
    }
}

/// `μ h_{j-1}^{2σ/(σ − 2 − d/2)}`.
pub fn theoretical_h_next(h_prev: f64, mu: f64, sigma: f64, d: usize) -> Result<f64> {
    if !(h_prev > 0.0 && h_prev < 1.0) {
        return Err(Error::param(
            "h_prev",
            format!("must lie in (0, 1), got {h_prev}"),
        ));
    }
    check_mu(mu)?;
    check_sigma(sigma, d)?;
    Ok(mu * h_prev.powf(2.0 * sigma / (sigma - 2.0 - d as f64 / 2.0)))
}

#[derive(Clone, Debug)]
pub struct MultilevelOptions {
    pub level: LevelOptions,
    /// Cells per side of the L2 evaluation grid; `None` skips error tracking.
    pub eval_grid: Option<usize>,
    /// Abort when the L2 error grows from one level to the next after level 2.
    pub require_monotone_errors: bool,
}

impl Default for MultilevelOptions {
    fn default() -> Self {
        MultilevelOptions {
            level: LevelOptions::default(),
            eval_grid: Some(1000),
            require_monotone_errors: true,
        }
    }
}

/// The corrections `v_1, …, v_k` and their report.
#[derive(Clone, Debug)]
pub struct MultilevelSolution {
    pub corrections: Vec<LevelSolution<2>>,
    pub schedule: Schedule,
    pub report: ConvergenceReport,
    bvp: EllipticBvp<2>,
}

impl MultilevelSolution {
    pub fn levels(&self) -> usize {
        self.corrections.len()
    }

    /// `u_k(x)` with all corrections.
    pub fn evaluate_at(&self, x: &Point2) -> f64 {
        self.evaluate_partial_at(x, self.corrections.len())
    }

    /// `u_j(x) = Σ_{m≤j} v_m(x)`.
    pub fn evaluate_partial_at(&self, x: &Point2, j: usize) -> f64 {
        self.corrections[..j].iter().map(|v| v.evaluate_at(x)).sum()
    }

    /// `(L u_j)(x)`.
    pub fn operator_partial_at(&self, x: &Point2, j: usize) -> Result<f64> {
        self.corrections[..j]
            .iter()
            .map(|v| v.evaluate_operator_at(&self.bvp.operator, x))
            .sum()
    }

    /// Interior residual data `f_j(x) = f(x) − (L u_j)(x)`.
    pub fn interior_residual_at(&self, x: &Point2, j: usize) -> Result<f64> {
        interior_residual(&self.bvp, &self.corrections[..j], x)
    }

    /// Boundary residual data `g_j(x) = g(x) − u_j(x)`.
    pub fn boundary_residual_at(&self, x: &Point2, j: usize) -> f64 {
        boundary_residual(&self.bvp, &self.corrections[..j], x)
    }
}

fn interior_residual(bvp: &EllipticBvp<2>, prior: &[LevelSolution<2>], x: &Point2) -> Result<f64> {
    let mut value = (bvp.f)(x);
    for v in prior {
        value -= v.evaluate_operator_at(&bvp.operator, x)?;
    }
    Ok(value)
}

fn boundary_residual(bvp: &EllipticBvp<2>, prior: &[LevelSolution<2>], x: &Point2) -> f64 {
    let mut value = (bvp.g)(x);
    for v in prior {
        value -= v.evaluate_at(x);
    }
    value
}

/// A multilevel run that stopped early, with everything computed so far.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub partial: MultilevelSolution,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (after {} completed level(s))",
            self.error,
            self.partial.corrections.len()
        )
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Called with each level's assembled system before it is discarded.
pub type SystemSink<'a> = dyn FnMut(usize, &CollocationSystem<2>) + 'a;

pub fn run_multilevel(
    k: usize,
    schedule: &Schedule,
    bvp: &EllipticBvp<2>,
    options: &MultilevelOptions,
) -> std::result::Result<MultilevelSolution, Box<RunFailure>> {
    run_multilevel_with_sink(k, schedule, bvp, options, &mut |_, _| {})
}

pub fn run_multilevel_with_sink(
    k: usize,
    schedule: &Schedule,
    bvp: &EllipticBvp<2>,
    options: &MultilevelOptions,
    sink: &mut SystemSink<'_>,
) -> std::result::Result<MultilevelSolution, Box<RunFailure>> {
    let base = &options.level.kernel;
    let sigma = base.sobolev_order();
    let dim = base.dimension();
    let mut solution = MultilevelSolution {
        corrections: Vec::new(),
        schedule: *schedule,
        report: ConvergenceReport::new(ReportMetadata {
            problem: String::new(),
            mode: "multilevel".into(),
            kernel: base.smoothness().tag().into(),
            sigma,
            dimension: dim,
            schedule: schedule.to_string(),
            stopping_rule: options.level.rule.to_string(),
            eval_grid: options.eval_grid.unwrap_or(0),
        }),
        bvp: bvp.clone(),
    };
    let fail = |error: Error, partial: MultilevelSolution| Box::new(RunFailure { error, partial });

    if k < 1 {
        return Err(fail(Error::param("levels", "need at least one level"), solution));
    }
    if let Err(e) = schedule.validate() {
        return Err(fail(e, solution));
    }
    let grid = match options.eval_grid.map(EvalGrid::new).transpose() {
        Ok(g) => g,
        Err(e) => return Err(fail(e, solution)),
    };
    let mut grid_values = grid.map(|g| vec![0.0; g.len()]);

    for j in 1..=k {
        let started = Instant::now();
        let step = (|| -> Result<(LevelSolution<2>, LevelRow)> {
            let geometry = build_level_with(j, &options.level.sampling)?;
            let h_j = geometry.nominal_h;
            let delta = schedule.delta_for_level(j, h_j, 2.0 * h_j)?;
            let tol = cg_tolerance_schedule(h_j, sigma, dim)?;
            let kernel = ScaledKernel::new(base.clone(), delta)?;
            let prior = &solution.corrections;
            let interior_fail = std::sync::Mutex::new(None);
            let rhs_interior = |x: &Point2| {
                interior_residual(bvp, prior, x).unwrap_or_else(|e| {
                    interior_fail.lock().unwrap().get_or_insert(e);
                    f64::NAN
                })
            };
            let rhs_boundary = |x: &Point2| boundary_residual(bvp, prior, x);
            let (level, system) = if prior.is_empty() {
                solve_on_geometry(
                    &geometry,
                    kernel,
                    &bvp.operator,
                    bvp.f.as_ref(),
                    bvp.g.as_ref(),
                    tol,
                    &options.level,
                )?
            } else {
                solve_on_geometry(
                    &geometry,
                    kernel,
                    &bvp.operator,
                    &rhs_interior,
                    &rhs_boundary,
                    tol,
                    &options.level,
                )?
            };
            if let Some(e) = interior_fail.into_inner().unwrap() {
                return Err(e);
            }
            sink(j, &system);
            let row = level_row(&geometry, &level, tol)?;
            Ok((level, row))
        })();
        let (level, mut row) = match step {
            Ok(v) => v,
            Err(e) => return Err(fail(e, solution)),
        };

        if let (Some(g), Some(values), Some(exact)) = (grid, grid_values.as_mut(), bvp.exact.as_ref()) {
            g.accumulate(values, &|x| level.evaluate_at(x));
            row.l2_error = Some(g.l2_error_of_values(values, exact.as_ref()));
        }
        row.seconds = started.elapsed().as_secs_f64();
        solution.corrections.push(level);
        solution.report.push(row);

        if options.require_monotone_errors && j >= 3 {
            let rows = &solution.report.rows;
            if let (Some(prev), Some(cur)) = (rows[j - 2].l2_error, rows[j - 1].l2_error) {
                if cur > prev {
                    let msg = format!(
                        "L2 error grew from {prev:.3e} at level {} to {cur:.3e} at level {j}",
                        j - 1
                    );
                    return Err(fail(Error::InvariantViolation(msg), solution));
                }
            }
        }
    }
    Ok(solution)
}
