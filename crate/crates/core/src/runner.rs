//! Executes a [`RunConfig`] into a [`ConvergenceReport`].

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::collocation::{level_row, solve_on_geometry, LevelOptions};
use crate::config::{Mode, RunConfig};
use crate::error::{Error, Result};
use crate::geometry::build_level_with;
use crate::kernel::ScaledKernel;
use crate::linalg::{write_system, CollocationSystem};
use crate::metrics::{cg_tolerance_schedule, l2_error_on_grid, ConvergenceReport, ReportMetadata};
use crate::multilevel::{run_multilevel_with_sink, MultilevelOptions};
use crate::problem::builtin_problem;

#[derive(Debug)]
pub struct RunOutput {
    pub report: ConvergenceReport,
    /// Levels whose CG run hit the iteration cap.
    pub unconverged: Vec<usize>,
    pub dumped: Vec<PathBuf>,
}

/// A failed run with the rows completed before the failure.
#[derive(Debug)]
pub struct RunError {
    pub error: Error,
    pub partial: Option<ConvergenceReport>,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for Box<RunError> {
    fn from(error: Error) -> Self {
        Box::new(RunError { error, partial: None })
    }
}

pub fn level_options(config: &RunConfig) -> Result<LevelOptions> {
    Ok(LevelOptions {
        kernel: config.base_kernel()?,
        rule: config.stopping,
        max_iter: config.cg_max_iter,
        storage: config.storage,
        ..LevelOptions::default()
    })
}

/// Writes `level{j}_A.txt` and `level{j}_b.txt` into `dir`.
pub fn dump_system(dir: &Path, j: usize, system: &CollocationSystem<2>) -> Result<[PathBuf; 2]> {
    std::fs::create_dir_all(dir)?;
    let a = dir.join(format!("level{j}_A.txt"));
    let b = dir.join(format!("level{j}_b.txt"));
    let mut wa = BufWriter::new(File::create(&a)?);
    let mut wb = BufWriter::new(File::create(&b)?);
    write_system(system, &mut wa, &mut wb)?;
    Ok([a, b])
}

/// Runs `config`. Systems are dumped into `dump_dir` when `dump_matrices` is set.
pub fn execute(config: &RunConfig, dump_dir: Option<&Path>) -> std::result::Result<RunOutput, Box<RunError>> {
    config.validate()?;
    let bvp = builtin_problem(&config.problem)?;
    let options = level_options(config)?;
    let schedule = config.schedule()?;
    let mut dumped = Vec::new();
    let mut dump_error = None;
    let dump_dir = match (config.dump_matrices, dump_dir) {
        (true, Some(d)) => Some(d),
        (true, None) => return Err(Error::param("dump_dir", "matrix dumps need a target directory").into()),
        (false, _) => None,
    };
    let mut sink = |j: usize, system: &CollocationSystem<2>| {
        if let (Some(dir), None) = (dump_dir, &dump_error) {
            match dump_system(dir, j, system) {
                Ok(paths) => dumped.extend(paths),
                Err(e) => dump_error = Some(e),
            }
        }
    };

    let report = match config.mode {
        Mode::Multilevel => {
            let ml = MultilevelOptions {
                level: options,
                eval_grid: Some(config.eval_grid),
                require_monotone_errors: true,
            };
            match run_multilevel_with_sink(config.levels, &schedule, &bvp, &ml, &mut sink) {
                Ok(sol) => sol.report,
                Err(failure) => {
                    let mut partial = failure.partial.report;
                    partial.metadata.problem = config.problem.clone();
                    return Err(Box::new(RunError {
                        error: failure.error,
                        partial: Some(partial),
                    }));
                }
            }
        }
        Mode::OneLevel => {
            let base = &options.kernel;
            let mut report = ConvergenceReport::new(ReportMetadata {
                problem: String::new(),
                mode: config.mode.to_string(),
                kernel: base.smoothness().tag().into(),
                sigma: base.sobolev_order(),
                dimension: base.dimension(),
                schedule: schedule.to_string(),
                stopping_rule: config.stopping.to_string(),
                eval_grid: config.eval_grid,
            });
            let exact = bvp
                .exact
                .clone()
                .ok_or_else(|| Error::param("problem", "no exact solution"))?;
            for j in 1..=config.levels {
                let started = Instant::now();
                let step = (|| -> Result<_> {
                    let geometry = build_level_with(j, &options.sampling)?;
                    let tol =
                        cg_tolerance_schedule(geometry.nominal_h, base.sobolev_order(), base.dimension())?;
                    let kernel = ScaledKernel::new(base.clone(), config.delta)?;
                    let (level, system) = solve_on_geometry(
                        &geometry,
                        kernel,
                        &bvp.operator,
                        bvp.f.as_ref(),
                        bvp.g.as_ref(),
                        tol,
                        &options,
                    )?;
                    sink(j, &system);
                    let mut row = level_row(&geometry, &level, tol)?;
                    row.l2_error = Some(l2_error_on_grid(
                        &|x| level.evaluate_at(x),
                        exact.as_ref(),
                        config.eval_grid,
                    )?);
                    Ok(row)
                })();
                match step {
                    Ok(mut row) => {
                        row.seconds = started.elapsed().as_secs_f64();
                        report.push(row);
                    }
                    Err(error) => {
                        report.metadata.problem = config.problem.clone();
                        return Err(Box::new(RunError {
                            error,
                            partial: Some(report),
                        }));
                    }
                }
            }
            report
        }
    };
    let mut report = report;
    report.metadata.problem = config.problem.clone();
    if let Some(error) = dump_error {
        return Err(Box::new(RunError {
            error,
            partial: Some(report),
        }));
    }
    let unconverged = report
        .rows
        .iter()
        .filter(|r| !r.converged)
        .map(|r| r.level)
        .collect();
    Ok(RunOutput {
        report,
        unconverged,
        dumped,
    })
}

/// Writes the report in the configured format.
pub fn write_report(
    report: &ConvergenceReport,
    path: &Path,
    format: crate::config::OutputFormat,
) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let text = match format {
        crate::config::OutputFormat::Csv => report.to_csv(),
        crate::config::OutputFormat::Json => report.to_json()?,
    };
    std::fs::write(path, text)?;
    Ok(())
}
