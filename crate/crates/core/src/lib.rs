//! Meshfree unsymmetric collocation with compactly supported Wendland kernels,
//! on one level and with multilevel residual correction.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod collocation;
pub mod config;
pub mod error;
pub mod geometry;
pub mod kernel;
pub mod linalg;
pub mod metrics;
pub mod multilevel;
pub mod problem;
pub mod runner;
pub mod selfcheck;

pub use collocation::{solve_one_level, LevelOptions, LevelSolution};
pub use config::{Mode, OutputFormat, RunConfig};
pub use error::{Error, Result};
pub use geometry::{build_level, LevelGeometry, Point, Point2};
pub use kernel::{ScaledKernel, Smoothness, WendlandKernel};
pub use linalg::{CgOptions, StoppingRule, Storage};
pub use metrics::{ConvergenceReport, LevelRow};
pub use multilevel::{run_multilevel, MultilevelOptions, MultilevelSolution, Schedule};
pub use problem::{poisson_benchmark, EllipticBvp, EllipticOperator};
pub use runner::{execute, RunError, RunOutput};
