//! Run configuration and its `key = value` text format.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Unknown keys are rejected. [`RunConfig::to_text`] writes every key, so
//! `parse(to_text(c)) == c`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Smoothness, WendlandKernel};
use crate::linalg::{StoppingRule, Storage};
use crate::multilevel::Schedule;
use crate::problem::BUILTIN_PROBLEMS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    OneLevel,
    Multilevel,
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "one-level" => Ok(Mode::OneLevel),
            "multilevel" => Ok(Mode::Multilevel),
            _ => Err(format!("expected one-level or multilevel, got {s:?}")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::OneLevel => "one-level",
            Mode::Multilevel => "multilevel",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Fixed,
    Theoretical,
    Experimental,
}

impl FromStr for ScheduleKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fixed" => Ok(ScheduleKind::Fixed),
            "theoretical" => Ok(ScheduleKind::Theoretical),
            "experimental" => Ok(ScheduleKind::Experimental),
            _ => Err(format!("expected fixed, theoretical or experimental, got {s:?}")),
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Fixed => "fixed",
            ScheduleKind::Theoretical => "theoretical",
            ScheduleKind::Experimental => "experimental",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(format!("expected csv or json, got {s:?}")),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

fn storage_tag(s: Storage) -> &'static str {
    match s {
        Storage::Auto => "auto",
        Storage::Dense => "dense",
        Storage::Sparse => "sparse",
    }
}

fn parse_storage(s: &str) -> std::result::Result<Storage, String> {
    match s {
        "auto" => Ok(Storage::Auto),
        "dense" => Ok(Storage::Dense),
        "sparse" => Ok(Storage::Sparse),
        _ => Err(format!("expected auto, dense or sparse, got {s:?}")),
    }
}

pub const DEFAULT_DELTA: f64 = 2.0;
pub const DEFAULT_MU: f64 = 0.5;
pub const DEFAULT_V: f64 = 2.4;
pub const DEFAULT_EVAL_GRID: usize = 1000;
/// Resolution used by the opt-in full evaluation grid.
pub const FULL_EVAL_GRID: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: String,
    pub mode: Mode,
    pub levels: usize,
    /// Multilevel scale rule; one-level runs always use `delta`.
    pub schedule: ScheduleKind,
    pub delta: f64,
    pub mu: f64,
    pub v: f64,
    pub kernel: Smoothness,
    pub eval_grid: usize,
    /// `None` means `20 N²`.
    pub cg_max_iter: Option<usize>,
    pub stopping: StoppingRule,
    pub storage: Storage,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
    pub dump_matrices: bool,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: "poisson-square".into(),
            mode: Mode::OneLevel,
            levels: 4,
            schedule: ScheduleKind::Experimental,
            delta: DEFAULT_DELTA,
            mu: DEFAULT_MU,
            v: DEFAULT_V,
            kernel: Smoothness::C6,
            eval_grid: DEFAULT_EVAL_GRID,
            cg_max_iter: None,
            stopping: StoppingRule::Absolute,
            storage: Storage::Auto,
            output: None,
            format: OutputFormat::Csv,
            dump_matrices: false,
            threads: None,
        }
    }
}

fn cfg(field: &'static str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

fn parse_value<T: FromStr>(field: &'static str, raw: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| cfg(field, format!("{e} (value {raw:?})")))
}

fn parse_optional<T: FromStr>(field: &'static str, raw: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    if raw == "auto" || raw.is_empty() {
        Ok(None)
    } else {
        parse_value(field, raw).map(Some)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| cfg("config", format!("line {}: expected key = value", lineno + 1)))?;
            c.set(key.trim(), raw.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "problem" => self.problem = raw.to_string(),
            "mode" => self.mode = parse_value("mode", raw)?,
            "levels" => self.levels = parse_value("levels", raw)?,
            "schedule" => self.schedule = parse_value("schedule", raw)?,
            "delta" => self.delta = parse_value("delta", raw)?,
            "mu" => self.mu = parse_value("mu", raw)?,
            "v" => self.v = parse_value("v", raw)?,
            "kernel" => self.kernel = parse_value("kernel", raw)?,
            "eval_grid" => self.eval_grid = parse_value("eval_grid", raw)?,
            "cg_max_iter" => self.cg_max_iter = parse_optional("cg_max_iter", raw)?,
            "stopping" => self.stopping = parse_value("stopping", raw)?,
            "storage" => self.storage = parse_storage(raw).map_err(|e| cfg("storage", e))?,
            "output" => self.output = (!raw.is_empty()).then(|| PathBuf::from(raw)),
            "format" => self.format = parse_value("format", raw)?,
            "dump_matrices" => self.dump_matrices = parse_value("dump_matrices", raw)?,
            "threads" => self.threads = parse_optional("threads", raw)?,
            _ => return Err(cfg("config", format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<usize>| v.map(|n| n.to_string()).unwrap_or_else(|| "auto".into());
        let output = self
            .output
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        [
            format!("problem = {}", self.problem),
            format!("mode = {}", self.mode),
            format!("levels = {}", self.levels),
            format!("schedule = {}", self.schedule),
            format!("delta = {:?}", self.delta),
            format!("mu = {:?}", self.mu),
            format!("v = {:?}", self.v),
            format!("kernel = {}", self.kernel.tag()),
            format!("eval_grid = {}", self.eval_grid),
            format!("cg_max_iter = {}", opt(self.cg_max_iter)),
            format!("stopping = {}", self.stopping),
            format!("storage = {}", storage_tag(self.storage)),
            format!("output = {output}"),
            format!("format = {}", self.format),
            format!("dump_matrices = {}", self.dump_matrices),
            format!("threads = {}", opt(self.threads)),
        ]
        .join("\n")
            + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        if !BUILTIN_PROBLEMS.contains(&self.problem.as_str()) {
            return Err(cfg(
                "problem",
                format!(
                    "unknown problem {:?}; available: {}",
                    self.problem,
                    BUILTIN_PROBLEMS.join(", ")
                ),
            ));
        }
        if !(1..=10).contains(&self.levels) {
            return Err(cfg(
                "levels",
                format!("must be between 1 and 10, got {}", self.levels),
            ));
        }
        if self.eval_grid < 2 {
            return Err(cfg(
                "eval_grid",
                format!("must be at least 2, got {}", self.eval_grid),
            ));
        }
        if self.cg_max_iter == Some(0) {
            return Err(cfg("cg_max_iter", "must be positive"));
        }
        if self.threads == Some(0) {
            return Err(cfg("threads", "must be positive"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(cfg("delta", format!("must be positive, got {}", self.delta)));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(cfg("mu", format!("must lie in (0, 1), got {}", self.mu)));
        }
        if !(self.v > 0.0 && self.v.is_finite()) {
            return Err(cfg("v", format!("must be positive, got {}", self.v)));
        }
        let base = self.base_kernel().map_err(|e| cfg("kernel", e.to_string()))?;
        let floor = base.dimension() as f64 / 2.0 + 2.0;
        if base.sobolev_order() <= floor {
            return Err(cfg(
                "kernel",
                format!(
                    "{} has σ = {}, need σ > {floor}",
                    self.kernel.tag(),
                    base.sobolev_order()
                ),
            ));
        }
        self.schedule().map_err(|e| cfg("schedule", e.to_string()))?;
        Ok(())
    }

    pub fn base_kernel(&self) -> Result<WendlandKernel> {
        WendlandKernel::new(self.kernel, 2)
    }

    /// The δ rule for this run; one-level runs use a fixed δ.
    pub fn schedule(&self) -> Result<Schedule> {
        let base = self.base_kernel()?;
        let (sigma, d) = (base.sobolev_order(), base.dimension());
        match (self.mode, self.schedule) {
            (Mode::OneLevel, _) | (_, ScheduleKind::Fixed) => Schedule::fixed(self.delta),
            (Mode::Multilevel, ScheduleKind::Theoretical) => Schedule::theoretical(self.mu, sigma, d),
            (Mode::Multilevel, ScheduleKind::Experimental) => {
                Schedule::experimental(self.mu, self.v, sigma, d)
            }
        }
    }
}
