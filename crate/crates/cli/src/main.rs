use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kansa_core::config::FULL_EVAL_GRID;
use kansa_core::geometry::{build_level_with, FillSampling};
use kansa_core::runner::{execute, write_report};
use kansa_core::selfcheck::{run_all, SelfCheckOptions};
use kansa_core::{Error, RunConfig};

const EXIT_VALIDATION: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "kansa",
    version,
    about = "Meshfree unsymmetric collocation with Wendland kernels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a one-level or multilevel convergence study and write its report.
    Run(Box<RunArgs>),
    /// Run the kernel, geometry and solver self-checks.
    Selfcheck {
        /// Relative error injected into the analytic kernel derivatives.
        #[arg(long, hide = true, default_value_t = 0.0)]
        perturb_derivative: f64,
    },
    /// Print the trial and test points of a level as CSV.
    Points {
        #[arg(long)]
        level: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// key = value file; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["one-level", "multilevel"])]
    mode: Option<String>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    problem: Option<String>,
    /// Fixed kernel scale (one-level runs, or multilevel with --schedule fixed).
    #[arg(long)]
    delta: Option<f64>,
    /// Mesh refinement factor h_j = mu h_(j-1).
    #[arg(long)]
    mu: Option<f64>,
    /// Scale constant of the experimental multilevel schedule.
    #[arg(long)]
    v: Option<f64>,
    #[arg(long, value_parser = ["fixed", "theoretical", "experimental"])]
    schedule: Option<String>,
    #[arg(long, value_parser = ["c4", "c6", "C4", "C6"])]
    kernel: Option<String>,
    /// Cells per side of the L2 evaluation grid.
    #[arg(long)]
    eval_grid: Option<usize>,
    /// Evaluate errors on the 10000 x 10000 grid.
    #[arg(long, conflicts_with = "eval_grid")]
    full_grid: bool,
    #[arg(long)]
    cg_max_iter: Option<usize>,
    #[arg(long, value_parser = ["relative", "absolute"])]
    stopping: Option<String>,
    #[arg(long, value_parser = ["auto", "dense", "sparse"])]
    storage: Option<String>,
    /// Report path; defaults to <output dir>/<mode>.<format>.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_parser = ["csv", "json"])]
    format: Option<String>,
    /// Write each level's matrix and right-hand side next to the report.
    #[arg(long)]
    dump_matrices: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
    /// Default directory for reports.
    #[arg(long, env = "KANSA_OUTPUT_DIR", default_value = ".")]
    output_dir: PathBuf,
}

impl RunArgs {
    fn to_config(&self) -> Result<RunConfig, Error> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let overrides: [(&str, Option<String>); 12] = [
            ("mode", self.mode.clone()),
            ("levels", self.levels.map(|v| v.to_string())),
            ("problem", self.problem.clone()),
            ("delta", self.delta.map(|v| v.to_string())),
            ("mu", self.mu.map(|v| v.to_string())),
            ("v", self.v.map(|v| v.to_string())),
            ("schedule", self.schedule.clone()),
            ("kernel", self.kernel.clone()),
            ("eval_grid", self.eval_grid.map(|v| v.to_string())),
            ("cg_max_iter", self.cg_max_iter.map(|v| v.to_string())),
            ("stopping", self.stopping.clone()),
            ("storage", self.storage.clone()),
        ];
        for (key, value) in overrides {
            if let Some(value) = value {
                c.set(key, &value)?;
            }
        }
        if self.full_grid {
            c.eval_grid = FULL_EVAL_GRID;
        }
        if let Some(format) = &self.format {
            c.set("format", format)?;
        }
        if let Some(output) = &self.output {
            c.output = Some(output.clone());
        }
        if self.dump_matrices {
            c.dump_matrices = true;
        }
        if let Some(t) = self.threads {
            c.threads = Some(t);
        }
        c.validate()?;
        Ok(c)
    }
}

fn exit_code(error: &Error) -> u8 {
    match error {
        Error::InvariantViolation(_) => EXIT_INVARIANT,
        Error::Singular { .. } => EXIT_NOT_CONVERGED,
        _ => EXIT_VALIDATION,
    }
}

fn report_path(config: &RunConfig, output_dir: &Path) -> PathBuf {
    config
        .output
        .clone()
        .unwrap_or_else(|| output_dir.join(format!("{}.{}", config.mode, config.format.extension())))
}

fn cmd_run(args: &RunArgs) -> u8 {
    let config = match args.to_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_VALIDATION;
        }
    };
    if args.print_config {
        print!("{}", config.to_text());
        return 0;
    }
    if let Some(n) = config.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not set thread count: {e}");
        }
    }
    let path = report_path(&config, &args.output_dir);
    let dump_dir = path.parent().map(|p| p.join("matrices"));
    let result = execute(&config, dump_dir.as_deref());
    let (report, code) = match result {
        Ok(out) => {
            for j in &out.unconverged {
                eprintln!("warning: CG did not converge at level {j}");
            }
            let code = if out.unconverged.is_empty() {
                0
            } else {
                EXIT_NOT_CONVERGED
            };
            (out.report, code)
        }
        Err(failure) => {
            eprintln!("error: {}", failure.error);
            match failure.partial {
                Some(partial) if !partial.rows.is_empty() => (partial, exit_code(&failure.error)),
                _ => return exit_code(&failure.error),
            }
        }
    };
    print!("{}", report.render_table());
    if let Err(e) = write_report(&report, &path, config.format) {
        eprintln!("error: writing {}: {e}", path.display());
        return if code == 0 { EXIT_VALIDATION } else { code };
    }
    println!("report written to {}", path.display());
    code
}

fn cmd_selfcheck(perturb: f64) -> u8 {
    let options = SelfCheckOptions {
        derivative_perturbation: perturb,
        ..SelfCheckOptions::default()
    };
    let results = run_all(&options);
    for r in &results {
        println!("{r}");
    }
    if results.iter().all(|r| r.passed) {
        0
    } else {
        EXIT_VALIDATION
    }
}

fn cmd_points(level: usize) -> u8 {
    let geometry = match build_level_with(level, &FillSampling::coarse()) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_VALIDATION;
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let sets = [
        ("trial", "interior", &geometry.interior_trial),
        ("trial", "boundary", &geometry.boundary_trial),
        ("test", "interior", &geometry.interior_test),
        ("test", "boundary", &geometry.boundary_test),
    ];
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "set,kind,x,y")?;
        for (set, kind, points) in sets {
            for p in points.iter() {
                writeln!(out, "{set},{kind},{},{}", p.x(), p.y())?;
            }
        }
        Ok(())
    };
    match write() {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_VALIDATION
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Selfcheck { perturb_derivative } => cmd_selfcheck(*perturb_derivative),
        Command::Points { level } => cmd_points(*level),
    };
    ExitCode::from(code)
}
