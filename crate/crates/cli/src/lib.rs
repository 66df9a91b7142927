//! The `pathflow` experiment harness.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 for configuration
//! errors, 3 when a solver fails (the checks finished so far are still written).

pub mod config;
pub mod experiments;
pub mod report;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use config::{Experiment, ExperimentConfig};
use report::{Report, Status};

pub const EXIT_PASS: u8 = 0;
pub const EXIT_FAIL: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "pathflow",
    version,
    about = "Stochastic analysis experiments on path spaces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `flat` or `sphere`, optionally with a dimension suffix such as `sphere3`.
    #[arg(long, global = true)]
    pub manifold: Option<String>,
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub t: Option<f64>,
    #[arg(long, global = true)]
    pub shift: Option<String>,
    #[arg(long, global = true)]
    pub bound: Option<f64>,
    #[arg(long, global = true)]
    pub formula: Option<String>,
    #[arg(long, global = true)]
    pub process: Option<String>,
    #[arg(long, global = true)]
    pub study: Option<String>,
    /// Comma-separated grid sizes for convergence studies.
    #[arg(long, global = true, value_delimiter = ',')]
    pub grids: Option<Vec<usize>>,
    /// Tolerance override `name=value`; repeatable.
    #[arg(long = "tol", global = true)]
    pub tolerances: Vec<String>,
    /// Checks CSV; a `.json` sidecar and, when present, a `.table.csv` are written next to it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Subcommand)]
pub enum Command {
    /// Roll Brownian paths onto the manifold.
    Simulate,
    /// Compare the Picard and pullback flow solvers.
    Flow,
    /// Quasi-invariance of the Wiener measure under the flow.
    Qi,
    /// Integration-by-parts identities.
    Ibp,
    /// Intertwining of manifold and flat derivatives.
    Intertwine,
    /// Adjoint identities of the anticipative integrals.
    Skorohod,
    /// Anticipative Itô formula on the line.
    Ito,
    /// L¹ bound on the manifold divergence.
    L1bound,
    /// Error-versus-grid regression.
    Convergence,
}

impl From<Command> for Experiment {
    fn from(c: Command) -> Self {
        match c {
            Command::Simulate => Experiment::Simulate,
            Command::Flow => Experiment::Flow,
            Command::Qi => Experiment::Qi,
            Command::Ibp => Experiment::Ibp,
            Command::Intertwine => Experiment::Intertwine,
            Command::Skorohod => Experiment::Skorohod,
            Command::Ito => Experiment::Ito,
            Command::L1bound => Experiment::L1bound,
            Command::Convergence => Experiment::Convergence,
        }
    }
}

impl Cli {
    /// The config file (or defaults) with every given flag applied.
    pub fn resolve(&self) -> pathflow_core::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(c) = self.command {
            cfg.experiment = Some(c.into());
        }
        macro_rules! apply {
            ($($field:ident),*) => { $( if let Some(v) = &self.$field { cfg.$field = v.clone(); } )* };
        }
        apply!(manifold, dim, steps, paths, seed, t, shift, bound, study, grids);
        if self.formula.is_some() {
            cfg.formula = self.formula.clone();
        }
        if self.process.is_some() {
            cfg.process = self.process.clone();
        }
        for assignment in &self.tolerances {
            cfg.tolerances.set(assignment)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn usage() -> String {
    use clap::CommandFactory;
    Cli::command().render_usage().to_string()
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> u8 {
    let cfg = match cli.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}\n{}", usage());
            return EXIT_CONFIG;
        }
    };
    let Some(experiment) = cfg.experiment else {
        eprintln!("error: no experiment given\n{}", usage());
        return EXIT_CONFIG;
    };
    let start = Instant::now();
    let mut report = Report::default();
    let outcome = experiments::run(experiment, &cfg, &mut report);
    let (status, code) = match outcome {
        Ok(()) if report.pass() => (Status::Pass, EXIT_PASS),
        Ok(()) => (Status::Fail, EXIT_FAIL),
        Err(e) if e.is_solver() => (Status::SolverError(e.to_string()), EXIT_SOLVER),
        Err(e) => {
            eprintln!("error: {e}\n{}", usage());
            return EXIT_CONFIG;
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    let written = match &cli.out {
        Some(out) => report::write(&report, out, experiment.name(), &status, &cfg, elapsed),
        None => report
            .checks_csv()
            .map(|bytes| print!("{}", String::from_utf8_lossy(&bytes))),
    };
    if let Err(e) = written {
        eprintln!("error: cannot write report: {e}");
        return EXIT_CONFIG;
    }
    let failed = report.rows.iter().filter(|r| !r.pass).count();
    match &status {
        Status::SolverError(msg) => eprintln!(
            "{}: solver error after {} checks: {msg}",
            experiment.name(),
            report.rows.len()
        ),
        _ => eprintln!(
            "{}: {} ({} checks, {failed} failed, {elapsed:.1}s)",
            experiment.name(),
            if code == EXIT_PASS { "pass" } else { "fail" },
            report.rows.len()
        ),
    }
    for note in &report.notes {
        eprintln!("  {note}");
    }
    code
}
