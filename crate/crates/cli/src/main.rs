//! `pfode`: dataset generation, training, distillation and evaluation of
//! multistep PF-ODE solvers on Gaussian-mixture testbeds.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pfode_lab::LabError;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Numeric(String),
    UnknownSolver(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::UnknownSolver(_) => 5,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::UnknownSolver(m) => write!(f, "{m}"),
        }
    }
}

impl From<LabError> for CliError {
    fn from(err: LabError) -> Self {
        let msg = err.to_string();
        match err.root() {
            LabError::Config(_) | LabError::Contract(_) => CliError::Config(msg),
            LabError::Io(_) | LabError::Parse { .. } | LabError::Json(_) => CliError::Io(msg),
            LabError::UnknownSolver { .. } => CliError::UnknownSolver(msg),
            _ => CliError::Numeric(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Io(err.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "pfode", version, about = "Learnable multistep PF-ODE solver laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides io.seed and ppo.seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate an offline dataset of (condition, noise, reference output) records.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Output NDJSON path (its directory must exist); defaults into the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of entries (overrides model.entries).
        #[arg(long)]
        entries: Option<usize>,
        /// Index of the first entry (overrides model.first_entry).
        #[arg(long)]
        first_entry: Option<u64>,
    },
    /// Train the coefficient policy with PPO.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset NDJSON path.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Resume from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Total iterations (overrides ppo.iterations).
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Fit a per-transition coefficient table by trajectory distillation.
    Distill {
        #[command(flatten)]
        common: Common,
        /// Dataset NDJSON path.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score one solver against the dataset references.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Dataset NDJSON path.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Solver id (overrides solver.id).
        #[arg(long)]
        solver: Option<String>,
        /// Step count (overrides grid.steps).
        #[arg(long)]
        steps: Option<usize>,
        /// Policy checkpoint for the `policy` solver.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Coefficient table for the `distill-table` solver.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Tabulate several solvers over several step counts.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Dataset NDJSON path.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated solver ids.
        #[arg(long, value_delimiter = ',', default_value = "ddim,ab4,dpm2")]
        solvers: Vec<String>,
        /// Comma-separated step counts (overrides eval.steps).
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<usize>>,
        /// Policy checkpoint for the `policy` solver.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Coefficient table for the `distill-table` solver.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Estimate a solver's empirical convergence order.
    OrderTest {
        #[command(flatten)]
        common: Common,
        /// Solver id (overrides solver.id).
        #[arg(long)]
        solver: Option<String>,
        /// Comma-separated increasing step counts (overrides eval.order_steps).
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<usize>>,
        /// Policy checkpoint for the `policy` solver.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Coefficient table for the `distill-table` solver.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Simulate the high-quality and preview-and-refine workflows.
    PreviewSim {
        #[command(flatten)]
        common: Common,
        /// Dataset NDJSON path; each entry is one session.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Policy checkpoint for a `policy` preview or full solver.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Coefficient table for a `distill-table` solver.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Satisfaction threshold in dB (overrides eval.tau).
        #[arg(long, allow_hyphen_values = true)]
        tau: Option<f64>,
    },
    /// Export a policy's mean coefficients on a grid as a table.
    ExportCoeffs {
        #[command(flatten)]
        common: Common,
        /// Policy checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Step count (overrides grid.steps).
        #[arg(long)]
        steps: Option<usize>,
        /// Output path; defaults into the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    use commands as c;
    match cli.command {
        Command::GenData { common, out, entries, first_entry } => c::gen_data(&common, out, entries, first_entry),
        Command::Train { common, data, resume, iterations } => c::train(&common, data, resume, iterations),
        Command::Distill { common, data } => c::distill(&common, data),
        Command::Eval { common, data, solver, steps, checkpoint, table } => {
            c::eval(&common, data, solver, steps, c::Artifacts { checkpoint, table })
        }
        Command::Compare { common, data, solvers, steps, checkpoint, table } => {
            c::compare(&common, data, solvers, steps, c::Artifacts { checkpoint, table })
        }
        Command::OrderTest { common, solver, steps, checkpoint, table } => {
            c::order_test(&common, solver, steps, c::Artifacts { checkpoint, table })
        }
        Command::PreviewSim { common, data, checkpoint, table, tau } => {
            c::preview_sim(&common, data, tau, c::Artifacts { checkpoint, table })
        }
        Command::ExportCoeffs { common, checkpoint, steps, out } => c::export_coeffs(&common, checkpoint, steps, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.code())
        }
    }
}
