//! `bjb`: decay bounds, Green columns and eigenpairs of block Jacobi operators.

mod commands;
mod family;
mod grid;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "bjb", version, about = "Decay bounds for block Jacobi operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print γ, the simplified rate and (with --family, --N) the envelope table.
    Bounds,
    /// Print the block norms of the Green column k.
    Green,
    /// Print the truncation eigenpairs below b.
    Eigs,
    /// Tables for the two-parameter example family.
    Example {
        #[arg(long, value_enum)]
        table: Table,
        /// First index of the Levinson product.
        #[arg(long, default_value_t = 10)]
        n0: usize,
    },
    /// Check measured norms against the decay envelope.
    Verify {
        #[arg(long, value_enum, default_value_t = Mode::Green)]
        mode: Mode,
        /// Eigenvector mode: 0-based index of the eigenvalue below b.
        /// Without it the eigenvalue nearest to --lambda is used.
        #[arg(long)]
        eig_index: Option<usize>,
        /// Replace δ by the value that makes the rate match the simplified one.
        #[arg(long)]
        corollary: bool,
    },
}

#[derive(Args, Debug, Clone)]
pub struct Opts {
    /// st:s=..,t=..[,alpha=..][,b1=..] | jc:s=..,t=.. | scalar-free |
    /// diagonal-test[:a=..,ratio=..,alpha=..] | path to a JSON family file
    #[arg(long, global = true)]
    pub family: Option<String>,
    /// Real part of λ: a scalar or an inclusive grid a:b:step.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub lambda: Option<String>,
    /// Imaginary part added to every λ.
    #[arg(long, global = true, allow_hyphen_values = true, default_value_t = 0.0)]
    pub imag: f64,
    /// Lower bound of the essential spectrum; defaults to the family's edge.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub b: Option<f64>,
    #[arg(long, global = true, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long, global = true, default_value_t = 0.1)]
    pub eps: f64,
    /// Number of blocks in the truncation (for transfer tables: the index n).
    #[arg(long = "N", global = true)]
    pub n: Option<usize>,
    /// Source block of the Green column.
    #[arg(long, global = true, default_value_t = 1)]
    pub k: usize,
    /// Boundary perturbation strength for `eigs`.
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Calibration window lo:hi for the fitted constant.
    #[arg(long, global = true)]
    pub calib: Option<String>,
    /// Output path prefix; without it everything goes to stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Table {
    Phase,
    Transfer,
    Levinson,
    Jc,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Green,
    Eigenvector,
    Commuting,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, family or parameters: exit 1.
    Input(String),
    /// Some verdict failed: exit 2.
    Verification(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "error: {m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl From<String> for CliError {
    fn from(m: String) -> Self {
        CliError::Input(m)
    }
}

impl From<blockjacobi::Error> for CliError {
    fn from(e: blockjacobi::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                // --help, --version
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.to_string();
            let line = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("{line} (see bjb --help)");
            return ExitCode::from(1);
        }
    };
    match commands::run(&cli.command, &cli.opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            match e {
                CliError::Input(_) => ExitCode::from(1),
                CliError::Verification(_) => ExitCode::from(2),
            }
        }
    }
}
