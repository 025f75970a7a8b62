use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hartree_core::Error;

mod commands;
mod selftest;

#[derive(Parser, Debug)]
#[command(
    name = "hartree",
    version,
    about = "Radial spectral simulator for the energy-critical Hartree equation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evolve the configured initial datum, writing diagnostics and checkpoints.
    Simulate { config: PathBuf },
    /// Recompute drift, Morawetz and local-mass reports from the checkpoints of a run.
    Diagnose { run: PathBuf },
    /// Partition a run by X norm, classify intervals and report bubbles.
    Intervals { run: PathBuf },
    /// Cascade generations and non-evacuation geometry of a tiling file.
    Cascade {
        #[arg(long)]
        tiling: PathBuf,
        /// Cascade ratio; overrides the tiling file and the run configuration.
        #[arg(long)]
        a: Option<f64>,
        /// Dimension used for the default constants when no run is given.
        #[arg(long, default_value_t = 5)]
        dim: usize,
        /// Evaluate the annuli on the checkpoints of this run.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Write the report here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare against the brute-force references and write comparison tables.
    Oracle {
        /// Directory for the tables; defaults to the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Monte-Carlo sample count.
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
    /// Run the invariant suite.
    Selftest,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Invariant(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e {
                Error::Config { .. } | Error::InvalidParameter { .. } => 2,
                Error::NonFinite { .. }
                | Error::NonContraction { .. }
                | Error::NotConverged { .. }
                | Error::NegativeDensity { .. }
                | Error::Numerical(_) => 3,
                Error::CascadeHypothesis { .. } | Error::CascadeInvariant(_) => 4,
                _ => 1,
            },
            CliError::Invariant(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self.code() {
            2 => "config",
            3 => "numeric",
            4 => "invariant",
            _ => "io",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config } => commands::simulate(&config),
        Command::Diagnose { run } => commands::diagnose(&run),
        Command::Intervals { run } => commands::intervals(&run),
        Command::Cascade {
            tiling,
            a,
            dim,
            run,
            output,
        } => commands::cascade(&tiling, a, dim, run.as_deref(), output.as_deref()),
        Command::Oracle { output, seed, samples } => commands::oracle(output, seed, samples),
        Command::Selftest => selftest::run(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(e.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_class() {
        let config = CliError::from(Error::Config {
            line: 3,
            message: "bad".into(),
        });
        assert_eq!((config.code(), config.kind()), (2, "config"));
        let numeric = CliError::from(Error::NotConverged {
            tol: 1e-9,
            max_iter: 5,
            last: 1.0,
        });
        assert_eq!((numeric.code(), numeric.kind()), (3, "numeric"));
        let invariant = CliError::Invariant("window".into());
        assert_eq!((invariant.code(), invariant.kind()), (4, "invariant"));
        let io = CliError::from(std::io::Error::other("disk"));
        assert_eq!((io.code(), io.kind()), (1, "io"));
    }
}
