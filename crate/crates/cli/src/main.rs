mod config;
mod jobs;

use clap::{Parser, Subcommand};
use psg_core::error::Error;
use std::path::PathBuf;
use std::process::ExitCode;

/// Differentially private dataset distillation toolkit.
#[derive(Debug, Parser)]
#[command(name = "psg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Finds the smallest noise multiplier meeting a privacy target.
    Calibrate {
        /// Target privacy spend.
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        /// Sampling rate; alternative to --batch with --n.
        #[arg(long)]
        q: Option<f64>,
        /// Nominal batch size.
        #[arg(long)]
        batch: Option<usize>,
        /// Dataset size.
        #[arg(long)]
        n: Option<usize>,
        /// Total sanitized releases to account for.
        #[arg(long)]
        steps: u64,
    },
    /// Distills real data into a small private synthetic set.
    Distill {
        /// Job file (TOML).
        config: PathBuf,
        /// Output directory; defaults to PSG_OUTPUT_ROOT, then the working
        /// directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Distillation through a convolutional generator instead of free
    /// pixels.
    DistillPrior {
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Trains fresh classifiers on a distilled set and scores them on the
    /// held-out split.
    Eval {
        config: PathBuf,
        /// Distilled set produced by distill or distill-prior.
        #[arg(long)]
        synthetic: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Runs the class-incremental protocol over disjoint stage partitions.
    Continual {
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Renders a distilled image set as a viewable grid (pgm or ppm).
    ExportImages {
        container: PathBuf,
        out: PathBuf,
        /// Images per row; defaults to the set's examples per class.
        #[arg(long)]
        cols: Option<usize>,
    },
    /// Summarizes a report file written by any other command.
    Report { path: PathBuf },
}

fn run(cli: Cli) -> psg_core::error::Result<()> {
    match cli.command {
        Command::Calibrate { epsilon, delta, q, batch, n, steps } => {
            jobs::calibrate(epsilon, delta, q, batch, n, steps)
        }
        Command::Distill { config, output } => jobs::distill(&config, output),
        Command::DistillPrior { config, output } => jobs::distill_prior(&config, output),
        Command::Eval { config, synthetic, output } => jobs::eval(&config, &synthetic, output),
        Command::Continual { config, output } => jobs::continual(&config, output),
        Command::ExportImages { container, out, cols } => {
            jobs::export_images(&container, &out, cols)
        }
        Command::Report { path } => jobs::report(&path),
    }
}

/// Exit codes: 2 for bad arguments or config (clap uses 2 as well), 3 for
/// infeasible privacy targets, 4 for unreadable or malformed data files, 1
/// for everything else.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 2,
        Error::PrivacyInfeasible(_) => 3,
        Error::Io { .. }
        | Error::IdxMagic { .. }
        | Error::IdxTruncated { .. }
        | Error::CountMismatch { .. }
        | Error::CsvParse { .. }
        | Error::ContainerMagic
        | Error::ContainerVersion { .. }
        | Error::ContainerChecksum { .. }
        | Error::ContainerTruncated { .. }
        | Error::LabelOutOfRange { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
