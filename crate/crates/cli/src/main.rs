//! `kinverify`: learn BSIF filter banks, extract features, run the
//! cross-validated evaluation and generate synthetic datasets.

mod commands;
mod inspect;
mod settings;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kinverify::KinError;

use settings::Overrides;

#[derive(Parser, Debug)]
#[command(name = "kinverify", version, about = "Kinship verification from face-image pairs")]
struct Cli {
    /// More log output (-v debug, -vv trace). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn one BSIF filter bank per filter size from the manifest's images.
    LearnFilters {
        #[command(flatten)]
        settings: Overrides,
    },
    /// Write one feature tensor per distinct image into the feature cache.
    Extract {
        #[command(flatten)]
        settings: Overrides,
    },
    /// Run 5-fold cross-validation and write the JSON report and table.
    Eval {
        #[command(flatten)]
        settings: Overrides,
    },
    /// Generate a synthetic kin dataset (images and manifest).
    Synth {
        /// Output directory.
        #[arg(long)]
        out_dir: std::path::PathBuf,
        #[arg(long, default_value_t = 50)]
        families: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Noise weight in [0, 1].
        #[arg(long, default_value_t = 0.5)]
        difficulty: f64,
    },
    /// Print a filter bank, feature tensor or subspace model file as JSON.
    Inspect {
        file: std::path::PathBuf,
    },
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .init();
}

fn run(cli: Cli) -> Result<(), KinError> {
    match cli.command {
        Command::LearnFilters { settings } => commands::learn_filters(&settings.resolve()?),
        Command::Extract { settings } => commands::extract(&settings.resolve()?),
        Command::Eval { settings } => commands::eval(&settings.resolve()?),
        Command::Synth {
            out_dir,
            families,
            seed,
            difficulty,
        } => commands::synth(&out_dir, families, seed, difficulty),
        Command::Inspect { file } => inspect::inspect(&file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose, cli.quiet);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: {}: {message}", e.category());
            ExitCode::FAILURE
        }
    }
}
