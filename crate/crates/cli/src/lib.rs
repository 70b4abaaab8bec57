//! Command-line front end: argument parsing, dispatch and exit codes.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration or usage error,
//! 3 I/O error, 4 training divergence, 5 sampler divergence, 6 pairing
//! mismatch, 7 malformed clip or checkpoint file.

pub mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use sonotrace_core::denoiser::ConditionMode;
use sonotrace_core::Error;

#[derive(Parser)]
#[command(
    name = "sonotrace",
    version,
    about = "Cascaded conditional diffusion for synthetic tongue ultrasound video"
)]
struct Cli {
    /// Worker threads (defaults to the available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and its manifest.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (default: <output_dir>/data).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a denoiser (or a two-stage cascade) on a manifest.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// Condition mode: A (audio) or A+T (audio and text).
        #[arg(long)]
        mode: Option<ConditionMode>,
        #[arg(long)]
        cascade: bool,
        /// Output directory (default: <output_dir>/train-<mode>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate one clip per condition entry.
    Sample {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint file, or the cascade index when --cascade is given.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Conditions file (a dataset manifest also works).
        #[arg(long)]
        conditions: PathBuf,
        /// Keep only entries of this split (train or test).
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write every frame as a PGM image.
        #[arg(long)]
        frames: bool,
        #[arg(long)]
        cascade: bool,
    },
    /// Compare generated clips against the test split of a manifest.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the header of a UTIV clip or SDNZ checkpoint.
    Inspect { path: PathBuf },
}

/// Exit code for `err`; `divergence` is 4 for training and 5 for sampling.
pub fn exit_code(err: &Error, divergence: u8) -> u8 {
    match err {
        Error::Config(_) | Error::Argument(_) => 2,
        Error::Io { .. } | Error::Json { .. } => 3,
        Error::Divergence { .. } => divergence,
        Error::Protocol { .. } => 6,
        Error::Format { .. } => 7,
        Error::NumericDomain(_) | Error::Condition(_) => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code; usage errors print clap's message and
/// return 2.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let (result, divergence) = match cli.command {
        Command::GenData { config, out } => (commands::gen_data(config.as_deref(), out), 4),
        Command::Train {
            config,
            manifest,
            mode,
            cascade,
            out,
        } => (
            commands::train(config.as_deref(), &manifest, mode, cascade, out),
            4,
        ),
        Command::Sample {
            config,
            checkpoint,
            conditions,
            split,
            out,
            frames,
            cascade,
        } => (
            commands::sample(commands::SampleArgs {
                config: config.as_deref(),
                checkpoint: &checkpoint,
                conditions: &conditions,
                split: split.as_deref(),
                out,
                frames,
                cascade,
            }),
            5,
        ),
        Command::Evaluate {
            config,
            generated,
            reference,
            out,
        } => (
            commands::evaluate(config.as_deref(), &generated, &reference, &out),
            5,
        ),
        Command::Inspect { path } => (commands::inspect(&path), 1),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e, divergence)
        }
    }
}
