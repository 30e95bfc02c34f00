mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ssmtrack_core::Error;

/// Frame/event single-object tracking on selective state-space models.
#[derive(Debug, Parser)]
#[command(name = "ssmtrack", version)]
struct Cli {
    /// Floating-point width for training and tracking
    #[arg(long, global = true, value_enum, default_value = "32")]
    precision: Precision,
    /// Worker threads for parallel sequence evaluation
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    #[value(name = "32")]
    F32,
    #[value(name = "64")]
    F64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset, one directory per sequence
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from scratch and write a checkpoint plus a loss log
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// dataset root holding sequence directories
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// loss log; defaults to `<out>.loss.txt`
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Track one sequence, or every sequence of a dataset root
    Track {
        #[arg(long)]
        checkpoint: PathBuf,
        /// a sequence directory or a dataset root
        #[arg(long)]
        sequence: PathBuf,
        /// results file, or a directory when tracking a dataset
        #[arg(long)]
        out: PathBuf,
        /// run-configuration file; only `window` is used
        #[arg(long)]
        config: Option<PathBuf>,
        /// write the score map of every frame as a grey pixmap into this directory
        #[arg(long)]
        dump_maps: Option<PathBuf>,
    },
    /// Score results against ground truth
    Eval {
        /// results file, or a directory of `<sequence>.txt` files
        #[arg(long)]
        results: PathBuf,
        /// `gt.txt`, a sequence directory, or a dataset root
        #[arg(long)]
        gt: PathBuf,
    },
    /// Report parameter count and FLOPs
    Bench {
        #[arg(long, conflicts_with = "checkpoint")]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// use the full-size configuration instead of the toy one
        #[arg(long, conflicts_with_all = ["config", "checkpoint"])]
        full_scale: bool,
    },
    /// Run the built-in invariant checks in 64-bit
    Selftest,
}

/// Exit status for each error class.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Io(_)) => 2,
        Some(Error::Numeric { .. }) => 3,
        Some(_) => 1,
        None if err.downcast_ref::<std::io::Error>().is_some() => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.max(1))
        .build_global()
    {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    let p = cli.precision;
    let outcome = match cli.command {
        Command::Synth { config, out } => commands::synth(config.as_deref(), &out),
        Command::Train { config, data, out, log } => {
            commands::train(p, config.as_deref(), &data, &out, log.as_deref())
        }
        Command::Track {
            checkpoint,
            sequence,
            out,
            config,
            dump_maps,
        } => commands::track(p, &checkpoint, &sequence, &out, config.as_deref(), dump_maps.as_deref()),
        Command::Eval { results, gt } => commands::eval(&results, &gt),
        Command::Bench {
            config,
            checkpoint,
            full_scale,
        } => commands::bench(config.as_deref(), checkpoint.as_deref(), full_scale),
        Command::Selftest => commands::selftest(),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
