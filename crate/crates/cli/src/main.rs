//! `gazecast`: stage-by-stage forecasting pipeline over gaze recordings.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gazecast::pipeline::{Pipeline, RunConfig, Stage, StageStatus};
use gazecast::{Error, ErrorClass};

#[derive(Parser)]
#[command(name = "gazecast", version, about = "Gaze-position forecasting and per-subject error analysis")]
struct Cli {
    /// Run configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-subject work (0 = one per CPU).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Master seed; overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; overrides `out_dir` in the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort.
    Synth,
    /// Validate recordings and split subjects into train and test sets.
    Ingest,
    /// Label fixations and saccades.
    Classify,
    /// Compute per-subject oculomotor features.
    Features,
    /// Fit plant parameters for each evaluated subject.
    FitOpkf,
    /// Train one LSTM per prediction horizon.
    TrainLstm,
    /// Forecast every evaluated subject with every predictor.
    Predict,
    /// Score forecasts and write one report bundle per horizon.
    Evaluate,
    /// Collect the bundles into cross-horizon tables.
    Report,
    /// Run every stage in order, reusing cached results.
    RunAll,
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Print the default configuration.
    Init,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let stage = match &cli.command {
        Command::Config { action: ConfigAction::Init } => {
            println!("{}", load_config(cli)?.to_json()?);
            return Ok(());
        }
        Command::RunAll => None,
        Command::Synth => Some(Stage::Synth),
        Command::Ingest => Some(Stage::Ingest),
        Command::Classify => Some(Stage::Classify),
        Command::Features => Some(Stage::Features),
        Command::FitOpkf => Some(Stage::FitOpkf),
        Command::TrainLstm => Some(Stage::TrainLstm),
        Command::Predict => Some(Stage::Predict),
        Command::Evaluate => Some(Stage::Evaluate),
        Command::Report => Some(Stage::Report),
    };
    let pipeline = Pipeline::new(load_config(cli)?, cli.jobs)?;
    let results = match stage {
        Some(s) => vec![(s, pipeline.run_stage(s)?)],
        None => pipeline.run_all()?,
    };
    for (s, status) in results {
        let word = match status {
            StageStatus::Ran => "done",
            StageStatus::Cached => "cached",
            StageStatus::Skipped => "skipped",
        };
        println!("{s}: {word}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
