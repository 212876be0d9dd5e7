//! `dualrate`: ingest, sample, split, train, evaluate, profile and
//! extrapolate product-rating regressors from the command line.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualrate_core::sampling::{Split, SplitRatios};
use dualrate_core::{Error, ErrorClass};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "dualrate", version, about = "Multimodal product-rating regression toolkit")]
struct Cli {
    /// Seed for every random stream (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving artifacts and manifests.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Re-hash artifacts against their manifests. Without a subcommand,
    /// checks every manifest in the output directory.
    #[arg(long, global = true)]
    verify: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic raw JSON-lines corpus.
    Synth(SynthArgs),
    /// Parse, filter and tokenize a raw JSON-lines file.
    Ingest(IngestArgs),
    /// Per-category random subsample of a cleaned file.
    Sample(SampleArgs),
    /// Stratified train/validation/test assignment.
    Split(SplitArgs),
    /// Train a regressor and save the best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Measure inference efficiency of a checkpoint.
    Profile(ProfileArgs),
    /// Fit the data-scaling power law and extrapolate.
    Extrapolate(ExtrapolateArgs),
    /// Weighted loss versus unit weights over several seeds.
    Experiment(ExperimentArgs),
    /// ingest, sample, split, train and eval in one go.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub items: Option<usize>,
    /// Rating-count dependent label noise.
    #[arg(long)]
    pub noisy: bool,
    #[arg(long)]
    pub bad_fraction: Option<f64>,
    /// Output file (default: <out-dir>/raw.jsonl).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Abort on the first malformed line.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Cleaned JSON-lines file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub floor: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Cleaned (usually sampled) JSON-lines file.
    #[arg(long)]
    pub input: PathBuf,
    /// Train:validation:test, e.g. 8:1:1.
    #[arg(long)]
    pub ratios: Option<SplitRatios>,
    #[arg(long)]
    pub rare_threshold: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Raw JSON-lines file; re-cleaned so images are available.
    #[arg(long)]
    pub raw: PathBuf,
    /// Split assignment CSV.
    #[arg(long)]
    pub splits: PathBuf,
    /// Train with unit sample weights.
    #[arg(long)]
    pub unweighted: bool,
    /// Checkpoint path (default: <out-dir>/checkpoint.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long)]
    pub splits: PathBuf,
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    #[arg(long)]
    pub ces_factor: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Raw JSON-lines file streamed through preprocessing and inference.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Report path (default: <out-dir>/profile.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtrapolateArgs {
    /// CSV with header `fraction,plcc`; the built-in reference points when absent.
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long)]
    pub at: Option<f64>,
    #[arg(long)]
    pub ces_factor: Option<f64>,
    /// SVG chart of the fitted curve.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Drop the 0.20 reference point before fitting.
    #[arg(long)]
    pub exclude_test_point: bool,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Raw JSON-lines file; a synthetic corpus is generated when absent.
    #[arg(long, requires = "splits")]
    pub raw: Option<PathBuf>,
    #[arg(long, requires = "raw")]
    pub splits: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Raw JSON-lines file.
    #[arg(long)]
    pub input: PathBuf,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "validation" | "valid" => Ok(Split::Validation),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split `{s}` (train, validation or test)")),
    }
}

/// An error tagged with the stage that raised it.
#[derive(Debug)]
pub struct Failure {
    pub stage: &'static str,
    pub error: Error,
}

pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T> Stage<T> for Result<T, Error> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|error| Failure { stage, error })
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numerical => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error [{}]: {}", f.stage, f.error);
            ExitCode::from(exit_code(f.error.class()))
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path).stage("config")?,
        None => RunConfig::default(),
    };
    let cfg = base.resolve(cli.seed, cli.out_dir).stage("config")?;
    let Some(command) = cli.command else {
        if cli.verify {
            return commands::verify_all(&cfg.out_dir);
        }
        return Err(Failure {
            stage: "usage",
            error: Error::Config("no subcommand given (see --help)".into()),
        });
    };
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(&cfg.out_dir, e))
        .stage("setup")?;
    let ctx = commands::Ctx {
        out: cfg.out_dir.clone(),
        cfg,
    };
    let manifest = match command {
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Ingest(a) => commands::ingest(&ctx, a),
        Command::Sample(a) => commands::sample(&ctx, a),
        Command::Split(a) => commands::split(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Profile(a) => commands::profile(&ctx, a),
        Command::Extrapolate(a) => commands::extrapolate(&ctx, a),
        Command::Experiment(a) => commands::experiment(&ctx, a),
        Command::Pipeline(a) => commands::pipeline(&ctx, a),
    }?;
    if cli.verify {
        let n = manifest::verify(&manifest).stage("verify")?;
        println!("verified {n} artifacts against {}", manifest.display());
    }
    Ok(())
}
