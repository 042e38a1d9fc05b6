//! Command-line front end: preprocessing, postprocessing, evaluation,
//! voxel statistics, synthetic data and a mock labeler.

pub mod commands;
pub mod profile;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "multiscan", version, about = "Multi-scan LiDAR segmentation toolkit")]
pub struct Cli {
    /// Worker threads for per-frame parallelism (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build downsampled multi-scan frames for every scan of a sequence.
    Preprocess(commands::PreprocessArgs),
    /// Merge single- and multi-scan predictions and vote over the sequence.
    Postprocess(commands::PostprocessArgs),
    /// Range-bucketed IoU report.
    Evaluate(commands::EvaluateArgs),
    /// Voxel distribution over close, medium and far ranges.
    Stats(commands::StatsArgs),
    /// Generate a synthetic sequence.
    Synth(commands::SynthArgs),
    /// Label points with a range-dependent noisy oracle.
    MockPredict(commands::MockPredictArgs),
}

impl Command {
    pub fn stage(&self) -> &'static str {
        match self {
            Command::Preprocess(_) => "preprocess",
            Command::Postprocess(_) => "postprocess",
            Command::Evaluate(_) => "evaluate",
            Command::Stats(_) => "stats",
            Command::Synth(_) => "synth",
            Command::MockPredict(_) => "mock-predict",
        }
    }

    pub fn run(&self) -> anyhow::Result<()> {
        match self {
            Command::Preprocess(a) => commands::preprocess(a).map(drop),
            Command::Postprocess(a) => commands::postprocess(a),
            Command::Evaluate(a) => commands::evaluate(a).map(drop),
            Command::Stats(a) => commands::stats(a).map(drop),
            Command::Synth(a) => commands::synth(a).map(drop),
            Command::MockPredict(a) => commands::mock_predict(a).map(drop),
        }
    }
}

/// Runs a parsed command line on a pool of `jobs` threads.
pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        anyhow::ensure!(n > 0, "--jobs must be at least 1");
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    pool.install(|| cli.command.run())
}
