//! `ctxspike`: batch front door for contextual-biasing decoding
//! experiments. Subcommands compose the pipeline: corpus synthesis,
//! spike inspection, phrase filtering, graph building, biased decoding,
//! data augmentation, and error-rate scoring.

mod augmentcmd;
mod common;
mod decode;
mod scorecmd;
mod synthcmd;
mod tools;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use common::CliError;

fn defaults_table() -> String {
    let d = ctxspike_core::io::RunConfig::default();
    format!(
        "Defaults (config keys accept the same names):\n\
         \x20 mode={} beam={} ctx_beam={}\n\
         \x20 bias_score={} graph_score={}\n\
         \x20 q={} p={} window_factor={} stage2={}\n\
         \x20 implicit/explicit/sf weights: 1.0 alone, 0.75 two-way, 0.5 three-way\n\
         \x20 lambda1={} lambda2={} smoothing_eps={} sample_prob={}\n\
         \x20 seed={} jobs={}\n\
         Set CTXSPIKE_LOG=debug for verbose logging.",
        d.mode,
        d.beam,
        d.ctx_beam,
        d.bias_score,
        d.graph_score,
        d.q,
        d.p,
        d.window_factor,
        d.stage2,
        d.lambda1,
        d.lambda2,
        d.smoothing_eps,
        d.sample_prob,
        d.seed,
        d.jobs,
    )
}

#[derive(Parser)]
#[command(
    name = "ctxspike",
    version,
    about = "Contextual-biasing decoding toolkit for CTC speech recognition",
    after_help = defaults_table()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: vocab, phrase list, weights, tensors,
    /// references, and a manifest.
    Synth(synthcmd::SynthArgs),
    /// List the emitting frames of a posterior.
    Spikes(tools::SpikesArgs),
    /// Run two-stage phrase filtering over a corpus.
    Filter(tools::FilterArgs),
    /// Build the bias decoding graph for a phrase list.
    BuildGraph(tools::BuildGraphArgs),
    /// Decode a corpus with the selected biasing methods.
    Decode(decode::DecodeArgs),
    /// Sample phrases, apply homophone replacement, add distractors.
    Augment(augmentcmd::AugmentArgs),
    /// Score hypotheses against references with B-CER/U-CER.
    Score(scorecmd::ScoreArgs),
}

/// Flags shared by the decode-adjacent subcommands; every one overrides
/// the matching config key.
#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub bias_score: Option<f64>,
    #[arg(long)]
    pub graph_score: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub q: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub p: Option<f64>,
    #[arg(long)]
    pub window_factor: Option<f64>,
    #[arg(long)]
    pub implicit_weight: Option<f64>,
    #[arg(long)]
    pub explicit_weight: Option<f64>,
    #[arg(long)]
    pub sf_weight: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Utterance-level worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("CTXSPIKE_LOG")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => synthcmd::run(args),
        Command::Spikes(args) => tools::run_spikes(args),
        Command::Filter(args) => tools::run_filter(args),
        Command::BuildGraph(args) => tools::run_build_graph(args),
        Command::Decode(args) => decode::run(args),
        Command::Augment(args) => augmentcmd::run(args),
        Command::Score(args) => scorecmd::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
