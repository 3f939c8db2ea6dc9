//! `ctxspike spikes`, `ctxspike filter`, `ctxspike build-graph`: thin
//! file-level wrappers over the corresponding library pieces.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;

use ctxspike_core::ctc::{greedy_spikes, PosteriorMatrix};
use ctxspike_core::filter::{filter_list, FilterConfig};
use ctxspike_core::graph::BiasGraph;
use ctxspike_core::io::{load_phrases, load_tensor, load_vocab, save_graph_dump};
use ctxspike_core::Error;

use crate::common::{load_corpus, validation_msg, CliError, PhaseExt};
use crate::Overrides;

fn write_output(path: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, content).map_err(|e| {
            CliError::Runtime(Error::Io {
                path: p.display().to_string(),
                source: e,
            })
        }),
        None => std::io::stdout().write_all(content.as_bytes()).map_err(|e| {
            CliError::Runtime(Error::Io {
                path: "<stdout>".into(),
                source: e,
            })
        }),
    }
}

#[derive(Args, Debug)]
pub struct SpikesArgs {
    /// Posterior tensor (T x V log-probabilities).
    #[arg(long)]
    pub posterior: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Output TSV (frame, token, logp); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_spikes(args: SpikesArgs) -> Result<(), CliError> {
    let vocab = load_vocab(&args.vocab).validation()?;
    let tensor = load_tensor(&args.posterior).validation()?;
    let post = PosteriorMatrix::new(tensor.to_mat().validation()?, vocab.blank());
    post.validate().validation()?;
    if post.vocab() != vocab.len() {
        return Err(validation_msg(format!(
            "posterior has {} columns but the vocab has {} tokens",
            post.vocab(),
            vocab.len()
        )));
    }
    let mut out = String::new();
    for s in greedy_spikes(&post) {
        out.push_str(&format!(
            "{}\t{}\t{:.6}\n",
            s.frame,
            vocab.token_text(s.token).validation()?,
            s.logp
        ));
    }
    write_output(&args.out, &out)
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output TSV (utterance, phrase, psc, soc, kept); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Disable the order-aware second stage.
    #[arg(long, default_value_t = false)]
    pub no_stage2: bool,
    /// Plain comparison variant: all frames, no mismatch penalty.
    #[arg(long, default_value_t = false)]
    pub vanilla: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

pub fn run_filter(args: FilterArgs) -> Result<(), CliError> {
    let cfg = crate::common::effective_config(&args.overrides)?;
    let corpus = load_corpus(&args.manifest)?;
    let base = if args.vanilla {
        FilterConfig::vanilla()
    } else {
        FilterConfig::default()
    };
    let filter_cfg = FilterConfig {
        q: cfg.q,
        p: cfg.p,
        window_factor: cfg.window_factor,
        stage2_enabled: cfg.stage2 && !args.no_stage2,
        ..base
    };
    let mut out = String::new();
    for utt in &corpus.utterances {
        let posterior = match (&utt.posterior, &utt.embeddings) {
            (Some(logp), _) => PosteriorMatrix::new(logp.clone(), corpus.vocab.blank()),
            (None, Some(emb)) => {
                ctxspike_core::context::ctc_head(emb, &corpus.weights).runtime()?
            }
            (None, None) => {
                return Err(validation_msg(format!(
                    "utterance {} has neither posterior nor embeddings",
                    utt.id
                )))
            }
        };
        let report = filter_list(&posterior, &corpus.list, &filter_cfg).runtime()?;
        for (idx, verdict) in report.verdicts.iter().enumerate().skip(1) {
            let phrase = &corpus.list.phrases()[idx];
            let text = corpus.vocab.detokenize(phrase).runtime()?;
            let soc = verdict
                .soc
                .map_or("-".to_string(), |s| format!("{s:.6}"));
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{}\t{}\n",
                utt.id, text, verdict.psc, soc, verdict.kept as u8
            ));
        }
    }
    write_output(&args.out, &out)
}

#[derive(Args, Debug)]
pub struct BuildGraphArgs {
    /// Phrase list, one phrase per line.
    #[arg(long)]
    pub list: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Per-token arc score.
    #[arg(long, default_value_t = 1.0)]
    pub graph_score: f64,
    /// Graph listing output path.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_build_graph(args: BuildGraphArgs) -> Result<(), CliError> {
    let vocab = load_vocab(&args.vocab).validation()?;
    let phrases = load_phrases(&args.list, &vocab).validation()?;
    let graph = BiasGraph::build(&phrases, args.graph_score, vocab.blank()).validation()?;
    save_graph_dump(&args.out, &graph).runtime()?;
    log::info!(
        "graph over {} phrases: {} states",
        phrases.len(),
        graph.num_states()
    );
    Ok(())
}
