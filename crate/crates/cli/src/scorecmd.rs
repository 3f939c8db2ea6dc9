//! `ctxspike score`: biased/unbiased error rates for a hypotheses file
//! against references.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;

use ctxspike_core::io::{load_phrases, load_transcripts, load_vocab};
use ctxspike_core::metrics::{score, EvalReport};
use ctxspike_core::Error;

use crate::common::{validation_msg, CliError, PhaseExt};

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Reference transcripts (`id<TAB>text`).
    #[arg(long)]
    pub refs: PathBuf,
    /// Hypotheses (`id<TAB>text`).
    #[arg(long)]
    pub hyps: PathBuf,
    /// Biasing phrase list.
    #[arg(long)]
    pub list: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Report output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: ScoreArgs) -> Result<(), CliError> {
    let vocab = load_vocab(&args.vocab).validation()?;
    let phrases = load_phrases(&args.list, &vocab).validation()?;
    let refs = load_transcripts(&args.refs).validation()?;
    let hyps = load_transcripts(&args.hyps).validation()?;
    let hyp_map: BTreeMap<&str, &str> = hyps
        .iter()
        .map(|(id, text)| (id.as_str(), text.as_str()))
        .collect();

    let mut pooled = EvalReport::default();
    for (id, ref_text) in &refs {
        let hyp_text = hyp_map
            .get(id.as_str())
            .ok_or_else(|| validation_msg(format!("no hypothesis for utterance {id}")))?;
        let reference = vocab.tokenize_greedy(ref_text).map_err(|offset| {
            validation_msg(format!("utterance {id}: reference unmatchable at char {offset}"))
        })?;
        let hypothesis = vocab.tokenize_greedy(hyp_text).map_err(|offset| {
            validation_msg(format!("utterance {id}: hypothesis unmatchable at char {offset}"))
        })?;
        pooled.absorb(&score(&reference, &hypothesis, &phrases));
    }
    if pooled.degenerate() {
        log::warn!("a class has errors but no reference mass; its rate is infinite");
    }

    let mut out = pooled.to_table();
    out.push('\n');
    out.push_str(&pooled.to_kv_lines());
    match &args.out {
        Some(path) => std::fs::write(path, out).map_err(|e| {
            CliError::Runtime(Error::Io {
                path: path.display().to_string(),
                source: e,
            })
        }),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}
