//! `ctxspike augment`: sample contextual phrases from reference
//! transcripts, apply homophone replacement, and borrow distractors from
//! the other utterances' lists.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use ctxspike_core::augment::{add_distractors, augment_utterance, AugmentedExample};
use ctxspike_core::io::{load_lexicon, load_transcripts, load_vocab, Vocab};
use ctxspike_core::Error;

use crate::common::{validation_msg, CliError, PhaseExt};

#[derive(Args, Debug)]
pub struct AugmentArgs {
    /// Reference transcripts (`id<TAB>text`).
    #[arg(long)]
    pub refs: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Homophone lexicon TSV.
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Per-phrase replacement probability.
    #[arg(long, default_value_t = 0.1)]
    pub prob: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON-lines output, one augmented utterance per line.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct AugmentRecord {
    id: String,
    transcript: String,
    phrases: Vec<String>,
    occurrences: Vec<(usize, usize)>,
    distractors: Vec<String>,
    replacements: Vec<ReplacementRecord>,
    skipped: Vec<usize>,
}

#[derive(Serialize)]
struct ReplacementRecord {
    phrase_idx: usize,
    position: usize,
    old: String,
    new: String,
}

fn record(
    id: &str,
    example: &AugmentedExample,
    vocab: &Vocab,
) -> Result<AugmentRecord, Error> {
    Ok(AugmentRecord {
        id: id.to_string(),
        transcript: vocab.detokenize(&example.transcript)?,
        phrases: example
            .phrases
            .iter()
            .map(|p| vocab.detokenize(p))
            .collect::<Result<_, Error>>()?,
        occurrences: example
            .occurrences
            .iter()
            .map(|o| (o.start, o.len))
            .collect(),
        distractors: example
            .distractors
            .iter()
            .map(|p| vocab.detokenize(p))
            .collect::<Result<_, Error>>()?,
        replacements: example
            .replacements
            .iter()
            .map(|r| {
                Ok(ReplacementRecord {
                    phrase_idx: r.phrase_idx,
                    position: r.position,
                    old: vocab.token_text(r.old)?.to_string(),
                    new: vocab.token_text(r.new)?.to_string(),
                })
            })
            .collect::<Result<_, Error>>()?,
        skipped: example.skipped.clone(),
    })
}

pub fn run(args: AugmentArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&args.prob) {
        return Err(validation_msg(format!(
            "replacement probability {} outside [0, 1]",
            args.prob
        )));
    }
    let vocab = load_vocab(&args.vocab).validation()?;
    let lexicon = load_lexicon(&args.lexicon, &vocab).validation()?;
    lexicon.validate_vocab(vocab.len()).validation()?;
    let refs = load_transcripts(&args.refs).validation()?;
    let mut transcripts = Vec::with_capacity(refs.len());
    for (id, text) in &refs {
        let tokens = vocab.tokenize_greedy(text).map_err(|offset| {
            validation_msg(format!("utterance {id}: unmatchable text at char {offset}"))
        })?;
        transcripts.push((id.clone(), tokens));
    }

    // Pass 1: sample and replace per utterance (no distractors yet).
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut examples = Vec::with_capacity(transcripts.len());
    for (id, tokens) in &transcripts {
        let example = augment_utterance(tokens, &[], &lexicon, args.prob, &mut rng)
            .map_err(CliError::Runtime)?;
        if example.phrases.is_empty() {
            log::warn!("utterance {id} too short to sample phrases");
        }
        examples.push(example);
    }
    // Pass 2: distractors come from the other utterances' sampled lists.
    for i in 0..examples.len() {
        let pool: Vec<Vec<ctxspike_core::TokenId>> = examples
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, e)| e.phrases.iter().cloned())
            .collect();
        let mut distractors = std::mem::take(&mut examples[i].distractors);
        add_distractors(&mut distractors, &pool, &mut rng);
        examples[i].distractors = distractors;
    }

    let mut file = std::fs::File::create(&args.out).map_err(|e| {
        CliError::Runtime(Error::Io {
            path: args.out.display().to_string(),
            source: e,
        })
    })?;
    for ((id, _), example) in transcripts.iter().zip(&examples) {
        let rec = record(id, example, &vocab).runtime()?;
        let line = serde_json::to_string(&rec)
            .map_err(|e| CliError::Runtime(Error::Contract(format!("augment json: {e}"))))?;
        writeln!(file, "{line}").map_err(|e| {
            CliError::Runtime(Error::Io {
                path: args.out.display().to_string(),
                source: e,
            })
        })?;
    }
    Ok(())
}
