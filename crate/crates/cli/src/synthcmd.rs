//! `ctxspike synth`: generate a synthetic corpus on disk.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctxspike_core::augment::HomophoneLexicon;
use ctxspike_core::io::{
    save_bundle, save_lexicon, save_manifest, save_phrases, save_tensor, save_transcripts,
    save_vocab, Manifest, ManifestUtterance, TensorData, Vocab,
};
use ctxspike_core::synth::{
    analytic_fixture_bundle, synth_corpus, synth_utterance, CorpusSpec, FixtureParams,
};

use crate::common::{validation_msg, CliError, PhaseExt};

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory for the corpus (created if absent).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub utterances: usize,
    #[arg(long, default_value_t = 100)]
    pub vocab: usize,
    #[arg(long, default_value_t = 50)]
    pub phrases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Log-margin of the corrupted token over the truth.
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    /// Generate a clean corpus with no corruptions.
    #[arg(long, default_value_t = false)]
    pub clean: bool,
    #[arg(long, default_value_t = 3)]
    pub frames_per_token: usize,
}

/// Vocab of single CJK characters, one per id, blank on line 0.
fn synthetic_vocab(size: usize) -> Result<Vocab, CliError> {
    let mut tokens = vec!["<blank>".to_string()];
    for i in 0..size - 1 {
        let c = char::from_u32(0x4E00 + i as u32)
            .ok_or_else(|| validation_msg("vocab too large for the CJK block"))?;
        tokens.push(c.to_string());
    }
    Vocab::new(tokens).validation()
}

/// Pairs phrase-alphabet tokens into a pronunciation lexicon so augment
/// runs have something to swap.
fn synthetic_lexicon(vocab_size: usize, rng: &mut ChaCha8Rng) -> HomophoneLexicon {
    let hi = 1 + (vocab_size as u32 - 1) * 6 / 10;
    let mut map: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for tok in 1..hi {
        if rng.gen_bool(0.5) {
            let mut alt = rng.gen_range(1..hi);
            if alt == tok {
                alt = if tok + 1 < hi { tok + 1 } else { 1.max(tok - 1) };
            }
            if alt != tok {
                map.insert(tok, vec![alt]);
            }
        }
    }
    HomophoneLexicon::new(map).expect("generated entries never self-map")
}

pub fn run(args: SynthArgs) -> Result<(), CliError> {
    if args.vocab < 16 {
        return Err(validation_msg("vocab must be at least 16"));
    }
    if args.vocab % 4 != 0 {
        return Err(validation_msg(
            "vocab must be divisible by the 4 attention heads",
        ));
    }
    let spec = CorpusSpec {
        utterances: args.utterances,
        vocab: args.vocab,
        phrase_count: args.phrases,
        frames_per_token: args.frames_per_token,
        corruption_margin: if args.clean { None } else { Some(args.margin) },
        seed: args.seed,
        ..CorpusSpec::default()
    };
    let corpus = synth_corpus(&spec).validation()?;
    let vocab = synthetic_vocab(args.vocab)?;
    let bundle = analytic_fixture_bundle(args.vocab, &FixtureParams::default()).validation()?;

    // Everything is validated; now produce the artifacts.
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Runtime(ctxspike_core::Error::Io {
            path: args.out.display().to_string(),
            source: e,
        }))?;
    save_vocab(&args.out.join("vocab.txt"), &vocab).runtime()?;
    save_phrases(&args.out.join("phrases.txt"), &corpus.pool, &vocab).runtime()?;
    save_bundle(&args.out.join("weights"), &bundle).runtime()?;
    let mut lex_rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0x5EED);
    let lexicon = synthetic_lexicon(args.vocab, &mut lex_rng);
    save_lexicon(&args.out.join("lexicon.tsv"), &lexicon, &vocab).runtime()?;

    let mut refs = Vec::with_capacity(corpus.utterances.len());
    let mut entries = Vec::with_capacity(corpus.utterances.len());
    for utt in &corpus.utterances {
        let synth = synth_utterance(&utt.spec).runtime()?;
        let emb_rel = format!("{}.emb.ctxt", utt.id);
        let post_rel = format!("{}.post.ctxt", utt.id);
        save_tensor(
            &args.out.join(&emb_rel),
            &TensorData::from_mat(&synth.embeddings),
        )
        .runtime()?;
        save_tensor(
            &args.out.join(&post_rel),
            &TensorData::from_mat(&synth.posterior.logp),
        )
        .runtime()?;
        let text = vocab.detokenize(&utt.spec.transcript).runtime()?;
        refs.push((utt.id.clone(), text.clone()));
        entries.push(ManifestUtterance {
            id: utt.id.clone(),
            text,
            embeddings: Some(emb_rel),
            posterior: Some(post_rel),
        });
    }
    save_transcripts(&args.out.join("refs.txt"), &refs).runtime()?;
    let manifest = Manifest {
        vocab: "vocab.txt".into(),
        weights: "weights".into(),
        list: "phrases.txt".into(),
        lexicon: Some("lexicon.tsv".into()),
        utterances: entries,
    };
    save_manifest(&args.out.join("manifest.json"), &manifest).runtime()?;
    log::info!(
        "wrote {} utterances, {} phrases to {}",
        corpus.utterances.len(),
        corpus.pool.len(),
        args.out.display()
    );
    Ok(())
}
