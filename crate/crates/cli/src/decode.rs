//! `ctxspike decode`: biased decoding over a corpus manifest with a
//! JSON-lines trace per utterance.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use ctxspike_core::context::ctc_head;
use ctxspike_core::ctc::PosteriorMatrix;
use ctxspike_core::filter::FilterConfig;
use ctxspike_core::fusion::{run_cascade, CascadeConfig, DecodeParams, Method, UtteranceInputs};
use ctxspike_core::io::RunConfig;
use ctxspike_core::Error;

use crate::common::{
    effective_config, load_corpus, out_file, validation_msg, CliError, PhaseExt,
};
use crate::Overrides;

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// Corpus manifest (overrides the config's `manifest`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// `baseline`, or `+`-joined methods: `implicit`, `explicit`, `sf`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Hypotheses file (`id<TAB>text` per utterance).
    #[arg(long)]
    pub out: PathBuf,
    /// JSON-lines decode trace; defaults to `<out>.trace.jsonl`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// Parses the mode string into the cascade config, honoring per-method
/// weight overrides.
pub fn parse_mode(mode: &str, cfg: &RunConfig) -> Result<CascadeConfig, Error> {
    let mut methods = Vec::new();
    if mode != "baseline" {
        for part in mode.split('+') {
            let m = match part {
                "implicit" => Method::Implicit,
                "explicit" => Method::Explicit,
                "sf" => Method::ShallowFusion,
                other => {
                    return Err(Error::Contract(format!(
                        "unknown mode component `{other}` (want implicit, explicit, sf, or baseline)"
                    )))
                }
            };
            if methods.contains(&m) {
                return Err(Error::Contract(format!("mode repeats `{part}`")));
            }
            methods.push(m);
        }
    }
    let mut cascade = CascadeConfig::cascade(&methods);
    if let Some(w) = cfg.implicit_weight {
        if cascade.implicit_enabled {
            cascade.implicit_weight = w;
        }
    }
    if let Some(w) = cfg.explicit_weight {
        if cascade.explicit_enabled {
            cascade.explicit_weight = w;
        }
    }
    if let Some(w) = cfg.sf_weight {
        if cascade.sf_enabled {
            cascade.sf_weight = w;
        }
    }
    Ok(cascade)
}

fn decode_params(cfg: &RunConfig) -> DecodeParams {
    DecodeParams {
        beam: cfg.beam,
        ctx_beam: cfg.ctx_beam,
        bias_score: cfg.bias_score,
        graph_score: cfg.graph_score,
        top_k: None,
        filter: FilterConfig {
            q: cfg.q,
            p: cfg.p,
            window_factor: cfg.window_factor,
            stage2_enabled: cfg.stage2,
            ..FilterConfig::default()
        },
    }
}

#[derive(Serialize)]
struct SpikeTrace {
    frame: usize,
    token: String,
    logp: f64,
}

#[derive(Serialize)]
struct TraceRecord {
    id: String,
    mode: String,
    spikes: Vec<SpikeTrace>,
    kept_phrases: Vec<String>,
    applications: Vec<(usize, String)>,
    hypothesis: String,
    score_ctc: f64,
    score_external: f64,
    combined: f64,
}

pub fn run(args: DecodeArgs) -> Result<(), CliError> {
    let cfg = effective_config(&args.overrides)?;
    let mode = args.mode.clone().unwrap_or_else(|| cfg.mode.clone());
    let cascade = parse_mode(&mode, &cfg).validation()?;
    let manifest_path = args
        .manifest
        .clone()
        .or_else(|| cfg.manifest.clone())
        .ok_or_else(|| validation_msg("decode needs --manifest (or `manifest` in the config)"))?;
    let corpus = load_corpus(&manifest_path)?;
    let params = decode_params(&cfg);

    // Every artifact the mode needs must exist before any output is
    // created.
    let needs_embeddings = cascade.implicit_enabled || cascade.explicit_enabled;
    if needs_embeddings {
        let method = if cascade.implicit_enabled { "implicit" } else { "explicit" };
        for utt in &corpus.utterances {
            if utt.embeddings.is_none() {
                return Err(CliError::Validation(Error::Config {
                    method,
                    detail: format!("utterance {} has no embeddings tensor", utt.id),
                }));
            }
        }
    }
    for utt in &corpus.utterances {
        if utt.embeddings.is_none() && utt.posterior.is_none() {
            return Err(CliError::Validation(Error::Config {
                method: "baseline",
                detail: format!("utterance {} has neither posterior nor embeddings", utt.id),
            }));
        }
    }

    let jobs = cfg.jobs.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| validation_msg(format!("thread pool: {e}")))?;

    struct UttResult {
        hyp_line: (String, String),
        trace: TraceRecord,
    }

    let decode_one = |utt: &crate::common::LoadedUtterance| -> Result<UttResult, Error> {
        let posterior = match (&utt.posterior, &utt.embeddings) {
            (Some(logp), _) => PosteriorMatrix::new(logp.clone(), corpus.vocab.blank()),
            (None, Some(emb)) => ctc_head(emb, &corpus.weights)?,
            (None, None) => unreachable!("validated above"),
        };
        let inputs = UtteranceInputs {
            posterior: &posterior,
            embeddings: utt.embeddings.as_ref(),
            weights: Some(&corpus.weights),
            list: &corpus.list,
        };
        let outcome = run_cascade(&inputs, &cascade, &params)?;
        let best = outcome.best();
        let tokens: Vec<_> = best.map(|h| h.tokens.clone()).unwrap_or_default();
        let text = corpus.vocab.detokenize(&tokens)?;
        let spikes = outcome
            .spikes
            .iter()
            .map(|s| {
                Ok(SpikeTrace {
                    frame: s.frame,
                    token: corpus.vocab.token_text(s.token)?.to_string(),
                    logp: s.logp,
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        let kept_phrases = match &outcome.kept {
            None => Vec::new(),
            Some(kept) => kept
                .content()
                .iter()
                .map(|p| corpus.vocab.detokenize(p))
                .collect::<Result<Vec<_>, Error>>()?,
        };
        let applications = match &outcome.applications {
            None => Vec::new(),
            Some(app) => app
                .entries
                .iter()
                .map(|&(frame, tok)| Ok((frame, corpus.vocab.token_text(tok)?.to_string())))
                .collect::<Result<Vec<_>, Error>>()?,
        };
        let trace = TraceRecord {
            id: utt.id.clone(),
            mode: mode.clone(),
            spikes,
            kept_phrases,
            applications,
            hypothesis: text.clone(),
            score_ctc: best.map_or(0.0, |h| h.score_ctc),
            score_external: best.map_or(0.0, |h| h.score_external),
            combined: best.map_or(0.0, |h| h.combined),
        };
        Ok(UttResult {
            hyp_line: (utt.id.clone(), text),
            trace,
        })
    };

    // Utterances decode in parallel; output order follows the manifest.
    let results: Result<Vec<UttResult>, Error> = pool.install(|| {
        corpus
            .utterances
            .par_iter()
            .map(decode_one)
            .collect::<Result<Vec<_>, Error>>()
    });
    let results = results.runtime()?;

    let hyp_lines: Vec<(String, String)> =
        results.iter().map(|r| r.hyp_line.clone()).collect();
    ctxspike_core::io::save_transcripts(out_file(&args.out)?, &hyp_lines).runtime()?;
    let trace_path = args.trace.clone().unwrap_or_else(|| {
        let mut name = args.out.file_name().unwrap_or_default().to_os_string();
        name.push(".trace.jsonl");
        args.out.with_file_name(name)
    });
    let mut file = std::fs::File::create(&trace_path)
        .map_err(|e| CliError::Runtime(Error::Io {
            path: trace_path.display().to_string(),
            source: e,
        }))?;
    for r in &results {
        let line = serde_json::to_string(&r.trace)
            .map_err(|e| CliError::Runtime(Error::Contract(format!("trace json: {e}"))))?;
        writeln!(file, "{line}").map_err(|e| {
            CliError::Runtime(Error::Io {
                path: trace_path.display().to_string(),
                source: e,
            })
        })?;
    }
    log::info!("decoded {} utterances in mode {mode}", corpus.utterances.len());
    Ok(())
}
