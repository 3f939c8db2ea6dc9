//! Shared plumbing: the two-phase error split (validation vs runtime)
//! and corpus loading helpers.

use std::fmt;
use std::path::{Path, PathBuf};

use ctxspike_core::context::BiasingList;
use ctxspike_core::io::{
    load_bundle, load_manifest, load_phrases, load_tensor, load_vocab, RunConfig, Vocab,
};
use ctxspike_core::tensor::{Mat, WeightBundle};
use ctxspike_core::Error;

use crate::Overrides;

/// Validation errors exit 1 and never leave partial artifacts; runtime
/// errors exit 2.
#[derive(Debug)]
pub enum CliError {
    Validation(Error),
    Runtime(Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(e) | CliError::Runtime(e) => e.fmt(f),
        }
    }
}

pub trait PhaseExt<T> {
    /// Marks an error as belonging to input validation.
    fn validation(self) -> Result<T, CliError>;
    /// Marks an error as a mid-run failure.
    fn runtime(self) -> Result<T, CliError>;
}

impl<T> PhaseExt<T> for Result<T, Error> {
    fn validation(self) -> Result<T, CliError> {
        self.map_err(CliError::Validation)
    }

    fn runtime(self) -> Result<T, CliError> {
        self.map_err(CliError::Runtime)
    }
}

pub fn validation_msg(msg: impl Into<String>) -> CliError {
    CliError::Validation(Error::Contract(msg.into()))
}

/// Loads the config file (when given) and applies flag overrides.
pub fn effective_config(overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = match &overrides.config {
        Some(path) => ctxspike_core::io::load_config(path).validation()?,
        None => RunConfig::default(),
    };
    if let Some(v) = overrides.beam {
        cfg.beam = v;
    }
    if let Some(v) = overrides.bias_score {
        cfg.bias_score = v;
    }
    if let Some(v) = overrides.graph_score {
        cfg.graph_score = v;
    }
    if let Some(v) = overrides.q {
        cfg.q = v;
    }
    if let Some(v) = overrides.p {
        cfg.p = v;
    }
    if let Some(v) = overrides.window_factor {
        cfg.window_factor = v;
    }
    if overrides.implicit_weight.is_some() {
        cfg.implicit_weight = overrides.implicit_weight;
    }
    if overrides.explicit_weight.is_some() {
        cfg.explicit_weight = overrides.explicit_weight;
    }
    if overrides.sf_weight.is_some() {
        cfg.sf_weight = overrides.sf_weight;
    }
    if let Some(v) = overrides.seed {
        cfg.seed = v;
    }
    if let Some(v) = overrides.jobs {
        cfg.jobs = v;
    }
    Ok(cfg)
}

/// A fully loaded corpus: everything validated up front so failures
/// surface before any output file exists.
pub struct LoadedCorpus {
    pub vocab: Vocab,
    pub weights: WeightBundle,
    pub list: BiasingList,
    pub utterances: Vec<LoadedUtterance>,
}

pub struct LoadedUtterance {
    pub id: String,
    pub embeddings: Option<Mat>,
    pub posterior: Option<Mat>,
}

pub fn load_corpus(manifest_path: &Path) -> Result<LoadedCorpus, CliError> {
    let manifest = load_manifest(manifest_path).validation()?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let vocab = load_vocab(&base.join(&manifest.vocab)).validation()?;
    let weights = load_bundle(&base.join(&manifest.weights)).validation()?;
    let list_tokens = load_phrases(&base.join(&manifest.list), &vocab).validation()?;
    let list = BiasingList::with_blank_entry(list_tokens, vocab.blank()).validation()?;
    let mut utterances = Vec::with_capacity(manifest.utterances.len());
    for entry in &manifest.utterances {
        // Reference text must tokenize cleanly even though decode does
        // not consume it; a malformed manifest should fail fast.
        vocab.tokenize_greedy(&entry.text).map_err(|offset| {
            validation_msg(format!(
                "utterance {}: reference text unmatchable at char {offset}",
                entry.id
            ))
        })?;
        let load_mat = |rel: &Option<String>| -> Result<Option<Mat>, CliError> {
            match rel {
                None => Ok(None),
                Some(rel) => {
                    let tensor = load_tensor(&base.join(rel)).validation()?;
                    Ok(Some(tensor.to_mat().validation()?))
                }
            }
        };
        utterances.push(LoadedUtterance {
            id: entry.id.clone(),
            embeddings: load_mat(&entry.embeddings)?,
            posterior: load_mat(&entry.posterior)?,
        });
    }
    Ok(LoadedCorpus {
        vocab,
        weights,
        list,
        utterances,
    })
}

/// Resolves an output path, refusing to silently treat a directory.
pub fn out_file(path: &Path) -> Result<&Path, CliError> {
    if path.as_os_str().is_empty() {
        return Err(validation_msg("empty output path"));
    }
    Ok(path)
}
