//! Training-data preparation: phrase sampling from transcripts,
//! distractor injection, and homophone replacement applied to the phrase
//! and the transcript together.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TokenId;

/// Tokens sharing a pronunciation. A token never maps to itself.
#[derive(Debug, Clone, Default)]
pub struct HomophoneLexicon {
    map: BTreeMap<TokenId, Vec<TokenId>>,
}

impl HomophoneLexicon {
    pub fn new(map: BTreeMap<TokenId, Vec<TokenId>>) -> Result<HomophoneLexicon> {
        for (&tok, alts) in &map {
            if alts.contains(&tok) {
                return Err(Error::Contract(format!("token {tok} maps to itself")));
            }
            if alts.is_empty() {
                return Err(Error::Contract(format!("token {tok} has no homophones")));
            }
        }
        Ok(HomophoneLexicon { map })
    }

    pub fn homophones(&self, token: TokenId) -> &[TokenId] {
        self.map.get(&token).map_or(&[], Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, &[TokenId])> {
        self.map.iter().map(|(&t, v)| (t, v.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn validate_vocab(&self, vocab: usize) -> Result<()> {
        for (&tok, alts) in &self.map {
            if tok as usize >= vocab || alts.iter().any(|&a| a as usize >= vocab) {
                return Err(Error::Contract(format!(
                    "lexicon entry for token {tok} exceeds vocab {vocab}"
                )));
            }
        }
        Ok(())
    }
}

/// Span of a sampled phrase inside its transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occurrence {
    pub start: usize,
    pub len: usize,
}

/// One logged homophone swap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replacement {
    pub phrase_idx: usize,
    pub position: usize,
    pub old: TokenId,
    pub new: TokenId,
}

/// A transcript with its sampled phrases, distractors, and the log of
/// every replacement that was applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedExample {
    pub transcript: Vec<TokenId>,
    /// Phrases sampled from this transcript, kept in sync with it.
    pub phrases: Vec<Vec<TokenId>>,
    pub occurrences: Vec<Occurrence>,
    /// Phrases borrowed from other utterances; never present in the
    /// transcript and exempt from the occurrence invariant.
    pub distractors: Vec<Vec<TokenId>>,
    pub replacements: Vec<Replacement>,
    /// Indices of phrases where a scheduled replacement found no
    /// replaceable token.
    pub skipped: Vec<usize>,
}

/// Samples three substrings of length 2..=min(6, len), uniform start.
/// Transcripts shorter than two tokens yield no samples.
pub fn sample_phrases<R: Rng>(transcript: &[TokenId], rng: &mut R) -> Vec<Occurrence> {
    let n = transcript.len();
    if n < 2 {
        return Vec::new();
    }
    let max_len = n.min(6);
    (0..3)
        .map(|_| {
            let len = rng.gen_range(2..=max_len);
            let start = rng.gen_range(0..=n - len);
            Occurrence { start, len }
        })
        .collect()
}

/// Appends up to five distinct pool phrases (however many the pool has).
pub fn add_distractors<R: Rng>(
    distractors: &mut Vec<Vec<TokenId>>,
    pool: &[Vec<TokenId>],
    rng: &mut R,
) {
    let want = rng.gen_range(0..=5usize).min(pool.len());
    let mut picked: Vec<usize> = Vec::with_capacity(want);
    while picked.len() < want {
        let i = rng.gen_range(0..pool.len());
        if !picked.contains(&i) {
            picked.push(i);
        }
    }
    for i in picked {
        distractors.push(pool[i].clone());
    }
}

/// With probability `prob` per sampled phrase, swaps one token for a
/// homophone in the phrase and at the matching transcript position.
/// Phrases are re-read from their spans afterwards, so overlapping
/// samples stay consistent with the transcript.
pub fn homophone_replace<R: Rng>(
    example: &mut AugmentedExample,
    lexicon: &HomophoneLexicon,
    prob: f64,
    rng: &mut R,
) -> Result<()> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::Contract(format!(
            "replacement probability {prob} outside [0, 1]"
        )));
    }
    for idx in 0..example.phrases.len() {
        if !rng.gen_bool(prob) {
            continue;
        }
        let occ = example.occurrences[idx];
        let replaceable: Vec<usize> = (0..occ.len)
            .filter(|&i| !lexicon.homophones(example.transcript[occ.start + i]).is_empty())
            .collect();
        if replaceable.is_empty() {
            example.skipped.push(idx);
            continue;
        }
        let position = replaceable[rng.gen_range(0..replaceable.len())];
        let old = example.transcript[occ.start + position];
        let alts = lexicon.homophones(old);
        let new = alts[rng.gen_range(0..alts.len())];
        example.transcript[occ.start + position] = new;
        example.replacements.push(Replacement {
            phrase_idx: idx,
            position,
            old,
            new,
        });
    }
    // Re-sync every sampled phrase with its (possibly modified) span.
    for (phrase, occ) in example.phrases.iter_mut().zip(&example.occurrences) {
        phrase.clear();
        phrase.extend_from_slice(&example.transcript[occ.start..occ.start + occ.len]);
    }
    Ok(())
}

/// Full per-utterance pipeline: sample, replace, add distractors.
pub fn augment_utterance<R: Rng>(
    transcript: &[TokenId],
    pool: &[Vec<TokenId>],
    lexicon: &HomophoneLexicon,
    prob: f64,
    rng: &mut R,
) -> Result<AugmentedExample> {
    let occurrences = sample_phrases(transcript, rng);
    let phrases: Vec<Vec<TokenId>> = occurrences
        .iter()
        .map(|o| transcript[o.start..o.start + o.len].to_vec())
        .collect();
    let mut example = AugmentedExample {
        transcript: transcript.to_vec(),
        phrases,
        occurrences,
        distractors: Vec::new(),
        replacements: Vec::new(),
        skipped: Vec::new(),
    };
    homophone_replace(&mut example, lexicon, prob, rng)?;
    add_distractors(&mut example.distractors, pool, rng);
    Ok(example)
}
