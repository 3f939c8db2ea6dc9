//! Two-stage contextual phrase filtering over emitting-frame posteriors.
//!
//! Stage 1 scores every phrase with the order-free phrase score
//! confidence (PSC); stage 2 rescored the survivors with the order-aware
//! sequence order confidence (SOC). Both are per-token averages inside a
//! sliding window, floored by the mismatch penalty `p` so one badly
//! scored token cannot sink an otherwise well-supported phrase. Phrases
//! scoring below the threshold `q` are dropped; the blank entry always
//! survives.

use crate::context::BiasingList;
use crate::ctc::{greedy_spikes, PosteriorMatrix, Spike};
use crate::error::{Error, Result};
use crate::tensor::Mat;
use crate::TokenId;

#[derive(Debug, Clone, Copy)]
pub struct FilterConfig {
    /// Confidence threshold (log domain); phrases below it are dropped.
    pub q: f64,
    /// Mismatch penalty standing in for insertion/deletion/substitution
    /// costs; by default twice the threshold.
    pub p: f64,
    /// Window length = max(L, ceil(window_factor * L)).
    pub window_factor: f64,
    /// Run the order-aware second stage.
    pub stage2_enabled: bool,
    /// Disabling the penalty reproduces the plain variant: raw posteriors,
    /// no floored matches, no paid deletions or insertions.
    pub penalty_enabled: bool,
    /// Score over spike rows only; when false, every frame is a row.
    pub emitting_only: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            q: -6.0,
            p: -12.0,
            window_factor: 1.5,
            stage2_enabled: true,
            penalty_enabled: true,
            emitting_only: true,
        }
    }
}

impl FilterConfig {
    /// Plain comparison variant: all frames, no mismatch penalty.
    pub fn vanilla() -> Self {
        FilterConfig {
            penalty_enabled: false,
            emitting_only: false,
            ..FilterConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.penalty_enabled && !(self.p < self.q && self.q < 0.0) {
            return Err(Error::Contract(format!(
                "filter config wants p < q < 0, got p={} q={}",
                self.p, self.q
            )));
        }
        if self.window_factor < 1.0 {
            return Err(Error::Contract(format!(
                "window factor {} below 1",
                self.window_factor
            )));
        }
        Ok(())
    }
}

/// Outcome for one phrase of the list (index-aligned with it).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhraseVerdict {
    pub psc: f64,
    /// Present when stage 2 ran for this phrase.
    pub soc: Option<f64>,
    pub kept: bool,
}

/// Per-phrase verdicts; index 0 is the always-kept blank entry.
#[derive(Debug, Clone)]
pub struct FilterReport {
    pub verdicts: Vec<PhraseVerdict>,
}

impl FilterReport {
    /// Surviving content phrases re-wrapped as a biasing list.
    pub fn kept_list(&self, list: &BiasingList) -> BiasingList {
        let kept: Vec<Vec<TokenId>> = list
            .content()
            .iter()
            .zip(&self.verdicts[1..])
            .filter(|(_, v)| v.kept)
            .map(|(p, _)| p.clone())
            .collect();
        BiasingList::with_blank_entry(kept, list.blank()).expect("phrases already validated")
    }

    /// Indices (into the full list) of the kept phrases.
    pub fn kept_indices(&self) -> Vec<usize> {
        self.verdicts
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kept)
            .map(|(i, _)| i)
            .collect()
    }

    /// Tab-separated lines: phrase index, psc, soc ('-' when skipped), kept.
    pub fn to_tsv(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        for (i, v) in self.verdicts.iter().enumerate() {
            let soc = v.soc.map_or("-".to_string(), |s| format!("{s:.6}"));
            writeln!(out, "{i}\t{:.6}\t{soc}\t{}", v.psc, v.kept as u8).unwrap();
        }
        out
    }
}

/// Gathers the spike rows of the posterior, in spike order.
pub fn emit_rows(post: &PosteriorMatrix, spikes: &[Spike]) -> Mat {
    let mut rows = Mat::zeros(spikes.len(), post.vocab());
    for (u, sp) in spikes.iter().enumerate() {
        rows.row_mut(u).copy_from_slice(post.row(sp.frame));
    }
    rows
}

fn window_len(phrase_len: usize, cfg: &FilterConfig) -> usize {
    phrase_len.max((cfg.window_factor * phrase_len as f64).ceil() as usize)
}

/// Window start offsets for `rows` rows; a short matrix yields one
/// full-span window.
fn window_starts(rows: usize, w: usize) -> Vec<usize> {
    if rows <= w {
        vec![0]
    } else {
        (0..=rows - w).collect()
    }
}

/// Phrase score confidence: best over windows of the per-token average of
/// each token's best posterior in the window, floored by the penalty.
pub fn psc(rows: &Mat, phrase: &[TokenId], cfg: &FilterConfig) -> Result<f64> {
    if phrase.is_empty() {
        return Err(Error::Contract("psc of an empty phrase".into()));
    }
    cfg.validate()?;
    let l = phrase.len();
    let w = window_len(l, cfg);
    let mut best = f64::NEG_INFINITY;
    for start in window_starts(rows.rows(), w) {
        let end = (start + w).min(rows.rows());
        let mut sum = 0.0;
        for &tok in phrase {
            let mut tok_best = f64::NEG_INFINITY;
            for u in start..end {
                tok_best = tok_best.max(rows.get(u, tok as usize));
            }
            if cfg.penalty_enabled {
                tok_best = tok_best.max(cfg.p);
            }
            sum += tok_best;
        }
        best = best.max(sum / l as f64);
    }
    Ok(best)
}

/// Multiplies a penalty by a count without materializing `-inf * 0`.
fn times(cost: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        cost * n as f64
    }
}

/// Best monotone alignment score of `phrase` against one window, divided
/// by the phrase length.
///
/// A mapped token scores its (floored) posterior at the mapped row;
/// unmapped tokens cost a deletion; window rows strictly between two
/// mapped rows cost an insertion; rows before the first and after the
/// last mapped row are free.
fn soc_window(rows: &Mat, start: usize, end: usize, phrase: &[TokenId], cfg: &FilterConfig) -> f64 {
    let l = phrase.len();
    let w = end - start;
    let del = if cfg.penalty_enabled {
        cfg.p
    } else {
        f64::NEG_INFINITY
    };
    let ins = if cfg.penalty_enabled { cfg.p } else { 0.0 };
    let tok_score = |i: usize, j: usize| -> f64 {
        let raw = rows.get(start + j, phrase[i] as usize);
        if cfg.penalty_enabled {
            raw.max(cfg.p)
        } else {
            raw
        }
    };
    // m[i][j]: best score of tokens 0..=i with token i mapped to row j.
    let neg = f64::NEG_INFINITY;
    let mut m = vec![vec![neg; w]; l];
    for i in 0..l {
        for j in 0..w {
            // Base: earlier tokens all deleted, leading rows free.
            let mut best = times(del, i);
            for i2 in 0..i {
                for j2 in 0..j {
                    if m[i2][j2] == neg {
                        continue;
                    }
                    let cand = m[i2][j2] + times(del, i - i2 - 1) + times(ins, j - j2 - 1);
                    if cand > best {
                        best = cand;
                    }
                }
            }
            if best > neg {
                m[i][j] = tok_score(i, j) + best;
            }
        }
    }
    // Close: trailing tokens deleted, trailing rows free. The fully
    // deleted alignment is the fallback.
    let mut best = times(del, l);
    for i in 0..l {
        for j in 0..w {
            if m[i][j] == neg {
                continue;
            }
            let cand = m[i][j] + times(del, l - i - 1);
            if cand > best {
                best = cand;
            }
        }
    }
    best / l as f64
}

/// Sequence order confidence: best windowed monotone-alignment average.
pub fn soc(rows: &Mat, phrase: &[TokenId], cfg: &FilterConfig) -> Result<f64> {
    if phrase.is_empty() {
        return Err(Error::Contract("soc of an empty phrase".into()));
    }
    cfg.validate()?;
    let w = window_len(phrase.len(), cfg);
    let mut best = f64::NEG_INFINITY;
    for start in window_starts(rows.rows(), w) {
        let end = (start + w).min(rows.rows());
        best = best.max(soc_window(rows, start, end, phrase, cfg));
    }
    Ok(best)
}

/// Two-stage filter over the unbiased posterior: PSC for every content
/// phrase, SOC only for stage-1 survivors. Order is vacuous for
/// single-token phrases, so their SOC is their PSC.
pub fn filter_list(
    post: &PosteriorMatrix,
    list: &BiasingList,
    cfg: &FilterConfig,
) -> Result<FilterReport> {
    cfg.validate()?;
    let rows = if cfg.emitting_only {
        let spikes = greedy_spikes(post);
        emit_rows(post, &spikes)
    } else {
        post.logp.clone()
    };
    let mut verdicts = Vec::with_capacity(list.len());
    // Blank entry: trivially present.
    verdicts.push(PhraseVerdict {
        psc: 0.0,
        soc: None,
        kept: true,
    });
    for phrase in list.content() {
        let psc_score = psc(&rows, phrase, cfg)?;
        if psc_score < cfg.q {
            verdicts.push(PhraseVerdict {
                psc: psc_score,
                soc: None,
                kept: false,
            });
            continue;
        }
        if !cfg.stage2_enabled {
            verdicts.push(PhraseVerdict {
                psc: psc_score,
                soc: None,
                kept: true,
            });
            continue;
        }
        let soc_score = if phrase.len() == 1 {
            psc_score
        } else {
            soc(&rows, phrase, cfg)?
        };
        verdicts.push(PhraseVerdict {
            psc: psc_score,
            soc: Some(soc_score),
            kept: soc_score >= cfg.q,
        });
    }
    Ok(FilterReport { verdicts })
}
