//! Explicit biasing: beam search over the context decoder's spike
//! posteriors constrained by the bias graph, then one-shot application of
//! a bias score to the ASR lattice.
//!
//! Paths may pick blank at any spike; non-blank picks must ride a real
//! goto arc of the graph, so surviving token runs spell phrase prefixes.
//! Only tokens inside *completed* phrases contribute bias; a prefix left
//! hanging at the end of the utterance is refunded by the forced failure
//! and never biases anything.

use std::collections::BTreeSet;

use crate::context::SpikePosterior;
use crate::ctc::PosteriorMatrix;
use crate::error::{Error, Result};
use crate::graph::{BiasGraph, GraphCursor, PhraseId, ScoreMode};
use crate::TokenId;

/// One constrained decoding path over the spike positions.
#[derive(Debug, Clone)]
pub struct BiasPath {
    /// Per-spike choice; `None` is blank.
    pub choices: Vec<Option<TokenId>>,
    /// Context log-posterior platform plus scaled graph score.
    pub score: f64,
    /// Phrases that completed along this path.
    pub completed: Vec<CompletedMatch>,
    cursor: GraphCursor,
    /// Spike index and token of every automaton consumption, oldest first.
    consumed: Vec<(usize, TokenId)>,
}

/// A phrase occurrence completed by a path, with the spike positions that
/// carried its tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletedMatch {
    pub phrase: PhraseId,
    /// (spike index, token) per phrase token, in order.
    pub positions: Vec<(usize, TokenId)>,
}

impl CompletedMatch {
    /// Spike span as (first, last) spike index.
    pub fn span(&self) -> (usize, usize) {
        (
            self.positions.first().map_or(0, |p| p.0),
            self.positions.last().map_or(0, |p| p.0),
        )
    }
}

/// Beam search over spike posteriors through the bias graph.
///
/// At each spike every surviving path branches to blank (automaton
/// untouched) and to each token consumable from its state; the branch
/// score adds the context log-posterior plus `graph_scale` times the
/// prospective graph delta. A final forced failure refunds incomplete
/// prefixes. Returns up to `beam` paths, best first.
pub fn context_beam_search(
    ctx: &SpikePosterior,
    graph: &BiasGraph,
    beam: usize,
    graph_scale: f64,
) -> Result<Vec<BiasPath>> {
    if beam == 0 {
        return Err(Error::Contract("beam width must be at least 1".into()));
    }
    if ctx.is_empty() {
        return Ok(Vec::new());
    }
    let blank = ctx.blank as usize;
    let mut paths = vec![BiasPath {
        choices: Vec::new(),
        score: 0.0,
        completed: Vec::new(),
        cursor: GraphCursor::root(),
        consumed: Vec::new(),
    }];
    for u in 0..ctx.len() {
        let row = ctx.row(u);
        let mut next: Vec<BiasPath> = Vec::with_capacity(paths.len() * 4);
        for path in &paths {
            // Blank branch.
            let mut p = path.clone();
            p.choices.push(None);
            p.score += row[blank];
            next.push(p);
            // Token branches along real goto arcs.
            for tok in graph.consumable_tokens(path.cursor.state) {
                let step = graph.step(path.cursor, tok, ScoreMode::Prospective)?;
                let mut p = path.clone();
                p.choices.push(Some(tok));
                p.consumed.push((u, tok));
                p.score += row[tok as usize] + graph_scale * step.score_delta;
                for (pid, len) in &step.matches {
                    let positions = p.consumed[p.consumed.len() - len..].to_vec();
                    p.completed.push(CompletedMatch {
                        phrase: *pid,
                        positions,
                    });
                }
                p.cursor = step.cursor;
                next.push(p);
            }
        }
        next.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.choices.cmp(&b.choices))
        });
        next.truncate(beam);
        paths = next;
    }
    for p in &mut paths {
        p.score += graph_scale * graph.finalize(p.cursor, ScoreMode::Prospective);
    }
    paths.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.choices.cmp(&b.choices))
    });
    Ok(paths)
}

/// Cells of the ASR lattice to raise, as a set: the same (frame, token)
/// chosen by several paths is applied once, never cumulatively.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasApplication {
    pub entries: BTreeSet<(usize, TokenId)>,
    pub bias: f64,
}

/// Unions the completed-match tokens of the best `top_k` paths into one
/// application set, mapping spike indices back to frame indices.
pub fn collect_bias_applications(
    paths: &[BiasPath],
    ctx: &SpikePosterior,
    top_k: usize,
    bias: f64,
) -> BiasApplication {
    let mut entries = BTreeSet::new();
    for path in paths.iter().take(top_k.max(1)) {
        for m in &path.completed {
            for &(spike_idx, tok) in &m.positions {
                entries.insert((ctx.frames[spike_idx], tok));
            }
        }
    }
    BiasApplication { entries, bias }
}

/// Adds the bias score onto each applied cell. Rows are intentionally not
/// renormalized: the result is a score lattice for beam search, not a
/// distribution.
pub fn apply_bias(post: &PosteriorMatrix, app: &BiasApplication) -> Result<PosteriorMatrix> {
    let mut out = post.clone();
    for &(frame, tok) in &app.entries {
        if frame >= post.frames() || (tok as usize) >= post.vocab() {
            return Err(Error::Contract(format!(
                "bias application ({frame},{tok}) outside lattice {}x{}",
                post.frames(),
                post.vocab()
            )));
        }
        let row = out.logp.row_mut(frame);
        row[tok as usize] += app.bias;
    }
    Ok(out)
}
