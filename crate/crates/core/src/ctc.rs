//! CTC lattice algorithms: greedy spike detection, Viterbi forced
//! alignment, forward log-likelihood, and prefix beam search with a
//! pluggable external scorer.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{log_add_exp, log_sum_exp, Mat};
use crate::TokenId;

/// T x V log-probability lattice from a CTC head.
#[derive(Debug, Clone)]
pub struct PosteriorMatrix {
    pub logp: Mat,
    pub blank: TokenId,
}

impl PosteriorMatrix {
    pub fn new(logp: Mat, blank: TokenId) -> PosteriorMatrix {
        PosteriorMatrix { logp, blank }
    }

    pub fn frames(&self) -> usize {
        self.logp.rows()
    }

    pub fn vocab(&self) -> usize {
        self.logp.cols()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.logp.row(t)
    }

    /// Checks that every row is a normalized log-distribution and the
    /// blank id is in range. Biased lattices are intentionally
    /// unnormalized and skip this.
    pub fn validate(&self) -> Result<()> {
        if (self.blank as usize) >= self.vocab() {
            return Err(Error::Contract(format!(
                "blank id {} out of range for vocab {}",
                self.blank,
                self.vocab()
            )));
        }
        for t in 0..self.frames() {
            let z = log_sum_exp(self.row(t));
            if !z.is_finite() || z.abs() > 1e-6 {
                return Err(Error::Contract(format!(
                    "posterior row {t} is not normalized (logsumexp = {z:.3e})"
                )));
            }
        }
        Ok(())
    }
}

/// One emitting frame: the token the lattice spikes on and its log-posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spike {
    pub frame: usize,
    pub token: TokenId,
    pub logp: f64,
}

/// Ordered emitting frames; frame indices strictly increase and tokens
/// are never blank.
pub type SpikeSequence = Vec<Spike>;

fn argmax_row(row: &[f64]) -> usize {
    // Ties break toward the lowest token id.
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy emitting-frame selection: frame `t` spikes iff its argmax token
/// is not blank and differs from the argmax of frame `t-1`.
pub fn greedy_spikes(post: &PosteriorMatrix) -> SpikeSequence {
    let mut spikes = Vec::new();
    let mut prev: Option<usize> = None;
    for t in 0..post.frames() {
        let tok = argmax_row(post.row(t));
        if tok != post.blank as usize && prev != Some(tok) {
            spikes.push(Spike {
                frame: t,
                token: tok as TokenId,
                logp: post.row(t)[tok],
            });
        }
        prev = Some(tok);
    }
    spikes
}

/// Removes repeats, then blanks.
pub fn collapse_ctc(path: &[TokenId], blank: TokenId) -> Vec<TokenId> {
    let mut out = Vec::new();
    let mut prev: Option<TokenId> = None;
    for &t in path {
        if prev != Some(t) && t != blank {
            out.push(t);
        }
        prev = Some(t);
    }
    out
}

/// Best-path forced alignment of `label` through the posterior.
#[derive(Debug, Clone)]
pub struct ViterbiAlignment {
    /// Token per frame (blank or a label token).
    pub path: Vec<TokenId>,
    /// Exactly one spike per label token: the highest-posterior frame of
    /// that token's span (earliest on ties).
    pub spikes: SpikeSequence,
    pub log_score: f64,
}

/// Frames needed to fit `label`: one per token plus a blank between
/// adjacent repeats.
fn min_frames(label: &[TokenId]) -> usize {
    let repeats = label.windows(2).filter(|w| w[0] == w[1]).count();
    label.len() + repeats
}

/// State layout of the blank-interleaved label lattice:
/// even states are blanks, odd state `2i+1` is `label[i]`.
fn lattice_token(label: &[TokenId], s: usize, blank: TokenId) -> TokenId {
    if s % 2 == 0 {
        blank
    } else {
        label[(s - 1) / 2]
    }
}

fn check_label(post: &PosteriorMatrix, label: &[TokenId]) -> Result<()> {
    for &t in label {
        if t == post.blank {
            return Err(Error::Contract("label contains the blank token".into()));
        }
        if (t as usize) >= post.vocab() {
            return Err(Error::Contract(format!(
                "label token {t} out of range for vocab {}",
                post.vocab()
            )));
        }
    }
    Ok(())
}

/// Maximum-log-probability CTC alignment via the standard lattice DP.
pub fn viterbi_align(post: &PosteriorMatrix, label: &[TokenId]) -> Result<ViterbiAlignment> {
    check_label(post, label)?;
    let t_frames = post.frames();
    let needed = min_frames(label);
    if t_frames < needed {
        return Err(Error::AlignmentInfeasible {
            needed,
            frames: t_frames,
        });
    }
    let blank = post.blank;
    if label.is_empty() {
        let mut score = 0.0;
        for t in 0..t_frames {
            score += post.row(t)[blank as usize];
        }
        return Ok(ViterbiAlignment {
            path: vec![blank; t_frames],
            spikes: Vec::new(),
            log_score: score,
        });
    }

    let s_count = 2 * label.len() + 1;
    let neg = f64::NEG_INFINITY;
    let mut delta = vec![vec![neg; s_count]; t_frames];
    let mut back = vec![vec![0usize; s_count]; t_frames];
    delta[0][0] = post.row(0)[blank as usize];
    delta[0][1] = post.row(0)[label[0] as usize];
    for t in 1..t_frames {
        for s in 0..s_count {
            let tok = lattice_token(label, s, blank);
            // Candidate predecessors in preference order on ties:
            // stay, advance by one, skip a blank.
            let mut best_prev = s;
            let mut best = delta[t - 1][s];
            if s >= 1 && delta[t - 1][s - 1] > best {
                best = delta[t - 1][s - 1];
                best_prev = s - 1;
            }
            let skip_ok = s >= 2
                && s % 2 == 1
                && lattice_token(label, s - 2, blank) != tok;
            if skip_ok && delta[t - 1][s - 2] > best {
                best = delta[t - 1][s - 2];
                best_prev = s - 2;
            }
            if best == neg {
                continue;
            }
            delta[t][s] = best + post.row(t)[tok as usize];
            back[t][s] = best_prev;
        }
    }

    let last = t_frames - 1;
    let (mut state, log_score) = if delta[last][s_count - 1] >= delta[last][s_count - 2] {
        (s_count - 1, delta[last][s_count - 1])
    } else {
        (s_count - 2, delta[last][s_count - 2])
    };
    if log_score == neg {
        return Err(Error::AlignmentInfeasible {
            needed,
            frames: t_frames,
        });
    }

    let mut states = vec![0usize; t_frames];
    states[last] = state;
    for t in (0..last).rev() {
        state = back[t + 1][state];
        states[t] = state;
    }
    let path: Vec<TokenId> = states
        .iter()
        .map(|&s| lattice_token(label, s, blank))
        .collect();

    // One spike per label token: best frame of the token's span.
    let mut spikes = Vec::with_capacity(label.len());
    let mut t = 0;
    while t < t_frames {
        let s = states[t];
        if s % 2 == 1 {
            let tok = label[(s - 1) / 2];
            let mut best_frame = t;
            let mut end = t;
            while end < t_frames && states[end] == s {
                if post.row(end)[tok as usize] > post.row(best_frame)[tok as usize] {
                    best_frame = end;
                }
                end += 1;
            }
            spikes.push(Spike {
                frame: best_frame,
                token: tok,
                logp: post.row(best_frame)[tok as usize],
            });
            t = end;
        } else {
            t += 1;
        }
    }
    debug_assert_eq!(spikes.len(), label.len());

    Ok(ViterbiAlignment {
        path,
        spikes,
        log_score,
    })
}

/// Log total probability of `label` over all valid CTC alignments.
/// Returns negative infinity when no alignment fits.
pub fn ctc_forward(post: &PosteriorMatrix, label: &[TokenId]) -> f64 {
    if check_label(post, label).is_err() {
        return f64::NEG_INFINITY;
    }
    let t_frames = post.frames();
    if t_frames < min_frames(label) {
        return f64::NEG_INFINITY;
    }
    let blank = post.blank;
    if label.is_empty() {
        return (0..t_frames).map(|t| post.row(t)[blank as usize]).sum();
    }
    let s_count = 2 * label.len() + 1;
    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![neg; s_count];
    alpha[0] = post.row(0)[blank as usize];
    alpha[1] = post.row(0)[label[0] as usize];
    let mut next = vec![neg; s_count];
    for t in 1..t_frames {
        for s in 0..s_count {
            let tok = lattice_token(label, s, blank);
            let mut acc = alpha[s];
            if s >= 1 {
                acc = log_add_exp(acc, alpha[s - 1]);
            }
            if s >= 2 && s % 2 == 1 && lattice_token(label, s - 2, blank) != tok {
                acc = log_add_exp(acc, alpha[s - 2]);
            }
            next[s] = if acc == neg {
                neg
            } else {
                acc + post.row(t)[tok as usize]
            };
        }
        std::mem::swap(&mut alpha, &mut next);
    }
    log_add_exp(alpha[s_count - 1], alpha[s_count - 2])
}

/// Opaque automaton state handed back and forth through the scorer hook.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScorerState(pub u64);

/// Incremental hypothesis scorer plugged into prefix beam search
/// (shallow fusion and similar).
pub trait ExternalScorer {
    fn start(&self) -> ScorerState;
    /// Steps the scorer over one emitted token; returns the new state and
    /// the score delta to add.
    fn step(&self, state: ScorerState, token: TokenId) -> (ScorerState, f64);
    /// Final adjustment once the hypothesis is complete.
    fn finalize(&self, state: ScorerState) -> f64;
}

/// One decoded hypothesis from prefix beam search.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    /// Log-probability mass of the token sequence under the lattice.
    pub score_ctc: f64,
    /// Accumulated external-scorer score (finalize included).
    pub score_external: f64,
    /// `score_ctc + weight * score_external`; the ranking key.
    pub combined: f64,
    /// Scorer state after the last consumed token, for callers that keep
    /// stepping the automaton.
    pub scorer_state: ScorerState,
}

#[derive(Debug, Clone, Copy)]
struct PrefixEntry {
    log_p_blank: f64,
    log_p_token: f64,
    external: f64,
    state: ScorerState,
}

impl PrefixEntry {
    fn total(&self) -> f64 {
        log_add_exp(self.log_p_blank, self.log_p_token)
    }
}

/// Standard CTC prefix beam search over blank/non-blank prefix
/// probabilities.
///
/// On each non-blank extension the scorer (when present) is stepped and
/// its delta, scaled by `weight`, joins the pruning score. Output is
/// sorted by combined score, ties broken by token sequence.
pub fn prefix_beam_search(
    post: &PosteriorMatrix,
    beam: usize,
    scorer: Option<&dyn ExternalScorer>,
    weight: f64,
) -> Vec<Hypothesis> {
    assert!(beam >= 1, "beam width must be at least 1");
    let neg = f64::NEG_INFINITY;
    let blank = post.blank as usize;
    let start_state = scorer.map_or(ScorerState(0), |s| s.start());
    let mut beams: BTreeMap<Vec<TokenId>, PrefixEntry> = BTreeMap::new();
    beams.insert(
        Vec::new(),
        PrefixEntry {
            log_p_blank: 0.0,
            log_p_token: neg,
            external: 0.0,
            state: start_state,
        },
    );

    for t in 0..post.frames() {
        let row = post.row(t);
        let mut next: BTreeMap<Vec<TokenId>, PrefixEntry> = BTreeMap::new();
        for (prefix, entry) in &beams {
            let total = entry.total();
            // Blank keeps the prefix.
            let slot = next.entry(prefix.clone()).or_insert(PrefixEntry {
                log_p_blank: neg,
                log_p_token: neg,
                external: entry.external,
                state: entry.state,
            });
            slot.log_p_blank = log_add_exp(slot.log_p_blank, total + row[blank]);
            // Repeating the last token also keeps the prefix.
            if let Some(&last) = prefix.last() {
                slot.log_p_token =
                    log_add_exp(slot.log_p_token, entry.log_p_token + row[last as usize]);
            }
            for tok in 0..post.vocab() {
                if tok == blank {
                    continue;
                }
                let tok_id = tok as TokenId;
                // Extending with the previous token only counts mass that
                // crossed a blank; anything else takes the full mass.
                let mass = if prefix.last() == Some(&tok_id) {
                    entry.log_p_blank
                } else {
                    total
                };
                if mass == neg {
                    continue;
                }
                let mut extended = prefix.clone();
                extended.push(tok_id);
                let slot = next.entry(extended).or_insert_with(|| {
                    let (state, delta) = match scorer {
                        Some(s) => s.step(entry.state, tok_id),
                        None => (entry.state, 0.0),
                    };
                    PrefixEntry {
                        log_p_blank: neg,
                        log_p_token: neg,
                        external: entry.external + delta,
                        state,
                    }
                });
                slot.log_p_token = log_add_exp(slot.log_p_token, mass + row[tok]);
            }
        }
        // Prune by combined score; ties break lexicographically, which the
        // BTreeMap ordering already provides.
        let mut ranked: Vec<(Vec<TokenId>, PrefixEntry)> = next.into_iter().collect();
        ranked.sort_by(|a, b| {
            let sa = a.1.total() + weight * a.1.external;
            let sb = b.1.total() + weight * b.1.external;
            sb.total_cmp(&sa).then_with(|| a.0.cmp(&b.0))
        });
        ranked.truncate(beam);
        beams = ranked.into_iter().collect();
    }

    let mut hyps: Vec<Hypothesis> = beams
        .into_iter()
        .map(|(tokens, entry)| {
            let external = entry.external + scorer.map_or(0.0, |s| s.finalize(entry.state));
            let score_ctc = entry.total();
            Hypothesis {
                tokens,
                score_ctc,
                score_external: external,
                combined: score_ctc + weight * external,
                scorer_state: entry.state,
            }
        })
        .collect();
    hyps.sort_by(|a, b| {
        b.combined
            .total_cmp(&a.combined)
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    hyps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::log_softmax;

    fn post_from_logits(rows: &[Vec<f64>], blank: TokenId) -> PosteriorMatrix {
        let m = log_softmax(&Mat::from_rows(rows));
        let p = PosteriorMatrix::new(m, blank);
        p.validate().unwrap();
        p
    }

    /// Posterior whose per-frame argmax follows `tokens` with high confidence.
    fn spiky_posterior(tokens: &[TokenId], vocab: usize) -> PosteriorMatrix {
        let rows: Vec<Vec<f64>> = tokens
            .iter()
            .map(|&t| {
                let mut row = vec![0.0; vocab];
                row[t as usize] = 8.0;
                row
            })
            .collect();
        post_from_logits(&rows, 0)
    }

    fn random_posterior(t: usize, v: usize, state: &mut u64) -> PosteriorMatrix {
        let mut rows = Vec::with_capacity(t);
        for _ in 0..t {
            rows.push((0..v).map(|_| splitmix(state) * 3.0).collect());
        }
        post_from_logits(&rows, 0)
    }

    fn splitmix(state: &mut u64) -> f64 {
        *state = state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }

    #[test]
    fn greedy_spikes_all_blank_is_empty() {
        let post = spiky_posterior(&[0, 0, 0], 3);
        assert!(greedy_spikes(&post).is_empty());
    }

    #[test]
    fn greedy_spikes_literal_rule() {
        // argmax sequence [blank, A, A, blank, A] spikes at frames 1 and 4.
        let post = spiky_posterior(&[0, 1, 1, 0, 1], 3);
        let spikes = greedy_spikes(&post);
        assert_eq!(
            spikes.iter().map(|s| (s.frame, s.token)).collect::<Vec<_>>(),
            vec![(1, 1), (4, 1)]
        );
    }

    #[test]
    fn greedy_spikes_match_collapsed_greedy_output() {
        let mut st = 90210u64;
        for _ in 0..200 {
            let post = random_posterior(6, 4, &mut st);
            let argmaxes: Vec<TokenId> = (0..post.frames())
                .map(|t| argmax_row(post.row(t)) as TokenId)
                .collect();
            let collapsed = collapse_ctc(&argmaxes, 0);
            let spikes = greedy_spikes(&post);
            let spike_tokens: Vec<TokenId> = spikes.iter().map(|s| s.token).collect();
            assert_eq!(spike_tokens, collapsed);
            assert!(spikes.windows(2).all(|w| w[0].frame < w[1].frame));
        }
    }

    // ---- brute-force alignment oracle ----

    /// Enumerates every frame-level token sequence, keeps those that
    /// collapse to `label`, and returns (max, logsumexp) of their scores.
    fn brute_force_alignments(post: &PosteriorMatrix, label: &[TokenId]) -> (f64, f64) {
        let t = post.frames();
        let v = post.vocab();
        let mut best = f64::NEG_INFINITY;
        let mut total = f64::NEG_INFINITY;
        let mut path = vec![0usize; t];
        loop {
            let tokens: Vec<TokenId> = path.iter().map(|&x| x as TokenId).collect();
            if collapse_ctc(&tokens, post.blank) == label {
                let score: f64 = (0..t).map(|i| post.row(i)[path[i]]).sum();
                if score > best {
                    best = score;
                }
                total = log_add_exp(total, score);
            }
            // Odometer over V^T.
            let mut i = 0;
            loop {
                if i == t {
                    return (best, total);
                }
                path[i] += 1;
                if path[i] < v {
                    break;
                }
                path[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn viterbi_empty_label_is_all_blanks() {
        let mut st = 5u64;
        let post = random_posterior(4, 3, &mut st);
        let a = viterbi_align(&post, &[]).unwrap();
        assert_eq!(a.path, vec![0, 0, 0, 0]);
        assert!(a.spikes.is_empty());
        let want: f64 = (0..4).map(|t| post.row(t)[0]).sum();
        assert!((a.log_score - want).abs() < 1e-12);
        assert!((ctc_forward(&post, &[]) - want).abs() < 1e-12);
    }

    #[test]
    fn viterbi_single_frame_forced() {
        let post = post_from_logits(&[vec![0.0, 1.0, -1.0]], 0);
        let a = viterbi_align(&post, &[1]).unwrap();
        assert_eq!(a.path, vec![1]);
        assert_eq!(a.spikes.len(), 1);
        assert_eq!(a.spikes[0].frame, 0);
        assert!((a.log_score - post.row(0)[1]).abs() < 1e-12);
    }

    #[test]
    fn viterbi_infeasible_label() {
        let post = post_from_logits(&[vec![0.0, 1.0]], 0);
        match viterbi_align(&post, &[1, 1]) {
            Err(Error::AlignmentInfeasible { needed, frames }) => {
                assert_eq!((needed, frames), (3, 1));
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
        assert_eq!(ctc_forward(&post, &[1, 1]), f64::NEG_INFINITY);
    }

    #[test]
    fn viterbi_and_forward_match_brute_force() {
        let mut st = 1234u64;
        for case in 0..60 {
            let t = 2 + case % 3; // 2..=4
            let post = random_posterior(t, 3, &mut st);
            for label in [vec![1], vec![1, 2], vec![2, 2], vec![1, 2, 1]] {
                if t < min_frames(&label) {
                    continue;
                }
                let (want_max, want_sum) = brute_force_alignments(&post, &label);
                let a = viterbi_align(&post, &label).unwrap();
                assert!(
                    (a.log_score - want_max).abs() < 1e-9,
                    "viterbi {} vs {}",
                    a.log_score,
                    want_max
                );
                assert_eq!(collapse_ctc(&a.path, 0), label);
                let fwd = ctc_forward(&post, &label);
                assert!((fwd - want_sum).abs() < 1e-9, "forward {fwd} vs {want_sum}");
                assert!(fwd >= a.log_score - 1e-12);
            }
        }
    }

    #[test]
    fn viterbi_spike_frames_pick_best_posterior_in_span() {
        // Label token 1 spans several frames; spike must sit on the
        // highest-posterior frame of the span.
        let post = post_from_logits(
            &[
                vec![0.0, 2.0, -9.0],
                vec![0.0, 5.0, -9.0],
                vec![0.0, 3.0, -9.0],
                vec![4.0, -9.0, -9.0],
            ],
            0,
        );
        let a = viterbi_align(&post, &[1]).unwrap();
        assert_eq!(a.spikes.len(), 1);
        assert_eq!(a.spikes[0].frame, 1);
    }

    #[test]
    fn beam_one_matches_greedy_on_spiky_posteriors() {
        let post = spiky_posterior(&[0, 1, 0, 2, 2, 0, 1], 3);
        let hyps = prefix_beam_search(&post, 1, None, 0.0);
        assert_eq!(hyps.len(), 1);
        assert_eq!(hyps[0].tokens, vec![1, 2, 1]);
    }

    struct CountScorer;
    impl ExternalScorer for CountScorer {
        fn start(&self) -> ScorerState {
            ScorerState(0)
        }
        fn step(&self, state: ScorerState, token: TokenId) -> (ScorerState, f64) {
            (ScorerState(state.0 + 1), if token == 2 { 5.0 } else { -1.0 })
        }
        fn finalize(&self, _state: ScorerState) -> f64 {
            0.0
        }
    }

    #[test]
    fn zero_weight_ignores_scorer() {
        let mut st = 777u64;
        let post = random_posterior(4, 3, &mut st);
        let plain = prefix_beam_search(&post, 8, None, 0.0);
        let scored = prefix_beam_search(&post, 8, Some(&CountScorer), 0.0);
        let a: Vec<_> = plain.iter().map(|h| (&h.tokens, h.score_ctc)).collect();
        let b: Vec<_> = scored.iter().map(|h| (&h.tokens, h.score_ctc)).collect();
        assert_eq!(a, b);
    }

    /// All label sequences of length <= max_len over non-blank tokens.
    fn all_labels(v: usize, max_len: usize) -> Vec<Vec<TokenId>> {
        let mut out = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for prefix in &frontier {
                for tok in 1..v as TokenId {
                    let mut p: Vec<TokenId> = prefix.clone();
                    p.push(tok);
                    out.push(p.clone());
                    next.push(p);
                }
            }
            frontier = next;
        }
        out
    }

    #[test]
    fn beam_search_top1_matches_exhaustive_enumeration() {
        let mut st = 31337u64;
        for _ in 0..40 {
            let t = 3 + (splitmix(&mut st) > 0.0) as usize; // 3 or 4
            let post = random_posterior(t, 4, &mut st);
            let hyps = prefix_beam_search(&post, 64, None, 0.0);
            let mut best_label = Vec::new();
            let mut best_score = f64::NEG_INFINITY;
            for label in all_labels(4, t) {
                let s = ctc_forward(&post, &label);
                if s > best_score || (s == best_score && label < best_label) {
                    best_score = s;
                    best_label = label;
                }
            }
            assert_eq!(hyps[0].tokens, best_label);
            assert!((hyps[0].combined - best_score).abs() < 1e-9);
            // The beam is wide enough that nothing was pruned, so every
            // surviving prefix carries its exact total CTC mass.
            for h in &hyps {
                let want = ctc_forward(&post, &h.tokens);
                assert!(
                    (h.score_ctc - want).abs() < 1e-9,
                    "{:?}: {} vs {}",
                    h.tokens,
                    h.score_ctc,
                    want
                );
            }
        }
    }

    #[test]
    fn beam_scores_non_increasing_and_monotone_in_width() {
        let mut st = 4242u64;
        for _ in 0..20 {
            let post = random_posterior(4, 4, &mut st);
            let wide = prefix_beam_search(&post, 16, None, 0.0);
            for w in wide.windows(2) {
                assert!(w[0].combined >= w[1].combined - 1e-12);
            }
            let narrow = prefix_beam_search(&post, 2, None, 0.0);
            assert!(wide[0].combined >= narrow[0].combined - 1e-12);
        }
    }
}
