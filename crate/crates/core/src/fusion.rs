//! Shallow fusion and method cascading.
//!
//! [`GraphScorer`] adapts the bias graph to the prefix-beam-search scorer
//! hook: prospective step deltas scaled by a method weight, finalized by
//! the forced failure. [`run_cascade`] chains the full pipeline in a
//! fixed order: filter the list, detect spikes on the unbiased posterior,
//! apply implicit bias, apply explicit bias, then decode with the fusion
//! scorer.

use crate::context::{
    context_decode, encode_biasing_list, integrate, recompute_posterior_rows,
    BiasingList, ContextState, EncoderEmbeddings,
};
use crate::ctc::{greedy_spikes, prefix_beam_search, ExternalScorer, Hypothesis, PosteriorMatrix, ScorerState, Spike};
use crate::error::{Error, Result};
use crate::explicit::{apply_bias, collect_bias_applications, context_beam_search, BiasApplication};
use crate::filter::{filter_list, FilterConfig, FilterReport};
use crate::graph::{BiasGraph, GraphCursor, ScoreMode};
use crate::tensor::WeightBundle;
use crate::TokenId;

/// Which methods run and how strongly, mirroring the standalone /
/// two-way / three-way weighting convention (1.0, 0.75, 0.5).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeConfig {
    pub implicit_enabled: bool,
    pub implicit_weight: f64,
    pub explicit_enabled: bool,
    pub explicit_weight: f64,
    pub sf_enabled: bool,
    pub sf_weight: f64,
}

/// One biasing method of the cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Implicit,
    Explicit,
    ShallowFusion,
}

impl CascadeConfig {
    pub fn baseline() -> CascadeConfig {
        CascadeConfig {
            implicit_enabled: false,
            implicit_weight: 0.0,
            explicit_enabled: false,
            explicit_weight: 0.0,
            sf_enabled: false,
            sf_weight: 0.0,
        }
    }

    /// Enables the given methods with the default weight for the cascade
    /// size: 1.0 alone, 0.75 for two methods, 0.5 for three.
    pub fn cascade(methods: &[Method]) -> CascadeConfig {
        let weight = match methods.len() {
            0 | 1 => 1.0,
            2 => 0.75,
            _ => 0.5,
        };
        let mut cfg = CascadeConfig::baseline();
        for m in methods {
            match m {
                Method::Implicit => {
                    cfg.implicit_enabled = true;
                    cfg.implicit_weight = weight;
                }
                Method::Explicit => {
                    cfg.explicit_enabled = true;
                    cfg.explicit_weight = weight;
                }
                Method::ShallowFusion => {
                    cfg.sf_enabled = true;
                    cfg.sf_weight = weight;
                }
            }
        }
        cfg
    }

    pub fn single(method: Method) -> CascadeConfig {
        CascadeConfig::cascade(&[method])
    }

    pub fn any_enabled(&self) -> bool {
        self.implicit_enabled || self.explicit_enabled || self.sf_enabled
    }

    fn validate(&self) -> Result<()> {
        for (w, on) in [
            (self.implicit_weight, self.implicit_enabled),
            (self.explicit_weight, self.explicit_enabled),
            (self.sf_weight, self.sf_enabled),
        ] {
            if on && w < 0.0 {
                return Err(Error::Contract(format!("negative method weight {w}")));
            }
        }
        Ok(())
    }
}

/// Bias graph plugged into the prefix-beam-search scorer hook. The
/// cursor (state and refundable credit) packs into the opaque state.
pub struct GraphScorer<'a> {
    graph: &'a BiasGraph,
    weight: f64,
}

impl<'a> GraphScorer<'a> {
    pub fn new(graph: &'a BiasGraph, weight: f64) -> GraphScorer<'a> {
        GraphScorer { graph, weight }
    }

    fn unpack(state: ScorerState) -> GraphCursor {
        GraphCursor {
            state: (state.0 >> 32) as u32,
            credit: state.0 as u32,
        }
    }

    fn pack(cursor: GraphCursor) -> ScorerState {
        ScorerState(((cursor.state as u64) << 32) | cursor.credit as u64)
    }
}

impl ExternalScorer for GraphScorer<'_> {
    fn start(&self) -> ScorerState {
        Self::pack(GraphCursor::root())
    }

    fn step(&self, state: ScorerState, token: TokenId) -> (ScorerState, f64) {
        let step = self
            .graph
            .step(Self::unpack(state), token, ScoreMode::Prospective)
            .expect("packed cursor is always valid");
        (Self::pack(step.cursor), self.weight * step.score_delta)
    }

    fn finalize(&self, state: ScorerState) -> f64 {
        self.weight
            * self
                .graph
                .finalize(Self::unpack(state), ScoreMode::Prospective)
    }
}

/// Everything a cascade may need for one utterance. Neural artifacts are
/// optional; a method that needs a missing one raises a configuration
/// error naming the method.
#[derive(Debug, Clone, Copy)]
pub struct UtteranceInputs<'a> {
    /// Unbiased ASR posterior.
    pub posterior: &'a PosteriorMatrix,
    /// Full-sequence encoder embeddings (implicit and explicit need them).
    pub embeddings: Option<&'a crate::tensor::Mat>,
    pub weights: Option<&'a WeightBundle>,
    /// Full biasing list, before filtering.
    pub list: &'a BiasingList,
}

/// Decode-time tunables shared by every method.
#[derive(Debug, Clone, Copy)]
pub struct DecodeParams {
    pub beam: usize,
    /// Beam width of the constrained context search.
    pub ctx_beam: usize,
    /// Bias score added per applied lattice cell (explicit method).
    pub bias_score: f64,
    /// Per-token score of the bias graph.
    pub graph_score: f64,
    /// Paths whose completed matches feed applications; `None` means the
    /// whole surviving beam.
    pub top_k: Option<usize>,
    pub filter: FilterConfig,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            beam: 10,
            ctx_beam: 8,
            bias_score: 3.0,
            graph_score: 1.0,
            top_k: None,
            filter: FilterConfig::default(),
        }
    }
}

/// Trace of one cascaded decode.
#[derive(Debug, Clone)]
pub struct CascadeOutcome {
    pub hypotheses: Vec<Hypothesis>,
    pub spikes: Vec<Spike>,
    /// Filter verdicts over the input list (empty for pure baseline).
    pub filter: Option<FilterReport>,
    /// Kept list actually used for biasing.
    pub kept: Option<BiasingList>,
    pub context: Option<ContextState>,
    pub applications: Option<BiasApplication>,
}

impl CascadeOutcome {
    pub fn best(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }
}

fn require<'a, T>(artifact: Option<&'a T>, method: &'static str, what: &str) -> Result<&'a T> {
    artifact.ok_or_else(|| Error::Config {
        method,
        detail: format!("missing {what}"),
    })
}

/// Runs the configured methods over one utterance.
///
/// Order: filter the list on the unbiased posterior, detect spikes on the
/// unbiased posterior, recompute spike rows from implicitly biased
/// embeddings, apply explicit bias scores, then prefix beam search with
/// the shallow-fusion scorer. All methods disabled is exactly the
/// baseline decode.
pub fn run_cascade(
    inputs: &UtteranceInputs,
    cfg: &CascadeConfig,
    params: &DecodeParams,
) -> Result<CascadeOutcome> {
    cfg.validate()?;
    if !cfg.any_enabled() {
        let hypotheses = prefix_beam_search(inputs.posterior, params.beam, None, 0.0);
        return Ok(CascadeOutcome {
            hypotheses,
            spikes: greedy_spikes(inputs.posterior),
            filter: None,
            kept: None,
            context: None,
            applications: None,
        });
    }

    let report = filter_list(inputs.posterior, inputs.list, &params.filter)?;
    let kept = report.kept_list(inputs.list);
    let spikes = greedy_spikes(inputs.posterior);

    let needs_context = cfg.implicit_enabled || cfg.explicit_enabled;
    let mut lattice = inputs.posterior.clone();
    let mut context = None;
    let mut applications = None;

    if needs_context {
        let method: &'static str = if cfg.implicit_enabled { "implicit" } else { "explicit" };
        let weights = require(inputs.weights, method, "weight bundle")?;
        let embeddings = require(inputs.embeddings, method, "encoder embeddings")?;
        let emb = EncoderEmbeddings::gather(embeddings.clone(), &spikes);
        let h_ce = encode_biasing_list(&kept, weights)?;
        let implicit_weight = if cfg.implicit_enabled {
            cfg.implicit_weight
        } else {
            0.0
        };
        let (state, biased) = integrate(&emb, &h_ce, weights, implicit_weight)?;

        if cfg.implicit_enabled {
            lattice = recompute_posterior_rows(&lattice, &biased.h_e, &emb.spike_frames, weights)?;
        }
        if cfg.explicit_enabled {
            let ctx_post = context_decode(&state.c_ex, &emb.spike_frames, weights)?;
            let graph = BiasGraph::build(kept.content(), params.graph_score, inputs.list.blank())?;
            let paths = context_beam_search(&ctx_post, &graph, params.ctx_beam, 1.0)?;
            let top_k = params.top_k.unwrap_or(paths.len());
            let app = collect_bias_applications(
                &paths,
                &ctx_post,
                top_k,
                params.bias_score * cfg.explicit_weight,
            );
            lattice = apply_bias(&lattice, &app)?;
            applications = Some(app);
        }
        context = Some(state);
    }

    let hypotheses = if cfg.sf_enabled {
        let graph = BiasGraph::build(kept.content(), params.graph_score, inputs.list.blank())?;
        let scorer = GraphScorer::new(&graph, cfg.sf_weight);
        prefix_beam_search(&lattice, params.beam, Some(&scorer), 1.0)
    } else {
        prefix_beam_search(&lattice, params.beam, None, 0.0)
    };

    Ok(CascadeOutcome {
        hypotheses,
        spikes,
        filter: Some(report),
        kept: Some(kept),
        context,
        applications,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::MatchEvent;
    use crate::synth::{analytic_fixture_bundle, synth_utterance, Corruption, FixtureParams, SynthSpec};
    use crate::tensor::{log_softmax, Mat};

    fn graph(phrases: &[&[TokenId]], s: f64) -> BiasGraph {
        let owned: Vec<Vec<TokenId>> = phrases.iter().map(|p| p.to_vec()).collect();
        BiasGraph::build(&owned, s, 0).unwrap()
    }

    #[test]
    fn scorer_deltas_replay_to_sequence_total() {
        let g = graph(&[&[1, 2, 3], &[2, 3]], 1.0);
        let scorer = GraphScorer::new(&g, 0.75);
        let tokens = [1u32, 2, 3, 9, 2, 3, 1, 2];
        let mut state = scorer.start();
        let mut total = 0.0;
        for &t in &tokens {
            let (next, delta) = scorer.step(state, t);
            state = next;
            total += delta;
        }
        total += scorer.finalize(state);
        let (want, _) = g.score_sequence(&tokens, ScoreMode::Prospective);
        assert!((total - 0.75 * want).abs() < 1e-12);
    }

    fn corrupted_two_token_lattice() -> PosteriorMatrix {
        // Phrase AB over four frames; B's frame favors C by ~1 nat.
        let rows = vec![
            vec![4.0, 0.0, 0.0, 0.0],  // blank
            vec![0.0, 4.0, 0.0, 0.0],  // A
            vec![0.0, 0.0, 2.0, 3.0],  // true B under confusable C
            vec![4.0, 0.0, 0.0, 0.0],  // blank
        ];
        PosteriorMatrix::new(log_softmax(&Mat::from_rows(&rows)), 0)
    }

    #[test]
    fn sufficient_fusion_weight_flips_corrupted_token() {
        let post = corrupted_two_token_lattice();
        let g = graph(&[&[1, 2]], 1.0);

        let plain = prefix_beam_search(&post, 16, None, 0.0);
        assert_eq!(plain[0].tokens, vec![1, 3], "unbiased decode keeps the error");

        let scorer = GraphScorer::new(&g, 1.0);
        let fused = prefix_beam_search(&post, 16, Some(&scorer), 1.0);
        assert_eq!(fused[0].tokens, vec![1, 2], "fusion recovers the phrase");

        // Exhaustive check over short labels: fused ranking really is
        // ctc_forward + weight * prospective graph score.
        let mut best: Option<(f64, Vec<TokenId>)> = None;
        for label in [
            vec![],
            vec![1],
            vec![3],
            vec![1, 2],
            vec![1, 3],
            vec![2],
            vec![1, 2, 3],
        ] {
            let s = crate::ctc::ctc_forward(&post, &label)
                + g.score_sequence(&label, ScoreMode::Prospective).0;
            if best.as_ref().map_or(true, |(b, _)| s > *b) {
                best = Some((s, label));
            }
        }
        let (want_score, want_label) = best.unwrap();
        assert_eq!(fused[0].tokens, want_label);
        assert!((fused[0].combined - want_score).abs() < 1e-9);
    }

    #[test]
    fn zero_weight_scorer_matches_plain_decode() {
        let post = corrupted_two_token_lattice();
        let g = graph(&[&[1, 2]], 1.0);
        let scorer = GraphScorer::new(&g, 0.0);
        let fused = prefix_beam_search(&post, 8, Some(&scorer), 1.0);
        let plain = prefix_beam_search(&post, 8, None, 0.0);
        let a: Vec<_> = fused.iter().map(|h| (&h.tokens, h.score_ctc)).collect();
        let b: Vec<_> = plain.iter().map(|h| (&h.tokens, h.score_ctc)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn scorer_is_stateless_across_runs() {
        let post = corrupted_two_token_lattice();
        let g = graph(&[&[1, 2]], 1.0);
        let scorer = GraphScorer::new(&g, 1.0);
        let first = prefix_beam_search(&post, 8, Some(&scorer), 1.0);
        let second = prefix_beam_search(&post, 8, Some(&scorer), 1.0);
        assert_eq!(first.len(), second.len());
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(a.tokens, b.tokens);
            assert_eq!(a.combined.to_bits(), b.combined.to_bits());
        }
    }

    fn fixture_case() -> (SynthSpec, BiasingList, WeightBundle) {
        // Vocab large enough that an absent token's posterior sits safely
        // under the filter threshold even on the noisier corrupted row.
        let corruption = Corruption { position: 3, confusable: 11, margin: 1.0 };
        let spec = SynthSpec {
            vocab: 48,
            transcript: vec![9, 10, 3, 5, 2, 11, 9],
            frames_per_token: 3,
            clean_confidence: 0.98,
            blank_confidence: 0.98,
            top_mass: 0.9,
            corruptions: vec![corruption],
            suppressed: vec![],
            seed: 21,
        };
        // Phrase covers positions 2..5; distractor is absent from the audio.
        let list =
            BiasingList::with_blank_entry(vec![vec![3, 5, 2], vec![4, 6]], 0).unwrap();
        let bundle = analytic_fixture_bundle(48, &FixtureParams::default()).unwrap();
        (spec, list, bundle)
    }

    #[test]
    fn cascade_all_disabled_is_bit_identical_to_baseline() {
        let (spec, list, bundle) = fixture_case();
        let utt = synth_utterance(&spec).unwrap();
        let inputs = UtteranceInputs {
            posterior: &utt.posterior,
            embeddings: Some(&utt.embeddings),
            weights: Some(&bundle),
            list: &list,
        };
        let params = DecodeParams::default();
        let out = run_cascade(&inputs, &CascadeConfig::baseline(), &params).unwrap();
        let plain = prefix_beam_search(&utt.posterior, params.beam, None, 0.0);
        assert_eq!(out.hypotheses.len(), plain.len());
        for (a, b) in out.hypotheses.iter().zip(&plain) {
            assert_eq!(a.tokens, b.tokens);
            assert_eq!(a.combined.to_bits(), b.combined.to_bits());
        }
        // The baseline really is wrong on the corrupted token.
        assert_ne!(out.best().unwrap().tokens, utt.transcript);
    }

    #[test]
    fn each_single_method_repairs_the_corruption() {
        let (spec, list, bundle) = fixture_case();
        let utt = synth_utterance(&spec).unwrap();
        let inputs = UtteranceInputs {
            posterior: &utt.posterior,
            embeddings: Some(&utt.embeddings),
            weights: Some(&bundle),
            list: &list,
        };
        let params = DecodeParams::default();
        for method in [Method::Implicit, Method::Explicit, Method::ShallowFusion] {
            let out = run_cascade(&inputs, &CascadeConfig::single(method), &params).unwrap();
            assert_eq!(
                out.best().unwrap().tokens,
                utt.transcript,
                "{method:?} failed to recover"
            );
            // The distractor phrase is filtered out, the true one kept.
            let kept = out.kept.as_ref().unwrap();
            assert_eq!(kept.content(), &[vec![3, 5, 2]]);
        }
    }

    #[test]
    fn paper_style_cascades_also_repair() {
        let (spec, list, bundle) = fixture_case();
        let utt = synth_utterance(&spec).unwrap();
        let inputs = UtteranceInputs {
            posterior: &utt.posterior,
            embeddings: Some(&utt.embeddings),
            weights: Some(&bundle),
            list: &list,
        };
        let params = DecodeParams::default();
        let two_way = CascadeConfig::cascade(&[Method::Implicit, Method::ShallowFusion]);
        assert_eq!(two_way.implicit_weight, 0.75);
        let three_way = CascadeConfig::cascade(&[
            Method::Implicit,
            Method::Explicit,
            Method::ShallowFusion,
        ]);
        assert_eq!(three_way.sf_weight, 0.5);
        for cfg in [two_way, three_way] {
            let out = run_cascade(&inputs, &cfg, &params).unwrap();
            assert_eq!(out.best().unwrap().tokens, utt.transcript);
        }
    }

    #[test]
    fn missing_artifacts_name_the_method() {
        let (spec, list, bundle) = fixture_case();
        let utt = synth_utterance(&spec).unwrap();
        let inputs = UtteranceInputs {
            posterior: &utt.posterior,
            embeddings: None,
            weights: Some(&bundle),
            list: &list,
        };
        let err = run_cascade(
            &inputs,
            &CascadeConfig::single(Method::Implicit),
            &DecodeParams::default(),
        )
        .unwrap_err();
        match err {
            Error::Config { method, .. } => assert_eq!(method, "implicit"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn explicit_weight_zero_is_bit_identical_to_baseline() {
        // Applications still fire at weight 0, but a zero bias leaves the
        // lattice untouched.
        let (spec, list, bundle) = fixture_case();
        let utt = synth_utterance(&spec).unwrap();
        let inputs = UtteranceInputs {
            posterior: &utt.posterior,
            embeddings: Some(&utt.embeddings),
            weights: Some(&bundle),
            list: &list,
        };
        let mut cfg = CascadeConfig::single(Method::Explicit);
        cfg.explicit_weight = 0.0;
        let params = DecodeParams::default();
        let out = run_cascade(&inputs, &cfg, &params).unwrap();
        let plain = prefix_beam_search(&utt.posterior, params.beam, None, 0.0);
        for (a, b) in out.hypotheses.iter().zip(&plain) {
            assert_eq!(a.tokens, b.tokens);
            assert_eq!(a.combined.to_bits(), b.combined.to_bits());
        }
    }

    #[test]
    fn cascade_is_deterministic() {
        let (spec, list, bundle) = fixture_case();
        let utt = synth_utterance(&spec).unwrap();
        let inputs = UtteranceInputs {
            posterior: &utt.posterior,
            embeddings: Some(&utt.embeddings),
            weights: Some(&bundle),
            list: &list,
        };
        let cfg = CascadeConfig::cascade(&[Method::Explicit, Method::ShallowFusion]);
        let params = DecodeParams::default();
        let a = run_cascade(&inputs, &cfg, &params).unwrap();
        let b = run_cascade(&inputs, &cfg, &params).unwrap();
        assert_eq!(a.hypotheses.len(), b.hypotheses.len());
        for (x, y) in a.hypotheses.iter().zip(&b.hypotheses) {
            assert_eq!(x.tokens, y.tokens);
            assert_eq!(x.combined.to_bits(), y.combined.to_bits());
        }
    }

    #[test]
    fn match_events_surface_through_score_sequence() {
        // Sanity anchor for the scorer's bookkeeping: the same walk that
        // scores also reports where phrases completed.
        let g = graph(&[&[1, 2]], 1.0);
        let (_, events) = g.score_sequence(&[1, 2, 1, 2], ScoreMode::Commit);
        assert_eq!(
            events,
            vec![
                MatchEvent { phrase: 0, end: 2, len: 2 },
                MatchEvent { phrase: 0, end: 4, len: 2 },
            ]
        );
    }
}
