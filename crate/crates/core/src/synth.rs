//! Synthetic test-data factory: designed posteriors with controllable
//! spike placement and phrase-token corruption, plus analytically
//! constructed weights for the context modules.
//!
//! The synthetic head ties `d_model` to the vocab size and uses an
//! identity projection, so `log_softmax(embeddings)` reproduces the
//! designed posterior exactly and every downstream effect is auditable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::Occurrence;
use crate::ctc::PosteriorMatrix;
use crate::error::{Error, Result};
use crate::tensor::{BundleMeta, Mat, WeightBundle};
use crate::TokenId;

/// One designed recognition error: at `position` in the transcript the
/// lattice puts `confusable` on top, `margin` nats above the true token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corruption {
    pub position: usize,
    pub confusable: TokenId,
    pub margin: f64,
}

/// Recipe for one synthetic utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub vocab: usize,
    pub transcript: Vec<TokenId>,
    /// Frames per transcript token (>= 2 so spikes stay separated).
    pub frames_per_token: usize,
    /// Posterior mass of the winner on clean spike rows.
    pub clean_confidence: f64,
    /// Posterior mass of blank on non-spike rows.
    pub blank_confidence: f64,
    /// Mass shared by the top two candidates on corrupted rows.
    pub top_mass: f64,
    pub corruptions: Vec<Corruption>,
    /// Tokens driven to negligible mass on every row where they are not
    /// an explicit winner; models a token the acoustics never support.
    pub suppressed: Vec<TokenId>,
    /// Jitters the off-candidate remainder so rows are not symmetric.
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames_per_token < 2 {
            return Err(Error::Contract(
                "frames_per_token must be at least 2".into(),
            ));
        }
        for bound in [self.clean_confidence, self.blank_confidence, self.top_mass] {
            if !(0.0 < bound && bound < 1.0) {
                return Err(Error::Contract(format!(
                    "confidence {bound} outside (0, 1)"
                )));
            }
        }
        for &tok in &self.transcript {
            if tok == 0 || tok as usize >= self.vocab {
                return Err(Error::Contract(format!(
                    "transcript token {tok} invalid for vocab {}",
                    self.vocab
                )));
            }
        }
        for &tok in &self.suppressed {
            if tok == 0 || tok as usize >= self.vocab {
                return Err(Error::Contract(format!(
                    "suppressed token {tok} invalid for vocab {}",
                    self.vocab
                )));
            }
        }
        for c in &self.corruptions {
            if c.position >= self.transcript.len() {
                return Err(Error::Contract(format!(
                    "corruption position {} outside transcript",
                    c.position
                )));
            }
            if c.confusable == self.transcript[c.position] || c.confusable == 0 {
                return Err(Error::Contract(
                    "confusable must differ from the true token and blank".into(),
                ));
            }
            if c.confusable as usize >= self.vocab {
                return Err(Error::Contract(format!(
                    "confusable {} outside vocab",
                    c.confusable
                )));
            }
        }
        Ok(())
    }

    /// Frame carrying the spike of transcript position `i`.
    pub fn spike_frame(&self, i: usize) -> usize {
        i * self.frames_per_token + self.frames_per_token / 2
    }

    pub fn frames(&self) -> usize {
        self.transcript.len() * self.frames_per_token
    }
}

/// A designed utterance: logits whose log-softmax is the designed
/// posterior, the posterior itself, and the designed spike frames.
#[derive(Debug, Clone)]
pub struct SynthUtterance {
    /// `T x V` logits; feed through the identity CTC head.
    pub embeddings: Mat,
    pub posterior: PosteriorMatrix,
    pub spike_frames: Vec<usize>,
    pub transcript: Vec<TokenId>,
}

/// Fills `row` with a distribution putting `winners` mass on the given
/// candidates and spreading the remainder with a deterministic jitter.
/// Suppressed non-winner tokens get a vanishing share.
fn designed_row(
    row: &mut [f64],
    winners: &[(TokenId, f64)],
    suppressed: &[TokenId],
    rng: &mut ChaCha8Rng,
) {
    let taken: f64 = winners.iter().map(|(_, p)| p).sum();
    let rest = 1.0 - taken;
    let mut weights = vec![0.0; row.len()];
    let mut weight_sum = 0.0;
    for (tok, w) in weights.iter_mut().enumerate() {
        if winners.iter().any(|&(t, _)| t as usize == tok) {
            continue;
        }
        *w = 1.0 + 0.2 * rng.gen::<f64>();
        if suppressed.contains(&(tok as TokenId)) {
            *w *= 1e-10;
        }
        weight_sum += *w;
    }
    for tok in 0..row.len() {
        row[tok] = rest * weights[tok] / weight_sum;
    }
    for &(tok, p) in winners {
        row[tok as usize] = p;
    }
}

/// Builds the utterance: one confident spike frame per transcript token,
/// blank-dominated frames elsewhere, corrupted positions flipped to their
/// confusable with the stated margin.
pub fn synth_utterance(spec: &SynthSpec) -> Result<SynthUtterance> {
    spec.validate()?;
    let v = spec.vocab;
    let t_frames = spec.frames();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut probs = Mat::zeros(t_frames, v);
    let spike_frames: Vec<usize> = (0..spec.transcript.len())
        .map(|i| spec.spike_frame(i))
        .collect();
    for t in 0..t_frames {
        probs.row_mut(t)[0] = 1.0; // placeholder; rewritten below
    }
    for t in 0..t_frames {
        let row = probs.row_mut(t);
        let spike_pos = spike_frames.iter().position(|&f| f == t);
        match spike_pos {
            None => designed_row(row, &[(0, spec.blank_confidence)], &spec.suppressed, &mut rng),
            Some(i) => {
                let true_tok = spec.transcript[i];
                match spec.corruptions.iter().find(|c| c.position == i) {
                    None => designed_row(
                        row,
                        &[(true_tok, spec.clean_confidence)],
                        &spec.suppressed,
                        &mut rng,
                    ),
                    Some(c) => {
                        // Exact log-margin between confusable and truth.
                        let a = spec.top_mass / (1.0 + (-c.margin).exp());
                        designed_row(
                            row,
                            &[(c.confusable, a), (true_tok, a * (-c.margin).exp())],
                            &spec.suppressed,
                            &mut rng,
                        );
                    }
                }
            }
        }
    }
    let mut logits = probs.clone();
    for t in 0..t_frames {
        for val in logits.row_mut(t) {
            *val = val.ln();
        }
    }
    let posterior = PosteriorMatrix::new(logits.clone(), 0);
    posterior.validate()?;
    Ok(SynthUtterance {
        embeddings: logits,
        posterior,
        spike_frames,
        transcript: spec.transcript.clone(),
    })
}

/// Gains of the analytically constructed context weights.
#[derive(Debug, Clone, Copy)]
pub struct FixtureParams {
    /// Scale of the one-hot token embeddings; small enough that the LSTM
    /// cell accumulates a near-exact bag of tokens.
    pub embed_scale: f64,
    /// Constant added to every query dim by the conv bias. Log-posteriors
    /// are negative, so without the shift a phrase with no token in a
    /// head outscores every phrase with evidence there; the shift makes
    /// present-token contributions positive and absent ones negative.
    pub query_shift: f64,
    /// Query/key gain; sharpens attention onto the matching phrase.
    pub attn_sharpness: f64,
    /// Nats added to a phrase token's logit under full attention.
    pub value_gain: f64,
    /// Context-decoder weight on the attended context.
    pub context_gain: f64,
    /// Context-decoder weight on the raw spike logits.
    pub acoustic_gain: f64,
    /// Context-decoder blank offset so fillers decode to blank.
    pub blank_bias: f64,
    pub heads: usize,
    pub conv_kernel: usize,
}

impl Default for FixtureParams {
    fn default() -> Self {
        FixtureParams {
            embed_scale: 0.01,
            query_shift: 6.0,
            attn_sharpness: 30.0,
            value_gain: 4.0,
            context_gain: 2.0,
            acoustic_gain: 1.0,
            blank_bias: 4.0,
            heads: 4,
            conv_kernel: 3,
        }
    }
}

/// Builds a weight bundle whose context pipeline provably amplifies
/// phrase-token evidence:
///
/// - the context encoder reduces a phrase to a scaled bag-of-tokens
///   vector (input and forget gates pinned open, cell state harvested),
/// - attention with identity projections matches spike logits against
///   those bags,
/// - the value/output path adds `value_gain` nats onto the attended
///   phrase's token dims (never blank),
/// - the context decoder reads `[c, h_se]` with a blank offset,
/// - the CTC head is the identity, so posterior rows are just
///   `log_softmax` of embedding rows.
pub fn analytic_fixture_bundle(vocab: usize, params: &FixtureParams) -> Result<WeightBundle> {
    if vocab % params.heads != 0 {
        return Err(Error::Contract(format!(
            "vocab {vocab} not divisible by {} heads",
            params.heads
        )));
    }
    let v = vocab;
    let meta = BundleMeta {
        d_model: v,
        attn_dim: v / params.heads,
        heads: params.heads,
        vocab: v,
        conv_kernel: params.conv_kernel,
    };
    meta.validate()?;
    let mut bundle = WeightBundle::new(meta);

    let eps = params.embed_scale;
    let mut embed = Mat::zeros(v, v);
    for i in 0..v {
        embed.set(i, i, eps);
    }
    bundle.insert("context_encoder.embed", embed);

    // LSTM with pinned input/forget gates: the cell state accumulates
    // tanh(eps * one-hot) per step, i.e. a near-exact token bag.
    let mut w_ih = Mat::zeros(v, 4 * v);
    for i in 0..v {
        w_ih.set(i, 2 * v + i, 1.0); // cell-candidate slice is identity
    }
    let w_hh = Mat::zeros(v, 4 * v);
    let mut b = vec![0.0; 4 * v];
    for j in 0..v {
        b[j] = 30.0; // input gate open
        b[v + j] = 30.0; // forget gate open
        b[3 * v + j] = -30.0; // output gate shut; h stays ~0
    }
    for dir in ["fwd", "bwd"] {
        bundle.insert(format!("context_encoder.{dir}.w_ih"), w_ih.clone());
        bundle.insert(format!("context_encoder.{dir}.w_hh"), w_hh.clone());
        bundle.insert(format!("context_encoder.{dir}.b"), Mat::row_vector(b.clone()));
    }
    // Harvest the two cell states: h_ce = (c_fwd + c_bwd) / 2.
    let mut out_w = Mat::zeros(4 * v, v);
    for i in 0..v {
        out_w.set(v + i, i, 0.5);
        out_w.set(3 * v + i, i, 0.5);
    }
    bundle.insert("context_encoder.out.w", out_w);
    bundle.insert("context_encoder.out.b", Mat::zeros(1, v));

    // Convolution: identity center tap plus the constant query shift.
    let k = params.conv_kernel;
    let mut conv_w = Mat::zeros(k * v, v);
    let center = k / 2;
    for i in 0..v {
        conv_w.set(center * v + i, i, 1.0);
    }
    bundle.insert("integration.conv.w", conv_w);
    bundle.insert(
        "integration.conv.b",
        Mat::row_vector(vec![params.query_shift; v]),
    );

    let scaled_identity = |scale: f64| {
        let mut m = Mat::zeros(v, v);
        for i in 0..v {
            m.set(i, i, scale);
        }
        m
    };
    bundle.insert("integration.attn.wq", scaled_identity(params.attn_sharpness));
    bundle.insert("integration.attn.wk", scaled_identity(params.attn_sharpness));
    // Undo the tanh(eps) bag scale so attended phrases land at value_gain.
    bundle.insert(
        "integration.attn.wv",
        scaled_identity(params.value_gain / eps.tanh()),
    );
    // Implicit projection: identity, with the blank dim pinned to zero so
    // implicit bias can never promote blank at a spike.
    let mut out = scaled_identity(1.0);
    out.set(0, 0, 0.0);
    bundle.insert("integration.out.w", out);
    bundle.insert("integration.out.b", Mat::zeros(1, v));

    // Context decoder reads [c, h_se].
    let mut dec_w = Mat::zeros(2 * v, v);
    for i in 0..v {
        dec_w.set(i, i, params.context_gain);
        dec_w.set(v + i, i, params.acoustic_gain);
    }
    bundle.insert("ctx_decoder.w", dec_w);
    let mut dec_b = vec![0.0; v];
    dec_b[0] = params.blank_bias;
    bundle.insert("ctx_decoder.b", Mat::row_vector(dec_b));

    // Identity CTC head.
    bundle.insert("ctc_head.w", scaled_identity(1.0));
    bundle.insert("ctc_head.b", Mat::zeros(1, v));
    Ok(bundle)
}

/// Corpus-level generation policy.
#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub utterances: usize,
    pub vocab: usize,
    pub phrase_count: usize,
    /// Inclusive phrase length bounds.
    pub phrase_len: (usize, usize),
    /// Inclusive filler length bounds, applied before and after the phrase.
    pub filler_len: (usize, usize),
    pub frames_per_token: usize,
    pub clean_confidence: f64,
    pub blank_confidence: f64,
    pub top_mass: f64,
    /// Margin of the one corrupted phrase token per utterance; `None`
    /// leaves the corpus clean.
    pub corruption_margin: Option<f64>,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            utterances: 200,
            vocab: 100,
            phrase_count: 50,
            phrase_len: (2, 4),
            filler_len: (2, 4),
            frames_per_token: 3,
            clean_confidence: 0.98,
            blank_confidence: 0.98,
            top_mass: 0.9,
            corruption_margin: Some(1.0),
            seed: 0,
        }
    }
}

/// One corpus utterance with its ground truth.
#[derive(Debug, Clone)]
pub struct CorpusUtterance {
    pub id: String,
    pub spec: SynthSpec,
    /// Index into the corpus phrase pool.
    pub phrase_idx: usize,
    /// Where the phrase sits in the transcript.
    pub occurrence: Occurrence,
    pub corruption: Option<Corruption>,
}

/// A generated corpus: the shared phrase pool (the biasing list) and the
/// per-utterance recipes.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub pool: Vec<Vec<TokenId>>,
    pub utterances: Vec<CorpusUtterance>,
    pub vocab: usize,
}

/// Splits the non-blank vocab: the low range feeds phrases, the high
/// range feeds fillers and confusables, so a corruption never lands on a
/// token any pool phrase contains.
fn alphabets(vocab: usize) -> (std::ops::Range<u32>, std::ops::Range<u32>) {
    let split = 1 + (vocab as u32 - 1) * 6 / 10;
    (1..split, split..vocab as u32)
}

/// Deterministic corpus: every utterance embeds one pool phrase between
/// fillers and (per policy) corrupts one phrase token.
pub fn synth_corpus(cs: &CorpusSpec) -> Result<SynthCorpus> {
    if cs.phrase_count == 0 {
        return Err(Error::Contract("phrase pool must be non-empty".into()));
    }
    if cs.vocab < 16 {
        return Err(Error::Contract("vocab too small to split alphabets".into()));
    }
    let (phrase_alpha, filler_alpha) = alphabets(cs.vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(cs.seed);
    let mut pool = Vec::with_capacity(cs.phrase_count);
    for _ in 0..cs.phrase_count {
        let len = rng.gen_range(cs.phrase_len.0..=cs.phrase_len.1);
        let phrase: Vec<TokenId> = (0..len)
            .map(|_| rng.gen_range(phrase_alpha.clone()))
            .collect();
        pool.push(phrase);
    }
    let mut utterances = Vec::with_capacity(cs.utterances);
    for n in 0..cs.utterances {
        let phrase_idx = rng.gen_range(0..pool.len());
        let phrase = pool[phrase_idx].clone();
        let pre_len = rng.gen_range(cs.filler_len.0..=cs.filler_len.1);
        let post_len = rng.gen_range(cs.filler_len.0..=cs.filler_len.1);
        let mut transcript: Vec<TokenId> = (0..pre_len)
            .map(|_| rng.gen_range(filler_alpha.clone()))
            .collect();
        let occurrence = Occurrence {
            start: transcript.len(),
            len: phrase.len(),
        };
        transcript.extend_from_slice(&phrase);
        transcript.extend((0..post_len).map(|_| rng.gen_range(filler_alpha.clone())));
        let corruption = cs.corruption_margin.map(|margin| {
            let inside = rng.gen_range(0..phrase.len());
            Corruption {
                position: occurrence.start + inside,
                confusable: rng.gen_range(filler_alpha.clone()),
                margin,
            }
        });
        let spec = SynthSpec {
            vocab: cs.vocab,
            transcript,
            frames_per_token: cs.frames_per_token,
            clean_confidence: cs.clean_confidence,
            blank_confidence: cs.blank_confidence,
            top_mass: cs.top_mass,
            corruptions: corruption.into_iter().collect(),
            suppressed: Vec::new(),
            seed: rng.gen(),
        };
        utterances.push(CorpusUtterance {
            id: format!("utt{n:04}"),
            spec,
            phrase_idx,
            occurrence,
            corruption,
        });
    }
    Ok(SynthCorpus {
        pool,
        utterances,
        vocab: cs.vocab,
    })
}
