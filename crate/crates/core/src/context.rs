//! Context encoder, context integration, and context decoder: the
//! components that turn a biasing list into per-spike context embeddings
//! and optionally fold them back into the encoder output (implicit bias).
//!
//! Weight names consumed here (see the bundle index format in [`crate::io`]):
//! `context_encoder.embed`, `context_encoder.{fwd,bwd}.{w_ih,w_hh,b}`,
//! `context_encoder.out.{w,b}`, `integration.conv.{w,b}`,
//! `integration.attn.{wq,wk,wv}`, `integration.out.{w,b}`,
//! `ctx_decoder.{w,b}`, `ctc_head.{w,b}`.

use crate::ctc::{PosteriorMatrix, Spike};
use crate::error::{Error, Result};
use crate::tensor::{
    blstm_encode, conv1d, label_smoothing_loss, linear, log_softmax, multi_head_attention,
    LstmParams, Mat, WeightBundle,
};
use crate::TokenId;

/// Contextual phrases to bias toward. Index 0 is always the pseudo-phrase
/// holding a single blank token, so attention has somewhere neutral to look.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasingList {
    phrases: Vec<Vec<TokenId>>,
    blank: TokenId,
}

impl BiasingList {
    /// Wraps content phrases with the blank entry at index 0.
    pub fn with_blank_entry(content: Vec<Vec<TokenId>>, blank: TokenId) -> Result<BiasingList> {
        for (i, p) in content.iter().enumerate() {
            if p.is_empty() {
                return Err(Error::Contract(format!("phrase {i} is empty")));
            }
            if p.contains(&blank) {
                return Err(Error::Contract(format!(
                    "phrase {i} contains the blank token"
                )));
            }
        }
        let mut phrases = Vec::with_capacity(content.len() + 1);
        phrases.push(vec![blank]);
        phrases.extend(content);
        Ok(BiasingList { phrases, blank })
    }

    /// All phrases including the blank entry at index 0.
    pub fn phrases(&self) -> &[Vec<TokenId>] {
        &self.phrases
    }

    /// Content phrases (everything after the blank entry).
    pub fn content(&self) -> &[Vec<TokenId>] {
        &self.phrases[1..]
    }

    pub fn blank(&self) -> TokenId {
        self.blank
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    /// Never true: the blank entry is always present.
    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Encoder output for one utterance plus its gathered spike rows.
#[derive(Debug, Clone)]
pub struct EncoderEmbeddings {
    /// `T x d_model` full sequence.
    pub h_e: Mat,
    /// `U x d_model`: rows of `h_e` at the spike frames.
    pub h_se: Mat,
    /// Frame index of each `h_se` row.
    pub spike_frames: Vec<usize>,
}

impl EncoderEmbeddings {
    /// Gathers the spike rows out of the full sequence.
    pub fn gather(h_e: Mat, spikes: &[Spike]) -> EncoderEmbeddings {
        let d = h_e.cols();
        let mut h_se = Mat::zeros(spikes.len(), d);
        let mut frames = Vec::with_capacity(spikes.len());
        for (u, sp) in spikes.iter().enumerate() {
            h_se.row_mut(u).copy_from_slice(h_e.row(sp.frame));
            frames.push(sp.frame);
        }
        EncoderEmbeddings {
            h_e,
            h_se,
            spike_frames: frames,
        }
    }
}

/// Per-utterance context bundle: phrase embeddings, attention weights,
/// and the derived context vectors.
#[derive(Debug, Clone)]
pub struct ContextState {
    /// `M x d_model` phrase embeddings.
    pub h_ce: Mat,
    /// One `U x M` attention matrix per head.
    pub alpha: Vec<Mat>,
    /// `U x d_model` attended context.
    pub c: Mat,
    /// `U x d_model` implicit-bias vectors added onto spike rows.
    pub c_im: Mat,
    /// `U x 2*d_model`: `[c, h_se]` per spike, context-decoder input.
    pub c_ex: Mat,
}

impl ContextState {
    pub fn empty(d_model: usize) -> ContextState {
        ContextState {
            h_ce: Mat::zeros(0, d_model),
            alpha: Vec::new(),
            c: Mat::zeros(0, d_model),
            c_im: Mat::zeros(0, d_model),
            c_ex: Mat::zeros(0, 2 * d_model),
        }
    }
}

/// Spike-indexed posterior from the context decoder; row `u` carries the
/// original frame index of spike `u`.
#[derive(Debug, Clone)]
pub struct SpikePosterior {
    pub frames: Vec<usize>,
    pub logp: Mat,
    pub blank: TokenId,
}

impl SpikePosterior {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn row(&self, u: usize) -> &[f64] {
        self.logp.row(u)
    }
}

fn lstm_params<'a>(bundle: &'a WeightBundle, prefix: &str) -> Result<(LstmParams<'a>, usize)> {
    let w_hh = bundle.get(&format!("{prefix}.w_hh"))?;
    let hidden = w_hh.rows();
    let w_ih = bundle.get(&format!("{prefix}.w_ih"))?;
    let bias = bundle.get_vector(&format!("{prefix}.b"), 4 * hidden)?;
    Ok((LstmParams { w_ih, w_hh, bias }, hidden))
}

/// Embeds one phrase through the lookup table: row per token.
fn embed_phrase(phrase: &[TokenId], embed: &Mat) -> Result<Mat> {
    let mut out = Mat::zeros(phrase.len(), embed.cols());
    for (i, &tok) in phrase.iter().enumerate() {
        if (tok as usize) >= embed.rows() {
            return Err(Error::Contract(format!(
                "token {tok} outside embedding table ({} rows)",
                embed.rows()
            )));
        }
        out.row_mut(i).copy_from_slice(embed.row(tok as usize));
    }
    Ok(out)
}

/// Encodes every phrase of the biasing list into an `M x d_model` matrix;
/// row 0 is the blank-phrase embedding.
pub fn encode_biasing_list(list: &BiasingList, bundle: &WeightBundle) -> Result<Mat> {
    if list.phrases().first().map(Vec::as_slice) != Some(&[list.blank()]) {
        return Err(Error::Contract(
            "biasing list must start with the blank entry".into(),
        ));
    }
    let embed = bundle.get("context_encoder.embed")?;
    let (fwd, _) = lstm_params(bundle, "context_encoder.fwd")?;
    let (bwd, hidden) = lstm_params(bundle, "context_encoder.bwd")?;
    let d_model = bundle.meta.d_model;
    let out_w = bundle.get_shaped("context_encoder.out.w", 4 * hidden, d_model)?;
    let out_b = bundle.get_vector("context_encoder.out.b", d_model)?;

    let mut h_ce = Mat::zeros(list.len(), d_model);
    for (m, phrase) in list.phrases().iter().enumerate() {
        let xs = embed_phrase(phrase, embed)?;
        let enc = blstm_encode(&xs, &fwd, &bwd, out_w, out_b)?;
        h_ce.row_mut(m).copy_from_slice(&enc);
    }
    Ok(h_ce)
}

/// Runs the integration module: convolution over spike rows, attention
/// against the phrase embeddings, and the implicit-bias projection.
///
/// Returns the context state and a copy of the embeddings whose spike
/// rows have `implicit_weight * c_im` added (other rows untouched).
pub fn integrate(
    emb: &EncoderEmbeddings,
    h_ce: &Mat,
    bundle: &WeightBundle,
    implicit_weight: f64,
) -> Result<(ContextState, EncoderEmbeddings)> {
    let d_model = bundle.meta.d_model;
    if implicit_weight < 0.0 {
        return Err(Error::Contract(format!(
            "implicit weight {implicit_weight} is negative"
        )));
    }
    if emb.h_se.rows() == 0 {
        return Ok((ContextState::empty(d_model), emb.clone()));
    }
    let k = bundle.meta.conv_kernel;
    let conv_w = bundle.get_shaped("integration.conv.w", k * d_model, d_model)?;
    let conv_b = bundle.get_vector("integration.conv.b", d_model)?;
    let w_q = bundle.get_shaped("integration.attn.wq", d_model, d_model)?;
    let w_k = bundle.get_shaped("integration.attn.wk", d_model, d_model)?;
    let w_v = bundle.get_shaped("integration.attn.wv", d_model, d_model)?;
    let out_w = bundle.get_shaped("integration.out.w", d_model, d_model)?;
    let out_b = bundle.get_vector("integration.out.b", d_model)?;

    let h_cse = conv1d(&emb.h_se, conv_w, conv_b, k)?;
    let (alpha, c) = multi_head_attention(
        &h_cse,
        h_ce,
        w_q,
        w_k,
        w_v,
        bundle.meta.heads,
        bundle.meta.attn_dim,
    )?;
    let c_im = linear(&c, out_w, out_b)?;
    let c_ex = c.hconcat(&emb.h_se)?;

    let mut biased = emb.clone();
    for (u, &frame) in emb.spike_frames.iter().enumerate() {
        let row = biased.h_e.row_mut(frame);
        for (j, v) in row.iter_mut().enumerate() {
            *v += implicit_weight * c_im.get(u, j);
        }
    }
    // Keep h_se rows exact copies of their h_e rows.
    for (u, &frame) in emb.spike_frames.iter().enumerate() {
        let row = biased.h_e.row(frame).to_vec();
        biased.h_se.row_mut(u).copy_from_slice(&row);
    }

    Ok((
        ContextState {
            h_ce: h_ce.clone(),
            alpha,
            c,
            c_im,
            c_ex,
        },
        biased,
    ))
}

/// Context decoder: linear map from `[c, h_se]` to a log-distribution per
/// spike. An empty spike set yields an empty posterior.
pub fn context_decode(
    c_ex: &Mat,
    spike_frames: &[usize],
    bundle: &WeightBundle,
) -> Result<SpikePosterior> {
    let d_model = bundle.meta.d_model;
    let vocab = bundle.meta.vocab;
    if c_ex.rows() == 0 {
        return Ok(SpikePosterior {
            frames: Vec::new(),
            logp: Mat::zeros(0, vocab),
            blank: 0,
        });
    }
    if c_ex.rows() != spike_frames.len() {
        return Err(Error::Contract(format!(
            "context_decode: {} c_ex rows vs {} spike frames",
            c_ex.rows(),
            spike_frames.len()
        )));
    }
    let w = bundle.get_shaped("ctx_decoder.w", 2 * d_model, vocab)?;
    let b = bundle.get_vector("ctx_decoder.b", vocab)?;
    let logits = linear(c_ex, w, b)?;
    Ok(SpikePosterior {
        frames: spike_frames.to_vec(),
        logp: log_softmax(&logits),
        blank: 0,
    })
}

/// Keeps label positions covered by a phrase occurrence and masks every
/// other position with blank.
pub fn mask_bias_labels(
    label: &[TokenId],
    occurrences: &[(usize, usize)],
    blank: TokenId,
) -> Result<Vec<TokenId>> {
    let mut keep = vec![false; label.len()];
    for &(start, len) in occurrences {
        let end = start.checked_add(len).filter(|&e| e <= label.len());
        match end {
            Some(end) => keep[start..end].iter_mut().for_each(|k| *k = true),
            None => {
                return Err(Error::Contract(format!(
                    "occurrence ({start},{len}) out of bounds for label of length {}",
                    label.len()
                )))
            }
        }
    }
    Ok(label
        .iter()
        .zip(&keep)
        .map(|(&t, &k)| if k { t } else { blank })
        .collect())
}

/// Label-smoothing loss of the context decoder against masked labels,
/// one per spike.
pub fn bias_loss(ctx_post: &SpikePosterior, masked_labels: &[TokenId], eps: f64) -> Result<f64> {
    if ctx_post.len() != masked_labels.len() {
        return Err(Error::Contract(format!(
            "bias_loss: {} spikes vs {} labels",
            ctx_post.len(),
            masked_labels.len()
        )));
    }
    label_smoothing_loss(&ctx_post.logp, masked_labels, eps)
}

/// Per-frame CTC head: linear to vocab logits, then log-softmax.
pub fn ctc_head(emb: &Mat, bundle: &WeightBundle) -> Result<PosteriorMatrix> {
    let w = bundle.get_shaped("ctc_head.w", bundle.meta.d_model, bundle.meta.vocab)?;
    let b = bundle.get_vector("ctc_head.b", bundle.meta.vocab)?;
    let logits = linear(emb, w, b)?;
    Ok(PosteriorMatrix::new(log_softmax(&logits), 0))
}

/// Recomputes only the given frames of `post` from `emb` through the CTC
/// head; every other row is carried over unchanged. Cheap path for
/// implicit biasing, which only ever changes spike rows.
pub fn recompute_posterior_rows(
    post: &PosteriorMatrix,
    emb: &Mat,
    frames: &[usize],
    bundle: &WeightBundle,
) -> Result<PosteriorMatrix> {
    let w = bundle.get_shaped("ctc_head.w", bundle.meta.d_model, bundle.meta.vocab)?;
    let b = bundle.get_vector("ctc_head.b", bundle.meta.vocab)?;
    let mut out = post.clone();
    for &frame in frames {
        if frame >= post.frames() {
            return Err(Error::Contract(format!(
                "frame {frame} out of range for posterior with {} frames",
                post.frames()
            )));
        }
        let row = Mat::row_vector(emb.row(frame).to_vec());
        let logits = linear(&row, w, b)?;
        let normalized = log_softmax(&logits);
        out.logp.row_mut(frame).copy_from_slice(normalized.row(0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::greedy_spikes;
    use crate::tensor::BundleMeta;

    fn splitmix(state: &mut u64) -> f64 {
        *state = state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }

    fn random_mat(rows: usize, cols: usize, state: &mut u64) -> Mat {
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| splitmix(state)).collect()).unwrap()
    }

    /// Small random bundle with consistent shapes: d_model=4, 2 heads,
    /// vocab=5, k=3, embed dim 3, hidden 2.
    fn toy_bundle(state: &mut u64) -> WeightBundle {
        let meta = BundleMeta { d_model: 4, attn_dim: 2, heads: 2, vocab: 5, conv_kernel: 3 };
        let mut b = WeightBundle::new(meta);
        let hidden = 2;
        let embed_dim = 3;
        b.insert("context_encoder.embed", random_mat(meta.vocab, embed_dim, state));
        for dir in ["fwd", "bwd"] {
            b.insert(format!("context_encoder.{dir}.w_ih"), random_mat(embed_dim, 4 * hidden, state));
            b.insert(format!("context_encoder.{dir}.w_hh"), random_mat(hidden, 4 * hidden, state));
            b.insert(format!("context_encoder.{dir}.b"), random_mat(1, 4 * hidden, state));
        }
        b.insert("context_encoder.out.w", random_mat(4 * hidden, meta.d_model, state));
        b.insert("context_encoder.out.b", random_mat(1, meta.d_model, state));
        b.insert("integration.conv.w", random_mat(3 * meta.d_model, meta.d_model, state));
        b.insert("integration.conv.b", random_mat(1, meta.d_model, state));
        b.insert("integration.attn.wq", random_mat(meta.d_model, meta.d_model, state));
        b.insert("integration.attn.wk", random_mat(meta.d_model, meta.d_model, state));
        b.insert("integration.attn.wv", random_mat(meta.d_model, meta.d_model, state));
        b.insert("integration.out.w", random_mat(meta.d_model, meta.d_model, state));
        b.insert("integration.out.b", random_mat(1, meta.d_model, state));
        b.insert("ctx_decoder.w", random_mat(2 * meta.d_model, meta.vocab, state));
        b.insert("ctx_decoder.b", random_mat(1, meta.vocab, state));
        b.insert("ctc_head.w", random_mat(meta.d_model, meta.vocab, state));
        b.insert("ctc_head.b", random_mat(1, meta.vocab, state));
        b
    }

    fn toy_embeddings(state: &mut u64) -> EncoderEmbeddings {
        let h_e = random_mat(6, 4, state);
        let spikes = vec![
            Spike { frame: 1, token: 1, logp: -0.1 },
            Spike { frame: 3, token: 2, logp: -0.2 },
            Spike { frame: 4, token: 3, logp: -0.3 },
        ];
        EncoderEmbeddings::gather(h_e, &spikes)
    }

    #[test]
    fn biasing_list_blank_entry_and_validation() {
        let list = BiasingList::with_blank_entry(vec![vec![1, 2]], 0).unwrap();
        assert_eq!(list.phrases()[0], vec![0]);
        assert_eq!(list.content(), &[vec![1, 2]]);
        assert!(BiasingList::with_blank_entry(vec![vec![]], 0).is_err());
        assert!(BiasingList::with_blank_entry(vec![vec![1, 0]], 0).is_err());
    }

    #[test]
    fn encode_blank_only_list_is_one_row() {
        let mut st = 1u64;
        let bundle = toy_bundle(&mut st);
        let list = BiasingList::with_blank_entry(vec![], 0).unwrap();
        let h_ce = encode_biasing_list(&list, &bundle).unwrap();
        assert_eq!(h_ce.shape(), (1, 4));
    }

    #[test]
    fn encode_duplicate_phrases_give_identical_rows() {
        let mut st = 2u64;
        let bundle = toy_bundle(&mut st);
        let list = BiasingList::with_blank_entry(vec![vec![1, 2], vec![1, 2]], 0).unwrap();
        let h_ce = encode_biasing_list(&list, &bundle).unwrap();
        assert_eq!(h_ce.row(1), h_ce.row(2));
    }

    #[test]
    fn encode_rows_match_per_phrase_recomputation() {
        let mut st = 3u64;
        let bundle = toy_bundle(&mut st);
        let phrases = vec![vec![1], vec![2, 3], vec![4, 1, 2]];
        let list = BiasingList::with_blank_entry(phrases.clone(), 0).unwrap();
        let h_ce = encode_biasing_list(&list, &bundle).unwrap();
        // Recompute each phrase independently through the same kernels.
        let embed = bundle.get("context_encoder.embed").unwrap();
        let (fwd, _) = lstm_params(&bundle, "context_encoder.fwd").unwrap();
        let (bwd, hidden) = lstm_params(&bundle, "context_encoder.bwd").unwrap();
        let out_w = bundle.get_shaped("context_encoder.out.w", 4 * hidden, 4).unwrap();
        let out_b = bundle.get_vector("context_encoder.out.b", 4).unwrap();
        for (i, phrase) in phrases.iter().enumerate() {
            let xs = embed_phrase(phrase, embed).unwrap();
            let enc = blstm_encode(&xs, &fwd, &bwd, out_w, out_b).unwrap();
            assert_eq!(h_ce.row(i + 1), &enc[..]);
        }
    }

    #[test]
    fn integrate_zero_weight_leaves_embeddings_unchanged() {
        let mut st = 4u64;
        let bundle = toy_bundle(&mut st);
        let emb = toy_embeddings(&mut st);
        let list = BiasingList::with_blank_entry(vec![vec![1, 2], vec![3]], 0).unwrap();
        let h_ce = encode_biasing_list(&list, &bundle).unwrap();
        let (state, biased) = integrate(&emb, &h_ce, &bundle, 0.0).unwrap();
        assert_eq!(biased.h_e, emb.h_e);
        assert_eq!(biased.h_se, emb.h_se);
        assert_eq!(state.c.rows(), 3);
        assert_eq!(state.c_ex.shape(), (3, 8));
    }

    #[test]
    fn integrate_empty_spikes_is_noop() {
        let mut st = 5u64;
        let bundle = toy_bundle(&mut st);
        let h_e = random_mat(4, 4, &mut st);
        let emb = EncoderEmbeddings::gather(h_e, &[]);
        let list = BiasingList::with_blank_entry(vec![vec![1]], 0).unwrap();
        let h_ce = encode_biasing_list(&list, &bundle).unwrap();
        let (state, biased) = integrate(&emb, &h_ce, &bundle, 1.0).unwrap();
        assert_eq!(state.c.rows(), 0);
        assert_eq!(biased.h_e, emb.h_e);
    }

    #[test]
    fn integrate_touches_only_spike_rows() {
        let mut st = 6u64;
        let bundle = toy_bundle(&mut st);
        let emb = toy_embeddings(&mut st);
        let list = BiasingList::with_blank_entry(vec![vec![1, 2]], 0).unwrap();
        let h_ce = encode_biasing_list(&list, &bundle).unwrap();
        let (state, biased) = integrate(&emb, &h_ce, &bundle, 0.75).unwrap();
        for t in 0..emb.h_e.rows() {
            let changed = biased.h_e.row(t) != emb.h_e.row(t);
            assert_eq!(changed, emb.spike_frames.contains(&t), "frame {t}");
        }
        // Spike rows move by exactly 0.75 * c_im.
        for (u, &frame) in emb.spike_frames.iter().enumerate() {
            for j in 0..4 {
                let want = emb.h_e.get(frame, j) + 0.75 * state.c_im.get(u, j);
                assert!((biased.h_e.get(frame, j) - want).abs() < 1e-12);
                assert_eq!(biased.h_se.get(u, j), biased.h_e.get(frame, j));
            }
        }
        // c_ex concatenates c with the *unbiased* spike rows.
        for u in 0..3 {
            for j in 0..4 {
                assert_eq!(state.c_ex.get(u, j), state.c.get(u, j));
                assert_eq!(state.c_ex.get(u, 4 + j), emb.h_se.get(u, j));
            }
        }
    }

    #[test]
    fn integrate_blank_only_list_with_zeroing_values_is_identity() {
        // W_v maps everything to zero, so c and c_im vanish and the biased
        // embeddings equal the input exactly even at weight 1.
        let mut st = 7u64;
        let mut bundle = toy_bundle(&mut st);
        bundle.insert("integration.attn.wv", Mat::zeros(4, 4));
        bundle.insert("integration.out.b", Mat::zeros(1, 4));
        let emb = toy_embeddings(&mut st);
        let list = BiasingList::with_blank_entry(vec![], 0).unwrap();
        let h_ce = encode_biasing_list(&list, &bundle).unwrap();
        let (state, biased) = integrate(&emb, &h_ce, &bundle, 1.0).unwrap();
        // Single key: attention is pinned to the blank entry.
        for head in &state.alpha {
            for u in 0..3 {
                assert!((head.get(u, 0) - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(biased.h_e, emb.h_e);
    }

    #[test]
    fn permuting_content_phrases_permutes_alpha_and_preserves_context() {
        let mut st = 8u64;
        let bundle = toy_bundle(&mut st);
        let emb = toy_embeddings(&mut st);
        let a = vec![1u32, 2];
        let b = vec![3u32];
        let c = vec![4u32, 4];
        let list1 = BiasingList::with_blank_entry(vec![a.clone(), b.clone(), c.clone()], 0).unwrap();
        let list2 = BiasingList::with_blank_entry(vec![c, a, b], 0).unwrap();
        let h1 = encode_biasing_list(&list1, &bundle).unwrap();
        let h2 = encode_biasing_list(&list2, &bundle).unwrap();
        let (s1, e1) = integrate(&emb, &h1, &bundle, 1.0).unwrap();
        let (s2, e2) = integrate(&emb, &h2, &bundle, 1.0).unwrap();
        // list2 = blank + [c, a, b]; in list1 terms columns are [0, 3, 1, 2].
        let perm = [0usize, 3, 1, 2];
        for (head1, head2) in s1.alpha.iter().zip(&s2.alpha) {
            for u in 0..3 {
                for (m2, &m1) in perm.iter().enumerate() {
                    assert_eq!(head2.get(u, m2), head1.get(u, m1), "bitwise alpha");
                }
            }
        }
        assert_eq!(s1.c, s2.c, "context must be bit-identical under permutation");
        assert_eq!(s1.c_im, s2.c_im);
        assert_eq!(s1.c_ex, s2.c_ex);
        assert_eq!(e1.h_e, e2.h_e);
        // Downstream posteriors are bit-identical too.
        let p1 = ctc_head(&e1.h_e, &bundle).unwrap();
        let p2 = ctc_head(&e2.h_e, &bundle).unwrap();
        assert_eq!(p1.logp, p2.logp);
    }

    #[test]
    fn context_decode_zero_weights_give_uniform_rows() {
        let mut st = 9u64;
        let mut bundle = toy_bundle(&mut st);
        bundle.insert("ctx_decoder.w", Mat::zeros(8, 5));
        bundle.insert("ctx_decoder.b", Mat::zeros(1, 5));
        let c_ex = random_mat(2, 8, &mut st);
        let post = context_decode(&c_ex, &[1, 3], &bundle).unwrap();
        for u in 0..2 {
            for v in 0..5 {
                assert!((post.row(u)[v] - (1.0f64 / 5.0).ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn context_decode_matches_per_row_recomputation_and_normalizes() {
        let mut st = 10u64;
        let bundle = toy_bundle(&mut st);
        let c_ex = random_mat(3, 8, &mut st);
        let post = context_decode(&c_ex, &[0, 2, 5], &bundle).unwrap();
        let w = bundle.get("ctx_decoder.w").unwrap();
        let b = bundle.get_vector("ctx_decoder.b", 5).unwrap();
        for u in 0..3 {
            let row = Mat::row_vector(c_ex.row(u).to_vec());
            let want = log_softmax(&linear(&row, w, b).unwrap());
            assert_eq!(post.row(u), want.row(0));
            let z = crate::tensor::log_sum_exp(post.row(u));
            assert!(z.abs() < 1e-9);
        }
        assert_eq!(post.frames, vec![0, 2, 5]);
    }

    #[test]
    fn context_decode_empty_is_empty() {
        let mut st = 11u64;
        let bundle = toy_bundle(&mut st);
        let post = context_decode(&Mat::zeros(0, 8), &[], &bundle).unwrap();
        assert!(post.is_empty());
    }

    #[test]
    fn mask_bias_labels_cases() {
        let label = [1u32, 2, 3, 4, 5];
        assert_eq!(mask_bias_labels(&label, &[], 0).unwrap(), vec![0; 5]);
        assert_eq!(
            mask_bias_labels(&label, &[(0, 5)], 0).unwrap(),
            label.to_vec()
        );
        assert_eq!(
            mask_bias_labels(&label, &[(1, 2)], 0).unwrap(),
            vec![0, 2, 3, 0, 0]
        );
        assert!(mask_bias_labels(&label, &[(4, 2)], 0).is_err());
    }

    #[test]
    fn mask_bias_labels_is_idempotent() {
        let label = [1u32, 2, 3, 4];
        let occ = [(2usize, 2usize)];
        let once = mask_bias_labels(&label, &occ, 0).unwrap();
        let twice = mask_bias_labels(&once, &occ, 0).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn ctc_head_identity_on_identity_weights() {
        let meta = BundleMeta { d_model: 3, attn_dim: 3, heads: 1, vocab: 3, conv_kernel: 1 };
        let mut bundle = WeightBundle::new(meta);
        bundle.insert("ctc_head.w", Mat::identity(3));
        bundle.insert("ctc_head.b", Mat::zeros(1, 3));
        let mut st = 12u64;
        let emb = random_mat(4, 3, &mut st);
        let post = ctc_head(&emb, &bundle).unwrap();
        let want = log_softmax(&emb);
        assert_eq!(post.logp, want);
        post.validate().unwrap();
    }

    #[test]
    fn implicit_zero_weight_posterior_is_bit_identical() {
        let mut st = 13u64;
        let bundle = toy_bundle(&mut st);
        let emb = toy_embeddings(&mut st);
        let list = BiasingList::with_blank_entry(vec![vec![1, 2], vec![3, 4]], 0).unwrap();
        let h_ce = encode_biasing_list(&list, &bundle).unwrap();
        let (_, biased) = integrate(&emb, &h_ce, &bundle, 0.0).unwrap();
        let before = ctc_head(&emb.h_e, &bundle).unwrap();
        let after = ctc_head(&biased.h_e, &bundle).unwrap();
        assert_eq!(before.logp, after.logp);
    }

    #[test]
    fn spike_row_recompute_agrees_with_full_recompute() {
        let mut st = 14u64;
        let bundle = toy_bundle(&mut st);
        let emb = toy_embeddings(&mut st);
        let base = ctc_head(&emb.h_e, &bundle).unwrap();
        let spikes = greedy_spikes(&base);
        let frames: Vec<usize> = spikes.iter().map(|s| s.frame).collect();
        let gathered = EncoderEmbeddings::gather(emb.h_e.clone(), &spikes);
        let list = BiasingList::with_blank_entry(vec![vec![1, 2]], 0).unwrap();
        let h_ce = encode_biasing_list(&list, &bundle).unwrap();
        let (_, biased) = integrate(&gathered, &h_ce, &bundle, 1.0).unwrap();
        let fast = recompute_posterior_rows(&base, &biased.h_e, &frames, &bundle).unwrap();
        let full = ctc_head(&biased.h_e, &bundle).unwrap();
        assert_eq!(fast.logp, full.logp);
    }

    #[test]
    fn bias_loss_checks_lengths() {
        let mut st = 15u64;
        let bundle = toy_bundle(&mut st);
        let c_ex = random_mat(2, 8, &mut st);
        let post = context_decode(&c_ex, &[0, 1], &bundle).unwrap();
        assert!(bias_loss(&post, &[1], 0.1).is_err());
        let loss = bias_loss(&post, &[1, 0], 0.1).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
    }
}
