//! Contextual-biasing decoding toolkit for CTC speech recognition.
//!
//! The crate decodes CTC posterior lattices while steering recognition
//! toward a list of contextual phrases (names, terms, hotwords). Biasing
//! can be applied three ways, alone or cascaded:
//!
//! - **implicit** — context-aware embeddings are added back onto the
//!   emitting-frame (spike) rows of the encoder output before the CTC
//!   head recomputes posteriors ([`context`]),
//! - **explicit** — a constrained beam search over the context decoder's
//!   spike posteriors walks a failure-arc phrase graph and adds a bias
//!   score to the winning tokens in the ASR lattice ([`explicit`]),
//! - **shallow fusion** — the same phrase graph scores hypotheses
//!   incrementally inside CTC prefix beam search ([`fusion`]).
//!
//! Supporting pieces: spike detection and CTC lattice algorithms
//! ([`ctc`]), two-stage phrase filtering ([`filter`]), training-data
//! augmentation ([`augment`]), biased/unbiased error-rate scoring
//! ([`metrics`]), synthetic test-corpus generation ([`synth`]), and the
//! on-disk formats ([`io`]).

pub mod augment;
pub mod ctc;
pub mod context;
pub mod error;
pub mod explicit;
pub mod filter;
pub mod fusion;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod synth;
pub mod tensor;

pub use context::{BiasingList, ContextState, EncoderEmbeddings, SpikePosterior};
pub use ctc::{Hypothesis, PosteriorMatrix, Spike, SpikeSequence};
pub use error::{Error, Result};
pub use graph::BiasGraph;
pub use metrics::EvalReport;
pub use tensor::{Mat, WeightBundle};

/// Token identifier; row 0 of the vocab file is reserved for the CTC blank.
pub type TokenId = u32;
