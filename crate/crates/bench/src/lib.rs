//! Shared fixtures for the benchmark targets.

use ctxspike_core::synth::{synth_corpus, CorpusSpec, SynthCorpus};

/// The default 200-utterance corrupted corpus used across benches.
pub fn bench_corpus() -> SynthCorpus {
    synth_corpus(&CorpusSpec {
        utterances: 200,
        seed: 1234,
        ..CorpusSpec::default()
    })
    .expect("corpus spec is valid")
}
