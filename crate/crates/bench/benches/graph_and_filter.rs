use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use ctxspike_bench::bench_corpus;
use ctxspike_core::context::BiasingList;
use ctxspike_core::filter::{filter_list, FilterConfig};
use ctxspike_core::graph::{BiasGraph, ScoreMode};
use ctxspike_core::synth::synth_utterance;

fn bench_graph(c: &mut Criterion) {
    let corpus = bench_corpus();
    c.bench_function("graph_build_50_phrases", |b| {
        b.iter(|| BiasGraph::build(black_box(&corpus.pool), 1.0, 0).unwrap())
    });
    let graph = BiasGraph::build(&corpus.pool, 1.0, 0).unwrap();
    let tokens: Vec<u32> = corpus.utterances[0].spec.transcript.clone();
    c.bench_function("graph_score_sequence_commit", |b| {
        b.iter(|| graph.score_sequence(black_box(&tokens), ScoreMode::Commit))
    });
    c.bench_function("graph_score_sequence_prospective", |b| {
        b.iter(|| graph.score_sequence(black_box(&tokens), ScoreMode::Prospective))
    });
}

fn bench_filter(c: &mut Criterion) {
    let corpus = bench_corpus();
    let utt = synth_utterance(&corpus.utterances[0].spec).unwrap();
    let list = BiasingList::with_blank_entry(corpus.pool.clone(), 0).unwrap();
    let cfg = FilterConfig::default();
    c.bench_function("filter_list_50_phrases", |b| {
        b.iter(|| filter_list(black_box(&utt.posterior), &list, &cfg).unwrap())
    });
    // Combined-list scale: 298 phrases against one utterance.
    let mut big_pool = corpus.pool.clone();
    let mut i = 0u32;
    while big_pool.len() < 298 {
        big_pool.push(vec![1 + i % 50, 2 + i % 40, 3 + i % 30]);
        i += 1;
    }
    let big_list = BiasingList::with_blank_entry(big_pool, 0).unwrap();
    c.bench_function("filter_list_298_phrases", |b| {
        b.iter(|| filter_list(black_box(&utt.posterior), &big_list, &cfg).unwrap())
    });
}

criterion_group!(benches, bench_graph, bench_filter);
criterion_main!(benches);
