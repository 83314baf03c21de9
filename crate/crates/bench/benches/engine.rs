use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

use chronomem::gmm;
use chronomem::model::{ChatTurn, Speaker};
use chronomem::parser;
use chronomem::provider::mock::MockEmbeddingProvider;
use chronomem::provider::EmbeddingProvider;
use chronomem::retrieve::{dense_topk, rerank};
use chronomem::store::MemoryStore;
use chronomem::time::TimePoint;

fn bench_parse_time(c: &mut Criterion) {
    let now = TimePoint::parse("2023-05-30").unwrap();
    let queries = [
        "What did I do last weekend?",
        "Where did I stay in May 2023?",
        "Did I call mom three weeks ago?",
        "What is my favorite color?",
    ];
    c.bench_function("parse_time", |b| {
        b.iter(|| {
            for q in &queries {
                black_box(parser::parse_time(q, now));
            }
        })
    });
}

fn bench_fit_gmm(c: &mut Criterion) {
    let embedding = MockEmbeddingProvider::new(32);
    let texts: Vec<String> = (0..60).map(|i| format!("entity number {i}")).collect();
    let points = embedding.embed(&texts).unwrap();
    c.bench_function("fit_gmm_k4_n60_d32", |b| {
        b.iter(|| black_box(gmm::fit_gmm(&points, 4, 0).unwrap()))
    });
}

fn filled_store(n: usize) -> (MemoryStore, Vec<f32>) {
    let embedding = MockEmbeddingProvider::new(64);
    let mut store = MemoryStore::new(64);
    for i in 0..n {
        let text = format!("turn number {i} about topic {}", i % 7);
        let v = embedding.embed(&[text.clone()]).unwrap().remove(0);
        store
            .add_turn(
                ChatTurn {
                    turn_id: format!("t{i:05}"),
                    session_id: format!("s{}", i / 20),
                    dialogue_time: TimePoint::parse("2023-05-01").unwrap().add_days((i % 90) as i64),
                    speaker: Speaker::User,
                    text,
                },
                v,
            )
            .unwrap();
    }
    let q = embedding.embed(&["what happened with topic 3".to_string()]).unwrap().remove(0);
    (store, q)
}

fn bench_dense_topk(c: &mut Criterion) {
    let (store, q) = filled_store(2000);
    c.bench_function("dense_topk_2000_turns", |b| {
        b.iter(|| black_box(dense_topk(&store, &q, 25, true)))
    });
}

fn bench_rerank(c: &mut Criterion) {
    let (store, q) = filled_store(2000);
    let cands = dense_topk(&store, &q, 200, true);
    c.bench_function("rerank_200", |b| {
        b.iter_batched(|| cands.clone(), |c| black_box(rerank(c)), BatchSize::SmallInput)
    });
}

criterion_group!(benches, bench_parse_time, bench_fit_gmm, bench_dense_topk, bench_rerank);
criterion_main!(benches);
