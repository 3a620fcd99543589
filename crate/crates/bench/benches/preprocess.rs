use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use goalchain_core::datasets;
use goalchain_core::evaluation::{Preprocessor, TextKind};

fn bench_preprocess(c: &mut Criterion) {
    let pre = Preprocessor::default();
    let goals: Vec<String> = datasets::bundled("genome_nexus")
        .unwrap()
        .truth
        .low_level
        .into_iter()
        .map(|g| g.text)
        .collect();
    c.bench_function("preprocess_low_level_goals", |b| {
        b.iter(|| {
            for g in &goals {
                black_box(pre.preprocess(black_box(g), TextKind::GoalText));
            }
        })
    });
}

criterion_group!(benches, bench_preprocess);
criterion_main!(benches);
