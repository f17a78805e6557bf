//! Timing of the hot paths: enumerating the default test space, building its
//! likelihood table and picking the next test.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use fairprobe::engine::argmax_test;
use fairprobe::{enumerate_tests, Choice, Engine, EngineConfig, LikelihoodTable, NextStep, Posterior, TestSpaceConfig};

fn enumeration(c: &mut Criterion) {
    let config = TestSpaceConfig::default();
    c.bench_function("enumerate_tests", |b| b.iter(|| enumerate_tests(black_box(&config)).unwrap()));
}

fn likelihood_table(c: &mut Criterion) {
    let space = enumerate_tests(&TestSpaceConfig::default()).unwrap();
    let config = EngineConfig::default();
    c.bench_function("likelihood_table_build", |b| {
        b.iter(|| LikelihoodTable::build(black_box(&space), &config.hypotheses, &config.response).unwrap())
    });
}

fn selection(c: &mut Criterion) {
    let space = Arc::new(enumerate_tests(&TestSpaceConfig::default()).unwrap());
    let config = EngineConfig::default();
    let table = Arc::new(LikelihoodTable::build(&space, &config.hypotheses, &config.response).unwrap());
    let administered = vec![false; space.len()];
    let posterior = Posterior::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
    c.bench_function("argmax_test", |b| {
        b.iter(|| argmax_test(black_box(&table), black_box(&administered), black_box(&posterior)).unwrap())
    });
    c.bench_function("session_of_20_tests", |b| {
        b.iter(|| {
            let mut engine = Engine::new(space.clone(), table.clone(), config.clone()).unwrap();
            let mut flip = false;
            while let NextStep::Test(id) = engine.next_test().unwrap() {
                flip = !flip;
                engine.record(id, if flip { Choice::A1 } else { Choice::A2 }).unwrap();
            }
            black_box(engine.posterior().clone())
        })
    });
}

criterion_group!(benches, enumeration, likelihood_table, selection);
criterion_main!(benches);
