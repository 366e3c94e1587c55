use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use ranslice_bench::{actions, model_and_samples, options, warm_simulator};
use ranslice_core::inter_slice::{map_action, PriorityWeights};

fn mapping(c: &mut Criterion) {
    let opts = options(16, 3);
    let acts = actions(256, 3, 4);
    let pri = PriorityWeights::uniform(3);
    c.bench_function("map_action r16 s3", |b| {
        let mut i = 0;
        b.iter(|| {
            i = (i + 1) % acts.len();
            black_box(map_action(&acts[i], 16, &opts, &pri).unwrap())
        })
    });
}

fn hdm(c: &mut Criterion) {
    let (model, samples) = model_and_samples();
    let s = &samples[0];
    c.bench_function("hdm forward", |b| b.iter(|| black_box(model.predict(&s.input).unwrap())));
    let mut grad = vec![0.0; model.param_count()];
    c.bench_function("hdm forward+backward", |b| {
        b.iter(|| black_box(model.loss_and_grad(&s.input, &s.target, 1.0, &mut grad)))
    });
}

fn sim_step(c: &mut Criterion) {
    let mut sim = warm_simulator();
    c.bench_function("simulator step (30 UEs, 7 cells)", |b| b.iter(|| sim.step().unwrap()));
}

criterion_group!(benches, mapping, hdm, sim_step);
criterion_main!(benches);
