use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use std::hint::black_box;

use delayfeed::metrics::{auc, pr_auc};
use delayfeed::pipelines::build_observed_stream;
use delayfeed::Mechanism;
use delayfeed_bench::{batch, bidefuse, bidefuse_batch, clicks, mlp, scored, windows};

fn model_gradients(c: &mut Criterion) {
    let samples = batch(256);
    let mut group = c.benchmark_group("gradient");
    group.throughput(Throughput::Elements(samples.len() as u64));
    for hidden in [vec![], vec![16]] {
        let model = mlp(hidden.clone());
        group.bench_function(format!("mlp hidden {hidden:?}"), |b| {
            b.iter(|| model.batch_gradient(samples.iter().map(|(x, t)| (0, x, *t))).unwrap())
        });
    }
    let net = bidefuse();
    let two_head = bidefuse_batch(256);
    group.bench_function("bi-defuse", |b| {
        b.iter(|| net.batch_gradient(two_head.iter().map(|(x, t)| (0, x, *t))).unwrap())
    });
    group.finish();

    let model = mlp(vec![16]);
    c.bench_function("mlp forward", |b| b.iter(|| model.forward(black_box(&samples[3].0)).unwrap()));
}

fn pipelines(c: &mut Criterion) {
    let data = clicks(100_000);
    let w = windows();
    let mut group = c.benchmark_group("observed stream");
    group.throughput(Throughput::Elements(data.len() as u64));
    group.sample_size(20);
    for mech in [Mechanism::Esdfm, Mechanism::Defer] {
        group.bench_function(mech.name(), |b| b.iter(|| build_observed_stream(&data, mech, &w).unwrap()));
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let (scores, labels) = scored(100_000);
    let mut group = c.benchmark_group("metrics");
    group.throughput(Throughput::Elements(scores.len() as u64));
    group.bench_function("auc", |b| b.iter(|| auc(&scores, &labels).unwrap()));
    group.bench_function("pr-auc", |b| b.iter(|| pr_auc(&scores, &labels).unwrap()));
    group.finish();
}

criterion_group!(benches, model_gradients, pipelines, metrics);
criterion_main!(benches);
