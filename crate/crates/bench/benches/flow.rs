use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use modflow::sampler::{episode_rng, generate};
use modflow::{GradientMode, LabeledGraph, SampleConfig};
use modflow_bench::{molecules, qm9_model};

fn likelihood(c: &mut Criterion) {
    let model = qm9_model();
    let mols = molecules();
    let refs: Vec<&LabeledGraph> = mols.iter().collect();
    c.bench_function("log_likelihood/single", |b| b.iter(|| model.log_likelihood(&mols[0]).unwrap()));
    c.bench_function("log_likelihood/batch8", |b| b.iter(|| model.log_likelihoods(&refs).unwrap()));
}

fn gradient(c: &mut Criterion) {
    let model = qm9_model();
    let mols = molecules();
    let refs: Vec<&LabeledGraph> = mols.iter().collect();
    c.bench_function("surrogate_loss/batch8", |b| {
        b.iter(|| model.surrogate_loss(&refs, 1.0 / 8.0, GradientMode::StraightThrough).unwrap())
    });
}

fn sampling(c: &mut Criterion) {
    let model = qm9_model();
    let config = SampleConfig::default();
    let mut index = 0;
    c.bench_function("generate/qm9", |b| {
        b.iter_batched(
            || {
                index += 1;
                episode_rng(0, index)
            },
            |mut rng| generate(&model, &config, &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = likelihood, gradient, sampling
}
criterion_main!(benches);
