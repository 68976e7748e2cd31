//! Sequential vs rayon execution of the two hot data-parallel loops:
//! Monte-Carlo certification draws and per-sample gradients.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dememlab::certifier::monte_carlo_accuracies;
use dememlab::data::make_grid_images;
use dememlab::model::{Activation, Arch, Classifier, LossSpec};
use dememlab::numcore::RngStream;
use dememlab::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel { jobs: 0 })];

fn setup() -> (Classifier, dememlab::data::Dataset) {
    let root = RngStream::new(7, 0);
    let ds = make_grid_images(50, 10, 8, &root.child("data")).unwrap();
    let arch = Arch::Mlp { hidden: 32, activation: Activation::Relu };
    let clf = Classifier::init(arch, ds.dim(), ds.num_classes(), &root.child("init")).unwrap();
    (clf, ds)
}

fn monte_carlo(c: &mut Criterion) {
    let (clf, ds) = setup();
    let rng = RngStream::new(7, 0).child("mc");
    let mut group = c.benchmark_group("mc_certify_200");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| monte_carlo_accuracies(&clf, &ds, 0.3, 200, &rng, exec).unwrap())
        });
    }
    group.finish();
}

fn per_sample_gradients(c: &mut Criterion) {
    let (clf, ds) = setup();
    let spec = LossSpec::cross_entropy(5e-4);
    let mut group = c.benchmark_group("per_sample_grads_500");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| clf.per_sample_grads(&ds, &spec, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, monte_carlo, per_sample_gradients);
criterion_main!(benches);
