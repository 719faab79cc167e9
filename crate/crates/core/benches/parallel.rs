//! Sequential vs data-parallel execution of the embarrassingly parallel loops.
//!
//! "sequential" runs inside a one-thread rayon pool (the same code path the
//! crate takes without the `parallel` feature); "parallel" uses the default pool.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use kwta_core::attacks::{perturb_batch, AttackConfig};
use kwta_core::nn::{build_model, mnist_cnn_specs, Activation, MNIST_INPUT};
use kwta_core::theorylab::{dense_discontinuity_trial, DenseTrialConfig};
use kwta_core::{Model, Rng, Tensor};

fn modes() -> Vec<(&'static str, Option<rayon::ThreadPool>)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    vec![("sequential", Some(one)), ("parallel", None)]
}

fn run<R: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

fn dense_trials(c: &mut Criterion) {
    let cfg = DenseTrialConfig {
        m: 8,
        l: 1024,
        gamma: 0.3,
        beta: 0.25,
        trials: 200,
        seed: 7,
    };
    let mut g = c.benchmark_group("dense_trials");
    g.sample_size(10);
    for (name, pool) in modes() {
        g.bench_function(BenchmarkId::new(name, rayon::current_num_threads()), |b| {
            b.iter(|| run(&pool, || dense_discontinuity_trial(&cfg).expect("valid config")))
        });
    }
    g.finish();
}

fn pgd_batch(c: &mut Criterion) {
    let specs = mnist_cnn_specs(Activation::Kwta(0.08), 8).expect("preset");
    let model: Model<f32> = build_model(&MNIST_INPUT, specs, &mut Rng::new(1)).expect("model");
    let mut rng = Rng::new(2);
    let n = 32;
    let x = Tensor::<f32>::from_f64(
        vec![n, 1, 28, 28],
        &(0..n * 784).map(|_| rng.uniform(0.0, 1.0)).collect::<Vec<_>>(),
    )
    .expect("batch");
    let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
    let cfg = AttackConfig::pgd(0.3, 5);
    let mut g = c.benchmark_group("pgd5_cnn_batch32");
    g.sample_size(10);
    for (name, pool) in modes() {
        g.bench_function(BenchmarkId::new(name, rayon::current_num_threads()), |b| {
            b.iter(|| run(&pool, || perturb_batch(&model, &x, &labels, &cfg, 0).expect("attack")))
        });
    }
    g.finish();
}

criterion_group!(benches, dense_trials, pgd_batch);
criterion_main!(benches);
