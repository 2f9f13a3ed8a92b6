//! Inner-loop kernels on a one-thread pool versus the default pool.
//!
//! With `--no-default-features` every loop is sequential and both groups
//! measure the fallback path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hrms_core::acquisition::{propose_batch, AcquisitionSpec, ProposalBudget};
use hrms_core::gp::{map_fit_with, Dataset, GaussianPrior, GpModel, Hyperpriors, LogUniformPrior, MapSettings};
use hrms_core::objectives::{StochasticObjective, SyntheticTtk};
use hrms_core::rng::stream;
use hrms_core::sampling::latin_hypercube;
use hrms_core::{direct_minimize, SearchBox};
use rayon::ThreadPoolBuilder;

fn priors() -> Hyperpriors {
    Hyperpriors {
        mean: GaussianPrior { mu: 300.0, sigma: 100.0 },
        lengthscale: LogUniformPrior { lower: 0.05, upper: 1.0 },
        amplitude: LogUniformPrior { lower: 10.0, upper: 400.0 },
        noise_std: LogUniformPrior { lower: 20.0, upper: 400.0 },
    }
}

fn ttk_data(n: usize) -> Dataset {
    let obj = SyntheticTtk::v1();
    let xs = latin_hypercube(n, &SearchBox::unit(2), &mut stream(1, &[]));
    let ys = xs
        .iter()
        .enumerate()
        .map(|(i, x)| obj.evaluate(x, &mut stream(2, &[i as u64])).unwrap())
        .collect();
    Dataset::new(xs, ys).unwrap()
}

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    vec![
        ("sequential", ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("parallel", ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn bench_map_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("map_fit");
    group.sample_size(10);
    let settings = MapSettings { restarts: 8, max_evals_per_restart: 80, tolerance: 1e-6 };
    for n in [60, 120] {
        let data = ttk_data(n);
        for (label, pool) in pools() {
            group.bench_with_input(BenchmarkId::new(label, n), &data, |b, data| {
                b.iter(|| pool.install(|| map_fit_with(data, &priors(), &settings, None, &mut stream(3, &[])).unwrap()))
            });
        }
    }
    group.finish();
}

fn bench_direct(c: &mut Criterion) {
    let mut group = c.benchmark_group("direct");
    group.sample_size(10);
    let rastrigin = |x: &[f64]| -> f64 {
        x.iter()
            .map(|v| v * v - 10.0 * (2.0 * std::f64::consts::PI * v).cos() + 10.0)
            .sum()
    };
    let bbox = SearchBox::new(vec![-5.12; 3], vec![5.12; 3]).unwrap();
    for (label, pool) in pools() {
        group.bench_function(label, |b| b.iter(|| pool.install(|| direct_minimize(rastrigin, &bbox, 3000, 1e-4).unwrap())));
    }
    group.finish();
}

fn bench_batch_proposals(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_proposal");
    group.sample_size(10);
    let data = ttk_data(100);
    let params = map_fit_with(&data, &priors(), &MapSettings::default(), None, &mut stream(4, &[])).unwrap();
    let model = GpModel::fit(&data, &params).unwrap();
    let budget = ProposalBudget::default();
    let bbox = SearchBox::unit(2);
    for spec in [AcquisitionSpec::ei(3), AcquisitionSpec::ucb(2.0, 3), AcquisitionSpec::ts(3)] {
        for (label, pool) in pools() {
            group.bench_function(BenchmarkId::new(label, spec.kind), |b| {
                b.iter(|| pool.install(|| propose_batch(&model, &spec, &bbox, &budget, &mut stream(5, &[])).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_map_fit, bench_direct, bench_batch_proposals);
criterion_main!(benches);
