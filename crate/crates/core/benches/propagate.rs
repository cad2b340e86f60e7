//! Rayon pool against a single-thread pool on the hot paths. Built without
//! the `parallel` feature, only the sequential numbers are produced.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mpemba_core::analysis::{distance, Measure};
use mpemba_core::evolve::{propagate_density, propagate_population, Method, TimeGrid};
use mpemba_core::generator::{population_generator, symmetrize};
use mpemba_core::model::{make_bath, pure_superposition_state, thermal_population, TruncationPolicy};
use mpemba_core::scenario::{builtin, run_scenario};
use mpemba_core::tridiag::SymTridiagEigen;

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let mut out = vec![(
        "sequential".to_string(),
        rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap(),
    )];
    if mpemba_core::is_parallel() {
        let n = std::thread::available_parallelism().map_or(1, |n| n.get());
        out.push((format!("rayon-{n}"), rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()));
    }
    out
}

fn bench(c: &mut Criterion) {
    let bath = make_bath(1.0, 1.0, 2.5).unwrap();
    let policy = TruncationPolicy::default();
    let sym = symmetrize(&population_generator(&bath, 800).unwrap()).unwrap();
    let p0 = thermal_population(4.0, &policy).unwrap();
    let gen = population_generator(&bath, p0.n_max()).unwrap();
    let grid = TimeGrid::uniform(4.0, 201, true).unwrap();
    let rho = pure_superposition_state(2.5, 6, &policy).unwrap().resized(300).unwrap();
    let fig3 = builtin("fig3").unwrap();

    let mut g = c.benchmark_group("propagate");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new("eigensystem_n800", &name), |b| {
            b.iter(|| pool.install(|| SymTridiagEigen::compute(&sym.diag, &sym.offdiag)))
        });
        g.bench_function(BenchmarkId::new("population_spectral", &name), |b| {
            b.iter(|| pool.install(|| propagate_population(&p0, &gen, &grid, Method::Spectral, 1.0).unwrap()))
        });
        g.bench_function(BenchmarkId::new("density_bands", &name), |b| {
            b.iter(|| pool.install(|| propagate_density(&rho, &bath, &grid).unwrap()))
        });
        g.bench_function(BenchmarkId::new("relative_entropy", &name), |b| {
            b.iter(|| pool.install(|| distance(&rho, 2.5, Measure::Kl).unwrap()))
        });
        g.bench_function(BenchmarkId::new("scenario_fig3", &name), |b| {
            b.iter(|| pool.install(|| run_scenario(&fig3).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
