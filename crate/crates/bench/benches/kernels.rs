use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lindlearn::rev::{rev, RevOptions};
use lindlearn::schedule::{chebyshev_nodes, robust_fit};
use lindlearn::shadows::{task_rng, ChannelTable, ShadowStats};
use lindlearn::sim::{pauli_vector, PauliGenerator, Rk45Options};
use lindlearn::{FitMode, PauliString};
use lindlearn_bench::{chain, region_estimate};

fn pauli_products(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 64;
    let pairs: Vec<(PauliString, PauliString)> = (0..256)
        .map(|_| {
            let mut draw = || PauliString::from_bits(&(0..n).map(|_| rng.gen()).collect::<Vec<_>>(), &(0..n).map(|_| rng.gen()).collect::<Vec<_>>()).unwrap();
            (draw(), draw())
        })
        .collect();
    c.bench_function("multiply_64q_x256", |b| {
        b.iter(|| {
            for (p, q) in &pairs {
                black_box(p.multiply(q).unwrap());
            }
        })
    });
}

fn generator(c: &mut Criterion) {
    let mut group = c.benchmark_group("generator");
    for n in [4, 6, 8] {
        let gen = PauliGenerator::new(&chain(n)).unwrap();
        let v = pauli_vector(&PauliString::single(n, n / 2, lindlearn::Axis::Z));
        group.bench_with_input(BenchmarkId::new("apply", n), &n, |b, _| b.iter(|| black_box(gen.apply(0.5, &v, false))));
    }
    let gen = PauliGenerator::new(&chain(6)).unwrap();
    let v = pauli_vector(&PauliString::single(6, 3, lindlearn::Axis::Z));
    let opts = Rk45Options::with_tol(1e-10);
    group.sample_size(10);
    group.bench_function("evolve_6q", |b| b.iter(|| black_box(gen.evolve_to(v.clone(), 0.0, 1.0, &opts).unwrap())));
    group.finish();
}

fn inversion(c: &mut Criterion) {
    let mut group = c.benchmark_group("rev");
    group.sample_size(10);
    for r in [1, 2, 3] {
        let (basis, est) = region_estimate(4, r, 0.6);
        let q = basis.global(1);
        group.bench_with_input(BenchmarkId::new("region", r), &r, |b, _| b.iter(|| black_box(rev(&est, &q, &RevOptions::for_sparsity(8)))));
    }
    group.finish();
}

fn shadow_stats(c: &mut Criterion) {
    let table = ChannelTable::from_ansatz(&chain(3), &[0.5]).unwrap();
    let mut group = c.benchmark_group("shadow_stats");
    group.sample_size(10);
    for total in [1_000_000u128, 1_000_000_000_000] {
        group.bench_with_input(BenchmarkId::new("simulate_3q", total), &total, |b, &total| {
            let mut rng = task_rng(1, 0);
            b.iter(|| black_box(ShadowStats::simulate(&table, 0, total, 8, &mut rng).unwrap()))
        });
    }
    group.finish();
}

fn fits(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let nodes = chebyshev_nodes(1.0, 200, &mut rng);
    let vals: Vec<f64> = nodes.iter().map(|t| 0.5 + 0.3 * t + rng.gen_range(-1e-3..1e-3)).collect();
    c.bench_function("least_squares_200x3", |b| b.iter(|| black_box(robust_fit(&nodes, &vals, 2, FitMode::LeastSquares, 1.0).unwrap())));
    c.bench_function("l1_robust_200x3", |b| b.iter(|| black_box(robust_fit(&nodes, &vals, 2, FitMode::L1Robust, 1.0).unwrap())));
}

criterion_group!(benches, pauli_products, generator, inversion, shadow_stats, fits);
criterion_main!(benches);
