use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use sdmaps::mc::{run, McConfig, Model, Requests};
use sdmaps::one_matrix::single_coupling;
use sdmaps::rational::parse_rational;
use sdmaps::{count_m0, EquilibriumMeasure, MapCountTable, Monomial, MultiIndex};
use sdmaps_bench::{quartic, two_color};

fn recursion(c: &mut Criterion) {
    let mut group = c.benchmark_group("recursion");
    for k in [4u32, 8, 12] {
        group.bench_with_input(BenchmarkId::new("quartic x^2", k), &k, |b, &k| {
            b.iter(|| {
                MapCountTable::new(quartic())
                    .map_count(&Monomial::power(0, 2), &MultiIndex::new(vec![k]))
                    .unwrap()
            })
        });
    }
    group.bench_function("two-color |k| = 6", |b| {
        b.iter(|| {
            MapCountTable::new(two_color())
                .map_count(&Monomial::power(0, 2), &MultiIndex::new(vec![2, 2, 2]))
                .unwrap()
        })
    });
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let mut group = c.benchmark_group("oracle");
    group.sample_size(10);
    for k in [2usize, 3] {
        group.bench_with_input(BenchmarkId::new("M0 root x^2, k quartic stars", k), &k, |b, &k| {
            b.iter(|| count_m0(Some(&Monomial::power(0, 2)), &[(Monomial::power(0, 4), black_box(k))]).unwrap())
        });
    }
    group.finish();
}

fn equilibrium(c: &mut Criterion) {
    let t = parse_rational("1/100").unwrap();
    c.bench_function("one-matrix quartic solve + moments", |b| {
        b.iter(|| {
            EquilibriumMeasure::solve(&quartic(), &single_coupling(black_box(&t)))
                .unwrap()
                .moments(4)
        })
    });
}

fn monte_carlo(c: &mut Criterion) {
    let model = Model::new(&quartic(), &single_coupling(&parse_rational("1/20").unwrap())).unwrap();
    let cfg = McConfig {
        n: 40,
        sweeps: 200,
        burn_in: 20,
        ..McConfig::default()
    };
    let requests = Requests {
        words: vec![Monomial::power(0, 2)],
        residuals: Vec::new(),
    };
    let mut group = c.benchmark_group("monte carlo");
    group.sample_size(10);
    group.bench_function("eigenvalue sampler N = 40, 220 sweeps", |b| {
        b.iter(|| run(&model, &cfg, &requests).unwrap())
    });
    group.finish();
}

criterion_group!(benches, recursion, oracle, equilibrium, monte_carlo);
criterion_main!(benches);
