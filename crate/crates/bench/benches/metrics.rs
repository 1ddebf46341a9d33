use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use handguide::metrics::{compute_fid, compute_kid, FeatureSet, KidConfig};
use handguide_bench as fx;

fn features(n: usize, dim: usize, seed: u64) -> FeatureSet {
    let t = fx::batch(n, &[dim], seed);
    let rows: Vec<Vec<f64>> = t.outer_iter().map(|r| r.iter().copied().collect()).collect();
    FeatureSet::from_rows(&rows, "bench").unwrap()
}

fn metrics(c: &mut Criterion) {
    let a = features(500, 16, 1);
    let b = features(500, 16, 2);
    c.bench_function("fid_500x16", |bch| {
        bch.iter(|| compute_fid(black_box(&a), black_box(&b)).unwrap())
    });
    let cfg = KidConfig::default();
    c.bench_function("kid_500x16_100_subsets", |bch| {
        bch.iter(|| compute_kid(black_box(&a), black_box(&b), &cfg).unwrap())
    });
}

criterion_group!(benches, metrics);
criterion_main!(benches);
