use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use treecap_bench::{exp_config, split_config};
use treecap_core::{classify, phase_map, rp_classify, RadialProfile, WeightConfig};

fn criterion_integral(c: &mut Criterion) {
    let exp = exp_config(3, 2.5, 0.2, 0.9);
    let table = WeightConfig::new(2, 2.0, RadialProfile::Constant(1.0), RadialProfile::PerLevelTable((1..=40).map(|n| 1.0 / n as f64).collect()))
        .expect("valid table config");
    c.bench_function("rp_classify/exp_level", |b| b.iter(|| rp_classify(black_box(&exp)).unwrap()));
    c.bench_function("rp_classify/per_level_table", |b| b.iter(|| rp_classify(black_box(&table)).unwrap()));
    let split = split_config(2.0);
    c.bench_function("classify/split", |b| b.iter(|| classify(black_box(&split))));
}

fn phase(c: &mut Criterion) {
    let eps: Vec<f64> = (1..=20).map(|i| i as f64 * 0.05).collect();
    let beta: Vec<f64> = (1..=20).map(|i| i as f64 * 0.15).collect();
    c.bench_function("phase_map/20x20", |b| b.iter(|| phase_map(3, 2.0, black_box(&eps), black_box(&beta)).unwrap()));
}

criterion_group!(benches, criterion_integral, phase);
criterion_main!(benches);
