use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use treecap_bench::{condenser_problem, irregular_network, leaves_problem, split_config};
use treecap_core::solver::{solve_with, SolveOptions, SweepMode};

fn explicit(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_explicit");
    for (k, depth) in [(2, 8), (2, 11), (3, 6)] {
        let problem = leaves_problem(irregular_network(k, depth, 3.0));
        for (name, mode) in [("gauss_seidel", SweepMode::GaussSeidel), ("jacobi", SweepMode::Jacobi)] {
            let opts = SolveOptions { mode, ..SolveOptions::default() };
            group.bench_with_input(BenchmarkId::new(name, format!("K{k}_d{depth}")), &problem, |b, pr| {
                b.iter(|| solve_with(black_box(pr), opts).unwrap())
            });
        }
    }
    group.finish();
}

fn lumped(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_lumped");
    let cfg = split_config(2.5);
    for m in [16, 32, 63] {
        let problem = condenser_problem(&cfg, 0, m);
        for reduce in [true, false] {
            let opts = SolveOptions { reduce, ..SolveOptions::default() };
            let name = if reduce { "reduced" } else { "relaxed" };
            group.bench_with_input(BenchmarkId::new(name, m), &problem, |b, pr| b.iter(|| solve_with(black_box(pr), opts).unwrap()));
        }
    }
    group.finish();
}

criterion_group!(benches, explicit, lumped);
criterion_main!(benches);
