use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use psgd_bench::{lra, mf, pair, probe, rng};
use psgd_core::lra::LraStep;
use psgd_core::testbeds::quadratic::Quadratic;
use psgd_core::{OptimizerConfig, PermSubgroup, Preconditioner, Problem, Psgd};
use std::hint::black_box;

fn mf_kernels(c: &mut Criterion) {
    let mut g = c.benchmark_group("mf");
    let cases = [
        ("diag", PermSubgroup::trivial(4096).unwrap()),
        ("xmat", PermSubgroup::flip(4096).unwrap()),
        ("butterfly", PermSubgroup::half_shift(4096).unwrap()),
        ("dense", PermSubgroup::all_shifts(128).unwrap()),
    ];
    for (name, group) in cases {
        let n = group.dim();
        let mut r = rng(1);
        let q = mf(group);
        let (x, p) = (probe(n, &mut r), pair(n, &mut r));
        g.bench_with_input(BenchmarkId::new("precondition", name), &q, |b, q| {
            b.iter(|| q.precondition(black_box(&x)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("update", name), &q, |b, q| {
            b.iter(|| q.update(black_box(&p), 0.1).unwrap())
        });
    }
    g.finish();
}

fn lra_kernels(c: &mut Criterion) {
    let mut g = c.benchmark_group("lra");
    g.sample_size(20);
    for (n, r) in [(1_000, 10), (100_000, 10)] {
        let mut rg = rng(2);
        let q = lra(n, r, &mut rg);
        let (x, p) = (probe(n, &mut rg), pair(n, &mut rg));
        let id = format!("n={n},r={r}");
        g.bench_with_input(BenchmarkId::new("precondition", &id), &q, |b, q| {
            b.iter(|| q.precondition(black_box(&x)).unwrap())
        });
        for (step, name) in [(LraStep::Scale, "update scale"), (LraStep::U, "update U"), (LraStep::V, "update V")] {
            g.bench_with_input(BenchmarkId::new(name, &id), &q, |b, q| {
                b.iter(|| q.update(black_box(&p), 0.1, step).unwrap())
            });
        }
    }
    g.finish();
}

fn psgd_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("psgd step");
    let n = 100;
    let quad = Quadratic::new(n, 1e4, 0.0, 0.0, 1).unwrap();
    let precs = [
        ("sgd", Preconditioner::Identity { n }),
        ("dense", Preconditioner::Mf(mf(PermSubgroup::all_shifts(n).unwrap()))),
        ("lra r=10", Preconditioner::Lra(lra(n, 10, &mut rng(3)))),
    ];
    for (name, pre) in precs {
        let theta = quad.init(&mut rng(4));
        let mut opt = Psgd::new(OptimizerConfig::default(), theta, pre, 5).unwrap();
        g.bench_function(BenchmarkId::new("quadratic n=100", name), |b| b.iter(|| opt.step(&quad).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, mf_kernels, lra_kernels, psgd_step);
criterion_main!(benches);
