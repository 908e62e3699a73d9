use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use ifslab_bench::{interval_family, nonlinear_fiber};
use ifslab_core::jets::{jet_transport, JetIndexSet, JetVector, ScalarFamily};
use ifslab_core::measure_lab::cover_measure;
use ifslab_core::thermo::partition_sum;
use ifslab_core::Expr;

fn bench_partition_sum(c: &mut Criterion) {
    let affine = interval_family();
    let fiber = nonlinear_fiber();
    let mut group = c.benchmark_group("partition_sum");
    for n in [4usize, 6, 8] {
        group.bench_with_input(BenchmarkId::new("affine", n), &n, |b, &n| {
            b.iter(|| partition_sum(&affine, &[0.5], &[], 1.0, black_box(n)).unwrap())
        });
    }
    for n in [6usize, 10] {
        group.bench_with_input(BenchmarkId::new("nonlinear", n), &n, |b, &n| {
            b.iter(|| partition_sum(&fiber, &[0.1], &[], 1.0, black_box(n)).unwrap())
        });
    }
    group.finish();
}

fn bench_cover_measure(c: &mut Criterion) {
    let affine = interval_family();
    let mut group = c.benchmark_group("cover_measure");
    group.sample_size(10);
    for depth in [6usize, 8] {
        group.bench_with_input(BenchmarkId::new("interval", depth), &depth, |b, &depth| {
            b.iter(|| cover_measure(&affine, &[0.5], &[], &[black_box(depth)]).unwrap())
        });
    }
    group.finish();
}

fn bench_jet_transport(c: &mut Criterion) {
    let family = ScalarFamily::Expr(Expr::parse("0.3*sin(x + p) + 0.2*x^2*p - 0.1*exp(p)").unwrap());
    let mut group = c.benchmark_group("jet_transport");
    for s in [1usize, 3, 6] {
        let set = JetIndexSet::new(2, s);
        let coeffs = (0..set.len()).map(|i| 0.1 / (1 + i) as f64).collect();
        let jet = JetVector::new(set, coeffs, vec![0.1, 0.2]).unwrap();
        group.bench_with_input(BenchmarkId::new("d2", s), &jet, |b, jet| {
            b.iter(|| jet_transport(&family, &[0.1, 0.2], black_box(jet)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_partition_sum, bench_cover_measure, bench_jet_transport);
criterion_main!(benches);
