//! Throughput of single scans, null construction, and the online loop.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};

use vcstar_core::inference::build_null;
use vcstar_core::pipeline::{online_detect, OnlineConfig};
use vcstar_core::rng::stream_rng;
use vcstar_core::sampler::NullSampler;
use vcstar_core::{Detector, FeatureMatrix, GaussianSource, Method};

fn source(p: usize) -> GaussianSource {
    GaussianSource::new(DVector::zeros(p), DMatrix::identity(p, p)).expect("identity covariance")
}

fn panel(p: usize, t: usize, stream: u64) -> FeatureMatrix {
    FeatureMatrix::complete(source(p).sample(&mut stream_rng(1, stream), t))
}

fn scans(c: &mut Criterion) {
    let mut g = c.benchmark_group("scan_T60_p50");
    let y = panel(50, 60, 0);
    for method in Method::ALL {
        let det = Detector::new(method, 7);
        g.bench_with_input(BenchmarkId::from_parameter(method), &y, |b, y| {
            b.iter(|| det.scan(black_box(y)).expect("scan"))
        });
    }
    g.finish();
}

fn phi_scan(c: &mut Criterion) {
    let y = panel(50, 60, 1);
    let det = Detector::new(Method::VcStar, 7).with_phi(0.5);
    c.bench_function("scan_T60_p50/vcstar_phi0.5", |b| b.iter(|| det.scan(black_box(&y)).expect("scan")));
}

fn nulls(c: &mut Criterion) {
    let mut g = c.benchmark_group("null_B200_T30_p15");
    g.sample_size(10);
    let sampler = NullSampler::Parametric(source(15));
    for method in [Method::VcStar, Method::Divergence] {
        let det = Detector::new(method, 7);
        g.bench_function(BenchmarkId::from_parameter(method), |b| {
            b.iter(|| build_null(&det, 30, &sampler, 200, 3).expect("null"))
        });
    }
    g.finish();
}

fn online(c: &mut Criterion) {
    let mut g = c.benchmark_group("online_T40_p10_B100");
    g.sample_size(10);
    let y = panel(10, 40, 2);
    let det = Detector::new(Method::VcStar, 7);
    let cfg = OnlineConfig { alpha: 0.05, b: 100 };
    g.bench_function("vcstar", |b| b.iter(|| online_detect(&y, &det, &cfg, 4, None, "bench").expect("online")));
    g.finish();
}

criterion_group!(benches, scans, phi_scan, nulls, online);
criterion_main!(benches);
