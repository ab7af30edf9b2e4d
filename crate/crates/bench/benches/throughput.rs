use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use dalton_bench::{household, random_series, random_window};
use dalton_core::hhi::{hhi_series, CalibrationTable};
use dalton_core::model::PollutantKind;
use dalton_core::signal::cross_correlate;
use dalton_core::window_stats::{compute_stats, Thresholds};
use std::hint::black_box;

fn window_stats(c: &mut Criterion) {
    let t = Thresholds::new(PollutantKind::Co2, 800.0, 1200.0).unwrap();
    let mut g = c.benchmark_group("window_stats");
    for len in [600usize, 3600] {
        let w = random_window(7, len);
        g.throughput(Throughput::Elements(len as u64));
        g.bench_with_input(BenchmarkId::from_parameter(len), &w, |b, w| b.iter(|| compute_stats(black_box(w), &t).unwrap()));
    }
    g.finish();
}

fn hhi(c: &mut Criterion) {
    let cal = CalibrationTable::default();
    let streams = household("h1_pull_inward", 7200);
    let mut g = c.benchmark_group("hhi_series");
    g.sample_size(20);
    g.bench_function("five_devices_2h", |b| b.iter(|| hhi_series(black_box(&streams), &cal).unwrap()));
    g.finish();
}

fn xcorr(c: &mut Criterion) {
    let mut g = c.benchmark_group("cross_correlate");
    for len in [256usize, 2400] {
        let x = random_series(1, len);
        let y = random_series(2, len);
        g.bench_with_input(BenchmarkId::from_parameter(len), &len, |b, _| {
            b.iter(|| cross_correlate(black_box(&x), black_box(&y), true).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, window_stats, hhi, xcorr);
criterion_main!(benches);
