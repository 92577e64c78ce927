use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ppc_bench::{simulated_frame, synthetic_cloud};
use ppc_core::histogram::{self, EstimateMode};
use ppc_core::spad::PulseModel;
use ppc_core::spatial::{self, FppsParams, NpdParams};

fn bench_matched_filter(c: &mut Criterion) {
    let pulse = PulseModel::default_protocol();
    let frame = simulated_frame(16, 12, (5.0, 50.0), 1);
    let counts = frame.histogram(0).to_vec();
    c.bench_function("matched_filter_1024", |b| {
        b.iter(|| histogram::matched_filter(&counts, pulse.filter_kernel()).unwrap())
    });
}

fn bench_estimate_frame(c: &mut Criterion) {
    let frame = simulated_frame(48, 36, (1.0, 50.0), 2);
    let min_height = {
        let pulse = PulseModel::default_protocol();
        histogram::default_min_height(pulse.filter_kernel())
    };
    let mut group = c.benchmark_group("extract");
    group.sample_size(20);
    group.bench_function("estimate_frame_48x36", |b| {
        b.iter(|| histogram::estimate_frame(&frame, EstimateMode::Matched, min_height).unwrap())
    });
    group.finish();
}

fn bench_spatial(c: &mut Criterion) {
    let mut group = c.benchmark_group("spatial");
    group.sample_size(20);
    for n in [10_000usize, 50_000] {
        let side = (n as f64 / 300.0).cbrt();
        let cloud = synthetic_cloud(n, side, n as u64);
        group.bench_with_input(BenchmarkId::new("npd_scores", n), &cloud, |b, cloud| {
            b.iter(|| spatial::npd_scores_cloud(cloud, &NpdParams::default()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("fps_512", n), &cloud, |b, cloud| {
            let positions = cloud.positions();
            b.iter(|| spatial::fps(&positions, 512, None).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("fpps_512", n), &cloud, |b, cloud| {
            b.iter(|| {
                spatial::fpps(cloud, &FppsParams { beta: 0.01, count: 512 }, None).unwrap()
            })
        });
    }
    group.finish();
}

fn bench_fourier(c: &mut Criterion) {
    let frame = simulated_frame(16, 12, (5.0, 50.0), 3);
    let counts = frame.histogram(5).to_vec();
    let code = histogram::compress_histogram(&counts, 32).unwrap();
    c.bench_function("compress_k32_1024", |b| {
        b.iter(|| histogram::compress_histogram(&counts, 32).unwrap())
    });
    c.bench_function("decompress_k32_1024", |b| {
        b.iter(|| histogram::decompress_histogram(&code, 1024).unwrap())
    });
}

fn bench_denoise(c: &mut Criterion) {
    let frame = simulated_frame(32, 24, (1.0, 100.0), 4);
    let mut group = c.benchmark_group("denoise");
    group.sample_size(10);
    group.bench_function("gaussian_5x5_32x24", |b| {
        b.iter(|| histogram::spatial_gaussian_denoise(&frame, 5, 1.0).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_matched_filter,
    bench_estimate_frame,
    bench_spatial,
    bench_fourier,
    bench_denoise
);
criterion_main!(benches);
