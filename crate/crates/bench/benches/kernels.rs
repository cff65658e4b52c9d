use andehaze_bench::{seeded_image, seeded_tensor};
use andehaze_core::attention::{cached_window_attention, window_partition};
use andehaze_core::metrics::ssim;
use andehaze_core::numerics::{conv2d, layer_norm};
use andehaze_core::{Model, ModelConfig, Tensor};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d_3x3");
    for ch in [8, 32] {
        let x = seeded_tensor(&[1, ch, 64, 64], 1, -1.0, 1.0);
        let k = seeded_tensor(&[ch, ch, 3, 3], 2, -0.1, 0.1);
        g.bench_with_input(BenchmarkId::from_parameter(ch), &ch, |b, _| {
            b.iter(|| conv2d(black_box(&x), &k, None, 1, 1).unwrap())
        });
    }
    g.finish();
}

fn norm(c: &mut Criterion) {
    let x = seeded_tensor(&[1, 32, 64, 64], 3, -2.0, 2.0);
    let (gamma, beta) = (Tensor::full(&[32], 1.0), Tensor::zeros(&[32]));
    c.bench_function("layer_norm_32x64x64", |b| {
        b.iter(|| layer_norm(black_box(&x), &gamma, &beta, 1e-5).unwrap())
    });
}

fn attention(c: &mut Criterion) {
    let mut g = c.benchmark_group("window_attention");
    for w in [4, 8] {
        let x = seeded_tensor(&[1, 16, 32, 32], 4, -1.0, 1.0);
        let (tokens, _) = window_partition(&x, w).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(w), &w, |b, _| {
            b.iter(|| cached_window_attention(black_box(&tokens), &tokens, &tokens, None, None, 1).unwrap())
        });
    }
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let (a, b) = (seeded_image(64, 64, 5), seeded_image(64, 64, 6));
    c.bench_function("ssim_64x64", |bench| bench.iter(|| ssim(black_box(&a), &b).unwrap()));
}

fn dehaze(c: &mut Criterion) {
    let model = Model::seeded(&ModelConfig::tiny(), 0).unwrap();
    let img = seeded_image(48, 48, 7);
    let mut g = c.benchmark_group("dehaze_tiny");
    g.sample_size(10);
    g.bench_function("48x48", |b| b.iter(|| model.dehaze(black_box(&img)).unwrap()));
    g.finish();
}

criterion_group!(benches, conv, norm, attention, metrics, dehaze);
criterion_main!(benches);
