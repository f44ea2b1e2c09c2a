use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use polarsim::compensation::{joint_bilateral, BilateralParams};
use polarsim::metrics::ssim;
use polarsim::nn::kernels::{conv2d_backward, conv2d_forward};
use polarsim::nn::Tensor;
use polarsim::pipeline::simulate;
use polarsim::raw_pipeline::demosaic_sparse;
use polarsim::{SensorConfig, SensorKind};
use polarsim_bench::{prepared, scene};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn capture(c: &mut Criterion) {
    let mut g = c.benchmark_group("capture");
    for size in [64, 256] {
        let s = scene(size);
        let cfg = SensorConfig::default();
        g.bench_with_input(BenchmarkId::from_parameter(size), &s, |b, s| {
            b.iter(|| simulate(black_box(s), SensorKind::Sparse, &cfg).unwrap())
        });
    }
    g.finish();
}

fn demosaic(c: &mut Criterion) {
    let s = scene(256);
    let raw = simulate(&s, SensorKind::Sparse, &SensorConfig::default()).unwrap();
    c.bench_function("demosaic_sparse/256", |b| b.iter(|| demosaic_sparse(black_box(&raw)).unwrap()));
}

fn bilateral(c: &mut Criterion) {
    let mut g = c.benchmark_group("joint_bilateral");
    for denom in [4.0, 16.0, 64.0] {
        let (_, p) = prepared(128, 1.0 / denom);
        let params = BilateralParams::for_tile(p.tile);
        g.bench_with_input(BenchmarkId::from_parameter(format!("128_r1_{denom}")), &p, |b, p| {
            b.iter(|| joint_bilateral(&p.sparse_stokes, &p.mask, &p.rgb, params).unwrap())
        });
    }
    g.finish();
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::uniform([2, 16, 64, 64], 1.0, &mut rng);
    let w = Tensor::uniform([16, 16, 3, 3], 0.1, &mut rng);
    let b = Tensor::zeros([1, 16, 1, 1]);
    let y = conv2d_forward(&x, &w, Some(&b), 1, 1);
    c.bench_function("conv3x3_fwd/2x16x64x64", |bn| bn.iter(|| conv2d_forward(black_box(&x), &w, Some(&b), 1, 1)));
    c.bench_function("conv3x3_bwd/2x16x64x64", |bn| bn.iter(|| conv2d_backward(black_box(&x), &w, &y, 1, 1)));
}

fn ssim_bench(c: &mut Criterion) {
    let (s, p) = prepared(256, 1.0 / 16.0);
    c.bench_function("ssim/256", |b| b.iter(|| ssim(black_box(&p.rgb), &s.rgb).unwrap()));
}

criterion_group!(benches, capture, demosaic, bilateral, conv, ssim_bench);
criterion_main!(benches);
