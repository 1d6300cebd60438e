//! Blur, feature extraction and loss+gradient timings.
//!
//! With the `parallel` feature each kernel runs twice: inside a one-thread
//! rayon pool and on the global pool. Without it only the sequential path
//! exists.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mxdog::filters::gaussian_blur;
use mxdog::losses::{precompute_targets, total_loss_and_grad};
use mxdog::{make_test_net, ImageTensor, LossWeights, MxdogParams};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn image(seed: u64, size: usize) -> ImageTensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::from_fn(size, size, 3, |_, _, _| rng.random_range(0.0..1.0)).unwrap()
}

#[cfg(feature = "parallel")]
fn modes() -> Vec<(&'static str, rayon::ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("1-thread", one), ("pool", all)]
}

#[cfg(feature = "parallel")]
fn in_mode<R: Send>(pool: &rayon::ThreadPool, f: impl FnOnce() -> R + Send) -> R {
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
struct Sequential;

#[cfg(not(feature = "parallel"))]
fn modes() -> Vec<(&'static str, Sequential)> {
    vec![("sequential", Sequential)]
}

#[cfg(not(feature = "parallel"))]
fn in_mode<R>(_: &Sequential, f: impl FnOnce() -> R) -> R {
    f()
}

fn blur(c: &mut Criterion) {
    let mut group = c.benchmark_group("gaussian_blur");
    for size in [128, 512] {
        let img = image(0, size);
        for (name, pool) in &modes() {
            group.bench_with_input(BenchmarkId::new(*name, size), &img, |b, img| {
                b.iter(|| in_mode(pool, || gaussian_blur(black_box(img), 1.6).unwrap()))
            });
        }
    }
    group.finish();
}

fn forward(c: &mut Criterion) {
    let net = make_test_net::<f32>(0, 8).unwrap();
    let mut group = c.benchmark_group("feature_forward");
    for size in [64, 128] {
        let img = image(1, size);
        for (name, pool) in &modes() {
            group.bench_with_input(BenchmarkId::new(*name, size), &img, |b, img| {
                b.iter(|| in_mode(pool, || net.forward(black_box(img), &["relu4_3"]).unwrap()))
            });
        }
    }
    group.finish();
}

fn loss_and_grad(c: &mut Criterion) {
    let net = make_test_net::<f32>(0, 8).unwrap();
    let params = MxdogParams::default();
    let w = LossWeights::default();
    let size = 64;
    let targets = precompute_targets(&image(2, size), &image(3, size), &net, &params, &w).unwrap();
    let x = image(4, size);
    let mut group = c.benchmark_group("total_loss_and_grad");
    group.sample_size(20);
    for (name, pool) in &modes() {
        group.bench_with_input(BenchmarkId::new(*name, size), &x, |b, x| {
            b.iter(|| {
                in_mode(pool, || {
                    total_loss_and_grad(black_box(x), &targets, &net, &params, &w, 50.0).unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, blur, forward, loss_and_grad);
criterion_main!(benches);
