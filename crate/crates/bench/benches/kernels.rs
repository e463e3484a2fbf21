use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ldvae_bench::{healthy_slices, random_tensor};
use ldvae_core::numerics::{conv2d, conv2d_backward, dense, tconv2d};
use ldvae_core::rng;
use ldvae_core::vae::{draw_noise, elbo_batch, images_to_tensor};
use ldvae_core::{Architecture, BrainMask, SliceImage, VaeModel};
use std::hint::black_box;

fn convolutions(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv");
    for (ci, co, hw) in [(1, 16, 32), (16, 32, 16), (64, 128, 4)] {
        let x = random_tensor(&[32, ci, hw, hw], 1);
        let w = random_tensor(&[co, ci, 4, 4], 2);
        let b = random_tensor(&[co], 3);
        let id = format!("{ci}x{hw}->{co}");
        group.bench_with_input(BenchmarkId::new("forward", &id), &(), |bench, _| {
            bench.iter(|| conv2d(black_box(&x), &w, &b).unwrap())
        });
        let up = conv2d(&x, &w, &b).unwrap();
        group.bench_with_input(BenchmarkId::new("backward", &id), &(), |bench, _| {
            bench.iter(|| conv2d_backward(black_box(&x), &w, &up).unwrap())
        });
        let t = random_tensor(&[32, co, hw / 2, hw / 2], 4);
        let tw = random_tensor(&[co, ci, 4, 4], 5);
        let tb = random_tensor(&[ci], 6);
        group.bench_with_input(BenchmarkId::new("transposed", &id), &(), |bench, _| {
            bench.iter(|| tconv2d(black_box(&t), &tw, &tb).unwrap())
        });
    }
    group.finish();
}

fn dense_layer(c: &mut Criterion) {
    let x = random_tensor(&[32, 512], 7);
    let w = random_tensor(&[32, 512], 8);
    let b = random_tensor(&[32], 9);
    c.bench_function("dense 512->32 batch 32", |bench| bench.iter(|| dense(black_box(&x), &w, &b).unwrap()));
}

fn elbo_step(c: &mut Criterion) {
    let slices = healthy_slices(32);
    let images: Vec<&SliceImage> = slices.iter().map(|r| &r.image).collect();
    let masks: Vec<&BrainMask> = slices.iter().map(|r| &r.mask).collect();
    let input = images_to_tensor::<f32>(&images).unwrap();
    let targets = input.data().to_vec();
    let arch = Architecture::healthy(32).with_channels(&[16, 32, 64, 128]).with_latent_dim(32);
    let model = VaeModel::<f32>::new(arch, 0).unwrap();
    let noise = draw_noise(&mut rng::stream(0, &[]), 3, images.len(), 32);
    c.bench_function("elbo forward+backward batch 32", |bench| {
        bench.iter(|| elbo_batch(&model, black_box(&input), &targets, &masks, &noise).unwrap())
    });
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(10);
    targets = convolutions, dense_layer, elbo_step
}
criterion_main!(kernels);
