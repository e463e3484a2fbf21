//! Finite-difference checks of every layer, a composed stack and the
//! masked ELBO, all in f64.

use ldvae_core::numerics::{
    conv2d, conv2d_backward, dense, dense_backward, grad_check, grad_check_with_floor, leaky_relu, leaky_relu_backward, pointwise_conv,
    pointwise_conv_backward, tconv2d, tconv2d_backward, ConvGrads, Tensor,
};
use ldvae_core::vae::{context_penalty_batch, elbo_batch, images_to_tensor, Architecture, CovarianceMode, VaeModel};
use ldvae_core::{BrainMask, SliceImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;
const LAYER_TOL: f64 = 1e-4;
const ELBO_TOL: f64 = 1e-3;
// The ELBO sums ~100 pixel terms of order one, so central differences at
// EPS carry ~1e-8 absolute rounding noise; components are compared
// relative to at least this magnitude.
const ELBO_FLOOR: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

type Forward = fn(&Tensor<f64>, &Tensor<f64>, &Tensor<f64>) -> ldvae_core::Result<Tensor<f64>>;
type Backward = fn(&Tensor<f64>, &Tensor<f64>, &Tensor<f64>) -> ldvae_core::Result<ConvGrads<f64>>;

/// Checks d/d(input, weights, bias) of `sum(upstream * f(x, w, b))`.
fn check_affine_layer(name: &str, fwd: Forward, bwd: Backward, x: Tensor<f64>, w: Tensor<f64>, b: Tensor<f64>, rng: &mut ChaCha8Rng) {
    let out_shape = fwd(&x, &w, &b).unwrap().shape().to_vec();
    let up = random(&out_shape, rng);
    let (nx, nw) = (x.len(), w.len());
    let flat: Vec<f64> = x.data().iter().chain(w.data()).chain(b.data()).copied().collect();
    let (xs, ws, bs) = (x.shape().to_vec(), w.shape().to_vec(), b.shape().to_vec());
    let report = grad_check(
        |p| {
            let x = Tensor::from_vec(&xs, p[..nx].to_vec()).unwrap();
            let w = Tensor::from_vec(&ws, p[nx..nx + nw].to_vec()).unwrap();
            let b = Tensor::from_vec(&bs, p[nx + nw..].to_vec()).unwrap();
            let loss = fwd(&x, &w, &b).unwrap().dot(&up);
            let g = bwd(&x, &w, &up).unwrap();
            let grad = g.input.data().iter().chain(g.weights.data()).chain(g.bias.data()).copied().collect();
            (loss, grad)
        },
        &flat,
        EPS,
    );
    assert!(report.max_rel_error < LAYER_TOL, "{name} x{xs:?} w{ws:?}: {report:?}");
}

fn dense_fwd(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> ldvae_core::Result<Tensor<f64>> {
    dense(x, w, b)
}

fn dense_bwd(x: &Tensor<f64>, w: &Tensor<f64>, up: &Tensor<f64>) -> ldvae_core::Result<ConvGrads<f64>> {
    let g = dense_backward(x, w, up)?;
    Ok(ConvGrads { input: g.input, weights: g.weights, bias: g.bias })
}

#[test]
fn conv_layers_over_many_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // (batch or 0 for unbatched, C_in, H, W, C_out)
    let shapes = [
        (0, 1, 8, 8, 2),
        (0, 1, 2, 2, 1),
        (0, 2, 4, 6, 3),
        (0, 3, 6, 4, 2),
        (1, 1, 4, 4, 1),
        (2, 1, 8, 8, 2),
        (2, 2, 4, 4, 3),
        (3, 3, 2, 6, 2),
        (2, 4, 6, 6, 1),
        (1, 2, 10, 4, 2),
    ];
    for &(n, ci, h, w, co) in &shapes {
        let xs: Vec<usize> = if n == 0 { vec![ci, h, w] } else { vec![n, ci, h, w] };
        check_affine_layer("conv2d", conv2d, conv2d_backward, random(&xs, &mut rng), random(&[co, ci, 4, 4], &mut rng), random(&[co], &mut rng), &mut rng);
        let ts: Vec<usize> = if n == 0 { vec![ci, h / 2, w / 2] } else { vec![n, ci, h / 2, w / 2] };
        check_affine_layer("tconv2d", tconv2d, tconv2d_backward, random(&ts, &mut rng), random(&[ci, co, 4, 4], &mut rng), random(&[co], &mut rng), &mut rng);
    }
}

#[test]
fn pointwise_and_dense_over_many_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for &(n, ci, h, w, co) in &[(0, 1, 3, 3, 1), (0, 4, 2, 5, 2), (2, 3, 4, 4, 1), (3, 2, 1, 7, 3)] {
        let xs: Vec<usize> = if n == 0 { vec![ci, h, w] } else { vec![n, ci, h, w] };
        check_affine_layer("pointwise", pointwise_conv, pointwise_conv_backward, random(&xs, &mut rng), random(&[co, ci], &mut rng), random(&[co], &mut rng), &mut rng);
    }
    for &(batch, n, m) in &[(0, 16, 8), (0, 1, 1), (0, 5, 9), (1, 3, 2), (4, 7, 5), (3, 12, 4)] {
        let xs: Vec<usize> = if batch == 0 { vec![n] } else { vec![batch, n] };
        check_affine_layer("dense", dense_fwd, dense_bwd, random(&xs, &mut rng), random(&[m, n], &mut rng), random(&[m], &mut rng), &mut rng);
    }
}

#[test]
fn leaky_relu_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for shape in [vec![7], vec![3, 4], vec![2, 3, 5]] {
        let n: usize = shape.iter().product();
        // keep inputs away from the kink at 0
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let up = random(&shape, &mut rng);
        let report = grad_check(
            |p| {
                let y = leaky_relu(&Tensor::from_vec(&shape, p.to_vec()).unwrap());
                (y.dot(&up), leaky_relu_backward(&y, &up).into_data())
            },
            &x,
            EPS,
        );
        assert!(report.max_rel_error < LAYER_TOL, "{shape:?}: {report:?}");
    }
}

/// conv -> leaky ReLU -> conv -> leaky ReLU -> dense, loss `sum(up * out)`.
fn stack_loss(p: &[f64], x: &Tensor<f64>, up: &Tensor<f64>, corrupt: bool) -> (f64, Vec<f64>) {
    let (w1n, b1n, w2n, b2n) = (2 * 16, 2, 3 * 2 * 16, 3);
    let dn = 4 * 3 * 2 * 2;
    let mut o = 0;
    let mut take = |n: usize, shape: &[usize]| {
        let t = Tensor::from_vec(shape, p[o..o + n].to_vec()).unwrap();
        o += n;
        t
    };
    let w1 = take(w1n, &[2, 1, 4, 4]);
    let b1 = take(b1n, &[2]);
    let w2 = take(w2n, &[3, 2, 4, 4]);
    let b2 = take(b2n, &[3]);
    let wd = take(dn, &[4, 12]);
    let bd = take(4, &[4]);

    let h1 = leaky_relu(&conv2d(x, &w1, &b1).unwrap());
    let h2 = leaky_relu(&conv2d(&h1, &w2, &b2).unwrap());
    let flat = h2.clone().reshape(&[12]).unwrap();
    let out = dense(&flat, &wd, &bd).unwrap();
    let loss = out.dot(up);

    let gd = dense_backward(&flat, &wd, up).unwrap();
    let mut d2 = leaky_relu_backward(&h2, &gd.input.reshape(&[3, 2, 2]).unwrap());
    if corrupt {
        // fault injection: drop the activation derivative on one channel
        for v in &mut d2.data_mut()[..4] {
            *v *= 1.7;
        }
    }
    let g2 = conv2d_backward(&h1, &w2, &d2).unwrap();
    let d1 = leaky_relu_backward(&h1, &g2.input);
    let g1 = conv2d_backward(x, &w1, &d1).unwrap();
    let grad = [g1.weights, g1.bias, g2.weights, g2.bias, gd.weights, gd.bias]
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect();
    (loss, grad)
}

#[test]
fn composed_stack_and_fault_injection() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random(&[1, 8, 8], &mut rng);
    let up = random(&[4], &mut rng);
    let n = 32 + 2 + 96 + 3 + 48 + 4;
    let theta: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
    let good = grad_check(|p| stack_loss(p, &x, &up, false), &theta, EPS);
    assert!(good.max_rel_error < LAYER_TOL, "{good:?}");
    let bad = grad_check(|p| stack_loss(p, &x, &up, true), &theta, EPS);
    assert!(bad.max_rel_error > 1e-2, "checker missed a corrupted backward pass: {bad:?}");
}

fn tiny_model(covariance: CovarianceMode, seed: u64) -> VaeModel<f64> {
    let arch = Architecture { covariance, ..Architecture::healthy(8) }.with_channels(&[3, 4]).with_latent_dim(4);
    VaeModel::<f64>::new(arch, seed).unwrap()
}

fn tiny_batch(rng: &mut ChaCha8Rng, n: usize) -> (Vec<SliceImage>, Vec<BrainMask>) {
    let images = (0..n)
        .map(|_| SliceImage::new(8, 8, (0..64).map(|_| rng.random_range(-0.95..0.95f32)).collect()).unwrap())
        .collect();
    let masks = (0..n)
        .map(|_| BrainMask::new(8, 8, (0..64).map(|i| (i / 8 + i % 8) % 5 != 0).collect()).unwrap())
        .collect();
    (images, masks)
}

#[test]
fn masked_elbo_with_frozen_noise() {
    for (covariance, seed) in [(CovarianceMode::Scalar, 1), (CovarianceMode::PerPixel, 2)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = tiny_model(covariance, seed);
        let (images, masks) = tiny_batch(&mut rng, 2);
        let refs: Vec<&SliceImage> = images.iter().collect();
        let mrefs: Vec<&BrainMask> = masks.iter().collect();
        let input: Tensor<f64> = images_to_tensor(&refs).unwrap();
        let targets = input.data().to_vec();
        let (k, l) = (3, 4);
        let noise = random(&[k, 2, l], &mut rng);
        let theta = model.params.to_flat();
        let report = grad_check_with_floor(
            |p| {
                model.params.set_flat(p).unwrap();
                let (terms, grads) = elbo_batch(&model, &input, &targets, &mrefs, &noise).unwrap();
                (terms.loss, grads.to_flat())
            },
            &theta,
            EPS,
            ELBO_FLOOR,
        );
        assert!(report.max_rel_error < ELBO_TOL, "{covariance:?}: {report:?}");
    }
}

#[test]
fn context_penalty_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = tiny_model(CovarianceMode::Scalar, 5);
    let (images, masks) = tiny_batch(&mut rng, 2);
    let refs: Vec<&SliceImage> = images.iter().collect();
    let mrefs: Vec<&BrainMask> = masks.iter().collect();
    let input: Tensor<f64> = images_to_tensor(&refs).unwrap();
    let clean: Vec<f64> = input.data().iter().map(|v| v * 0.8).collect();
    let theta = model.params.to_flat();
    let report = grad_check(
        |p| {
            model.params.set_flat(p).unwrap();
            let mut grads = model.params.zeros_like();
            let v = context_penalty_batch(&model, &input, &clean, &mrefs, 0.7, &mut grads).unwrap();
            (v, grads.to_flat())
        },
        &theta,
        EPS,
    );
    assert!(report.max_rel_error < ELBO_TOL, "{report:?}");
}
