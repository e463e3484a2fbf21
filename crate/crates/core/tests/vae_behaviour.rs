use ldvae_core::data::{make_dataset, SliceRecord};
use ldvae_core::rng;
use ldvae_core::vae::{
    decode, draw_noise, elbo_loss_with_noise, elbo_value_batch, encode, images_to_tensor, reconstruct,
    sample_latent, train, train_with, GaussianPosterior, VarianceHead,
};
use ldvae_core::{
    Architecture, BrainMask, CovarianceMode, PhantomConfig, SliceImage, Tensor, TrainConfig, VaeModel, Variant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_arch(cov: CovarianceMode) -> Architecture {
    let mut arch = Architecture::healthy(16).with_channels(&[8, 16]).with_latent_dim(8);
    arch.covariance = cov;
    arch
}

fn blob(extent: usize, seed: u64) -> (SliceImage, BrainMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = extent as f64 / 2.0;
    let r = 0.4 * extent as f64;
    let bits: Vec<bool> = (0..extent * extent)
        .map(|i| {
            let (y, x) = ((i / extent) as f64 + 0.5 - c, (i % extent) as f64 + 0.5 - c);
            y * y + x * x <= r * r
        })
        .collect();
    let pixels = bits
        .iter()
        .map(|&b| if b { rng.random_range(-0.6..0.8) } else { -1.0 })
        .collect();
    (
        SliceImage::new(extent, extent, pixels).unwrap(),
        BrainMask::new(extent, extent, bits).unwrap(),
    )
}

fn small_dataset() -> Vec<SliceRecord> {
    let cfg = PhantomConfig {
        native_resolution: 32,
        crop_extent: 28,
        output_resolution: 16,
        healthy_subjects: 10,
        unlabelled_subjects: 10,
        slices_per_subject: 10,
        ..PhantomConfig::default()
    };
    let (healthy, _) = make_dataset(&cfg).unwrap();
    healthy.train[..50].to_vec()
}

fn quick_config(variant: Variant) -> TrainConfig {
    TrainConfig {
        epochs: 20,
        batch_size: 10,
        learning_rate: 1e-3,
        variant,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn param_bits(model: &VaeModel) -> Vec<u32> {
    model.params.to_flat().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn default_posterior_has_128_dimensions() {
    let model = VaeModel::<f32>::new(Architecture::unlabelled(128), 0).unwrap();
    let (x, _) = blob(128, 1);
    let post = encode(&model, &x).unwrap();
    assert_eq!((post.mean.len(), post.log_variance.len()), (128, 128));
    assert!(post.log_variance.iter().all(|v| v.is_finite() && v.exp() > 0.0));
}

#[test]
fn zero_heads_return_their_biases() {
    let mut model = VaeModel::<f64>::new(small_arch(CovarianceMode::Scalar), 3).unwrap();
    let l = model.arch.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for head in [&mut model.params.enc_mean, &mut model.params.enc_logvar] {
        head.weights.fill(0.0);
        head.bias = Tensor::from_vec(&[l], (0..l).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    }
    let (x, _) = blob(16, 2);
    let post = encode(&model, &x).unwrap();
    assert_eq!(post.mean, model.params.enc_mean.bias.data());
    assert_eq!(post.log_variance, model.params.enc_logvar.bias.data());
}

#[test]
fn encode_is_deterministic() {
    let model = VaeModel::<f32>::new(small_arch(CovarianceMode::PerPixel), 4).unwrap();
    let (x, _) = blob(16, 3);
    assert_eq!(encode(&model, &x).unwrap(), encode(&model, &x.clone()).unwrap());
}

#[test]
fn decoder_clip_floor_and_scalar_mode() {
    let mut model = VaeModel::<f64>::new(small_arch(CovarianceMode::Scalar), 5).unwrap();
    model.params.dec_mean.weights.fill(0.0);
    model.params.dec_mean.bias.fill(50.0);
    model.params.dec_var = VarianceHead::Scalar(Tensor::full(&[1], -10.0));
    let out = decode(&model, &[0.3; 8]).unwrap();
    assert_eq!(out.variance, vec![0.01]);
    assert!(out.mean_unit.iter().all(|&m| m == 0.99), "mean clipped at 1 - 0.01");

    model.params.dec_mean.bias.fill(-50.0);
    let out = decode(&model, &[0.3; 8]).unwrap();
    assert!(out.mean_unit.iter().all(|&m| m == 0.01));
}

#[test]
fn wrong_latent_dimension_is_rejected() {
    let model = VaeModel::<f32>::new(small_arch(CovarianceMode::Scalar), 5).unwrap();
    assert!(decode(&model, &[0.0; 7]).is_err());
    let (x, _) = blob(32, 0);
    assert!(encode(&model, &x).is_err());
}

#[test]
fn collapsed_posterior_makes_k_irrelevant() {
    let mut model = VaeModel::<f64>::new(small_arch(CovarianceMode::PerPixel), 6).unwrap();
    model.params.enc_logvar.weights.fill(0.0);
    model.params.enc_logvar.bias.fill(-2000.0);
    let (x, mask) = blob(16, 4);
    let px: Vec<f64> = x.pixels.iter().map(|&v| v as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise: Vec<f64> = (0..3 * 8).map(|_| rng.random_range(-3.0..3.0)).collect();
    let (one, _) = elbo_loss_with_noise(&model, &px, &mask, &noise[..8]).unwrap();
    let (three, _) = elbo_loss_with_noise(&model, &px, &mask, &noise).unwrap();
    assert!((one.reconstruction - three.reconstruction).abs() <= 1e-12 * one.reconstruction.abs());
    assert_eq!(one.kl, three.kl);
    assert!(one.kl >= 0.0);

    let post = GaussianPosterior { mean: vec![0.5, -1.0], log_variance: vec![f64::NEG_INFINITY; 2] };
    for z in sample_latent(&post, &mut rng, 4) {
        assert_eq!(z, post.mean);
    }
}

#[test]
fn sample_mean_within_four_standard_errors() {
    let post = GaussianPosterior { mean: vec![0.7, -1.3, 0.0], log_variance: vec![0.4, -1.0, 1.5] };
    let n = 100_000;
    let draws = sample_latent(&post, &mut rng::stream(42, &[]), n);
    for (d, (&m, &lv)) in post.mean.iter().zip(&post.log_variance).enumerate() {
        let avg = draws.iter().map(|z| z[d]).sum::<f64>() / n as f64;
        let se = (lv.exp() / n as f64).sqrt();
        assert!((avg - m).abs() < 4.0 * se, "dim {d}: {avg} vs {m}");
    }
    assert_eq!(draws, sample_latent(&post, &mut rng::stream(42, &[]), n));
}

#[test]
fn more_latent_samples_reduce_loss_variance() {
    let model = VaeModel::<f32>::new(small_arch(CovarianceMode::PerPixel), 7).unwrap();
    let pairs: Vec<_> = (0..4).map(|s| blob(16, 10 + s)).collect();
    let images: Vec<&SliceImage> = pairs.iter().map(|p| &p.0).collect();
    let masks: Vec<&BrainMask> = pairs.iter().map(|p| &p.1).collect();
    let input: Tensor<f32> = images_to_tensor(&images).unwrap();
    let targets: Vec<f32> = images.iter().flat_map(|s| s.pixels.iter().copied()).collect();
    let variance = |k: usize| {
        let losses: Vec<f64> = (0..200u64)
            .map(|seed| {
                let noise = draw_noise(&mut rng::stream(seed, &[k as u64]), k, 4, 8);
                elbo_value_batch(&model, &input, &targets, &masks, &noise).unwrap().loss as f64
            })
            .collect();
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (losses.len() - 1) as f64
    };
    let (v1, v3) = (variance(1), variance(3));
    assert!(v3 < v1, "K=3 variance {v3} vs K=1 {v1}");
}

#[test]
fn reconstruction_overlays_background() {
    let model = VaeModel::<f32>::new(small_arch(CovarianceMode::Scalar), 8).unwrap();
    let (x, mask) = blob(16, 5);
    let rec = reconstruct(&model, &x, &mask).unwrap();
    for (&v, &m) in rec.pixels.iter().zip(&mask.bits) {
        if m {
            // f32 rounding of 2t - 1 at the clip boundary
            let v = v as f64;
            assert!(v >= 2.0 * 0.01 - 1.0 - 1e-6 && v <= 1.0 - 2.0 * 0.01 + 1e-6, "{v}");
        } else {
            assert_eq!(v, -1.0);
        }
    }
    assert_eq!(rec, reconstruct(&model, &x, &mask).unwrap());
    assert!(encode(&model, &rec).is_ok());
}

#[test]
fn training_loss_decreases() {
    let data = small_dataset();
    let model = VaeModel::new(small_arch(CovarianceMode::Scalar), 1).unwrap();
    let out = train(model, &data, &[], &quick_config(Variant::Plain)).unwrap();
    assert_eq!(out.history.len(), 20);
    let (first, last) = (out.history[0].train_loss, out.history[19].train_loss);
    assert!(last < first, "epoch 1 {first}, epoch 20 {last}");
    assert!(out.model.params.is_finite());
}

#[test]
fn training_is_bit_reproducible() {
    let data = small_dataset();
    let cfg = TrainConfig { epochs: 3, ..quick_config(Variant::CeReg { mask_size: 4, lambda: 1.0, count: 1 }) };
    let run = || {
        let model = VaeModel::new(small_arch(CovarianceMode::PerPixel), 2).unwrap();
        train(model, &data, &data[..10], &cfg).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(param_bits(&a.model), param_bits(&b.model));
    assert_eq!(a.history, b.history);
}

#[test]
fn ce_dvae_without_squares_follows_plain() {
    let data = small_dataset();
    let run = |variant| {
        let cfg = TrainConfig { epochs: 3, ..quick_config(variant) };
        let model = VaeModel::new(small_arch(CovarianceMode::Scalar), 3).unwrap();
        let mut seen = 0;
        let out = train_with(model, &data, &[], &cfg, |_| seen += 1).unwrap();
        assert_eq!(seen, 3);
        out
    };
    let plain = run(Variant::Plain);
    let ce = run(Variant::CeDvae { mask_size: 4, count: 0 });
    assert_eq!(param_bits(&plain.model), param_bits(&ce.model));
    let masked = run(Variant::CeDvae { mask_size: 4, count: 1 });
    assert_ne!(param_bits(&plain.model), param_bits(&masked.model));
}

#[test]
fn invalid_training_config_is_rejected() {
    let data = small_dataset();
    let model = VaeModel::new(small_arch(CovarianceMode::Scalar), 3).unwrap();
    let cfg = TrainConfig { latent_samples: 0, ..quick_config(Variant::Plain) };
    assert!(matches!(train(model.clone(), &data, &[], &cfg), Err(ldvae_core::Error::InvalidConfig { .. })));
    let cfg = TrainConfig { epochs: 0, ..quick_config(Variant::Plain) };
    assert!(train(model, &data, &[], &cfg).is_err());
}
