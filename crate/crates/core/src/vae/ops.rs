//! Slice-level entry points on top of the batched model passes.

use rand::Rng;

use super::loss::{draw_noise, elbo_batch, ElboTerms, GaussianPosterior, LogitNormalOutput};
use super::model::{VaeModel, VaeParams};
use crate::data::{BrainMask, SliceImage};
use crate::numerics::{Real, Tensor};
use crate::{Error, Result};

/// Background value written outside the brain mask of a reconstruction.
pub const BACKGROUND: f32 = -1.0;

/// Largest number of slices pushed through the network at once.
pub const INFERENCE_CHUNK: usize = 64;

/// Stacks slices into a `[N, 1, H, W]` tensor.
pub fn images_to_tensor<T: Real>(images: &[&SliceImage]) -> Result<Tensor<T>> {
    let Some(first) = images.first() else {
        return Err(Error::EmptyInput("images_to_tensor"));
    };
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.height != h || img.width != w {
            return Err(Error::shape("images_to_tensor", format!("{h}x{w}"), format!("{}x{}", img.height, img.width)));
        }
        data.extend(img.pixels.iter().map(|&v| T::lit(v as f64)));
    }
    Tensor::from_vec(&[images.len(), 1, h, w], data)
}

fn check_geometry<T: Real>(model: &VaeModel<T>, img: &SliceImage) -> Result<()> {
    if img.height != model.arch.height || img.width != model.arch.width {
        return Err(Error::shape(
            "vae",
            format!("{}x{} slice", model.arch.height, model.arch.width),
            format!("{}x{}", img.height, img.width),
        ));
    }
    Ok(())
}

pub fn encode<T: Real>(model: &VaeModel<T>, x: &SliceImage) -> Result<GaussianPosterior<T>> {
    check_geometry(model, x)?;
    let (mean, logvar, _) = model.encode_batch(&images_to_tensor(&[x])?)?;
    Ok(GaussianPosterior {
        mean: mean.into_data(),
        log_variance: logvar.into_data(),
    })
}

pub fn decode<T: Real>(model: &VaeModel<T>, z: &[T]) -> Result<LogitNormalOutput<T>> {
    let zt = Tensor::from_vec(&[1, z.len()], z.to_vec())?;
    let (dec, _) = model.decode_batch(&zt)?;
    Ok(LogitNormalOutput {
        height: model.arch.height,
        width: model.arch.width,
        mean_unit: dec.mean_unit.into_data(),
        variance: dec.variance.into_data(),
    })
}

/// Posterior means of many slices, computed in fixed-size chunks.
pub fn encode_means<T: Real>(model: &VaeModel<T>, images: &[&SliceImage]) -> Result<Vec<Vec<T>>> {
    let l = model.arch.latent_dim;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(INFERENCE_CHUNK) {
        for img in chunk {
            check_geometry(model, img)?;
        }
        let (mean, _, _) = model.encode_batch(&images_to_tensor(chunk)?)?;
        out.extend(mean.data().chunks_exact(l).map(<[T]>::to_vec));
    }
    Ok(out)
}

/// Deterministic reconstructions: decode the posterior mean, map the unit
/// mean back to `[-1, 1]` by `2t - 1`, and set pixels outside the mask to
/// the background value.
pub fn reconstruct_batch<T: Real>(model: &VaeModel<T>, images: &[&SliceImage], masks: &[&BrainMask]) -> Result<Vec<SliceImage>> {
    if images.len() != masks.len() {
        return Err(Error::shape("reconstruct", images.len(), masks.len()));
    }
    let p = model.arch.pixels();
    let mut out = Vec::with_capacity(images.len());
    for (imgs, msks) in images.chunks(INFERENCE_CHUNK).zip(masks.chunks(INFERENCE_CHUNK)) {
        for (img, mask) in imgs.iter().zip(msks) {
            check_geometry(model, img)?;
            mask.check_matches("reconstruct", img)?;
        }
        let (mean, _, _) = model.encode_batch(&images_to_tensor(imgs)?)?;
        let (dec, _) = model.decode_batch(&mean)?;
        for (b, (img, mask)) in imgs.iter().zip(msks).enumerate() {
            let pixels = dec.mean_unit.data()[b * p..(b + 1) * p]
                .iter()
                .zip(&mask.bits)
                .map(|(&t, &inside)| {
                    if inside {
                        (2.0 * t.to_f64().unwrap_or(f64::NAN) - 1.0) as f32
                    } else {
                        BACKGROUND
                    }
                })
                .collect();
            out.push(img.with_pixels(pixels));
        }
    }
    Ok(out)
}

pub fn reconstruct<T: Real>(model: &VaeModel<T>, x: &SliceImage, mask: &BrainMask) -> Result<SliceImage> {
    Ok(reconstruct_batch(model, &[x], &[mask])?.remove(0))
}

/// Negative ELBO of one slice with explicit latent noise `[K * L]`.
pub fn elbo_loss_with_noise<T: Real>(
    model: &VaeModel<T>,
    x: &[T],
    mask: &BrainMask,
    noise: &[T],
) -> Result<(ElboTerms<T>, VaeParams<T>)> {
    let (h, w, l) = (model.arch.height, model.arch.width, model.arch.latent_dim);
    if l == 0 || noise.len() % l != 0 || noise.is_empty() {
        return Err(Error::shape("elbo_loss", format!("K * {l} noise values"), noise.len()));
    }
    let input = Tensor::from_vec(&[1, 1, h, w], x.to_vec())?;
    let noise = Tensor::from_vec(&[noise.len() / l, 1, l], noise.to_vec())?;
    elbo_batch(model, &input, x, &[mask], &noise)
}

/// Negative ELBO of one slice using `k` latent samples from `rng`.
pub fn elbo_loss<T: Real, R: Rng + ?Sized>(
    model: &VaeModel<T>,
    x: &SliceImage,
    mask: &BrainMask,
    rng: &mut R,
    k: usize,
) -> Result<(ElboTerms<T>, VaeParams<T>)> {
    check_geometry(model, x)?;
    if k == 0 {
        return Err(Error::config("latent_samples", "must be at least 1"));
    }
    let noise: Tensor<T> = draw_noise(rng, k, 1, model.arch.latent_dim);
    let pixels: Vec<T> = x.pixels.iter().map(|&v| T::lit(v as f64)).collect();
    elbo_loss_with_noise(model, &pixels, mask, noise.data())
}
