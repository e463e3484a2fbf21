//! Masked logit-normal likelihood, Gaussian KL and the batched ELBO.

use rand::Rng;
use rand_distr::StandardNormal;

use super::model::{VaeModel, VaeParams};
use crate::data::BrainMask;
use crate::numerics::{Real, Tensor};
use crate::{Error, Result};

/// Targets in `[-1, 1]` are mapped to `t = (x + 1) / 2` and clipped to
/// `[TARGET_CLIP, 1 - TARGET_CLIP]` before taking the logit.
pub const TARGET_CLIP: f64 = 1e-3;

/// Diagonal Gaussian over the latent space.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior<T = f32> {
    pub mean: Vec<T>,
    pub log_variance: Vec<T>,
}

impl<T: Real> GaussianPosterior<T> {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<T> {
        self.log_variance.iter().map(|v| v.exp()).collect()
    }
}

/// Per-pixel logit-normal output of the decoder for one slice.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitNormalOutput<T = f32> {
    pub height: usize,
    pub width: usize,
    /// Mean in the unit interval, clipped to `[clip, 1 - clip]`.
    pub mean_unit: Vec<T>,
    /// One element (scalar covariance) or one per pixel.
    pub variance: Vec<T>,
}

impl<T: Real> LogitNormalOutput<T> {
    pub fn variance_at(&self, i: usize) -> T {
        if self.variance.len() == 1 {
            self.variance[0]
        } else {
            self.variance[i]
        }
    }
}

/// Logit of the clipped unit-interval target and `ln(t (1 - t))`.
pub(crate) fn target_terms<T: Real>(x: T) -> (T, T) {
    let lo = T::lit(TARGET_CLIP);
    let hi = T::one() - lo;
    let t = ((x + T::one()) * T::lit(0.5)).max(lo).min(hi);
    let one_minus = T::one() - t;
    ((t / one_minus).ln(), (t * one_minus).ln())
}

/// Sum over mask-interior pixels of the logit-normal log-density. Writes
/// `scale * d/dlogit` and `scale * d/dvariance` into the gradient buffers
/// when given. Pixels outside the mask are never read.
#[allow(clippy::too_many_arguments)]
pub(crate) fn masked_loglik<T: Real>(
    target_logit: &[T],
    log_jacobian: &[T],
    mean_logit: &[T],
    variance: &[T],
    mask: &BrainMask,
    scale: T,
    mut d_logit: Option<&mut [T]>,
    mut d_variance: Option<&mut [T]>,
) -> T {
    let half = T::lit(0.5);
    let two_pi = T::lit(std::f64::consts::TAU);
    let scalar = variance.len() == 1;
    let mut total = T::zero();
    for (i, _) in mask.bits.iter().enumerate().filter(|(_, &b)| b) {
        let var = if scalar { variance[0] } else { variance[i] };
        let r = target_logit[i] - mean_logit[i];
        total += -half * (two_pi * var).ln() - r * r / (T::lit(2.0) * var) - log_jacobian[i];
        if let Some(d) = d_logit.as_deref_mut() {
            d[i] += scale * r / var;
        }
        if let Some(d) = d_variance.as_deref_mut() {
            let g = -half / var + r * r * half / (var * var);
            if scalar {
                d[0] += scale * g;
            } else {
                d[i] += scale * g;
            }
        }
    }
    total
}

/// Log-likelihood of slice pixels `x` (in `[-1, 1]`) under `out`, summed
/// over the interior of `mask`.
pub fn logit_normal_loglik<T: Real>(x: &[T], out: &LogitNormalOutput<T>, mask: &BrainMask) -> Result<T> {
    let n = out.height * out.width;
    if x.len() != n || out.mean_unit.len() != n || mask.bits.len() != n || !(out.variance.len() == 1 || out.variance.len() == n) {
        return Err(Error::shape(
            "logit_normal_loglik",
            format!("{n} pixels"),
            format!("x {}, mean {}, mask {}, variance {}", x.len(), out.mean_unit.len(), mask.bits.len(), out.variance.len()),
        ));
    }
    if mask.interior_count() == 0 {
        return Err(Error::EmptyMask);
    }
    let (u, jac): (Vec<T>, Vec<T>) = x.iter().map(|&v| target_terms(v)).unzip();
    let mean_logit: Vec<T> = out.mean_unit.iter().map(|&m| (m / (T::one() - m)).ln()).collect();
    Ok(masked_loglik(&u, &jac, &mean_logit, &out.variance, mask, T::zero(), None, None))
}

/// `KL(N(mean, exp(log_variance)) || N(0, I))`.
pub fn kl_standard<T: Real>(post: &GaussianPosterior<T>) -> T {
    kl_terms(&post.mean, &post.log_variance)
}

fn kl_terms<T: Real>(mean: &[T], log_variance: &[T]) -> T {
    let half = T::lit(0.5);
    mean.iter()
        .zip(log_variance)
        .fold(T::zero(), |acc, (&m, &lv)| acc + half * (m * m + lv.exp() - lv - T::one()))
}

/// `K` reparameterized draws `mean + exp(log_variance / 2) * eps`.
pub fn sample_latent<T: Real, R: Rng + ?Sized>(post: &GaussianPosterior<T>, rng: &mut R, k: usize) -> Vec<Vec<T>> {
    (0..k)
        .map(|_| {
            post.mean
                .iter()
                .zip(&post.log_variance)
                .map(|(&m, &lv)| {
                    let eps: f64 = rng.sample(StandardNormal);
                    m + (lv * T::lit(0.5)).exp() * T::lit(eps)
                })
                .collect()
        })
        .collect()
}

/// Standard normal noise `[K, N, L]` for a batch.
pub fn draw_noise<T: Real, R: Rng + ?Sized>(rng: &mut R, k: usize, n: usize, latent: usize) -> Tensor<T> {
    let data = (0..k * n * latent)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::from_vec(&[k, n, latent], data).expect("length matches")
}

/// Batch-averaged loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboTerms<T> {
    /// `reconstruction + kl`.
    pub loss: T,
    /// Negative log-likelihood averaged over latent samples.
    pub reconstruction: T,
    pub kl: T,
}

/// Negative ELBO averaged over a batch, with gradients.
///
/// `encoder_input` is `[N, 1, H, W]`, `targets` holds the `N` clean slices
/// the likelihood is evaluated against (row-major, `N * H * W`), `noise` is
/// `[K, N, L]`. Per slice the loss is
/// `-(1/K) sum_k loglik(x, decode(z_k)) + KL(q || p)`.
pub fn elbo_batch<T: Real>(
    model: &VaeModel<T>,
    encoder_input: &Tensor<T>,
    targets: &[T],
    masks: &[&BrainMask],
    noise: &Tensor<T>,
) -> Result<(ElboTerms<T>, VaeParams<T>)> {
    let n = model.check_input(encoder_input)?;
    let p = model.arch.pixels();
    let l = model.arch.latent_dim;
    let k = noise.shape().first().copied().unwrap_or(0);
    if k == 0 || noise.shape() != [k, n, l] {
        return Err(Error::shape("elbo", format!("noise [K>=1, {n}, {l}]"), format!("{:?}", noise.shape())));
    }
    if targets.len() != n * p || masks.len() != n {
        return Err(Error::shape("elbo", format!("{n} targets and masks"), format!("{} / {}", targets.len() / p.max(1), masks.len())));
    }
    for mask in masks {
        if mask.bits.len() != p {
            return Err(Error::shape("elbo", format!("mask of {p} pixels"), mask.bits.len()));
        }
        if mask.interior_count() == 0 {
            return Err(Error::EmptyMask);
        }
    }

    let (mean, logvar, etrace) = model.encode_batch(encoder_input)?;
    let std: Vec<T> = logvar.data().iter().map(|&lv| (lv * T::lit(0.5)).exp()).collect();
    let mut z = Tensor::zeros(&[k * n, l]);
    for s in 0..k {
        for b in 0..n {
            let row = &mut z.data_mut()[(s * n + b) * l..(s * n + b + 1) * l];
            let eps = &noise.data()[(s * n + b) * l..(s * n + b + 1) * l];
            for j in 0..l {
                row[j] = mean.data()[b * l + j] + std[b * l + j] * eps[j];
            }
        }
    }
    let (dec, dtrace) = model.decode_batch(&z)?;

    let (u, jac): (Vec<T>, Vec<T>) = targets.iter().map(|&v| target_terms(v)).unzip();
    let scale = -T::one() / T::lit((k * n) as f64);
    let mut d_logit = Tensor::zeros(dec.mean_logit.shape());
    let mut d_var = Tensor::zeros(dec.variance.shape());
    let scalar_var = dec.variance.len() == 1;
    let mut loglik_sum = T::zero();
    for m in 0..k * n {
        let b = m % n;
        let (vr, dvr) = if scalar_var {
            (0..1, &mut d_var.data_mut()[..])
        } else {
            (m * p..(m + 1) * p, &mut d_var.data_mut()[m * p..(m + 1) * p])
        };
        loglik_sum += masked_loglik(
            &u[b * p..(b + 1) * p],
            &jac[b * p..(b + 1) * p],
            &dec.mean_logit.data()[m * p..(m + 1) * p],
            &dec.variance.data()[vr],
            masks[b],
            scale,
            Some(&mut d_logit.data_mut()[m * p..(m + 1) * p]),
            Some(dvr),
        );
    }
    let reconstruction = loglik_sum * scale;
    let kl = kl_terms(mean.data(), logvar.data()) / T::lit(n as f64);
    if !reconstruction.is_finite() {
        return Err(Error::NonFinite("reconstruction term".into()));
    }
    if !kl.is_finite() {
        return Err(Error::NonFinite("KL term".into()));
    }

    let mut grads = model.params.zeros_like();
    let dz = model.decoder_backward(&dtrace, &d_logit, &d_var, &mut grads)?;
    let inv_n = T::one() / T::lit(n as f64);
    let half = T::lit(0.5);
    let mut d_mean = mean.map(|m| m * inv_n);
    let mut d_logvar = logvar.map(|lv| half * (lv.exp() - T::one()) * inv_n);
    for s in 0..k {
        for b in 0..n {
            for j in 0..l {
                let idx = (s * n + b) * l + j;
                let g = dz.data()[idx];
                d_mean.data_mut()[b * l + j] += g;
                d_logvar.data_mut()[b * l + j] += g * noise.data()[idx] * half * std[b * l + j];
            }
        }
    }
    model.encoder_backward(&etrace, &d_mean, &d_logvar, &mut grads)?;
    Ok((
        ElboTerms {
            loss: reconstruction + kl,
            reconstruction,
            kl,
        },
        grads,
    ))
}

/// Forward-only counterpart of [`elbo_batch`]: the same batch-averaged
/// terms without building gradients.
pub fn elbo_value_batch<T: Real>(
    model: &VaeModel<T>,
    encoder_input: &Tensor<T>,
    targets: &[T],
    masks: &[&BrainMask],
    noise: &Tensor<T>,
) -> Result<ElboTerms<T>> {
    let n = model.check_input(encoder_input)?;
    let (p, l) = (model.arch.pixels(), model.arch.latent_dim);
    let k = noise.shape().first().copied().unwrap_or(0);
    if k == 0 || noise.shape() != [k, n, l] || targets.len() != n * p || masks.len() != n {
        return Err(Error::shape("elbo", format!("noise [K>=1, {n}, {l}] and {n} targets"), format!("{:?}", noise.shape())));
    }
    let (mean, logvar, _) = model.encode_batch(encoder_input)?;
    let mut z = noise.clone();
    for (i, v) in z.data_mut().iter_mut().enumerate() {
        let j = i % (n * l);
        *v = mean.data()[j] + (logvar.data()[j] * T::lit(0.5)).exp() * *v;
    }
    let z = z.reshape(&[k * n, l])?;
    let (dec, _) = model.decode_batch(&z)?;
    let (u, jac): (Vec<T>, Vec<T>) = targets.iter().map(|&v| target_terms(v)).unzip();
    let mut loglik_sum = T::zero();
    for m in 0..k * n {
        let b = m % n;
        if masks[b].bits.len() != p || masks[b].interior_count() == 0 {
            return Err(Error::EmptyMask);
        }
        let var = if dec.variance.len() == 1 { &dec.variance.data()[..] } else { &dec.variance.data()[m * p..(m + 1) * p] };
        loglik_sum += masked_loglik(
            &u[b * p..(b + 1) * p],
            &jac[b * p..(b + 1) * p],
            &dec.mean_logit.data()[m * p..(m + 1) * p],
            var,
            masks[b],
            T::zero(),
            None,
            None,
        );
    }
    let reconstruction = -loglik_sum / T::lit((k * n) as f64);
    let kl = kl_terms(mean.data(), logvar.data()) / T::lit(n as f64);
    if !reconstruction.is_finite() {
        return Err(Error::NonFinite("reconstruction term".into()));
    }
    if !kl.is_finite() {
        return Err(Error::NonFinite("KL term".into()));
    }
    Ok(ElboTerms { loss: reconstruction + kl, reconstruction, kl })
}

/// Context-encoding penalty `lambda * ||x - rec(masked x)||^2` over mask
/// interiors, averaged over the batch. `rec` decodes the posterior mean and
/// maps it back to `[-1, 1]`. Gradients are added to `grads`.
pub fn context_penalty_batch<T: Real>(
    model: &VaeModel<T>,
    masked_input: &Tensor<T>,
    clean: &[T],
    masks: &[&BrainMask],
    lambda: T,
    grads: &mut VaeParams<T>,
) -> Result<T> {
    let n = model.check_input(masked_input)?;
    let p = model.arch.pixels();
    if clean.len() != n * p || masks.len() != n {
        return Err(Error::shape("context_penalty", format!("{n} slices"), masks.len()));
    }
    let (mean, logvar, etrace) = model.encode_batch(masked_input)?;
    let (dec, dtrace) = model.decode_batch(&mean)?;
    let two = T::lit(2.0);
    let w = lambda / T::lit(n as f64);
    let mut total = T::zero();
    let mut d_logit = Tensor::zeros(dec.mean_logit.shape());
    for b in 0..n {
        for (i, _) in masks[b].bits.iter().enumerate().filter(|(_, &m)| m) {
            let mu = dec.mean_unit.data()[b * p + i];
            let diff = two * mu - T::one() - clean[b * p + i];
            total += diff * diff;
            // d/dmu of diff^2 is 4 diff; dmu/dlogit = mu (1 - mu)
            d_logit.data_mut()[b * p + i] = w * two * two * diff * mu * (T::one() - mu);
        }
    }
    let value = total * w;
    if !value.is_finite() {
        return Err(Error::NonFinite("context penalty".into()));
    }
    let d_var = Tensor::zeros(dec.variance.shape());
    let dz = model.decoder_backward(&dtrace, &d_logit, &d_var, grads)?;
    model.encoder_backward(&etrace, &dz, &Tensor::zeros(logvar.shape()), grads)?;
    Ok(value)
}
