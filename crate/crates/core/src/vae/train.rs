//! Mini-batch Adam training of the three variants.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{context_penalty_batch, draw_noise, elbo_batch, elbo_value_batch};
use super::masks::apply_square_masks;
use super::model::{VaeModel, VaeParams};
use super::ops::images_to_tensor;
use crate::data::{apply_augment, AugmentConfig, AugmentDraws, BrainMask, SliceImage, SliceRecord};
use crate::numerics::{adam_step, AdamState, Tensor};
use crate::rng::{self, tag};
use crate::{Error, Result};

/// Training objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Variant {
    Plain,
    /// Encoder sees slices with random gray squares; the likelihood
    /// targets the clean slice.
    CeDvae {
        mask_size: usize,
        #[serde(default = "one")]
        count: usize,
    },
    /// Plain ELBO plus `lambda * ||x - rec(masked x)||^2` over the mask.
    CeReg {
        mask_size: usize,
        #[serde(default = "unit")]
        lambda: f64,
        #[serde(default = "one")]
        count: usize,
    },
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Latent samples `K` per slice.
    pub latent_samples: usize,
    pub variant: Variant,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-4,
            latent_samples: 3,
            variant: Variant::Plain,
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.latent_samples == 0 {
            return Err(Error::config("latent_samples", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if let Variant::CeReg { lambda, .. } = self.variant {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(Error::config("variant.lambda", "must be nonnegative"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when no validation slices were given.
    pub val_loss: Option<f64>,
}

pub struct TrainOutcome {
    pub model: VaeModel,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.train_loss)
    }
}

fn diverged(epoch: usize, batch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(term) => Error::Divergence { epoch, batch, term },
        other => other,
    }
}

/// Trains `model` on `train`, reporting each finished epoch to `on_epoch`.
///
/// Every source of randomness has its own stream derived from the seed,
/// the epoch and the batch or slice index, so variants that draw nothing
/// extra (for instance CE-DVAE with zero squares) follow exactly the plain
/// trajectory.
pub fn train_with(
    mut model: VaeModel,
    train: &[SliceRecord],
    validation: &[SliceRecord],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.arch.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let mut states: Vec<AdamState> = model
        .params
        .blocks()
        .iter()
        .map(|(_, t)| AdamState::new(t.len(), cfg.learning_rate))
        .collect();
    let names = model.params.block_names();
    let (k, l) = (cfg.latent_samples, model.arch.latent_dim);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let e = epoch as u64;
        order.shuffle(&mut rng::stream(cfg.seed, &[tag::SHUFFLE, e]));
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let bu = b as u64;
            let mut clean = Vec::with_capacity(batch.len());
            let mut noisy = Vec::with_capacity(batch.len());
            let mut masks = Vec::with_capacity(batch.len());
            for &i in batch {
                let rec = &train[i];
                let (target, input, mask) = if cfg.augment.enabled {
                    let mut r = rng::stream(cfg.seed, &[tag::AUGMENT, e, i as u64]);
                    let draws = AugmentDraws::sample(&cfg.augment, rec.image.len(), &mut r);
                    let (t, m) = apply_augment(&rec.image, &rec.mask, &draws.without_noise());
                    let (x, _) = apply_augment(&rec.image, &rec.mask, &draws);
                    (t, x, m)
                } else {
                    (rec.image.clone(), rec.image.clone(), rec.mask.clone())
                };
                clean.push(target);
                noisy.push(input);
                masks.push(mask);
            }
            let mask_refs: Vec<&BrainMask> = masks.iter().collect();
            let targets: Vec<f32> = clean.iter().flat_map(|s| s.pixels.iter().copied()).collect();
            let mut square_rng = rng::stream(cfg.seed, &[tag::SQUARE_MASKS, e, bu]);
            let mut squares = |images: &[SliceImage], size: usize, count: usize| -> Vec<SliceImage> {
                images.iter().map(|x| apply_square_masks(x, size, count, &mut square_rng)).collect()
            };
            let encoder_images = match cfg.variant {
                Variant::CeDvae { mask_size, count } => squares(&noisy, mask_size, count),
                _ => noisy.clone(),
            };
            let input: Tensor<f32> = images_to_tensor(&encoder_images.iter().collect::<Vec<_>>())?;
            let noise: Tensor<f32> = draw_noise(&mut rng::stream(cfg.seed, &[tag::LATENT_NOISE, e, bu]), k, batch.len(), l);
            let (terms, mut grads) =
                elbo_batch(&model, &input, &targets, &mask_refs, &noise).map_err(diverged(epoch, b))?;
            let mut loss = terms.loss as f64;
            if let Variant::CeReg { mask_size, lambda, count } = cfg.variant {
                let masked = squares(&noisy, mask_size, count);
                let masked = images_to_tensor(&masked.iter().collect::<Vec<_>>())?;
                let penalty = context_penalty_batch(&model, &masked, &targets, &mask_refs, lambda as f32, &mut grads)
                    .map_err(diverged(epoch, b))?;
                loss += penalty as f64;
            }
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, term: "loss".into() });
            }
            apply_gradients(&mut model.params, &grads, &mut states, &names).map_err(diverged(epoch, b))?;
            total += loss * batch.len() as f64;
        }
        let val_loss = if validation.is_empty() {
            None
        } else {
            Some(evaluate_loss(&model, validation, cfg).map_err(diverged(epoch, usize::MAX))?)
        };
        let record = EpochRecord { epoch: epoch + 1, train_loss: total / train.len() as f64, val_loss };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome { model, history })
}

pub fn train(model: VaeModel, train: &[SliceRecord], validation: &[SliceRecord], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, train, validation, cfg, |_| {})
}

fn apply_gradients(params: &mut VaeParams<f32>, grads: &VaeParams<f32>, states: &mut [AdamState], names: &[String]) -> Result<()> {
    let grads = grads.blocks();
    for (((p, (_, g)), s), name) in params.blocks_mut().into_iter().zip(grads).zip(states.iter_mut()).zip(names) {
        adam_step(name, p, g, s)?;
    }
    Ok(())
}

/// Mean negative ELBO over `records` with a fixed noise stream and no
/// augmentation.
pub fn evaluate_loss(model: &VaeModel, records: &[SliceRecord], cfg: &TrainConfig) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("evaluation set"));
    }
    let l = model.arch.latent_dim;
    let mut total = 0.0;
    for (c, chunk) in records.chunks(cfg.batch_size.max(1)).enumerate() {
        let images: Vec<&SliceImage> = chunk.iter().map(|r| &r.image).collect();
        let masks: Vec<&BrainMask> = chunk.iter().map(|r| &r.mask).collect();
        let targets: Vec<f32> = images.iter().flat_map(|s| s.pixels.iter().copied()).collect();
        let noise = draw_noise(&mut rng::stream(cfg.seed, &[tag::VALIDATION, c as u64]), cfg.latent_samples, chunk.len(), l);
        let terms = elbo_value_batch(model, &images_to_tensor(&images)?, &targets, &masks, &noise)?;
        total += terms.loss as f64 * chunk.len() as f64;
    }
    Ok(total / records.len() as f64)
}
