//! Gaussian-encoder / logit-normal-decoder VAE, its masked ELBO and
//! training variants.

mod arch;
mod loss;
mod masks;
mod model;
mod ops;
mod train;

pub use arch::{Architecture, CovarianceMode, HEALTHY_CLIP, UNLABELLED_CLIP, VARIANCE_FLOOR};
pub use loss::{
    context_penalty_batch, draw_noise, elbo_batch, elbo_value_batch, kl_standard, logit_normal_loglik, sample_latent,
    ElboTerms, GaussianPosterior, LogitNormalOutput, TARGET_CLIP,
};
pub use masks::apply_square_masks;
pub use model::{Affine, DecodedBatch, DecoderTrace, EncoderTrace, VaeModel, VaeParams, VarianceHead};
pub use ops::{
    decode, elbo_loss, elbo_loss_with_noise, encode, encode_means, images_to_tensor, reconstruct, reconstruct_batch,
    BACKGROUND, INFERENCE_CHUNK,
};
pub use train::{evaluate_loss, train, train_with, EpochRecord, TrainConfig, TrainOutcome, Variant};
