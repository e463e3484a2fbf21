//! Slice-wise anomaly detection from dissimilarities between latent
//! representations of two variational autoencoders.
//!
//! One VAE (`VAE-H`) is trained on healthy slices only, a second one on
//! unlabelled slices that may contain lesions. A slice is scored by encoding
//! both the slice and its healthy-model reconstruction with the second model
//! and taking the Euclidean distance between the two posterior means.
//!
//! Module map:
//!
//! * [`numerics`]: tensors, stride-2 convolution layers with explicit
//!   backward passes, Adam, finite-difference gradient checking.
//! * [`vae`]: Gaussian encoder, logit-normal decoder, masked ELBO, training
//!   variants.
//! * [`data`]: phantom slice generator, preprocessing, augmentation and the
//!   binary dataset format.
//! * [`detector`]: latent and residual scorers, percentile thresholds and
//!   k-fold cross-validation.
//! * [`metrics`]: ROC-AUC, confusion counts, nearest-rank percentile and
//!   lesion-size labelling.
//! * [`checkpoint`]: binary model checkpoints.

pub mod checkpoint;
pub mod data;
pub mod detector;
mod error;
pub mod metrics;
pub mod numerics;
pub mod rng;
pub mod vae;
mod wire;

pub use error::{Error, FormatError, Result};
pub use numerics::{Real, Tensor};
pub use data::{BrainMask, DatasetSplit, PhantomConfig, SliceImage, SliceRecord};
pub use detector::{AnomalyScore, EvalReport, ScorerKind, ThresholdSelection};
pub use vae::{Architecture, CovarianceMode, TrainConfig, VaeModel, Variant};
