//! JSON run configuration.

use std::path::{Path, PathBuf};

use ldvae_core::detector::default_grid;
use ldvae_core::metrics::SmallLesionPolicy;
use ldvae_core::rng::derive_seed;
use ldvae_core::vae::{HEALTHY_CLIP, UNLABELLED_CLIP, VARIANCE_FLOOR};
use ldvae_core::{Architecture, CovarianceMode, PhantomConfig, TrainConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "LD_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Healthy,
    Unlabelled,
}

impl Cohort {
    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::Healthy => "healthy",
            Cohort::Unlabelled => "unlabelled",
        }
    }
}

/// Network shape and optimisation settings of one of the two models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Encoder channels; the decoder mirrors them.
    pub channels: Vec<usize>,
    pub latent_dim: usize,
    /// Defaults to scalar for the healthy model, per-pixel otherwise.
    pub covariance: Option<CovarianceMode>,
    /// Defaults to 0.01 for the healthy model, 0.001 otherwise.
    pub clip: Option<f64>,
    pub variance_floor: f64,
    pub train: TrainConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: vec![64, 128, 256, 512],
            latent_dim: 128,
            covariance: None,
            clip: None,
            variance_floor: VARIANCE_FLOOR,
            train: TrainConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self, cohort: Cohort, extent: usize) -> Architecture {
        let (covariance, clip) = match cohort {
            Cohort::Healthy => (CovarianceMode::Scalar, HEALTHY_CLIP),
            Cohort::Unlabelled => (CovarianceMode::PerPixel, UNLABELLED_CLIP),
        };
        Architecture {
            height: extent,
            width: extent,
            covariance: self.covariance.unwrap_or(covariance),
            clip: self.clip.unwrap_or(clip),
            variance_floor: self.variance_floor,
            ..Architecture::default()
        }
        .with_channels(&self.channels)
        .with_latent_dim(self.latent_dim)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScorerChoice {
    Latent,
    Residual,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub scorer: ScorerChoice,
    /// Candidate percentiles for threshold selection.
    pub grid: Vec<f64>,
    pub folds: usize,
    pub small_lesions: SmallLesionPolicy,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { scorer: ScorerChoice::All, grid: default_grid(), folds: 5, small_lesions: SmallLesionPolicy::Exclude }
    }
}

/// Lesion-size thresholds in native pixels before rescaling to the
/// desk-scale geometry.
pub const REFERENCE_SIZE_THRESHOLDS: [f64; 4] = [0.0, 20.0, 50.0, 150.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub phantom: PhantomConfig,
    pub healthy: ModelConfig,
    pub unlabelled: ModelConfig,
    pub detector: DetectorConfig,
    /// Native-pixel lesion-size thresholds; defaults to the reference
    /// thresholds scaled by `(output / native)^2`.
    pub size_thresholds: Option<Vec<f64>>,
    /// Side of the gray squares of the CE variants; defaults to 40 pixels
    /// per 128 of slice extent.
    pub ce_mask_size: Option<usize>,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            phantom: PhantomConfig::default(),
            healthy: ModelConfig::default(),
            unlabelled: ModelConfig::default(),
            detector: DetectorConfig::default(),
            size_thresholds: None,
            ce_mask_size: None,
            seed: 0,
            output_dir: PathBuf::from("run"),
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Config(format!("invalid value for `{field}`: {}", reason.into()))
}

impl RunConfig {
    /// Reads and validates a config, applying the seed override from the
    /// environment. Relative output directories resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v.trim().parse().map_err(|_| invalid(SEED_ENV, format!("`{v}` is not an unsigned integer")))?;
        }
        if cfg.output_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.output_dir = dir.join(&cfg.output_dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.phantom.validate().map_err(|e| invalid("phantom", e.to_string()))?;
        let extent = self.phantom.output_resolution;
        for cohort in [Cohort::Healthy, Cohort::Unlabelled] {
            let m = self.model(cohort);
            let field = |f: &str| format!("{}.{f}", cohort.as_str());
            m.architecture(cohort, extent).validate().map_err(|e| invalid(&field("architecture"), e.to_string()))?;
            m.train.validate().map_err(|e| invalid(&field("train"), e.to_string()))?;
        }
        let d = &self.detector;
        if d.folds < 2 {
            return Err(invalid("detector.folds", "need at least 2"));
        }
        if d.grid.is_empty() || d.grid.iter().any(|&p| !(p > 0.0 && p <= 100.0)) {
            return Err(invalid("detector.grid", "percentiles must lie in (0, 100]"));
        }
        if self.size_thresholds().iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(invalid("size_thresholds", "must be nonnegative"));
        }
        if self.mask_size() == 0 || self.mask_size() > extent {
            return Err(invalid("ce_mask_size", format!("must lie in 1..={extent}")));
        }
        Ok(())
    }

    pub fn model(&self, cohort: Cohort) -> &ModelConfig {
        match cohort {
            Cohort::Healthy => &self.healthy,
            Cohort::Unlabelled => &self.unlabelled,
        }
    }

    pub fn size_thresholds(&self) -> Vec<f64> {
        self.size_thresholds.clone().unwrap_or_else(|| {
            let s = self.phantom.output_resolution as f64 / self.phantom.native_resolution as f64;
            REFERENCE_SIZE_THRESHOLDS.iter().map(|t| t * s * s).collect()
        })
    }

    pub fn mask_size(&self) -> usize {
        self.ce_mask_size
            .unwrap_or_else(|| ((40.0 * self.phantom.output_resolution as f64 / 128.0).round() as usize).max(1))
    }

    /// Phantom configuration with the run seed applied.
    pub fn phantom(&self) -> PhantomConfig {
        PhantomConfig { seed: self.seed, ..self.phantom.clone() }
    }

    /// Training settings of `cohort` with the run seed and the requested
    /// variant applied.
    pub fn train_config(&self, cohort: Cohort, variant: VariantChoice) -> TrainConfig {
        let m = self.model(cohort);
        let size = self.mask_size();
        let variant = match (variant, &m.train.variant) {
            (VariantChoice::Plain, _) => Variant::Plain,
            (VariantChoice::CeDvae, Variant::CeDvae { mask_size, count }) => Variant::CeDvae { mask_size: *mask_size, count: *count },
            (VariantChoice::CeDvae, _) => Variant::CeDvae { mask_size: size, count: 1 },
            (VariantChoice::CeReg, v @ Variant::CeReg { .. }) => v.clone(),
            (VariantChoice::CeReg, _) => Variant::CeReg { mask_size: size, lambda: 1.0, count: 1 },
        };
        let tag = match cohort {
            Cohort::Healthy => 1,
            Cohort::Unlabelled => 2,
        };
        TrainConfig { seed: derive_seed(self.seed, &[tag]), variant, ..m.train.clone() }
    }

    pub fn dataset_path(&self, cohort: Cohort) -> PathBuf {
        self.output_dir.join(format!("{}.ldsd", cohort.as_str()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum VariantChoice {
    Plain,
    CeDvae,
    CeReg,
}

impl VariantChoice {
    pub fn of(v: &Variant) -> Self {
        match v {
            Variant::Plain => VariantChoice::Plain,
            Variant::CeDvae { .. } => VariantChoice::CeDvae,
            Variant::CeReg { .. } => VariantChoice::CeReg,
        }
    }
}
