use serde::{Deserialize, Serialize};

use crate::numerics::LayerSpec;
use crate::{Error, Result};

/// Shape of the decoder's variance output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceMode {
    /// One learned variance shared by every pixel.
    Scalar,
    /// A variance map predicted from the last decoder features.
    PerPixel,
}

/// Mean clip of the healthy-cohort model.
pub const HEALTHY_CLIP: f64 = 0.01;
/// Mean clip of the unlabelled-cohort model.
pub const UNLABELLED_CLIP: f64 = 0.001;
pub const VARIANCE_FLOOR: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub height: usize,
    pub width: usize,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub latent_dim: usize,
    pub covariance: CovarianceMode,
    pub clip: f64,
    pub variance_floor: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            height: 128,
            width: 128,
            encoder_channels: vec![64, 128, 256, 512],
            decoder_channels: vec![512, 256, 128, 64],
            latent_dim: 128,
            covariance: CovarianceMode::PerPixel,
            clip: UNLABELLED_CLIP,
            variance_floor: VARIANCE_FLOOR,
        }
    }
}

impl Architecture {
    /// Healthy-cohort model: scalar variance, mean clip 0.01.
    pub fn healthy(extent: usize) -> Self {
        Architecture {
            height: extent,
            width: extent,
            covariance: CovarianceMode::Scalar,
            clip: HEALTHY_CLIP,
            ..Self::default()
        }
    }

    /// Unlabelled-cohort model: per-pixel variance, mean clip 0.001.
    pub fn unlabelled(extent: usize) -> Self {
        Architecture {
            height: extent,
            width: extent,
            covariance: CovarianceMode::PerPixel,
            clip: UNLABELLED_CLIP,
            ..Self::default()
        }
    }

    /// Replaces both channel lists, the decoder mirroring the encoder.
    pub fn with_channels(mut self, encoder: &[usize]) -> Self {
        self.encoder_channels = encoder.to_vec();
        self.decoder_channels = encoder.iter().rev().copied().collect();
        self
    }

    pub fn with_latent_dim(mut self, latent_dim: usize) -> Self {
        self.latent_dim = latent_dim;
        self
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn depth(&self) -> usize {
        self.encoder_channels.len()
    }

    /// `(channels, height, width)` of the innermost feature map.
    pub fn bottleneck(&self) -> (usize, usize, usize) {
        let d = self.depth();
        (
            *self.encoder_channels.last().unwrap_or(&0),
            self.height >> d,
            self.width >> d,
        )
    }

    pub fn flat_features(&self) -> usize {
        let (c, h, w) = self.bottleneck();
        c * h * w
    }

    /// Input extent of the decoder's dense layer output, `[C, h, w]`.
    pub fn decoder_seed_shape(&self) -> [usize; 3] {
        let (_, h, w) = self.bottleneck();
        [self.decoder_channels[0], h, w]
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.depth();
        if d == 0 {
            return Err(Error::config("encoder_channels", "at least one layer required"));
        }
        if self.decoder_channels.len() != d {
            return Err(Error::config(
                "decoder_channels",
                format!("must have {d} entries to mirror the encoder"),
            ));
        }
        if self.encoder_channels.iter().chain(&self.decoder_channels).any(|&c| c == 0) {
            return Err(Error::config("channels", "channel counts must be positive"));
        }
        let unit = 1usize << d;
        if self.height == 0 || self.width == 0 || self.height % unit != 0 || self.width % unit != 0 {
            return Err(Error::config(
                "height/width",
                format!("{}x{} not divisible by 2^{d}", self.height, self.width),
            ));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("latent_dim", "must be positive"));
        }
        if !(self.clip > 0.0 && self.clip < 0.5) {
            return Err(Error::config("clip", "must lie in (0, 0.5)"));
        }
        if !(self.variance_floor > 0.0 && self.variance_floor.is_finite()) {
            return Err(Error::config("variance_floor", "must be positive"));
        }
        Ok(())
    }

    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut c_in = 1;
        for &c in &self.encoder_channels {
            specs.push(LayerSpec::conv(c_in, c));
            c_in = c;
        }
        specs.push(LayerSpec::stochastic_gaussian(self.flat_features(), self.latent_dim));
        specs
    }

    pub fn decoder_specs(&self) -> Vec<LayerSpec> {
        let seed = self.decoder_seed_shape();
        let mut specs = vec![LayerSpec::dense(self.latent_dim, seed.iter().product())];
        let mut c_in = seed[0];
        for &c in &self.decoder_channels {
            specs.push(LayerSpec::tconv(c_in, c));
            c_in = c;
        }
        specs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror() {
        let a = Architecture::default();
        a.validate().unwrap();
        assert_eq!(a.bottleneck(), (512, 8, 8));
        let enc: Vec<_> = a.encoder_specs().iter().map(|s| s.out_channels).collect();
        assert_eq!(enc, vec![64, 128, 256, 512, 128]);
        let dec: Vec<_> = a.decoder_specs().iter().skip(1).map(|s| s.out_channels).collect();
        assert_eq!(dec, vec![512, 256, 128, 64]);
        assert!(a.encoder_specs()[..4].iter().all(|s| s.kernel == 4 && s.stride == 2));
    }

    #[test]
    fn rejects_bad_geometry() {
        let a = Architecture { height: 36, ..Architecture::default() };
        assert!(a.validate().is_err());
        let b = Architecture { decoder_channels: vec![8], ..Architecture::default() };
        assert!(b.validate().is_err());
        let c = Architecture::healthy(32).with_channels(&[4, 8, 16, 32, 64, 128]);
        assert!(c.validate().is_err());
    }
}
