use serde::{Deserialize, Serialize};

use super::{KERNEL, STRIDE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv,
    Tconv,
    Dense,
    Activation,
    StochasticGaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// Zero padding such that stride 2 exactly halves (or doubles) extents.
    Same,
    None,
}

/// Description of one layer in an architecture stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            in_channels,
            out_channels,
            kernel: KERNEL,
            stride: STRIDE,
            padding: Padding::Same,
        }
    }

    pub fn tconv(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Tconv,
            ..Self::conv(in_channels, out_channels)
        }
    }

    pub fn dense(in_features: usize, out_features: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Dense,
            in_channels: in_features,
            out_channels: out_features,
            kernel: 1,
            stride: 1,
            padding: Padding::None,
        }
    }

    pub fn stochastic_gaussian(in_features: usize, latent_dim: usize) -> Self {
        LayerSpec {
            kind: LayerKind::StochasticGaussian,
            ..Self::dense(in_features, latent_dim)
        }
    }
}
