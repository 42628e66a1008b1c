//! Network hyperparameters and validation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Named configuration families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-size network; parameter count in the published 6.0M-9.0M band.
    Paper,
    /// Small network for fast local runs and tests.
    Desk,
}

/// Hyperparameters of the segmentation network.
///
/// Encoder level `l` has `base_channels * 2^l` channels; spatial resolution
/// halves per level, so inputs must be divisible by `2^(depth-1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of encoder levels (>= 3).
    pub depth: usize,
    /// Channel width at the first encoder level.
    pub base_channels: usize,
    /// Uniform per-source channel width used in full-scale decoder fusion.
    pub decoder_channels: usize,
    /// Width of the per-pixel embedding head output.
    pub embedding_dim: usize,
    /// Squeeze-and-excitation bottleneck ratio.
    pub se_reduction: usize,
    /// Channels of the network input (grayscale = 1).
    pub input_channels: usize,
    /// Replace the dilated bottleneck with a plain conv block when false.
    pub use_msd: bool,
    /// Route skips through the attention fusion module; identity when false.
    pub use_cafm: bool,
    /// Which family this configuration came from.
    pub preset: Preset,
}

impl NetworkConfig {
    /// Full-size configuration.
    pub fn paper() -> Self {
        Self {
            depth: 5,
            base_channels: 11,
            decoder_channels: 28,
            embedding_dim: 64,
            se_reduction: 11,
            input_channels: 1,
            use_msd: true,
            use_cafm: true,
            preset: Preset::Paper,
        }
    }

    /// Small configuration for fast experiments and tests.
    pub fn desk() -> Self {
        Self {
            depth: 3,
            base_channels: 8,
            decoder_channels: 16,
            embedding_dim: 16,
            se_reduction: 4,
            input_channels: 1,
            use_msd: true,
            use_cafm: true,
            preset: Preset::Desk,
        }
    }

    /// Channel width of each encoder level.
    pub fn encoder_channels(&self) -> Vec<usize> {
        (0..self.depth).map(|l| self.base_channels << l).collect()
    }

    /// Spatial downscaling factor between the input and the deepest level.
    pub fn scale_factor(&self) -> usize {
        1 << (self.depth - 1)
    }

    /// Channel width entering the skip path at encoder level `l`.
    pub fn skip_channels(&self, level: usize) -> usize {
        if self.use_cafm {
            self.decoder_channels
        } else {
            self.base_channels << level
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.depth < 3 {
            return Err(ConfigError::DepthTooSmall { depth: self.depth });
        }
        for (name, v) in [
            ("base_channels", self.base_channels),
            ("decoder_channels", self.decoder_channels),
            ("embedding_dim", self.embedding_dim),
            ("se_reduction", self.se_reduction),
            ("input_channels", self.input_channels),
        ] {
            if v == 0 {
                return Err(ConfigError::ZeroField { field: name });
            }
        }
        for c in self.encoder_channels() {
            // SE acts on the 3-way encoder concat and the 4-way fusion concat.
            for width in [3 * c, 4 * c] {
                if width % self.se_reduction != 0 {
                    return Err(ConfigError::SeReduction {
                        reduction: self.se_reduction,
                        channels: width,
                    });
                }
            }
        }
        Ok(())
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::paper()
    }
}

/// Rejected configurations or inputs.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("depth must be at least 3, got {depth}")]
    DepthTooSmall { depth: usize },
    #[error("{field} must be positive")]
    ZeroField { field: &'static str },
    #[error("se_reduction {reduction} must divide channel width {channels}")]
    SeReduction { reduction: usize, channels: usize },
    #[error("input spatial size {h}x{w} must be divisible by {factor}")]
    IndivisibleInput { h: usize, w: usize, factor: usize },
    #[error("input {h}x{w} too small for depth {depth}: the deepest level must be at least 2x2")]
    InputTooSmall { h: usize, w: usize, depth: usize },
    #[error("input has {got} channels, expected {expected}")]
    InputChannels { got: usize, expected: usize },
}
