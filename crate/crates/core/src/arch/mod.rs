//! Network architecture: configuration, blocks, and the assembled model.

pub mod blocks;
pub mod config;
pub mod model;

pub use blocks::{Bottleneck, Cafm, DilatedResBlock, MEncoderBlock, MsdBottleneck, SkipModule};
pub use config::{ConfigError, NetworkConfig, Preset};
pub use model::{MsaUnet3p, NetworkOutput};
