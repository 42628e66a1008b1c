//! Core library for a multi-scale attention segmentation network.
//!
//! This crate is self-contained and CPU-only: a small rank-4 tensor type,
//! explicit forward/backward layers, the full network architecture, the
//! composite training loss, evaluation metrics, a synthetic data generator,
//! and a deterministic training loop. Everything is seeded and
//! single-threaded, so repeated runs produce identical results.
//!
//! The companion CLI crate adds file formats (PNG datasets, checkpoints,
//! CSV/JSON reports) on top of this library.

pub mod arch;
pub mod data;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod train;

pub use arch::{ConfigError, MsaUnet3p, NetworkConfig, NetworkOutput, Preset};
pub use tensor::{Scalar, Tensor};
