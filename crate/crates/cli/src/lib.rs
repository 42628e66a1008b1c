//! Library half of the command-line tool: dataset PNG I/O, the checkpoint
//! container, report rendering (CSV/SVG), and qualitative overlay panels.
//! The binary in `main.rs` wires these into subcommands.

pub mod checkpoint;
pub mod dataset;
pub mod qualitative;
pub mod reports;

use thiserror::Error;

/// Process-level failure classes mapped to exit codes: usage errors exit
/// with 1, runtime failures with 2.
#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Runtime(_) => 2,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        AppError::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        AppError::Runtime(msg.into())
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Runtime(format!("i/o error: {e}"))
    }
}

impl From<image::ImageError> for AppError {
    fn from(e: image::ImageError) -> Self {
        AppError::Runtime(format!("image error: {e}"))
    }
}

impl From<csv::Error> for AppError {
    fn from(e: csv::Error) -> Self {
        AppError::Runtime(format!("csv error: {e}"))
    }
}

impl From<msa_unet3p::train::TrainError> for AppError {
    fn from(e: msa_unet3p::train::TrainError) -> Self {
        AppError::Runtime(format!("training failed: {e}"))
    }
}

impl From<msa_unet3p::data::DataError> for AppError {
    fn from(e: msa_unet3p::data::DataError) -> Self {
        AppError::Runtime(format!("data error: {e}"))
    }
}

impl From<msa_unet3p::arch::ConfigError> for AppError {
    fn from(e: msa_unet3p::arch::ConfigError) -> Self {
        AppError::Usage(format!("invalid network config: {e}"))
    }
}

impl From<msa_unet3p::metrics::MetricsError> for AppError {
    fn from(e: msa_unet3p::metrics::MetricsError) -> Self {
        AppError::Runtime(format!("metrics error: {e}"))
    }
}
