//! File formats, evaluator plumbing and the command-line driver around
//! `evocompress-core`.

pub mod commands;
pub mod config;
pub mod container;
pub mod dataset;
pub mod error;
pub mod external;
pub mod parallel;

pub use error::{AppError, Result};
