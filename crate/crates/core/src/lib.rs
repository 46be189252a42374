//! Adaptive sampling of per-layer compression hyperparameters.
//!
//! A layer-wise network description ([`model::ModelSpec`]) is translated into
//! a fixed-length vector of genes ([`genome::Genome`]): pruning ratios, SVD
//! rank codes and Tucker-2 rank codes. A genetic search ([`engine`]) evolves a
//! population of such vectors towards a high FLOPs-reduction per accuracy
//! penalty, while keeping accuracy above a configured floor.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, subprocess
//! evaluators and the CLI live in the `evocompress` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod compress;
pub mod engine;
pub mod error;
pub mod evaluator;
pub mod genome;
pub mod linalg;
pub mod model;

pub use error::{Error, Result};
