//! The adaptive-sampling loop: scoring, warm initialization, selection,
//! crossover, mutation and the generation loop tying them together.

mod config;
mod evolve;
mod init;
mod operators;
mod score;
mod threshold;

pub use config::{EngineConfig, InitPolicy};
pub use evolve::{BestSoFar, Generation, IndividualRecord, SearchOutcome, Session};
pub use init::{uniform_init, warm_init};
pub use operators::{crossover, mutate, select, selection_probabilities};
pub use score::{score, ScoreReport};
pub use threshold::{find_threshold_continuous, find_threshold_discrete, find_thresholds, ThresholdVector};

/// Steps per unit interval used by the pruning-threshold search.
pub const THRESHOLD_GRID: u32 = 64;
