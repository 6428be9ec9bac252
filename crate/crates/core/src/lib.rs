//! Multi-objective preference optimization with smooth Tchebysheff
//! scalarization on a toy sequence model.

pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod experiment;
pub mod gp;
pub mod gwg;
pub mod losses;
pub mod numeric;
pub mod optim;
mod parallel;
pub mod policy;
pub mod qmc;
pub mod scalarize;
pub mod stats;
pub mod synth;
pub mod trainer;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use config::{Algorithm, PreferenceVector, RunConfig};
pub use dataset::{RewardDataset, Token, Vocabulary};
pub use error::{Error, Result};
pub use policy::{Context, Gradient, SequencePolicy};
pub use stats::{compute_reward_stats, RewardStats};
