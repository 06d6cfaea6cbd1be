//! Threshold solutions of discounted optimal stopping problems for random
//! walks and Lévy processes with increasing, logconcave rewards.

pub mod bench;
pub mod classify;
pub mod error;
pub mod ext_float;
pub mod levy;
pub mod oracle;
pub mod reward;
pub mod run;
pub mod smoothfit;
pub mod solver;
pub mod stats;
pub mod stochastic;

pub use error::*;
pub use reward::{RewardFunction, RewardSpec};
pub use stats::Estimate;
pub use stochastic::{IncrementLaw, PassageKind};
