//! Consensus reward learning from mixed-quality demonstrations.
//!
//! The crate learns a per-state reward with tabular maximum-entropy IRL,
//! scores every demonstration against the greedy policy of that reward,
//! prunes the least consistent ones and retrains on the rest. A synthetic
//! expert-population generator supplies ground truth for validation and
//! [`analyze`] produces the cluster, decile and demographic reports.

pub mod analyze;
pub mod cli;
pub mod discretize;
mod error;
pub mod ingest;
pub mod io;
pub mod maxent;
pub mod mdp;
pub mod pipeline;
pub mod prune;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
pub use maxent::{IrlConfig, Optimizer, RewardInit};
pub use mdp::{DeterministicPolicy, RewardModel, TransitionModel};
pub use pipeline::{run_two_stage, TwoStageResult};
pub use prune::{PruneConfig, PruneMethod, TrajectoryScore};
pub use trajectory::{Step, Trajectory, TrajectorySet};

/// Seed offsets applied to the single global seed.
pub mod seeds {
    pub const WORLD: u64 = 0;
    pub const POPULATION: u64 = 1;
    pub const CLUSTER: u64 = 10;
    pub const IRL: u64 = 20;
    pub const PRUNE: u64 = 30;
    pub const ANALYZE: u64 = 40;
}
