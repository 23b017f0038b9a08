//! Kickstarting deep reinforcement learning at desk scale.
//!
//! A student actor-critic is trained with an IMPALA-style actor/learner
//! split on a small grid-world suite, while a cross-entropy term pulls its
//! policy towards one or more frozen teachers. The distillation weight can be
//! constant, decay linearly, or evolve under population based training.

pub mod actor_learner;
pub mod checkpoint;
pub mod config;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod par;
pub mod pbt;
pub mod report;
pub mod rng;
pub mod schedule;
pub mod teachers;
pub mod trajectory;

pub use error::{Error, Result};
pub use nets::{GradientBuffer, NetSpec, PolicyValueNet, RmsProp};
pub use trajectory::Trajectory;
