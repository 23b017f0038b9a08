use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Teacher outputs recorded by an actor alongside its own behaviour logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherLogits {
    /// Index of the routed teacher.
    pub index: usize,
    /// One logit vector per step, computed on the stored observation.
    pub logits: Vec<Vec<f64>>,
}

/// A fixed-length unroll produced by one actor.
///
/// `observations` has one more entry than the per-step arrays: the last one
/// is the bootstrap observation. When `terminals[t]` is set the episode ended
/// on step `t` and `observations[t + 1]` is the first observation of the
/// next episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub task_index: usize,
    pub actor_id: usize,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Logits of the behaviour policy that sampled `actions`.
    pub behaviour_logits: Vec<Vec<f64>>,
    pub teacher: Option<TeacherLogits>,
    pub terminals: Vec<bool>,
    /// Version of the parameter snapshot the actor used.
    pub actor_param_version: u64,
    /// Returns of episodes that finished inside this unroll.
    pub completed_returns: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Check that all per-step arrays agree in length.
    pub fn validate(&self) -> Result<()> {
        let t = self.actions.len();
        if t == 0 {
            return Err(Error::shape("trajectory has no steps"));
        }
        if self.observations.len() != t + 1 {
            return Err(Error::shape(format!(
                "trajectory has {} observations for {t} steps",
                self.observations.len()
            )));
        }
        if self.rewards.len() != t || self.terminals.len() != t {
            return Err(Error::shape("rewards/terminals length differs from actions"));
        }
        if self.behaviour_logits.len() != t {
            return Err(Error::shape(format!(
                "missing behaviour logits: {} of {t} steps",
                self.behaviour_logits.len()
            )));
        }
        if let Some(teacher) = &self.teacher {
            if teacher.logits.len() != t {
                return Err(Error::shape("teacher logits length differs from actions"));
            }
        }
        Ok(())
    }

    /// Per-step discount: zero where the episode terminated.
    pub fn discounts(&self, gamma: f64) -> Vec<f64> {
        self.terminals
            .iter()
            .map(|&done| if done { 0.0 } else { gamma })
            .collect()
    }
}
