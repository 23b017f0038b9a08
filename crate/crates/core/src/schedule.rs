//! Distillation-weight schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters that population based training may evolve.
///
/// The effective distillation weight for teacher `i` under a PBT schedule is
/// `distill_global * distill_per_teacher[i]`, so a single multiplier can
/// strengthen or weaken every teacher at once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub entropy_cost: f64,
    pub distill_global: f64,
    pub distill_per_teacher: Vec<f64>,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            learning_rate: 1e-3,
            entropy_cost: 0.01,
            distill_global: 1.0,
            distill_per_teacher: vec![1.0],
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(self.entropy_cost >= 0.0) || !self.entropy_cost.is_finite() {
            return Err(Error::config("entropy_cost must be non-negative"));
        }
        if !(self.distill_global >= 0.0) || !self.distill_global.is_finite() {
            return Err(Error::config("distill_global must be non-negative"));
        }
        if self
            .distill_per_teacher
            .iter()
            .any(|r| !(*r >= 0.0) || !r.is_finite())
        {
            return Err(Error::config("distill_per_teacher entries must be non-negative"));
        }
        Ok(())
    }

    pub fn effective_lambda(&self, teacher: usize) -> Option<f64> {
        self.distill_per_teacher
            .get(teacher)
            .map(|rho| self.distill_global * rho)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleKind {
    Constant { value: f64 },
    /// Decays from `start_value` at frame 0 to zero at `end_frame`, then
    /// stays at zero.
    Linear { start_value: f64, end_frame: u64 },
    /// Read the weight from the (evolving) hyperparameters.
    Pbt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    /// Look up a separate weight per teacher instead of one shared weight.
    pub per_teacher: bool,
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Schedule {
            kind: ScheduleKind::Constant { value },
            per_teacher: false,
        }
    }

    pub fn linear(start_value: f64, end_frame: u64) -> Self {
        Schedule {
            kind: ScheduleKind::Linear {
                start_value,
                end_frame,
            },
            per_teacher: false,
        }
    }

    pub fn pbt(per_teacher: bool) -> Self {
        Schedule {
            kind: ScheduleKind::Pbt,
            per_teacher,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ScheduleKind::Constant { value } if !(value >= 0.0) || !value.is_finite() => {
                Err(Error::config("constant schedule value must be >= 0"))
            }
            ScheduleKind::Linear { start_value, .. }
                if !(start_value >= 0.0) || !start_value.is_finite() =>
            {
                Err(Error::config("linear schedule start value must be >= 0"))
            }
            ScheduleKind::Linear { end_frame: 0, .. } => {
                Err(Error::config("linear schedule end_frame must be > 0"))
            }
            _ => Ok(()),
        }
    }
}

/// Distillation weight for `teacher` after `frames` environment frames.
pub fn lambda_at(
    schedule: &Schedule,
    frames: u64,
    hypers: &HyperParams,
    teacher: usize,
) -> Result<f64> {
    if schedule.per_teacher && teacher >= hypers.distill_per_teacher.len() {
        return Err(Error::config(format!(
            "teacher index {teacher} has no per-teacher weight ({} configured)",
            hypers.distill_per_teacher.len()
        )));
    }
    Ok(match schedule.kind {
        ScheduleKind::Constant { value } => value,
        ScheduleKind::Linear {
            start_value,
            end_frame,
        } => {
            if frames >= end_frame {
                0.0
            } else {
                start_value * (1.0 - frames as f64 / end_frame as f64).max(0.0)
            }
        }
        ScheduleKind::Pbt => {
            if schedule.per_teacher {
                hypers.distill_global * hypers.distill_per_teacher[teacher]
            } else {
                hypers.distill_global
            }
        }
    })
}
