//! Population based training: exploit better peers, explore hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{PolicyValueNet, RmsProp};
use crate::schedule::HyperParams;

/// Unit of evolution: parameters, optimizer state, hyperparameters and the
/// member's measured performance.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationMember {
    pub id: usize,
    /// Id of the member whose weights this one currently descends from.
    pub lineage: usize,
    pub net: PolicyValueNet,
    pub optimizer: RmsProp,
    pub hypers: HyperParams,
    /// Environment frames consumed by this member's learner.
    pub frames: u64,
    /// Parameter version; bumped on every update or copy.
    pub version: u64,
    /// `(frames, windowed score)` pairs, frames non-decreasing.
    pub scores: Vec<(u64, f64)>,
}

impl PopulationMember {
    pub fn new(id: usize, net: PolicyValueNet, hypers: HyperParams) -> Self {
        let optimizer = RmsProp::new(&net, hypers.learning_rate);
        PopulationMember {
            id,
            lineage: id,
            net,
            optimizer,
            hypers,
            frames: 0,
            version: 0,
            scores: Vec::new(),
        }
    }

    pub fn latest_score(&self) -> Option<f64> {
        self.scores.last().map(|s| s.1)
    }

    pub fn record_score(&mut self, score: f64) {
        self.scores.push((self.frames, score));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PbtConfig {
    /// Relative margin a peer must beat us by before we copy it.
    pub margin: f64,
    /// Per-hyperparameter perturbation probability.
    pub explore_probability: f64,
    pub up_factor: f64,
    pub down_factor: f64,
    pub learning_rate_bounds: (f64, f64),
    pub entropy_cost_bounds: (f64, f64),
    pub distill_bounds: (f64, f64),
    /// Distillation factors pushed below this by a perturbation clip to the
    /// lower bound, so teaching can be switched off entirely.
    pub distill_zero_floor: f64,
}

impl Default for PbtConfig {
    fn default() -> Self {
        PbtConfig {
            margin: 0.10,
            explore_probability: 1.0 / 3.0,
            up_factor: 1.2,
            down_factor: 0.8,
            learning_rate_bounds: (1e-6, 1.0),
            entropy_cost_bounds: (0.0, 0.1),
            distill_bounds: (0.0, 4.0),
            distill_zero_floor: 0.01,
        }
    }
}

/// Copy `peer` into `member` if the peer's latest score beats ours by the
/// configured relative margin. Returns whether a copy happened.
///
/// The copy is all-or-nothing: weights, optimizer state and hyperparameters
/// move together.
pub fn exploit(member: &mut PopulationMember, peer: &PopulationMember, margin: f64) -> bool {
    let (Some(mine), Some(theirs)) = (member.latest_score(), peer.latest_score()) else {
        return false;
    };
    if theirs <= mine + margin * mine.abs() {
        return false;
    }
    member.net = peer.net.clone();
    member.optimizer = peer.optimizer.clone();
    member.hypers = peer.hypers.clone();
    member.lineage = peer.lineage;
    member.version += 1;
    member.scores.push((member.frames, theirs));
    true
}

fn perturb<R: rand::Rng + ?Sized>(
    value: f64,
    bounds: (f64, f64),
    zero_floor: f64,
    cfg: &PbtConfig,
    rng: &mut R,
) -> f64 {
    if rng.random::<f64>() >= cfg.explore_probability {
        return value;
    }
    let up = rng.random::<bool>();
    let v = value * if up { cfg.up_factor } else { cfg.down_factor };
    let v = if !up && v < zero_floor { bounds.0 } else { v };
    v.clamp(bounds.0, bounds.1)
}

/// Independently perturb each hyperparameter and clip to its bounds.
pub fn explore<R: rand::Rng + ?Sized>(
    hypers: &HyperParams,
    rng: &mut R,
    cfg: &PbtConfig,
) -> HyperParams {
    HyperParams {
        learning_rate: perturb(hypers.learning_rate, cfg.learning_rate_bounds, 0.0, cfg, rng),
        entropy_cost: perturb(hypers.entropy_cost, cfg.entropy_cost_bounds, 0.0, cfg, rng),
        distill_global: perturb(
            hypers.distill_global,
            cfg.distill_bounds,
            cfg.distill_zero_floor,
            cfg,
            rng,
        ),
        distill_per_teacher: hypers
            .distill_per_teacher
            .iter()
            .map(|&r| perturb(r, cfg.distill_bounds, cfg.distill_zero_floor, cfg, rng))
            .collect(),
    }
}

/// Starting hyperparameters for member `index` of `size`: the global
/// distillation factor is spaced geometrically from `base` down to
/// `base / spread`, so selection has a range of teaching strengths to pick
/// from rather than waiting for ×1.2/×0.8 steps to find one. `spread = 1`
/// gives every member `base` unchanged.
pub fn spread_distill(base: &HyperParams, index: usize, size: usize, spread: f64) -> HyperParams {
    let mut h = base.clone();
    if size > 1 && spread != 1.0 {
        h.distill_global *= spread.powf(-(index as f64) / (size - 1) as f64);
    }
    h
}

/// One line of the population log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PbtEvent {
    pub round: u64,
    pub member_id: usize,
    /// `"copied-from"` or `"explored"`.
    pub action: String,
    pub source: Option<usize>,
    pub frames: u64,
    pub learning_rate: f64,
    pub entropy_cost: f64,
    pub distill_global: f64,
    pub distill_per_teacher: Vec<f64>,
}

/// Every member is paired with one uniformly chosen other member, exploits
/// it, then explores. Peers are read from the state at the start of the
/// round, so the result does not depend on processing order.
pub fn pbt_round<R: rand::Rng + ?Sized>(
    population: &mut [PopulationMember],
    round: u64,
    rng: &mut R,
    cfg: &PbtConfig,
) -> Result<Vec<PbtEvent>> {
    let n = population.len();
    if n < 2 {
        return Err(Error::config(format!(
            "PBT needs at least 2 members, population has {n}"
        )));
    }
    let before: Vec<PopulationMember> = population.to_vec();
    let mut events = Vec::with_capacity(n);
    for (i, member) in population.iter_mut().enumerate() {
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let copied = exploit(member, &before[j], cfg.margin);
        member.hypers = explore(&member.hypers, rng, cfg);
        member.optimizer.learning_rate = member.hypers.learning_rate;
        events.push(PbtEvent {
            round,
            member_id: member.id,
            action: if copied { "copied-from" } else { "explored" }.into(),
            source: copied.then_some(before[j].id),
            frames: member.frames,
            learning_rate: member.hypers.learning_rate,
            entropy_cost: member.hypers.entropy_cost,
            distill_global: member.hypers.distill_global,
            distill_per_teacher: member.hypers.distill_per_teacher.clone(),
        });
    }
    Ok(events)
}
