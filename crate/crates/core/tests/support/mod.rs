//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::io::Write as _;
use std::sync::{Mutex, MutexGuard};

use kickstart::envs::NUM_ACTIONS;
use kickstart::rng::{rng_from_seed, Rng};
use kickstart::trajectory::TeacherLogits;
use kickstart::Trajectory;
use rand::Rng as _;

/// Long-running training tests take this so their wall-clock budgets are
/// measured without other heavy tests competing for the CPU.
pub fn heavy() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// One status line per criterion, written past the test harness' output
/// capture so it shows up in plain `cargo test` logs.
pub fn verdict(criterion: u32, name: &str, ok: bool, detail: &str) {
    let status = if ok { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "acceptance criterion {criterion:>2} [{status}] {name}: {detail}");
}

pub fn rng(seed: u64) -> Rng {
    rng_from_seed(seed)
}

pub fn logits(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0)).collect()
}

/// Observation with roughly a third of its entries exactly zero.
pub fn observation(rng: &mut Rng, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < 0.35 {
                0.0
            } else {
                rng.random::<f64>() * 2.0 - 1.0
            }
        })
        .collect()
}

/// Synthetic trajectory with random observations, behaviour logits and
/// (optionally) teacher logits for teacher 0.
pub fn random_trajectory(
    rng: &mut Rng,
    obs_len: usize,
    num_actions: usize,
    t_len: usize,
    with_teacher: bool,
) -> Trajectory {
    Trajectory {
        task_id: "synthetic".into(),
        task_index: 0,
        actor_id: 0,
        observations: (0..=t_len).map(|_| observation(rng, obs_len)).collect(),
        actions: (0..t_len).map(|_| rng.random_range(0..num_actions)).collect(),
        rewards: (0..t_len).map(|_| rng.random::<f64>() * 2.0 - 0.5).collect(),
        behaviour_logits: (0..t_len).map(|_| logits(rng, num_actions, 2.0)).collect(),
        teacher: with_teacher.then(|| TeacherLogits {
            index: 0,
            logits: (0..t_len).map(|_| logits(rng, num_actions, 3.0)).collect(),
        }),
        terminals: (0..t_len).map(|_| rng.random::<f64>() < 0.2).collect(),
        actor_param_version: 0,
        completed_returns: Vec::new(),
    }
}

pub fn grid_trajectory(rng: &mut Rng, obs_len: usize, t_len: usize) -> Trajectory {
    random_trajectory(rng, obs_len, NUM_ACTIONS, t_len, true)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `||a - b|| / max(||a||, ||b||)`, 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
