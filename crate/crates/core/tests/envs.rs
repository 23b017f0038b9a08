use std::collections::HashMap;

use kickstart::actor_learner::random_policy_return;
use kickstart::envs::{reset, TaskSpec};

/// Upper critical value of chi-squared with `k` degrees of freedom at
/// standard-normal quantile `z` (Wilson-Hilferty).
fn chi2_critical(k: f64, z: f64) -> f64 {
    let a = 2.0 / (9.0 * k);
    k * (1.0 - a + z * a.sqrt()).powi(3)
}

#[test]
fn goal_positions_are_uniform_over_free_cells() {
    let task = TaskSpec::named("sparse-goal", 8).unwrap();
    let free = 8 * 8 - task.walls.len();
    let n = 10_000;
    let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
    for seed in 0..n {
        let (state, _) = reset(&task, seed).unwrap();
        let goal = state.objects[0];
        assert!(!task.walls.contains(&goal));
        assert_ne!(goal, state.agent);
        *counts.entry(goal).or_default() += 1;
    }
    assert_eq!(counts.len(), free, "every free cell should host the goal at least once");
    let expected = n as f64 / free as f64;
    let chi2: f64 = counts
        .values()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // p = 0.001
    let critical = chi2_critical((free - 1) as f64, 3.09);
    assert!(chi2 < critical, "chi2 {chi2:.1} >= {critical:.1}");
}

#[test]
fn random_policy_rarely_solves_large_sparse_goal() {
    let mut task = TaskSpec::named("sparse-goal", 12).unwrap();
    task.episode_limit = 100;
    let r = random_policy_return(&task, 1000, 1).unwrap();
    assert!(r < 0.5, "random return {r}");
}

#[test]
fn random_policy_forages_something() {
    let task = TaskSpec::named("dense-forage", 8).unwrap();
    assert!(random_policy_return(&task, 1000, 1).unwrap() > 0.0);
}

#[test]
fn episodes_respect_limits_under_random_play() {
    for id in ["sparse-goal", "dense-forage", "tag-1", "tag-3"] {
        let task = TaskSpec::named(id, 8).unwrap();
        let (mut s, obs) = reset(&task, 3).unwrap();
        assert_eq!(obs.len(), task.observation_len());
        let mut steps = 0;
        loop {
            let r = s.step(steps % 5).unwrap();
            steps += 1;
            assert!(r.reward >= 0.0 && r.reward <= task.max_step_reward());
            if r.terminal {
                break;
            }
        }
        assert!(steps <= task.episode_limit);
    }
}
