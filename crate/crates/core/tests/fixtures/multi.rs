//! Multi-task student on tag-1 + tag-3 with one expert per task, against the
//! same student trained from scratch.

use std::time::{Duration, Instant};

use kickstart::actor_learner::{evaluate, random_policy_return, run_member, CollectObserver};
use kickstart::envs::{self, SuiteConfig};
use kickstart::schedule::Schedule;
use kickstart::teachers::{TeacherRouter, TeacherSet};

use super::{expert, Student};
use crate::support::{heavy, median, verdict};

const GRID: usize = 12;
const EXPERT_FRAMES: u64 = 3_000_000;
const STUDENT_FRAMES: u64 = 300_000;
const LAMBDA: f64 = 2.0;
const SEEDS: u64 = 5;
const EPISODES: usize = 500;

pub fn run() {
    let _g = heavy();
    let start = Instant::now();
    let tasks = envs::suite(&SuiteConfig {
        tasks: vec!["tag-1".into(), "tag-3".into()],
        grid_size: GRID,
    })
    .unwrap();
    let experts: Vec<_> = tasks
        .iter()
        .map(|t| expert(std::slice::from_ref(t), 64, EXPERT_FRAMES, 7))
        .collect();

    // Reference and student are scored the same way: sampled-policy returns
    // over fresh evaluation episodes.
    let tag1 = &tasks[0];
    let random = random_policy_return(tag1, 1000, 3).unwrap();
    let reference = evaluate(experts[0].net(), tag1, EPISODES, 12_345).unwrap();
    let normalised = |r: f64| 100.0 * (r - random) / (reference - random);

    let kick = Student {
        teachers: Some(
            TeacherSet::new(
                experts.clone(),
                TeacherRouter::by_trained_tasks(&tasks, &experts).unwrap(),
            )
            .unwrap(),
        ),
        ..Student::single(&tasks, &experts[0], Schedule::constant(LAMBDA))
    };
    let scratch = Student::scratch(&tasks);
    let score = |s: &Student, seed: u64| -> (f64, f64) {
        let ctx = s.context(seed);
        let mut m = s.member(0, seed);
        let mut obs = CollectObserver::default();
        run_member(&ctx, &mut m, STUDENT_FRAMES, &mut obs).unwrap();
        let windowed = obs.records.last().and_then(|r| r.task_return("tag-1")).unwrap_or(random);
        let eval = evaluate(&m.net, tag1, EPISODES, 54_321).unwrap();
        (normalised(eval), normalised(windowed))
    };
    let (mut k, mut kw, mut s, mut sw) = (vec![], vec![], vec![], vec![]);
    for seed in 0..SEEDS {
        let (e, w) = score(&scratch, seed);
        s.push(e);
        sw.push(w);
        let (e, w) = score(&kick, seed);
        k.push(e);
        kw.push(w);
    }
    let (ms, mk) = (median(&s), median(&k));
    let elapsed = start.elapsed();
    let ok = ms < 10.0 && mk >= 50.0 && elapsed <= Duration::from_secs(20 * 60);
    let pct = |v: &[f64]| v.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join(", ");
    verdict(
        9,
        "multi-teacher transfer",
        ok,
        &format!(
            "tag-1 % of reference (expert {reference:.3}, random {random:.3}): scratch median \
             {ms:.1} [{}], kickstarted median {mk:.1} [{}]; windowed scratch [{}], kickstarted [{}]; {:.0}s",
            pct(&s),
            pct(&k),
            pct(&sw),
            pct(&kw),
            elapsed.as_secs_f64()
        ),
    );
    assert!(ms < 10.0, "scratch median {ms}% of reference");
    assert!(mk >= 50.0, "kickstarted median {mk}% of reference");
    assert!(elapsed <= Duration::from_secs(20 * 60), "took {elapsed:?}");
}
