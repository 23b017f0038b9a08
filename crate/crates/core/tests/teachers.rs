use kickstart::actor_learner::LearnerSettings;
use kickstart::envs::{self, reset, SuiteConfig, TaskSpec};
use kickstart::schedule::HyperParams;
use kickstart::teachers::{train_expert, TeacherRouter};

fn settings() -> LearnerSettings {
    LearnerSettings {
        deterministic: true,
        window: 20_000,
        metrics_interval: 10_000,
        ..Default::default()
    }
}

fn hypers() -> HyperParams {
    HyperParams {
        learning_rate: 3e-3,
        ..HyperParams::default()
    }
}

#[test]
fn zero_budget_gives_a_valid_untrained_teacher() {
    let suite = vec![TaskSpec::named("tag-3", 5).unwrap()];
    let e = train_expert(&suite, &[8], &hypers(), &settings(), 0, 1, [0; 32]).unwrap();
    assert_eq!(e.teacher.provenance().frames, 0);
    let (_, obs) = reset(&suite[0], 0).unwrap();
    assert!(e.teacher.logits(&obs).unwrap().iter().all(|v| v.is_finite()));
}

#[test]
fn suite_teacher_lists_every_task() {
    let suite = envs::suite(&SuiteConfig {
        grid_size: 5,
        ..SuiteConfig::default()
    })
    .unwrap();
    let e = train_expert(&suite, &[8], &hypers(), &settings(), 2_000, 1, [0; 32]).unwrap();
    assert_eq!(
        e.teacher.trained_tasks(),
        ["sparse-goal", "dense-forage", "tag-1", "tag-3"]
    );
    let router = TeacherRouter::by_trained_tasks(&suite, &[e.teacher]).unwrap();
    assert!(router.routes().all(|(_, i)| i == 0));
}

#[test]
fn dense_forage_expert_ends_near_its_best() {
    let suite = vec![TaskSpec::named("dense-forage", 8).unwrap()];
    let e = train_expert(&suite, &[32], &hypers(), &settings(), 400_000, 4, [0; 32]).unwrap();
    let curve: Vec<f64> = e.records.iter().filter_map(|r| r.mean_return()).collect();
    let best = curve.iter().copied().fold(f64::MIN, f64::max);
    let last = e.final_return().unwrap();
    assert!(last >= 0.8 * best, "final {last} vs best {best}");
    assert!(last > curve[0], "no learning: {curve:?}");
}

#[test]
fn frozen_teacher_is_immutable_under_evaluation() {
    let task = TaskSpec::named("tag-1", 5).unwrap();
    let t = train_expert(&[task.clone()], &[16], &hypers(), &settings(), 1_000, 2, [0; 32])
        .unwrap()
        .teacher;
    let before = t.hash();
    let (_, obs) = reset(&task, 9).unwrap();
    let first = t.logits(&obs).unwrap();
    let mut acc = 0.0;
    for _ in 0..1_000_000 {
        acc += t.logits(&obs).unwrap()[0];
    }
    assert!(acc.is_finite());
    assert_eq!(t.logits(&obs).unwrap(), first);
    assert_eq!(t.hash(), before);
}

#[test]
fn missing_teacher_for_a_task_is_rejected() {
    let suite = envs::suite(&SuiteConfig {
        tasks: vec!["tag-1".into(), "tag-3".into()],
        grid_size: 5,
    })
    .unwrap();
    let only_tag1 = train_expert(&suite[..1], &[8], &hypers(), &settings(), 0, 1, [0; 32])
        .unwrap()
        .teacher;
    let err = TeacherRouter::by_trained_tasks(&suite, &[only_tag1]).unwrap_err();
    assert!(err.is_config(), "{err}");
    assert!(err.to_string().contains("tag-3"));
}
