//! Training fixtures for the behavioural acceptance criteria. Everything
//! runs in deterministic mode so results are reproducible run to run.

pub mod multi;
pub mod schedules;
pub mod speedup;

use kickstart::actor_learner::{evaluate, run_member, CollectObserver, LearnerSettings, TrainContext};
use kickstart::envs::{self, SuiteConfig, TaskSpec, NUM_ACTIONS};
use kickstart::experiment::{train_population, PopulationSettings};
use kickstart::metrics::{top_k_stream, MetricRecord};
use kickstart::pbt::{spread_distill, PbtConfig, PopulationMember};
use kickstart::report::TOP_K;
use kickstart::rng::substream;
use kickstart::schedule::{HyperParams, Schedule};
use kickstart::teachers::{train_expert, Teacher, TeacherRouter, TeacherSet};
use kickstart::{NetSpec, PolicyValueNet};

pub const LEARNING_RATE: f64 = 3e-3;
pub const ENTROPY_COST: f64 = 0.01;
pub const STUDENT_HIDDEN: usize = 64;
pub const WINDOW: u64 = 20_000;
pub const METRICS_INTERVAL: u64 = 10_000;

pub fn suite(tasks: &[&str]) -> Vec<TaskSpec> {
    envs::suite(&SuiteConfig {
        tasks: tasks.iter().map(|s| s.to_string()).collect(),
        grid_size: envs::DEFAULT_GRID,
    })
    .unwrap()
}

pub fn settings() -> LearnerSettings {
    LearnerSettings {
        deterministic: true,
        window: WINDOW,
        metrics_interval: METRICS_INTERVAL,
        ..LearnerSettings::default()
    }
}

pub fn hypers(num_teachers: usize) -> HyperParams {
    HyperParams {
        learning_rate: LEARNING_RATE,
        entropy_cost: ENTROPY_COST,
        distill_global: 1.0,
        distill_per_teacher: vec![1.0; num_teachers.max(1)],
    }
}

pub fn expert(tasks: &[TaskSpec], hidden: usize, frames: u64, seed: u64) -> Teacher {
    train_expert(tasks, &[hidden], &hypers(1), &settings(), frames, seed, [0; 32])
        .unwrap()
        .teacher
}

/// Mean sampled-policy return of a frozen teacher over many episodes.
pub fn teacher_return(teacher: &Teacher, task: &TaskSpec) -> f64 {
    evaluate(teacher.net(), task, 500, 12_345).unwrap()
}

pub struct Student<'a> {
    pub suite: &'a [TaskSpec],
    pub teachers: Option<TeacherSet>,
    pub schedule: Schedule,
    pub rl_enabled: bool,
}

impl Student<'_> {
    pub fn scratch(suite: &[TaskSpec]) -> Student<'_> {
        Student {
            suite,
            teachers: None,
            schedule: Schedule::constant(0.0),
            rl_enabled: true,
        }
    }

    pub fn single<'a>(suite: &'a [TaskSpec], teacher: &Teacher, schedule: Schedule) -> Student<'a> {
        Student {
            suite,
            teachers: Some(
                TeacherSet::new(vec![teacher.clone()], TeacherRouter::single(suite)).unwrap(),
            ),
            schedule,
            rl_enabled: true,
        }
    }

    pub fn context(&self, seed: u64) -> TrainContext {
        TrainContext {
            suite: self.suite.to_vec(),
            teachers: self.teachers.clone(),
            schedule: self.schedule.clone(),
            settings: LearnerSettings {
                rl_enabled: self.rl_enabled,
                ..settings()
            },
            refs: None,
            seed,
        }
    }

    pub fn member(&self, id: usize, seed: u64) -> PopulationMember {
        let spec = NetSpec::new(self.suite[0].observation_len(), &[STUDENT_HIDDEN], NUM_ACTIONS);
        let k = self.teachers.as_ref().map_or(1, |t| t.teachers.len());
        let net = PolicyValueNet::init(&spec, substream(seed, "init", id as u64)).unwrap();
        PopulationMember::new(id, net, hypers(k))
    }

    /// One learner, `frames` frames. Returns its metric records.
    pub fn train(&self, frames: u64, seed: u64) -> Vec<MetricRecord> {
        let ctx = self.context(seed);
        let mut m = self.member(0, seed);
        let mut obs = CollectObserver::default();
        run_member(&ctx, &mut m, frames, &mut obs).unwrap();
        obs.records
    }

    /// A population evolved by PBT every `interval` frames, starting
    /// distillation factors spread by `spread`. Returns all members' records.
    pub fn train_population(
        &self,
        size: usize,
        interval: u64,
        spread: f64,
        frames: u64,
        seed: u64,
    ) -> Vec<MetricRecord> {
        let ctx = self.context(seed);
        let mut members: Vec<_> = (0..size)
            .map(|i| {
                let mut m = self.member(i, seed);
                m.hypers = spread_distill(&m.hypers, i, size, spread);
                m
            })
            .collect();
        let mut records = Vec::new();
        train_population(
            &ctx,
            &mut members,
            &PopulationSettings {
                frames,
                pbt_interval: interval,
                pbt: PbtConfig::default(),
                checkpoint_dir: None,
            },
            |seg| {
                records.extend_from_slice(seg.records);
                Ok(())
            },
        )
        .unwrap();
        records
    }
}

/// `(frames, mean windowed return)` for one learner.
pub fn curve(records: &[MetricRecord]) -> Vec<(u64, f64)> {
    records
        .iter()
        .filter_map(|r| r.mean_return().map(|m| (r.frames, m)))
        .collect()
}

pub fn final_return(records: &[MetricRecord]) -> f64 {
    curve(records).last().expect("at least one record").1
}

/// Final mean of the best `TOP_K` members.
pub fn final_top_k(records: &[MetricRecord]) -> f64 {
    top_k_stream(records, TOP_K, |r| r.mean_return())
        .last()
        .expect("at least one record")
        .1
}
