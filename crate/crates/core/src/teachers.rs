//! Frozen teacher policies and task routing.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::actor_learner::{self, CollectObserver, LearnerSettings, TrainContext};
use crate::checkpoint::{self, Reader, Writer};
use crate::envs::TaskSpec;
use crate::error::{Error, Result};
use crate::metrics::MetricRecord;
use crate::nets::{NetSpec, PolicyValueNet};
use crate::pbt::PopulationMember;
use crate::schedule::{HyperParams, Schedule};

pub const TEACHER_MAGIC: &[u8; 4] = b"KSTP";
pub const TEACHER_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub trained_tasks: Vec<String>,
    pub frames: u64,
    pub config_hash: [u8; 32],
}

/// A frozen policy. The network is only reachable through `&self`, so a
/// teacher cannot change after it is built.
#[derive(Clone, Debug, PartialEq)]
pub struct Teacher {
    net: PolicyValueNet,
    hypers: HyperParams,
    provenance: Provenance,
}

impl Teacher {
    pub fn freeze(net: PolicyValueNet, hypers: HyperParams, provenance: Provenance) -> Result<Self> {
        if provenance.trained_tasks.is_empty() {
            return Err(Error::config("teacher must list at least one trained task"));
        }
        Ok(Teacher {
            net,
            hypers,
            provenance,
        })
    }

    pub fn net(&self) -> &PolicyValueNet {
        &self.net
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn trained_tasks(&self) -> &[String] {
        &self.provenance.trained_tasks
    }

    /// Teacher policy logits for one observation.
    pub fn logits(&self, observation: &[f64]) -> Result<Vec<f64>> {
        Ok(self.net.forward(observation)?.0)
    }

    /// SHA-256 of the serialised teacher file.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }

    /// Provenance header followed by an embedded network checkpoint.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.bytes(TEACHER_MAGIC);
        w.u32(TEACHER_FORMAT_VERSION);
        w.u32(self.provenance.trained_tasks.len() as u32);
        for t in &self.provenance.trained_tasks {
            w.u32(t.len() as u32);
            w.bytes(t.as_bytes());
        }
        w.u64(self.provenance.frames);
        w.bytes(&self.provenance.config_hash);
        let ckpt = checkpoint::encode(&self.net, &self.hypers);
        w.u64(ckpt.len() as u64);
        w.bytes(&ckpt);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != TEACHER_MAGIC {
            return Err("bad teacher magic".into());
        }
        let version = r.u32()?;
        if version != TEACHER_FORMAT_VERSION {
            return Err(format!("unsupported teacher format version {version}"));
        }
        let n = r.u32()? as usize;
        let mut trained_tasks = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let len = r.u32()? as usize;
            let s = std::str::from_utf8(r.take(len)?).map_err(|e| e.to_string())?;
            trained_tasks.push(s.to_string());
        }
        let frames = r.u64()?;
        let config_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let len = r.u64()? as usize;
        let (net, hypers) = checkpoint::decode(r.take(len)?)?;
        r.finish()?;
        Teacher::freeze(
            net,
            hypers,
            Provenance {
                trained_tasks,
                frames,
                config_hash,
            },
        )
        .map_err(|e| e.to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Teacher::from_bytes(&bytes).map_err(|m| Error::format(path, m))
    }
}

/// Maps each task id to the index of the teacher that supervises it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TeacherRouter {
    routes: BTreeMap<String, usize>,
}

impl TeacherRouter {
    /// Every task goes to teacher 0.
    pub fn single(suite: &[TaskSpec]) -> Self {
        TeacherRouter {
            routes: suite.iter().map(|t| (t.task_id.clone(), 0)).collect(),
        }
    }

    /// Explicit routing. Fails unless every suite task maps to exactly one
    /// existing teacher.
    pub fn from_routes(
        routes: &[(String, usize)],
        suite: &[TaskSpec],
        num_teachers: usize,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (task, idx) in routes {
            if *idx >= num_teachers {
                return Err(Error::config(format!(
                    "task {task} routed to teacher {idx}, only {num_teachers} loaded"
                )));
            }
            if !suite.iter().any(|t| &t.task_id == task) {
                return Err(Error::config(format!("route names unknown task {task}")));
            }
            if map.insert(task.clone(), *idx).is_some() {
                return Err(Error::config(format!("task {task} routed twice")));
            }
        }
        for t in suite {
            if !map.contains_key(&t.task_id) {
                return Err(Error::config(format!("task {} has no teacher", t.task_id)));
            }
        }
        Ok(TeacherRouter { routes: map })
    }

    /// Route each task to the first teacher that lists it as trained.
    pub fn by_trained_tasks(suite: &[TaskSpec], teachers: &[Teacher]) -> Result<Self> {
        let routes: Vec<(String, usize)> = suite
            .iter()
            .map(|t| {
                teachers
                    .iter()
                    .position(|te| te.trained_tasks().contains(&t.task_id))
                    .map(|i| (t.task_id.clone(), i))
                    .ok_or_else(|| Error::config(format!("task {} has no teacher", t.task_id)))
            })
            .collect::<Result<_>>()?;
        Self::from_routes(&routes, suite, teachers.len())
    }

    pub fn route(&self, task_id: &str) -> Result<usize> {
        self.routes
            .get(task_id)
            .copied()
            .ok_or_else(|| Error::config(format!("task {task_id} has no teacher")))
    }

    pub fn routes(&self) -> impl Iterator<Item = (&str, usize)> {
        self.routes.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Teachers plus routing, shared read-only by every actor.
#[derive(Clone, Debug)]
pub struct TeacherSet {
    pub teachers: Vec<Teacher>,
    pub router: TeacherRouter,
}

impl TeacherSet {
    pub fn new(teachers: Vec<Teacher>, router: TeacherRouter) -> Result<Self> {
        if teachers.is_empty() {
            return Err(Error::config("kickstarting needs at least one teacher"));
        }
        Ok(TeacherSet { teachers, router })
    }

    /// Check that each teacher can read the suite's observations and shares
    /// the action set. Hidden widths may differ from the student's.
    pub fn check_compatible(&self, suite: &[TaskSpec], num_actions: usize) -> Result<()> {
        for t in suite {
            let idx = self.router.route(&t.task_id)?;
            let net = self.teachers[idx].net();
            if net.input_dim() != t.observation_len() {
                return Err(Error::config(format!(
                    "teacher {idx} expects {} inputs, task {} produces {}",
                    net.input_dim(),
                    t.task_id,
                    t.observation_len()
                )));
            }
            if net.num_actions() != num_actions {
                return Err(Error::config(format!(
                    "teacher {idx} has {} actions, student has {num_actions}",
                    net.num_actions()
                )));
            }
        }
        Ok(())
    }
}

/// A freshly trained expert together with its training curve.
#[derive(Clone, Debug)]
pub struct TrainedExpert {
    pub teacher: Teacher,
    pub records: Vec<MetricRecord>,
}

impl TrainedExpert {
    /// Mean windowed return over the trained tasks at the last record.
    pub fn final_return(&self) -> Option<f64> {
        self.records.last().and_then(MetricRecord::mean_return)
    }
}

/// Train a policy from scratch on `tasks` (no teacher) and freeze it.
pub fn train_expert(
    tasks: &[TaskSpec],
    hidden: &[usize],
    hypers: &HyperParams,
    settings: &LearnerSettings,
    frames: u64,
    seed: u64,
    config_hash: [u8; 32],
) -> Result<TrainedExpert> {
    let obs_len = tasks
        .first()
        .ok_or_else(|| Error::config("expert needs at least one task"))?
        .observation_len();
    let spec = NetSpec::new(obs_len, hidden, crate::envs::NUM_ACTIONS);
    let net = PolicyValueNet::init(&spec, crate::rng::substream(seed, "init", 0))?;
    let mut member = PopulationMember::new(0, net, hypers.clone());
    let ctx = TrainContext {
        suite: tasks.to_vec(),
        teachers: None,
        schedule: Schedule::constant(0.0),
        settings: LearnerSettings {
            rl_enabled: true,
            ..settings.clone()
        },
        refs: None,
        seed,
    };
    let mut observer = CollectObserver::default();
    actor_learner::run_member(&ctx, &mut member, frames, &mut observer).map_err(|e| match e {
        Error::NonFinite { .. } => Error::Diverged(format!("expert training: {e}")),
        other => other,
    })?;
    let teacher = Teacher::freeze(
        member.net,
        member.hypers,
        Provenance {
            trained_tasks: tasks.iter().map(|t| t.task_id.clone()).collect(),
            frames: member.frames,
            config_hash,
        },
    )?;
    Ok(TrainedExpert {
        teacher,
        records: observer.records,
    })
}
