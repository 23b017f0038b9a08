//! Experiment configuration: flat `key = value` text with dotted section
//! prefixes.
//!
//! ```text
//! # comment
//! mode = kickstart-single
//! frames = 200000
//! suite.tasks = sparse-goal, dense-forage
//! teacher.paths = teachers/suite.teacher
//! pbt.population_size = 4
//! ```
//!
//! Lists are comma separated. Unknown and repeated keys are rejected, and
//! every error carries the offending line number.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::actor_learner::LearnerSettings;
use crate::envs::{SuiteConfig, DEFAULT_GRID};
use crate::error::{Error, Result};
use crate::losses::VTraceParams;
use crate::pbt::PbtConfig;
use crate::schedule::{HyperParams, Schedule, ScheduleKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Scratch,
    KickstartSingle,
    KickstartMulti,
    DistillOnly,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Scratch => "scratch",
            Mode::KickstartSingle => "kickstart-single",
            Mode::KickstartMulti => "kickstart-multi",
            Mode::DistillOnly => "distill-only",
        }
    }

    pub fn uses_teachers(self) -> bool {
        !matches!(self, Mode::Scratch)
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "scratch" => Mode::Scratch,
            "kickstart-single" => Mode::KickstartSingle,
            "kickstart-multi" => Mode::KickstartMulti,
            "distill-only" => Mode::DistillOnly,
            other => {
                return Err(format!(
                    "unknown mode {other:?} (expected scratch, kickstart-single, kickstart-multi or distill-only)"
                ))
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleName {
    Constant,
    Linear,
    Pbt,
}

impl FromStr for ScheduleName {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "constant" => ScheduleName::Constant,
            "linear" => ScheduleName::Linear,
            "pbt" => ScheduleName::Pbt,
            other => return Err(format!("unknown schedule kind {other:?}")),
        })
    }
}

impl ScheduleName {
    fn as_str(self) -> &'static str {
        match self {
            ScheduleName::Constant => "constant",
            ScheduleName::Linear => "linear",
            ScheduleName::Pbt => "pbt",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Frame budget per population member.
    pub frames: u64,
    pub output_dir: Option<PathBuf>,

    pub suite: SuiteConfig,
    pub hidden: Vec<usize>,

    pub teacher_paths: Vec<PathBuf>,
    /// Explicit `task:teacher_index` routes. Empty: single mode routes every
    /// task to teacher 0, multi mode routes by each teacher's trained tasks.
    pub teacher_routes: Vec<(String, usize)>,

    pub schedule_kind: ScheduleName,
    /// Constant value, or the starting value of a linear decay.
    pub schedule_value: f64,
    pub schedule_end_frame: u64,
    pub schedule_per_teacher: bool,

    pub hypers: HyperParams,

    pub gamma: f64,
    pub value_weight: f64,
    pub clip_rho: f64,
    pub clip_c: f64,

    pub actors_per_task: usize,
    pub unroll_length: usize,
    pub batch_size: usize,
    pub queue_capacity: usize,
    pub timeout_ms: u64,

    pub window: u64,
    pub metrics_interval: u64,
    pub checkpoint_interval: u64,
    pub eval_episodes: usize,
    pub reference_table: Option<PathBuf>,

    pub population_size: usize,
    pub pbt_interval: u64,
    pub pbt_margin: f64,
    pub explore_probability: f64,
    /// Ratio between the largest and smallest starting distillation factor
    /// across the population; 1 starts every member identically.
    pub distill_spread: f64,

    /// Random-policy episodes per task when calibrating references.
    pub random_episodes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let l = LearnerSettings::default();
        let p = PbtConfig::default();
        let v = VTraceParams::default();
        ExperimentConfig {
            mode: Mode::Scratch,
            seed: 0,
            frames: 0,
            output_dir: None,
            suite: SuiteConfig {
                grid_size: DEFAULT_GRID,
                ..SuiteConfig::default()
            },
            hidden: vec![64],
            teacher_paths: Vec::new(),
            teacher_routes: Vec::new(),
            schedule_kind: ScheduleName::Constant,
            schedule_value: 1.0,
            schedule_end_frame: 0,
            schedule_per_teacher: false,
            hypers: HyperParams::default(),
            gamma: v.gamma,
            value_weight: l.value_weight,
            clip_rho: v.clip_rho,
            clip_c: v.clip_c,
            actors_per_task: l.actors_per_task,
            unroll_length: l.unroll_length,
            batch_size: l.batch_size,
            queue_capacity: l.queue_capacity,
            timeout_ms: l.timeout.as_millis() as u64,
            window: l.window,
            metrics_interval: l.metrics_interval,
            checkpoint_interval: l.checkpoint_interval,
            eval_episodes: l.eval_episodes,
            reference_table: None,
            population_size: 1,
            pbt_interval: 100_000,
            pbt_margin: p.margin,
            explore_probability: p.explore_probability,
            distill_spread: 1.0,
            random_episodes: 1000,
        }
    }
}

const REQUIRED: &[&str] = &["frames"];

fn parse_value<T: FromStr>(raw: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| format!("cannot parse {raw:?}: {e}"))
}

fn parse_list<T: FromStr>(raw: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_value)
        .collect()
}

fn parse_bool(raw: &str) -> std::result::Result<bool, String> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(format!("expected true or false, got {other:?}")),
    }
}

fn parse_routes(raw: &str) -> std::result::Result<Vec<(String, usize)>, String> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|r| {
            let (task, idx) = r
                .rsplit_once(':')
                .ok_or_else(|| format!("route {r:?} is not task:index"))?;
            Ok((task.trim().to_string(), parse_value(idx.trim())?))
        })
        .collect()
}

fn opt_path(raw: &str) -> Option<PathBuf> {
    (!raw.is_empty()).then(|| PathBuf::from(raw))
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn join_f64(items: &[f64]) -> String {
    items
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl ExperimentConfig {
    fn set(&mut self, key: &str, raw: &str) -> std::result::Result<(), String> {
        match key {
            "mode" => self.mode = parse_value(raw)?,
            "seed" => self.seed = parse_value(raw)?,
            "frames" => self.frames = parse_value(raw)?,
            "output_dir" => self.output_dir = opt_path(raw),
            "suite.tasks" => self.suite.tasks = parse_list(raw)?,
            "suite.grid_size" => self.suite.grid_size = parse_value(raw)?,
            "net.hidden" => self.hidden = parse_list(raw)?,
            "teacher.paths" => self.teacher_paths = parse_list(raw)?,
            "teacher.routes" => self.teacher_routes = parse_routes(raw)?,
            "schedule.kind" => self.schedule_kind = parse_value(raw)?,
            "schedule.value" => self.schedule_value = parse_value(raw)?,
            "schedule.end_frame" => self.schedule_end_frame = parse_value(raw)?,
            "schedule.per_teacher" => self.schedule_per_teacher = parse_bool(raw)?,
            "hyper.learning_rate" => self.hypers.learning_rate = parse_value(raw)?,
            "hyper.entropy_cost" => self.hypers.entropy_cost = parse_value(raw)?,
            "hyper.distill_global" => self.hypers.distill_global = parse_value(raw)?,
            "hyper.distill_per_teacher" => self.hypers.distill_per_teacher = parse_list(raw)?,
            "rl.gamma" => self.gamma = parse_value(raw)?,
            "rl.value_weight" => self.value_weight = parse_value(raw)?,
            "rl.clip_rho" => self.clip_rho = parse_value(raw)?,
            "rl.clip_c" => self.clip_c = parse_value(raw)?,
            "actor.per_task" => self.actors_per_task = parse_value(raw)?,
            "actor.unroll_length" => self.unroll_length = parse_value(raw)?,
            "learner.batch_size" => self.batch_size = parse_value(raw)?,
            "learner.queue_capacity" => self.queue_capacity = parse_value(raw)?,
            "learner.timeout_ms" => self.timeout_ms = parse_value(raw)?,
            "metrics.window" => self.window = parse_value(raw)?,
            "metrics.interval" => self.metrics_interval = parse_value(raw)?,
            "metrics.checkpoint_interval" => self.checkpoint_interval = parse_value(raw)?,
            "metrics.eval_episodes" => self.eval_episodes = parse_value(raw)?,
            "metrics.reference_table" => self.reference_table = opt_path(raw),
            "pbt.population_size" => self.population_size = parse_value(raw)?,
            "pbt.interval" => self.pbt_interval = parse_value(raw)?,
            "pbt.margin" => self.pbt_margin = parse_value(raw)?,
            "pbt.explore_probability" => self.explore_probability = parse_value(raw)?,
            "pbt.distill_spread" => self.distill_spread = parse_value(raw)?,
            "calibrate.random_episodes" => self.random_episodes = parse_value(raw)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Parse config text. `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: Vec<String> = Vec::new();
        let err = |line: usize, message: String| Error::ConfigLine {
            path: origin.to_string(),
            line,
            message,
        };
        for (n, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(n + 1, format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(err(n + 1, format!("key {key:?} given twice")));
            }
            cfg.set(key, value).map_err(|m| err(n + 1, format!("{key}: {m}")))?;
            seen.push(key.to_string());
        }
        for req in REQUIRED {
            if !seen.iter().any(|k| k == req) {
                return Err(Error::config(format!("{origin}: missing required key {req:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Every key, defaults included, in a form `parse` reads back exactly.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let paths: Vec<String> = self.teacher_paths.iter().map(|p| p.display().to_string()).collect();
        let routes: Vec<String> = self.teacher_routes.iter().map(|(t, i)| format!("{t}:{i}")).collect();
        let kv = [
            ("mode", self.mode.as_str().to_string()),
            ("seed", self.seed.to_string()),
            ("frames", self.frames.to_string()),
            ("output_dir", path(&self.output_dir)),
            ("suite.tasks", join(&self.suite.tasks)),
            ("suite.grid_size", self.suite.grid_size.to_string()),
            ("net.hidden", join(&self.hidden)),
            ("teacher.paths", join(&paths)),
            ("teacher.routes", join(&routes)),
            ("schedule.kind", self.schedule_kind.as_str().to_string()),
            ("schedule.value", format!("{:?}", self.schedule_value)),
            ("schedule.end_frame", self.schedule_end_frame.to_string()),
            ("schedule.per_teacher", self.schedule_per_teacher.to_string()),
            ("hyper.learning_rate", format!("{:?}", self.hypers.learning_rate)),
            ("hyper.entropy_cost", format!("{:?}", self.hypers.entropy_cost)),
            ("hyper.distill_global", format!("{:?}", self.hypers.distill_global)),
            ("hyper.distill_per_teacher", join_f64(&self.hypers.distill_per_teacher)),
            ("rl.gamma", format!("{:?}", self.gamma)),
            ("rl.value_weight", format!("{:?}", self.value_weight)),
            ("rl.clip_rho", format!("{:?}", self.clip_rho)),
            ("rl.clip_c", format!("{:?}", self.clip_c)),
            ("actor.per_task", self.actors_per_task.to_string()),
            ("actor.unroll_length", self.unroll_length.to_string()),
            ("learner.batch_size", self.batch_size.to_string()),
            ("learner.queue_capacity", self.queue_capacity.to_string()),
            ("learner.timeout_ms", self.timeout_ms.to_string()),
            ("metrics.window", self.window.to_string()),
            ("metrics.interval", self.metrics_interval.to_string()),
            ("metrics.checkpoint_interval", self.checkpoint_interval.to_string()),
            ("metrics.eval_episodes", self.eval_episodes.to_string()),
            ("metrics.reference_table", path(&self.reference_table)),
            ("pbt.population_size", self.population_size.to_string()),
            ("pbt.interval", self.pbt_interval.to_string()),
            ("pbt.margin", format!("{:?}", self.pbt_margin)),
            ("pbt.explore_probability", format!("{:?}", self.explore_probability)),
            ("pbt.distill_spread", format!("{:?}", self.distill_spread)),
            ("calibrate.random_episodes", self.random_episodes.to_string()),
        ];
        for (k, v) in kv {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode.uses_teachers() && self.teacher_paths.is_empty() {
            return Err(Error::config(format!(
                "mode {} requires teacher.paths",
                self.mode.as_str()
            )));
        }
        if self.mode == Mode::KickstartSingle && self.teacher_paths.len() != 1 {
            return Err(Error::config("kickstart-single takes exactly one teacher path"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("net.hidden must list positive widths"));
        }
        if self.population_size == 0 {
            return Err(Error::config("pbt.population_size must be >= 1"));
        }
        if self.population_size > 1 && self.pbt_interval == 0 {
            return Err(Error::config("pbt.interval must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.explore_probability) {
            return Err(Error::config("pbt.explore_probability must be in [0, 1]"));
        }
        if !(self.distill_spread >= 1.0) {
            return Err(Error::config("pbt.distill_spread must be >= 1"));
        }
        if !(self.pbt_margin >= 0.0) {
            return Err(Error::config("pbt.margin must be >= 0"));
        }
        if self.schedule_kind == ScheduleName::Pbt && self.population_size < 2 {
            return Err(Error::config("schedule.kind = pbt needs pbt.population_size >= 2"));
        }
        if self.schedule_per_teacher
            && self.hypers.distill_per_teacher.len() < self.teacher_paths.len()
        {
            return Err(Error::config(
                "hyper.distill_per_teacher needs one factor per teacher",
            ));
        }
        if self.random_episodes == 0 {
            return Err(Error::config("calibrate.random_episodes must be >= 1"));
        }
        self.hypers.validate()?;
        self.schedule().validate()?;
        self.learner_settings(false).validate()?;
        crate::envs::suite(&self.suite)?;
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        let kind = match self.schedule_kind {
            ScheduleName::Constant => ScheduleKind::Constant {
                value: self.schedule_value,
            },
            ScheduleName::Linear => ScheduleKind::Linear {
                start_value: self.schedule_value,
                end_frame: self.schedule_end_frame,
            },
            ScheduleName::Pbt => ScheduleKind::Pbt,
        };
        Schedule {
            kind,
            per_teacher: self.schedule_per_teacher,
        }
    }

    pub fn learner_settings(&self, deterministic: bool) -> LearnerSettings {
        LearnerSettings {
            unroll_length: self.unroll_length,
            batch_size: self.batch_size,
            queue_capacity: self.queue_capacity,
            actors_per_task: self.actors_per_task,
            value_weight: self.value_weight,
            vtrace: VTraceParams {
                gamma: self.gamma,
                clip_rho: self.clip_rho,
                clip_c: self.clip_c,
            },
            rl_enabled: self.mode != Mode::DistillOnly,
            window: self.window,
            metrics_interval: self.metrics_interval,
            checkpoint_interval: self.checkpoint_interval,
            eval_episodes: self.eval_episodes,
            deterministic,
            timeout: Duration::from_millis(self.timeout_ms),
        }
    }

    pub fn pbt_config(&self) -> PbtConfig {
        PbtConfig {
            margin: self.pbt_margin,
            explore_probability: self.explore_probability,
            ..PbtConfig::default()
        }
    }
}
