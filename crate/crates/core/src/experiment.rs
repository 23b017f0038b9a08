//! Experiment driver: turns a config into artifacts on disk.
//!
//! Output layout of a training run:
//!
//! ```text
//! config.txt          effective configuration (parseable)
//! metrics.jsonl       one MetricRecord per line, member-major per segment
//! population.jsonl    one PbtEvent per line (empty without PBT)
//! summary.csv         final windowed scores per member
//! checkpoints/        member-<id>-<frames>.ckpt and member-<id>-final.ckpt
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::actor_learner::{self, random_policy_return, MemberRuntime, RunObserver, TrainContext};
use crate::checkpoint;
use crate::config::{ExperimentConfig, Mode};
use crate::envs::{self, TaskSpec};
use crate::error::{Error, Result};
use crate::metrics::{read_metrics, MetricRecord, ReferenceEntry, ReferenceTable};
use crate::nets::{NetSpec, PolicyValueNet};
use crate::pbt::{pbt_round, spread_distill, PbtConfig, PbtEvent, PopulationMember};
use crate::rng;
use crate::teachers::{train_expert, Teacher, TeacherRouter, TeacherSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub deterministic: bool,
    pub overwrite: bool,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const POPULATION_FILE: &str = "population.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const REFERENCE_FILE: &str = "references.txt";

/// Create `dir`, refusing to touch an existing non-empty directory unless
/// `overwrite` is set, in which case its contents are removed first.
pub fn prepare_output(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty {
            if !overwrite {
                return Err(Error::config(format!(
                    "output directory {} is not empty (pass --overwrite to replace it)",
                    dir.display()
                )));
            }
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn config_hash(cfg: &ExperimentConfig) -> [u8; 32] {
    Sha256::digest(cfg.serialize().as_bytes()).into()
}

/// Load teachers and build routing for the configured mode.
pub fn load_teachers(cfg: &ExperimentConfig, suite: &[TaskSpec]) -> Result<Option<TeacherSet>> {
    if !cfg.mode.uses_teachers() {
        return Ok(None);
    }
    let teachers = cfg
        .teacher_paths
        .iter()
        .map(|p| Teacher::load(p))
        .collect::<Result<Vec<_>>>()?;
    let router = if !cfg.teacher_routes.is_empty() {
        TeacherRouter::from_routes(&cfg.teacher_routes, suite, teachers.len())?
    } else if cfg.mode == Mode::KickstartMulti {
        TeacherRouter::by_trained_tasks(suite, &teachers)?
    } else {
        TeacherRouter::single(suite)
    };
    let set = TeacherSet::new(teachers, router)?;
    set.check_compatible(suite, envs::NUM_ACTIONS)?;
    Ok(Some(set))
}

pub fn build_context(cfg: &ExperimentConfig, deterministic: bool) -> Result<TrainContext> {
    let suite = envs::suite(&cfg.suite)?;
    let teachers = load_teachers(cfg, &suite)?;
    let refs = cfg
        .reference_table
        .as_deref()
        .map(ReferenceTable::load)
        .transpose()?;
    let ctx = TrainContext {
        suite,
        teachers,
        schedule: cfg.schedule(),
        settings: cfg.learner_settings(deterministic),
        refs,
        seed: cfg.seed,
    };
    ctx.validate()?;
    Ok(ctx)
}

/// Fresh population members seeded from the config seed.
pub fn initial_population(cfg: &ExperimentConfig, ctx: &TrainContext) -> Result<Vec<PopulationMember>> {
    let spec = NetSpec::new(ctx.suite[0].observation_len(), &cfg.hidden, envs::NUM_ACTIONS);
    let mut hypers = cfg.hypers.clone();
    let k = ctx.num_teachers().max(1);
    if hypers.distill_per_teacher.len() < k {
        hypers.distill_per_teacher.resize(k, 1.0);
    }
    (0..cfg.population_size)
        .map(|id| {
            let net = PolicyValueNet::init(&spec, rng::substream(cfg.seed, "init", id as u64))?;
            let h = spread_distill(&hypers, id, cfg.population_size, cfg.distill_spread);
            Ok(PopulationMember::new(id, net, h))
        })
        .collect()
}

struct MemberSink {
    records: Vec<MetricRecord>,
    checkpoint_dir: Option<PathBuf>,
}

impl RunObserver for MemberSink {
    fn on_metrics(&mut self, record: &MetricRecord) -> Result<()> {
        self.records.push(record.clone());
        Ok(())
    }

    fn on_checkpoint(&mut self, member: &PopulationMember) -> Result<()> {
        match &self.checkpoint_dir {
            Some(dir) => checkpoint::save(
                &dir.join(format!("member-{}-{}.ckpt", member.id, member.frames)),
                &member.net,
                &member.hypers,
            ),
            None => Ok(()),
        }
    }
}

fn append_lines<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut buf = String::new();
    for it in items {
        buf.push_str(&serde_json::to_string(it).expect("serialisable record"));
        buf.push('\n');
    }
    f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
}

/// How a population is trained.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationSettings {
    /// Frame budget per member.
    pub frames: u64,
    /// Frames between PBT rounds; ignored for a single member.
    pub pbt_interval: u64,
    pub pbt: PbtConfig,
    /// Where periodic checkpoints go, if anywhere.
    pub checkpoint_dir: Option<PathBuf>,
}

/// Output of one segment: new metric records (member-major) and PBT events.
pub struct SegmentOutput<'a> {
    pub records: &'a [MetricRecord],
    pub events: &'a [PbtEvent],
}

/// Train `members` in lockstep segments, running a PBT round between
/// segments when there is more than one member. Members train concurrently
/// unless the context is deterministic. `on_segment` sees every record and
/// event exactly once, in a deterministic order.
pub fn train_population(
    ctx: &TrainContext,
    members: &mut [PopulationMember],
    settings: &PopulationSettings,
    mut on_segment: impl FnMut(SegmentOutput<'_>) -> Result<()>,
) -> Result<()> {
    ctx.validate()?;
    let mut runtimes = members
        .iter()
        .map(|m| MemberRuntime::new(ctx, m))
        .collect::<Result<Vec<_>>>()?;
    let mut sinks: Vec<MemberSink> = members
        .iter()
        .map(|_| MemberSink {
            records: Vec::new(),
            checkpoint_dir: settings.checkpoint_dir.clone(),
        })
        .collect();
    let segment = if members.len() > 1 {
        settings.pbt_interval.max(1)
    } else {
        settings.frames.max(1)
    };
    let mut pbt_rng = rng::rng_from(ctx.seed, "pbt", 0);
    let mut done = 0u64;
    let mut round = 0u64;
    loop {
        let target = (done + segment).min(settings.frames);
        let mut work: Vec<_> = members
            .iter_mut()
            .zip(runtimes.iter_mut())
            .zip(sinks.iter_mut())
            .collect();
        let results: Vec<Result<()>> = if ctx.settings.deterministic || work.len() == 1 {
            work.iter_mut()
                .map(|((m, rt), sink)| actor_learner::run_segment(ctx, m, rt, target, *sink))
                .collect()
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = work
                    .iter_mut()
                    .map(|((m, rt), sink)| {
                        s.spawn(move || actor_learner::run_segment(ctx, m, rt, target, *sink))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("member thread panicked"))
                    .collect()
            })
        };
        results.into_iter().collect::<Result<Vec<()>>>()?;
        done = target;
        let last = done >= settings.frames;
        if last {
            for ((m, rt), sink) in members.iter().zip(runtimes.iter_mut()).zip(sinks.iter_mut()) {
                rt.flush_metrics(ctx, m, sink)?;
            }
        }
        let records: Vec<MetricRecord> = sinks
            .iter_mut()
            .flat_map(|s| std::mem::take(&mut s.records))
            .collect();
        let events = if !last && members.len() > 1 {
            pbt_round(members, round, &mut pbt_rng, &settings.pbt)?
        } else {
            Vec::new()
        };
        on_segment(SegmentOutput {
            records: &records,
            events: &events,
        })?;
        if last {
            return Ok(());
        }
        round += 1;
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub members: Vec<PopulationMember>,
    pub final_records: Vec<MetricRecord>,
}

/// Train the configured population and write every artifact under `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path, opts: RunOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let ctx = build_context(cfg, opts.deterministic)?;
    prepare_output(out, opts.overwrite)?;
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    fs::write(out.join(CONFIG_FILE), cfg.serialize()).map_err(|e| Error::io(out, e))?;
    let metrics_path = out.join(METRICS_FILE);
    let population_path = out.join(POPULATION_FILE);
    for p in [&metrics_path, &population_path] {
        fs::write(p, "").map_err(|e| Error::io(p, e))?;
    }

    let mut members = initial_population(cfg, &ctx)?;
    let settings = PopulationSettings {
        frames: cfg.frames,
        pbt_interval: cfg.pbt_interval,
        pbt: cfg.pbt_config(),
        checkpoint_dir: Some(ckpt_dir.clone()),
    };
    let mut final_records: Vec<Option<MetricRecord>> = vec![None; members.len()];
    train_population(&ctx, &mut members, &settings, |seg| {
        for r in seg.records {
            final_records[r.member_id] = Some(r.clone());
        }
        append_lines(&metrics_path, seg.records)?;
        append_lines(&population_path, seg.events)
    })?;
    for m in &members {
        checkpoint::save(
            &ckpt_dir.join(format!("member-{}-final.ckpt", m.id)),
            &m.net,
            &m.hypers,
        )?;
    }
    let final_records: Vec<MetricRecord> = final_records
        .into_iter()
        .map(|r| r.expect("every member emits a record"))
        .collect();
    write_summary(&out.join(SUMMARY_FILE), &ctx, &members, &final_records)?;
    Ok(RunSummary {
        members,
        final_records,
    })
}

fn write_summary(
    path: &Path,
    ctx: &TrainContext,
    members: &[PopulationMember],
    records: &[MetricRecord],
) -> Result<()> {
    let mut s = String::from("member_id,frames,score,mean_capped_score");
    for t in &ctx.suite {
        let _ = write!(s, ",{}", t.task_id);
    }
    s.push('\n');
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for (m, r) in members.iter().zip(records) {
        let _ = write!(
            s,
            "{},{},{},{}",
            m.id,
            m.frames,
            opt(m.latest_score()),
            opt(r.mean_capped_score)
        );
        for t in &ctx.suite {
            let _ = write!(s, ",{}", opt(r.task_return(&t.task_id)));
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Train the configured suite from scratch and freeze the result as a
/// teacher at `out/expert.teacher`.
pub fn run_train_expert(cfg: &ExperimentConfig, out: &Path, opts: RunOptions) -> Result<Teacher> {
    let suite = envs::suite(&cfg.suite)?;
    prepare_output(out, opts.overwrite)?;
    fs::write(out.join(CONFIG_FILE), cfg.serialize()).map_err(|e| Error::io(out, e))?;
    let expert = train_expert(
        &suite,
        &cfg.hidden,
        &cfg.hypers,
        &cfg.learner_settings(opts.deterministic),
        cfg.frames,
        rng::substream(cfg.seed, "expert", 0),
        config_hash(cfg),
    )?;
    fs::write(out.join(METRICS_FILE), "").map_err(|e| Error::io(out, e))?;
    append_lines(&out.join(METRICS_FILE), &expert.records)?;
    expert.teacher.save(&out.join("expert.teacher"))?;
    Ok(expert.teacher)
}

/// Build a reference table: random-policy returns and per-task experts.
/// Experts are also saved as `out/experts/<task>.teacher`.
pub fn calibrate(cfg: &ExperimentConfig, out: &Path, opts: RunOptions) -> Result<ReferenceTable> {
    if cfg.frames == 0 {
        return Err(Error::config("calibration needs frames > 0"));
    }
    let suite = envs::suite(&cfg.suite)?;
    prepare_output(out, opts.overwrite)?;
    let experts_dir = out.join("experts");
    fs::create_dir_all(&experts_dir).map_err(|e| Error::io(&experts_dir, e))?;
    fs::write(out.join(CONFIG_FILE), cfg.serialize()).map_err(|e| Error::io(out, e))?;
    let settings = cfg.learner_settings(opts.deterministic);
    let mut table = ReferenceTable::default();
    for (i, task) in suite.iter().enumerate() {
        let random_score =
            random_policy_return(task, cfg.random_episodes, rng::substream(cfg.seed, "calibrate-random", i as u64))?;
        let expert = train_expert(
            std::slice::from_ref(task),
            &cfg.hidden,
            &cfg.hypers,
            &settings,
            cfg.frames,
            rng::substream(cfg.seed, "calibrate-expert", i as u64),
            config_hash(cfg),
        )?;
        expert
            .teacher
            .save(&experts_dir.join(format!("{}.teacher", task.task_id)))?;
        let expert_score = expert.final_return().unwrap_or(f64::NEG_INFINITY);
        let reference_score = if expert_score > random_score {
            expert_score
        } else {
            eprintln!(
                "warning: expert on {} ({expert_score}) did not beat random ({random_score}); task flagged",
                task.task_id
            );
            table.flagged.push(task.task_id.clone());
            random_score + 1.0
        };
        table.entries.push(ReferenceEntry {
            task_id: task.task_id.clone(),
            random_score,
            reference_score,
        });
    }
    table.validate()?;
    table.save(&out.join(REFERENCE_FILE))?;
    Ok(table)
}

/// Validate every artifact under `dir` against its schema. Returns the
/// checked file names.
pub fn selfcheck(dir: &Path) -> Result<Vec<String>> {
    let mut checked = Vec::new();
    if !dir.is_dir() {
        return Err(Error::config(format!("{} is not a directory", dir.display())));
    }
    let mut entries: Vec<PathBuf> = walk(dir)?;
    entries.sort();
    for path in entries {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
        match (name, ext) {
            (METRICS_FILE, _) => {
                read_metrics(&path)?;
            }
            (POPULATION_FILE, _) => {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                for (n, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                    serde_json::from_str::<PbtEvent>(l)
                        .map_err(|e| Error::format(&path, format!("line {}: {e}", n + 1)))?;
                }
            }
            (SUMMARY_FILE, _) => check_csv(&path)?,
            (CONFIG_FILE, _) => {
                ExperimentConfig::load(&path)?;
            }
            (REFERENCE_FILE, _) => {
                ReferenceTable::load(&path)?;
            }
            (_, "ckpt") => {
                checkpoint::load(&path)?;
            }
            (_, "teacher") => {
                Teacher::load(&path)?;
            }
            (_, "csv") => check_csv(&path)?,
            _ => continue,
        }
        checked.push(path.strip_prefix(dir).unwrap_or(&path).display().to_string());
    }
    Ok(checked)
}

fn walk(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            out.extend(walk(&p)?);
        } else {
            out.push(p);
        }
    }
    Ok(out)
}

fn check_csv(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty CSV"))?;
    let width = header.split(',').count();
    for (n, l) in lines.enumerate() {
        if l.split(',').count() != width {
            return Err(Error::format(
                path,
                format!("line {} has {} fields, header has {width}", n + 2, l.split(',').count()),
            ));
        }
    }
    Ok(())
}
