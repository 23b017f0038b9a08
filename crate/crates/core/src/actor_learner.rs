//! Decoupled experience generation and learning.
//!
//! Actors step their own environment with a published parameter snapshot and
//! push fixed-length unrolls into a bounded queue; a single learner pops
//! batches, applies one kickstarting update per batch and publishes a new
//! snapshot. The deterministic mode runs the same logic round-robin on the
//! calling thread.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use rand::Rng as _;

use crate::envs::{self, EnvState, TaskSpec};
use crate::error::{Error, Result};
use crate::losses::{kickstart_loss, softmax, KickstartParams, LossTerms, VTraceParams};
use crate::metrics::{suite_score, MetricRecord, ReferenceTable, ScoreWindow};
use crate::nets::{GradientBuffer, PolicyValueNet};
use crate::par;
use crate::pbt::PopulationMember;
use crate::rng::{self, Rng};
use crate::schedule::{lambda_at, Schedule};
use crate::teachers::{Teacher, TeacherSet};
use crate::trajectory::{TeacherLogits, Trajectory};

/// Immutable published parameters.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub net: PolicyValueNet,
    pub version: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueueStats {
    pub capacity: usize,
    pub len: usize,
    pub pushed: u64,
    pub popped: u64,
    pub closed: bool,
}

impl std::fmt::Display for QueueStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "queue {}/{} pushed={} popped={} closed={}",
            self.len, self.capacity, self.pushed, self.popped, self.closed
        )
    }
}

struct QueueInner<T> {
    items: VecDeque<T>,
    pushed: u64,
    popped: u64,
    closed: bool,
}

/// Bounded blocking FIFO.
pub struct TrajectoryQueue<T> {
    capacity: usize,
    inner: Mutex<QueueInner<T>>,
    not_empty: Condvar,
    not_full: Condvar,
}

impl<T> TrajectoryQueue<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("queue capacity must be >= 1"));
        }
        Ok(TrajectoryQueue {
            capacity,
            inner: Mutex::new(QueueInner {
                items: VecDeque::with_capacity(capacity),
                pushed: 0,
                popped: 0,
                closed: false,
            }),
            not_empty: Condvar::new(),
            not_full: Condvar::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Block until there is room. Hands the item back if the queue closes.
    pub fn push(&self, item: T) -> std::result::Result<(), T> {
        let mut g = self.inner.lock().unwrap();
        while g.items.len() >= self.capacity && !g.closed {
            g = self.not_full.wait(g).unwrap();
        }
        if g.closed {
            return Err(item);
        }
        g.items.push_back(item);
        g.pushed += 1;
        self.not_empty.notify_one();
        Ok(())
    }

    pub fn try_push(&self, item: T) -> std::result::Result<(), T> {
        let mut g = self.inner.lock().unwrap();
        if g.closed || g.items.len() >= self.capacity {
            return Err(item);
        }
        g.items.push_back(item);
        g.pushed += 1;
        self.not_empty.notify_one();
        Ok(())
    }

    /// Wait up to `timeout` for an item. `Ok(None)` means closed and drained.
    pub fn pop_timeout(&self, timeout: Duration) -> Result<Option<T>> {
        let deadline = Instant::now() + timeout;
        let mut g = self.inner.lock().unwrap();
        loop {
            if let Some(item) = g.items.pop_front() {
                g.popped += 1;
                self.not_full.notify_one();
                return Ok(Some(item));
            }
            if g.closed {
                return Ok(None);
            }
            let now = Instant::now();
            if now >= deadline {
                drop(g);
                return Err(Error::Timeout(self.stats().to_string()));
            }
            g = self.not_empty.wait_timeout(g, deadline - now).unwrap().0;
        }
    }

    /// Wake every waiter; further pushes fail, pops drain what is left.
    pub fn close(&self) {
        self.inner.lock().unwrap().closed = true;
        self.not_empty.notify_all();
        self.not_full.notify_all();
    }

    pub fn drain(&self) -> Vec<T> {
        let mut g = self.inner.lock().unwrap();
        let n = g.items.len() as u64;
        g.popped += n;
        self.not_full.notify_all();
        g.items.drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> QueueStats {
        let g = self.inner.lock().unwrap();
        QueueStats {
            capacity: self.capacity,
            len: g.items.len(),
            pushed: g.pushed,
            popped: g.popped,
            closed: g.closed,
        }
    }
}

/// Sample an index from the softmax of `logits` by inverse CDF.
pub fn sample_action(logits: &[f64], rng: &mut Rng) -> usize {
    let p = softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// One environment plus the random stream used to sample its actions.
#[derive(Clone, Debug)]
pub struct Actor {
    pub id: usize,
    pub task_index: usize,
    task: TaskSpec,
    env: EnvState,
    obs: Vec<f64>,
    rng: Rng,
    seed: u64,
    episodes: u64,
}

impl Actor {
    pub fn new(id: usize, task_index: usize, task: &TaskSpec, seed: u64) -> Result<Self> {
        let seed = rng::substream(seed, "actor", id as u64);
        let (env, obs) = envs::reset(task, rng::substream(seed, "episode", 0))?;
        Ok(Actor {
            id,
            task_index,
            task: task.clone(),
            env,
            obs,
            rng: rng::rng_from(seed, "policy", 0),
            seed,
            episodes: 0,
        })
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn episodes_completed(&self) -> u64 {
        self.episodes
    }

    /// Roll out `t_len` steps with a fixed snapshot. Finished episodes are
    /// reset in place and flagged in `terminals`.
    pub fn unroll(
        &mut self,
        net: &PolicyValueNet,
        version: u64,
        teacher: Option<(usize, &Teacher)>,
        t_len: usize,
    ) -> Result<Trajectory> {
        if t_len == 0 {
            return Err(Error::Caller("unroll length must be >= 1".into()));
        }
        let mut observations = Vec::with_capacity(t_len + 1);
        let mut actions = Vec::with_capacity(t_len);
        let mut rewards = Vec::with_capacity(t_len);
        let mut behaviour_logits = Vec::with_capacity(t_len);
        let mut terminals = Vec::with_capacity(t_len);
        let mut teacher_logits = Vec::new();
        let mut completed_returns = Vec::new();
        for _ in 0..t_len {
            let obs = std::mem::take(&mut self.obs);
            let (logits, _) = net.forward(&obs)?;
            if let Some((_, t)) = teacher {
                teacher_logits.push(t.logits(&obs)?);
            }
            let a = sample_action(&logits, &mut self.rng);
            let step = self.env.step(a)?;
            if step.terminal {
                completed_returns.push(self.env.episode_return);
                self.episodes += 1;
                let (env, o) =
                    envs::reset(&self.task, rng::substream(self.seed, "episode", self.episodes))?;
                self.env = env;
                self.obs = o;
            } else {
                self.obs = step.observation;
            }
            observations.push(obs);
            actions.push(a);
            rewards.push(step.reward);
            behaviour_logits.push(logits);
            terminals.push(step.terminal);
        }
        observations.push(self.obs.clone());
        Ok(Trajectory {
            task_id: self.task.task_id.clone(),
            task_index: self.task_index,
            actor_id: self.id,
            observations,
            actions,
            rewards,
            behaviour_logits,
            teacher: teacher.map(|(index, _)| TeacherLogits {
                index,
                logits: teacher_logits,
            }),
            terminals,
            actor_param_version: version,
            completed_returns,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnerSettings {
    pub unroll_length: usize,
    pub batch_size: usize,
    pub queue_capacity: usize,
    pub actors_per_task: usize,
    pub value_weight: f64,
    pub vtrace: VTraceParams,
    /// False in distill-only mode.
    pub rl_enabled: bool,
    /// Score window in frames.
    pub window: u64,
    /// Emit a metric record every this many frames (0: only first and last).
    pub metrics_interval: u64,
    /// Hand a checkpoint to the observer every this many frames (0: never).
    pub checkpoint_interval: u64,
    /// Episodes per task for the initial-network evaluation.
    pub eval_episodes: usize,
    /// Round-robin actors on the calling thread.
    pub deterministic: bool,
    /// Longest the learner waits for a trajectory in threaded mode.
    pub timeout: Duration,
}

impl Default for LearnerSettings {
    fn default() -> Self {
        LearnerSettings {
            unroll_length: 20,
            batch_size: 8,
            queue_capacity: 16,
            actors_per_task: 4,
            value_weight: 0.5,
            vtrace: VTraceParams::default(),
            rl_enabled: true,
            window: 50_000,
            metrics_interval: 10_000,
            checkpoint_interval: 50_000,
            eval_episodes: 4,
            deterministic: false,
            timeout: Duration::from_secs(60),
        }
    }
}

impl LearnerSettings {
    pub fn validate(&self) -> Result<()> {
        if self.unroll_length == 0 {
            return Err(Error::config("unroll_length must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.queue_capacity == 0 {
            return Err(Error::config("queue_capacity must be >= 1"));
        }
        if self.actors_per_task == 0 {
            return Err(Error::config("actors_per_task must be >= 1"));
        }
        if !(self.value_weight >= 0.0) {
            return Err(Error::config("value_weight must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.vtrace.gamma) {
            return Err(Error::config("gamma must be in [0, 1)"));
        }
        if self.window == 0 {
            return Err(Error::config("metrics window must be >= 1 frame"));
        }
        Ok(())
    }
}

/// Outcome of one learner update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Mean per-trajectory loss terms.
    pub terms: LossTerms,
    /// Distillation weight per teacher used for this step.
    pub lambdas: Vec<f64>,
    /// Largest `learner_version - actor_param_version` in the batch.
    pub max_lag: u64,
}

/// Distillation weights at the member's current frame count.
pub fn current_lambdas(
    schedule: &Schedule,
    member: &PopulationMember,
    num_teachers: usize,
) -> Result<Vec<f64>> {
    (0..num_teachers)
        .map(|i| lambda_at(schedule, member.frames, &member.hypers, i))
        .collect()
}

/// Mean of per-trajectory gradients, summed in batch order so the result
/// does not depend on how the work was scheduled.
pub fn batch_gradient(
    batch: &[Trajectory],
    net: &PolicyValueNet,
    params: &KickstartParams,
) -> Result<(LossTerms, GradientBuffer)> {
    if batch.is_empty() {
        return Err(Error::Caller("learner step needs a non-empty batch".into()));
    }
    let per_traj = par::map(batch, |t| kickstart_loss(t, net, params));
    let scale = 1.0 / batch.len() as f64;
    let mut terms = LossTerms {
        distill_loss: vec![0.0; params.lambdas.len()],
        ..LossTerms::default()
    };
    let mut grads = GradientBuffer::zeros_like(net);
    for r in per_traj {
        let (t, g) = r?;
        terms.accumulate(&t, scale);
        grads.add_scaled(&g, scale)?;
    }
    Ok((terms, grads))
}

/// One optimiser update from a batch. On a non-finite loss or gradient the
/// member is left untouched and an error describing the failure returned.
pub fn learner_step(
    batch: &[Trajectory],
    member: &mut PopulationMember,
    schedule: &Schedule,
    num_teachers: usize,
    settings: &LearnerSettings,
) -> Result<StepReport> {
    let lambdas = current_lambdas(schedule, member, num_teachers)?;
    let params = KickstartParams {
        lambdas: lambdas.clone(),
        entropy_cost: member.hypers.entropy_cost,
        value_weight: settings.value_weight,
        vtrace: settings.vtrace,
        rl_enabled: settings.rl_enabled,
    };
    let (terms, grads) = batch_gradient(batch, &member.net, &params)?;
    if !terms.is_finite() {
        return Err(Error::NonFinite {
            what: format!(
                "loss at frame {} (pg={} value={} entropy={} distill={:?})",
                member.frames,
                terms.policy_gradient_loss,
                terms.value_loss,
                terms.entropy_loss,
                terms.distill_loss
            ),
            layer: None,
        });
    }
    member.optimizer.learning_rate = member.hypers.learning_rate;
    member.optimizer.apply_update(&mut member.net, &grads)?;
    let max_lag = batch
        .iter()
        .map(|t| member.version.saturating_sub(t.actor_param_version))
        .max()
        .unwrap_or(0);
    member.frames += batch.iter().map(|t| t.len() as u64).sum::<u64>();
    member.version += 1;
    Ok(StepReport {
        terms,
        lambdas,
        max_lag,
    })
}

/// Mean return of `episodes` episodes sampled from `net`'s policy.
pub fn evaluate(net: &PolicyValueNet, task: &TaskSpec, episodes: usize, seed: u64) -> Result<f64> {
    if episodes == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for e in 0..episodes {
        let (mut env, mut obs) = envs::reset(task, rng::substream(seed, "eval-episode", e as u64))?;
        let mut rng = rng::rng_from(seed, "eval-policy", e as u64);
        loop {
            let (logits, _) = net.forward(&obs)?;
            let step = env.step(sample_action(&logits, &mut rng))?;
            if step.terminal {
                break;
            }
            obs = step.observation;
        }
        total += env.episode_return;
    }
    Ok(total / episodes as f64)
}

/// Mean return of a uniformly random policy.
pub fn random_policy_return(task: &TaskSpec, episodes: usize, seed: u64) -> Result<f64> {
    let net = PolicyValueNet::zeros(&crate::nets::NetSpec::new(
        task.observation_len(),
        &[1],
        envs::NUM_ACTIONS,
    ))?;
    evaluate(&net, task, episodes, seed)
}

/// Everything a member's training loop reads but never writes.
#[derive(Clone, Debug)]
pub struct TrainContext {
    pub suite: Vec<TaskSpec>,
    pub teachers: Option<TeacherSet>,
    pub schedule: Schedule,
    pub settings: LearnerSettings,
    pub refs: Option<ReferenceTable>,
    pub seed: u64,
}

impl TrainContext {
    pub fn num_teachers(&self) -> usize {
        self.teachers.as_ref().map_or(0, |t| t.teachers.len())
    }

    fn teacher_for(&self, task_id: &str) -> Result<Option<(usize, &Teacher)>> {
        match &self.teachers {
            None => Ok(None),
            Some(set) => {
                let i = set.router.route(task_id)?;
                Ok(Some((i, &set.teachers[i])))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.settings.validate()?;
        self.schedule.validate()?;
        if self.suite.is_empty() {
            return Err(Error::config("suite must contain at least one task"));
        }
        if let Some(set) = &self.teachers {
            set.check_compatible(&self.suite, envs::NUM_ACTIONS)?;
        }
        if !self.settings.rl_enabled && self.teachers.is_none() {
            return Err(Error::config("distill-only training needs a teacher"));
        }
        if let Some(refs) = &self.refs {
            for t in &self.suite {
                if refs.get(&t.task_id).is_none() {
                    return Err(Error::config(format!(
                        "reference table has no entry for task {}",
                        t.task_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Receives metric records and checkpoints as a run progresses.
pub trait RunObserver {
    fn on_metrics(&mut self, _record: &MetricRecord) -> Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _member: &PopulationMember) -> Result<()> {
        Ok(())
    }
    /// Called once per learner step; useful for statistics in tests.
    fn on_step(&mut self, _batch: &[Trajectory], _report: &StepReport) {}
}

pub struct NullObserver;

impl RunObserver for NullObserver {}

/// Keeps every metric record in memory.
#[derive(Default)]
pub struct CollectObserver {
    pub records: Vec<MetricRecord>,
}

impl RunObserver for CollectObserver {
    fn on_metrics(&mut self, record: &MetricRecord) -> Result<()> {
        self.records.push(record.clone());
        Ok(())
    }
}

/// Per-member training state that persists between PBT segments.
pub struct MemberRuntime {
    actors: Vec<Actor>,
    next_actor: usize,
    pending: VecDeque<Trajectory>,
    window: ScoreWindow,
    loss_sum: LossTerms,
    loss_steps: usize,
    last_lambdas: Vec<f64>,
    last_metrics: Option<u64>,
    last_checkpoint: u64,
}

impl MemberRuntime {
    /// `actors_per_task` actors for each task, ids assigned task-major.
    pub fn new(ctx: &TrainContext, member: &PopulationMember) -> Result<Self> {
        let a = ctx.settings.actors_per_task;
        let member_seed = rng::substream(ctx.seed, "member", member.id as u64);
        let mut actors = Vec::with_capacity(ctx.suite.len() * a);
        for (ti, task) in ctx.suite.iter().enumerate() {
            for k in 0..a {
                actors.push(Actor::new(ti * a + k, ti, task, member_seed)?);
            }
        }
        Ok(MemberRuntime {
            actors,
            next_actor: 0,
            pending: VecDeque::new(),
            window: ScoreWindow::new(ctx.suite.len(), ctx.settings.window),
            loss_sum: LossTerms::default(),
            loss_steps: 0,
            last_lambdas: Vec::new(),
            last_metrics: None,
            last_checkpoint: member.frames,
        })
    }

    pub fn num_actors(&self) -> usize {
        self.actors.len()
    }

    /// Current windowed return per task.
    pub fn task_returns(&mut self, ctx: &TrainContext, frames: u64) -> Vec<(String, Option<f64>)> {
        let w = self.window.all_windowed(frames);
        ctx.suite.iter().map(|t| t.task_id.clone()).zip(w).collect()
    }

    /// Score used for PBT selection: the capped suite score when a reference
    /// table exists, else the mean windowed return (missing tasks count 0).
    pub fn score(&mut self, ctx: &TrainContext, frames: u64) -> Result<f64> {
        let returns = self.task_returns(ctx, frames);
        score_of(&returns, ctx.refs.as_ref())
    }

    fn consume(&mut self, trajs: &[Trajectory], frames: u64) {
        for t in trajs {
            for &r in &t.completed_returns {
                self.window.record(t.task_index, frames, r);
            }
        }
    }

    fn record(
        &mut self,
        ctx: &TrainContext,
        member: &PopulationMember,
        task_returns: Vec<(String, Option<f64>)>,
    ) -> Result<MetricRecord> {
        let mean_capped_score = match &ctx.refs {
            Some(r) => Some(suite_score(&task_returns, r)?),
            None => None,
        };
        let mut loss = std::mem::take(&mut self.loss_sum);
        if self.loss_steps > 0 {
            let mut mean = LossTerms::default();
            mean.accumulate(&loss, 1.0 / self.loss_steps as f64);
            loss = mean;
        }
        self.loss_steps = 0;
        // records before the first learner step still carry one slot per teacher
        if loss.distill_loss.len() < ctx.num_teachers() {
            loss.distill_loss.resize(ctx.num_teachers(), 0.0);
        }
        let lambda = if self.last_lambdas.is_empty() {
            current_lambdas(&ctx.schedule, member, ctx.num_teachers())?
        } else {
            self.last_lambdas.clone()
        };
        self.last_metrics = Some(member.frames);
        Ok(MetricRecord {
            member_id: member.id,
            frames: member.frames,
            task_returns: task_returns.into_iter().collect::<BTreeMap<_, _>>(),
            mean_capped_score,
            lambda,
            learning_rate: member.hypers.learning_rate,
            entropy_cost: member.hypers.entropy_cost,
            loss,
        })
    }

    fn initial_record(
        &mut self,
        ctx: &TrainContext,
        member: &PopulationMember,
    ) -> Result<MetricRecord> {
        let eval_seed = rng::substream(ctx.seed, "eval", member.id as u64);
        let returns = par::map(&ctx.suite, |t| {
            evaluate(&member.net, t, ctx.settings.eval_episodes, eval_seed)
        });
        let task_returns = ctx
            .suite
            .iter()
            .zip(returns)
            .map(|(t, r)| r.map(|r| (t.task_id.clone(), Some(r))))
            .collect::<Result<Vec<_>>>()?;
        self.record(ctx, member, task_returns)
    }

    fn after_step(
        &mut self,
        ctx: &TrainContext,
        member: &PopulationMember,
        batch: &[Trajectory],
        report: &StepReport,
        observer: &mut dyn RunObserver,
    ) -> Result<()> {
        self.consume(batch, member.frames);
        self.loss_sum.accumulate(&report.terms, 1.0);
        self.loss_steps += 1;
        self.last_lambdas = report.lambdas.clone();
        observer.on_step(batch, report);
        let interval = ctx.settings.metrics_interval;
        if interval > 0 && member.frames / interval > self.last_metrics.unwrap_or(0) / interval {
            let returns = self.task_returns(ctx, member.frames);
            let rec = self.record(ctx, member, returns)?;
            observer.on_metrics(&rec)?;
        }
        let ck = ctx.settings.checkpoint_interval;
        if ck > 0 && member.frames / ck > self.last_checkpoint / ck {
            self.last_checkpoint = member.frames;
            observer.on_checkpoint(member)?;
        }
        Ok(())
    }

    /// Emit a record for the current frame count unless one was just emitted.
    pub fn flush_metrics(
        &mut self,
        ctx: &TrainContext,
        member: &PopulationMember,
        observer: &mut dyn RunObserver,
    ) -> Result<()> {
        if self.last_metrics != Some(member.frames) {
            let returns = self.task_returns(ctx, member.frames);
            let rec = self.record(ctx, member, returns)?;
            observer.on_metrics(&rec)?;
        }
        Ok(())
    }
}

fn score_of(returns: &[(String, Option<f64>)], refs: Option<&ReferenceTable>) -> Result<f64> {
    match refs {
        Some(r) => suite_score(returns, r),
        None => Ok(returns.iter().map(|(_, r)| r.unwrap_or(0.0)).sum::<f64>()
            / returns.len().max(1) as f64),
    }
}

/// Train `member` until it has consumed at least `until_frames` frames, then
/// record its score. The first call on a fresh member emits an
/// initial-network record at frame 0.
pub fn run_segment(
    ctx: &TrainContext,
    member: &mut PopulationMember,
    rt: &mut MemberRuntime,
    until_frames: u64,
    observer: &mut dyn RunObserver,
) -> Result<()> {
    if rt.last_metrics.is_none() {
        let rec = rt.initial_record(ctx, member)?;
        observer.on_metrics(&rec)?;
    }
    if member.frames < until_frames {
        if ctx.settings.deterministic {
            segment_sequential(ctx, member, rt, until_frames, observer)?;
        } else {
            segment_threaded(ctx, member, rt, until_frames, observer)?;
        }
    }
    let score = rt.score(ctx, member.frames)?;
    member.record_score(score);
    Ok(())
}

fn segment_sequential(
    ctx: &TrainContext,
    member: &mut PopulationMember,
    rt: &mut MemberRuntime,
    until_frames: u64,
    observer: &mut dyn RunObserver,
) -> Result<()> {
    let s = &ctx.settings;
    while member.frames < until_frames {
        // Fill the queue to capacity, one unroll per actor in turn, then
        // consume a batch from the front.
        while rt.pending.len() < s.queue_capacity.max(s.batch_size) {
            let i = rt.next_actor;
            rt.next_actor = (i + 1) % rt.actors.len();
            let teacher = ctx.teacher_for(&rt.actors[i].task().task_id)?;
            let traj = rt.actors[i].unroll(&member.net, member.version, teacher, s.unroll_length)?;
            rt.pending.push_back(traj);
        }
        let batch: Vec<Trajectory> = rt.pending.drain(..s.batch_size).collect();
        let report = learner_step(&batch, member, &ctx.schedule, ctx.num_teachers(), s)?;
        rt.after_step(ctx, member, &batch, &report, observer)?;
    }
    Ok(())
}

fn segment_threaded(
    ctx: &TrainContext,
    member: &mut PopulationMember,
    rt: &mut MemberRuntime,
    until_frames: u64,
    observer: &mut dyn RunObserver,
) -> Result<()> {
    let s = &ctx.settings;
    let queue = TrajectoryQueue::new(s.queue_capacity)?;
    let snapshot = RwLock::new(Arc::new(Snapshot {
        net: member.net.clone(),
        version: member.version,
    }));
    let actor_error: Mutex<Option<Error>> = Mutex::new(None);
    let mut actors = std::mem::take(&mut rt.actors);
    let mut pending = std::mem::take(&mut rt.pending);

    let outcome = std::thread::scope(|scope| -> Result<()> {
        for actor in actors.iter_mut() {
            let (queue, snapshot, actor_error) = (&queue, &snapshot, &actor_error);
            scope.spawn(move || {
                let teacher = match ctx.teacher_for(&actor.task().task_id) {
                    Ok(t) => t,
                    Err(e) => {
                        actor_error.lock().unwrap().get_or_insert(e);
                        queue.close();
                        return;
                    }
                };
                loop {
                    // Snapshots are refreshed only between unrolls.
                    let snap = Arc::clone(&snapshot.read().unwrap());
                    match actor.unroll(&snap.net, snap.version, teacher, s.unroll_length) {
                        Ok(traj) => {
                            if queue.push(traj).is_err() {
                                return;
                            }
                        }
                        Err(e) => {
                            actor_error.lock().unwrap().get_or_insert(e);
                            queue.close();
                            return;
                        }
                    }
                }
            });
        }

        let result = (|| -> Result<()> {
            while member.frames < until_frames {
                let mut batch = Vec::with_capacity(s.batch_size);
                while batch.len() < s.batch_size {
                    if let Some(t) = pending.pop_front() {
                        batch.push(t);
                        continue;
                    }
                    match queue.pop_timeout(s.timeout)? {
                        Some(t) => batch.push(t),
                        None => {
                            return Err(actor_error.lock().unwrap().take().unwrap_or_else(|| {
                                Error::Timeout(format!("actors stopped: {}", queue.stats()))
                            }))
                        }
                    }
                }
                let report = learner_step(&batch, member, &ctx.schedule, ctx.num_teachers(), s)?;
                *snapshot.write().unwrap() = Arc::new(Snapshot {
                    net: member.net.clone(),
                    version: member.version,
                });
                rt.after_step(ctx, member, &batch, &report, observer)?;
            }
            Ok(())
        })();
        queue.close();
        result
    });
    // Unconsumed unrolls carry over to the next segment.
    pending.extend(queue.drain());
    rt.pending = pending;
    rt.actors = actors;
    outcome
}

/// Train a single member for `frames` frames from its current state.
pub fn run_member(
    ctx: &TrainContext,
    member: &mut PopulationMember,
    frames: u64,
    observer: &mut dyn RunObserver,
) -> Result<MemberRuntime> {
    ctx.validate()?;
    let mut rt = MemberRuntime::new(ctx, member)?;
    let target = member.frames + frames;
    run_segment(ctx, member, &mut rt, target, observer)?;
    rt.flush_metrics(ctx, member, observer)?;
    Ok(rt)
}
