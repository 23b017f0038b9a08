//! A small, seedable grid-world suite.
//!
//! Every task shares the same action set and the same observation layout
//! (three one-hot `grid_size x grid_size` planes: agent, objects, walls), so a
//! single policy head can serve the whole suite. Tasks differ only in what the
//! objects are and how they pay out:
//!
//! * `sparse-goal`: one goal cell, placed uniformly; the agent starts at
//!   least `grid_size - 1` steps (Manhattan) away and must use the interact
//!   action on the goal, which pays `goal` and ends the episode.
//! * `dense-forage`: several items; stepping onto one pays `item` and the
//!   item respawns elsewhere.
//! * `tag-K`: `K` targets wander randomly; the interact action tags every
//!   target within `tag_range` (Manhattan) for `tag` each, and tagged targets
//!   respawn. `tag-1` and `tag-3` share all mechanics and differ only in `K`.

use std::collections::HashSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const NUM_ACTIONS: usize = 5;
pub const NUM_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    /// Tag in `tag-K`, collect the goal in `sparse-goal`; a no-op elsewhere.
    Interact,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Interact,
    ];

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Interact => (0, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    SparseGoal,
    DenseForage,
    Tag { targets: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardStructure {
    pub goal: f64,
    pub item: f64,
    pub tag: f64,
}

impl Default for RewardStructure {
    fn default() -> Self {
        RewardStructure {
            goal: 10.0,
            item: 1.0,
            tag: 1.0,
        }
    }
}

pub type Pos = (usize, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub grid_size: usize,
    pub kind: TaskKind,
    pub episode_limit: usize,
    pub rewards: RewardStructure,
    /// Number of items in `dense-forage`.
    pub items: usize,
    /// Tagging reach, Manhattan distance.
    pub tag_range: usize,
    pub walls: Vec<Pos>,
}

pub const DEFAULT_GRID: usize = 8;

impl TaskSpec {
    /// Build one of the named tasks: `sparse-goal`, `dense-forage` or `tag-K`.
    pub fn named(task_id: &str, grid_size: usize) -> Result<TaskSpec> {
        let base = TaskSpec {
            task_id: task_id.to_string(),
            grid_size,
            kind: TaskKind::SparseGoal,
            episode_limit: 100,
            rewards: RewardStructure::default(),
            items: 0,
            tag_range: 0,
            walls: Vec::new(),
        };
        let spec = match task_id {
            "sparse-goal" => TaskSpec {
                episode_limit: 4 * grid_size,
                walls: centre_block(grid_size),
                ..base
            },
            "dense-forage" => TaskSpec {
                kind: TaskKind::DenseForage,
                episode_limit: 40,
                items: 4,
                walls: centre_block(grid_size),
                ..base
            },
            id if id.starts_with("tag-") => {
                let k: usize = id[4..]
                    .parse()
                    .map_err(|_| Error::config(format!("unknown task_id {id:?}")))?;
                TaskSpec {
                    kind: TaskKind::Tag { targets: k },
                    episode_limit: 60,
                    tag_range: 0,
                    ..base
                }
            }
            other => return Err(Error::config(format!("unknown task_id {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 {
            return Err(Error::config(format!("{}: grid_size must be >= 2", self.task_id)));
        }
        if self.episode_limit == 0 {
            return Err(Error::config(format!("{}: episode_limit must be > 0", self.task_id)));
        }
        if let Some(w) = self
            .walls
            .iter()
            .find(|(r, c)| *r >= self.grid_size || *c >= self.grid_size)
        {
            return Err(Error::config(format!("{}: wall {w:?} outside grid", self.task_id)));
        }
        let objects = self.num_objects();
        if objects == 0 {
            return Err(Error::config(format!("{}: task places no objects", self.task_id)));
        }
        let free = self.grid_size * self.grid_size - self.wall_set().len();
        if free < objects + 1 {
            return Err(Error::config(format!("{}: not enough free cells", self.task_id)));
        }
        for r in [self.rewards.goal, self.rewards.item, self.rewards.tag] {
            if !r.is_finite() {
                return Err(Error::config(format!("{}: reward must be finite", self.task_id)));
            }
        }
        Ok(())
    }

    pub fn num_objects(&self) -> usize {
        match self.kind {
            TaskKind::SparseGoal => 1,
            TaskKind::DenseForage => self.items,
            TaskKind::Tag { targets } => targets,
        }
    }

    pub fn observation_len(&self) -> usize {
        NUM_CHANNELS * self.grid_size * self.grid_size
    }

    /// Largest reward a single step can produce.
    pub fn max_step_reward(&self) -> f64 {
        match self.kind {
            TaskKind::SparseGoal => self.rewards.goal,
            TaskKind::DenseForage => self.rewards.item,
            TaskKind::Tag { targets } => self.rewards.tag * targets as f64,
        }
    }

    fn wall_set(&self) -> HashSet<Pos> {
        self.walls.iter().copied().collect()
    }

    fn free_cells(&self) -> Vec<Pos> {
        let walls = self.wall_set();
        (0..self.grid_size)
            .flat_map(|r| (0..self.grid_size).map(move |c| (r, c)))
            .filter(|p| !walls.contains(p))
            .collect()
    }
}

/// Two wall cells near the middle of the grid.
fn centre_block(grid: usize) -> Vec<Pos> {
    if grid < 5 {
        return Vec::new();
    }
    let m = grid / 2;
    vec![(m - 1, m), (m, m)]
}

fn manhattan(a: Pos, b: Pos) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1)
}

/// Cells at least `min_dist` from `from`; if there are none, the farthest
/// cells available.
fn far_cells(free: &[Pos], from: Pos, min_dist: usize) -> Vec<Pos> {
    let best = free.iter().map(|&p| manhattan(p, from)).max().unwrap_or(0);
    let d = min_dist.min(best).max(1);
    free.iter()
        .copied()
        .filter(|&p| manhattan(p, from) >= d)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub tasks: Vec<String>,
    pub grid_size: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            tasks: vec![
                "sparse-goal".into(),
                "dense-forage".into(),
                "tag-1".into(),
                "tag-3".into(),
            ],
            grid_size: DEFAULT_GRID,
        }
    }
}

/// Materialise a suite, preserving the configured order.
pub fn suite(config: &SuiteConfig) -> Result<Vec<TaskSpec>> {
    if config.tasks.is_empty() {
        return Err(Error::config("suite must name at least one task"));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(config.tasks.len());
    for id in &config.tasks {
        if !seen.insert(id.as_str()) {
            return Err(Error::config(format!("duplicate task_id {id:?} in suite")));
        }
        out.push(TaskSpec::named(id, config.grid_size)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

/// Live episode. Owns its task description and random stream.
#[derive(Clone, Debug)]
pub struct EnvState {
    task: TaskSpec,
    walls: HashSet<Pos>,
    free: Vec<Pos>,
    pub agent: Pos,
    /// Goal, items or targets depending on the task.
    pub objects: Vec<Pos>,
    pub steps: usize,
    pub episode_return: f64,
    done: bool,
    rng: Rng,
}

/// Start an episode. The layout is a pure function of `(task, seed)`.
pub fn reset(task: &TaskSpec, seed: u64) -> Result<(EnvState, Vec<f64>)> {
    task.validate()?;
    let mut layout = rng::rng_from(seed, "layout", 0);
    let free = task.free_cells();
    let mut objects = Vec::with_capacity(task.num_objects());
    let agent = if task.kind == TaskKind::SparseGoal {
        let goal = free[layout.random_range(0..free.len())];
        objects.push(goal);
        let far = far_cells(&free, goal, task.grid_size - 1);
        far[layout.random_range(0..far.len())]
    } else {
        free[layout.random_range(0..free.len())]
    };
    while objects.len() < task.num_objects() {
        let p = free[layout.random_range(0..free.len())];
        if p != agent && !objects.contains(&p) {
            objects.push(p);
        }
    }
    let state = EnvState {
        walls: task.wall_set(),
        free,
        task: task.clone(),
        agent,
        objects,
        steps: 0,
        episode_return: 0.0,
        done: false,
        rng: rng::rng_from(seed, "dynamics", 0),
    };
    let obs = state.observation();
    Ok((state, obs))
}

impl EnvState {
    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observation(&self) -> Vec<f64> {
        let g = self.task.grid_size;
        let plane = g * g;
        let mut obs = vec![0.0; NUM_CHANNELS * plane];
        obs[self.agent.0 * g + self.agent.1] = 1.0;
        for &(r, c) in &self.objects {
            obs[plane + r * g + c] = 1.0;
        }
        for &(r, c) in &self.task.walls {
            obs[2 * plane + r * g + c] = 1.0;
        }
        obs
    }

    fn moved(&self, from: Pos, action: Action) -> Pos {
        let (dr, dc) = action.delta();
        let g = self.task.grid_size as isize;
        let (r, c) = (from.0 as isize + dr, from.1 as isize + dc);
        if r < 0 || c < 0 || r >= g || c >= g {
            return from;
        }
        let to = (r as usize, c as usize);
        if self.walls.contains(&to) {
            from
        } else {
            to
        }
    }

    /// A free cell not occupied by the agent or any other object.
    fn respawn_cell(&mut self, skip: usize) -> Pos {
        loop {
            let p = self.free[self.rng.random_range(0..self.free.len())];
            let clash = p == self.agent
                || self
                    .objects
                    .iter()
                    .enumerate()
                    .any(|(i, o)| i != skip && *o == p);
            if !clash {
                return p;
            }
        }
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        if self.done {
            return Err(Error::Caller("step called on a finished episode".into()));
        }
        let action = Action::from_index(action)
            .ok_or_else(|| Error::Caller(format!("action {action} out of range")))?;

        self.agent = self.moved(self.agent, action);
        let mut reward = 0.0;
        match self.task.kind {
            TaskKind::SparseGoal => {
                if action == Action::Interact && self.agent == self.objects[0] {
                    reward = self.task.rewards.goal;
                    self.done = true;
                }
            }
            TaskKind::DenseForage => {
                if let Some(i) = self.objects.iter().position(|&o| o == self.agent) {
                    reward = self.task.rewards.item;
                    self.objects[i] = self.respawn_cell(i);
                }
            }
            TaskKind::Tag { .. } => {
                if action == Action::Interact {
                    for i in 0..self.objects.len() {
                        let (r, c) = self.objects[i];
                        let dist = r.abs_diff(self.agent.0) + c.abs_diff(self.agent.1);
                        if dist <= self.task.tag_range {
                            reward += self.task.rewards.tag;
                            self.objects[i] = self.respawn_cell(i);
                        }
                    }
                }
                for i in 0..self.objects.len() {
                    let a = Action::ALL[self.rng.random_range(0..NUM_ACTIONS)];
                    self.objects[i] = self.moved(self.objects[i], a);
                }
            }
        }
        self.steps += 1;
        if self.steps >= self.task.episode_limit {
            self.done = true;
        }
        self.episode_return += reward;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            terminal: self.done,
        })
    }
}
