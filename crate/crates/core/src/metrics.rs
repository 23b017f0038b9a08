//! Windowed scores, reference normalisation and metric records.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossTerms;

/// Trailing window over completed episodes, per task. Episodes are stamped
/// with the learner frame count at which they were consumed.
#[derive(Clone, Debug)]
pub struct ScoreWindow {
    window: u64,
    episodes: Vec<VecDeque<(u64, f64)>>,
    last_known: Vec<Option<f64>>,
}

impl ScoreWindow {
    pub fn new(num_tasks: usize, window: u64) -> Self {
        ScoreWindow {
            window,
            episodes: vec![VecDeque::new(); num_tasks],
            last_known: vec![None; num_tasks],
        }
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    pub fn record(&mut self, task: usize, frame: u64, episode_return: f64) {
        self.episodes[task].push_back((frame, episode_return));
    }

    /// Mean return of episodes stamped within `(now - window, now]`. Falls
    /// back to the last non-empty window, or `None` if the task has never
    /// completed an episode.
    pub fn windowed_return(&mut self, task: usize, now: u64) -> Option<f64> {
        let start = now.saturating_sub(self.window);
        let q = &mut self.episodes[task];
        while q.front().is_some_and(|&(f, _)| f <= start && now >= self.window) {
            q.pop_front();
        }
        let in_window: Vec<f64> = q
            .iter()
            .filter(|&&(f, _)| f <= now)
            .map(|&(_, r)| r)
            .collect();
        if !in_window.is_empty() {
            let mean = in_window.iter().sum::<f64>() / in_window.len() as f64;
            self.last_known[task] = Some(mean);
        }
        self.last_known[task]
    }

    pub fn all_windowed(&mut self, now: u64) -> Vec<Option<f64>> {
        (0..self.episodes.len())
            .map(|t| self.windowed_return(t, now))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub task_id: String,
    pub random_score: f64,
    pub reference_score: f64,
}

/// Per-task anchors for normalisation: a random policy maps to 0 and the
/// reference agent maps to 100.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReferenceTable {
    pub entries: Vec<ReferenceEntry>,
    /// Tasks whose reference agent failed to beat the random policy.
    pub flagged: Vec<String>,
}

const TABLE_HEADER: &str = "kickstart-reference-table v1";

impl ReferenceTable {
    pub fn get(&self, task_id: &str) -> Option<&ReferenceEntry> {
        self.entries.iter().find(|e| e.task_id == task_id)
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if !(e.reference_score > e.random_score) {
                return Err(Error::config(format!(
                    "reference score for {} ({}) does not exceed random score ({})",
                    e.task_id, e.reference_score, e.random_score
                )));
            }
        }
        Ok(())
    }

    /// Plain-text form: a version line, optional `#` comments, then one
    /// tab-separated row per task.
    pub fn to_text(&self) -> String {
        let mut s = format!("{TABLE_HEADER}\n");
        for f in &self.flagged {
            let _ = writeln!(s, "# flagged: {f}");
        }
        s.push_str("task_id\trandom_score\treference_score\n");
        for e in &self.entries {
            let _ = writeln!(s, "{}\t{:?}\t{:?}", e.task_id, e.random_score, e.reference_score);
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == TABLE_HEADER => {}
            _ => return Err(Error::format(path, format!("missing '{TABLE_HEADER}' header"))),
        }
        let mut table = ReferenceTable::default();
        let mut saw_columns = false;
        for (n, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(task) = rest.trim().strip_prefix("flagged:") {
                    table.flagged.push(task.trim().to_string());
                }
                continue;
            }
            if !saw_columns {
                if line.split('\t').collect::<Vec<_>>() != ["task_id", "random_score", "reference_score"] {
                    return Err(Error::format(path, format!("line {}: bad column header", n + 1)));
                }
                saw_columns = true;
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::format(path, format!("line {}: bad number {s:?}", n + 1)))
            };
            if cols.len() != 3 {
                return Err(Error::format(path, format!("line {}: expected 3 columns", n + 1)));
            }
            table.entries.push(ReferenceEntry {
                task_id: cols[0].to_string(),
                random_score: parse(cols[1])?,
                reference_score: parse(cols[2])?,
            });
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// `100 * (return - random) / (reference - random)`, capped at 100.
pub fn capped_normalised(task_id: &str, task_return: f64, refs: &ReferenceTable) -> Result<f64> {
    let e = refs
        .get(task_id)
        .ok_or_else(|| Error::config(format!("no reference scores for task {task_id}")))?;
    let score = 100.0 * (task_return - e.random_score) / (e.reference_score - e.random_score);
    Ok(score.min(100.0))
}

/// Unweighted mean of per-task capped scores. A task with no windowed return
/// contributes 0.
pub fn suite_score(windows: &[(String, Option<f64>)], refs: &ReferenceTable) -> Result<f64> {
    if windows.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (task, ret) in windows {
        total += match ret {
            Some(r) => capped_normalised(task, *r, refs)?,
            None => 0.0,
        };
    }
    Ok(total / windows.len() as f64)
}

/// First frame stamp at which `score >= threshold`, scanning in order.
pub fn frames_to_score(stream: &[(u64, f64)], threshold: f64) -> Option<u64> {
    stream.iter().find(|(_, s)| *s >= threshold).map(|(f, _)| *f)
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub member_id: usize,
    pub frames: u64,
    /// Windowed return per task id; `null` before the first episode ends.
    pub task_returns: BTreeMap<String, Option<f64>>,
    /// Present only when a reference table is configured.
    pub mean_capped_score: Option<f64>,
    pub lambda: Vec<f64>,
    pub learning_rate: f64,
    pub entropy_cost: f64,
    /// Mean loss terms over the learner steps since the previous record.
    pub loss: LossTerms,
}

impl MetricRecord {
    /// Mean of the available per-task windowed returns.
    pub fn mean_return(&self) -> Option<f64> {
        let vals: Vec<f64> = self.task_returns.values().flatten().copied().collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    pub fn task_return(&self, task_id: &str) -> Option<f64> {
        self.task_returns.get(task_id).copied().flatten()
    }
}

/// Parse a JSON-lines metrics file.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))
        })
        .collect()
}

/// Collapse a multi-member metric stream to one score per frame stamp by
/// averaging the best `top_k` members at each stamp.
pub fn top_k_stream(
    records: &[MetricRecord],
    top_k: usize,
    score: impl Fn(&MetricRecord) -> Option<f64>,
) -> Vec<(u64, f64)> {
    let mut by_frame: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in records {
        if let Some(s) = score(r) {
            by_frame.entry(r.frames).or_default().push(s);
        }
    }
    by_frame
        .into_iter()
        .map(|(f, mut v)| {
            v.sort_by(|a, b| b.total_cmp(a));
            let k = top_k.min(v.len()).max(1);
            (f, v[..k].iter().sum::<f64>() / k as f64)
        })
        .collect()
}
