//! Offline comparison tables over run directories.
//!
//! The CSV mirrors the usual "Score at Frames" / "Frames to Reach Score"
//! layout: one row per run, then one improvement row per non-baseline run
//! giving the relative score change and the speedup in frames. The first run
//! is the baseline.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::METRICS_FILE;
use crate::metrics::{frames_to_score, read_metrics, top_k_stream, MetricRecord};

/// Number of population members averaged per frame stamp.
pub const TOP_K: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct RunCurve {
    pub name: String,
    /// `(frames, score)`, frames increasing.
    pub stream: Vec<(u64, f64)>,
}

/// Capped suite score when available, else the mean task return.
pub fn record_score(r: &MetricRecord) -> Option<f64> {
    r.mean_capped_score.or_else(|| r.mean_return())
}

pub fn curve_from_records(name: &str, records: &[MetricRecord]) -> RunCurve {
    RunCurve {
        name: name.to_string(),
        stream: top_k_stream(records, TOP_K, record_score),
    }
}

pub fn load_run(dir: &Path) -> Result<RunCurve> {
    let records = read_metrics(&dir.join(METRICS_FILE))?;
    if records.is_empty() {
        return Err(Error::format(dir.join(METRICS_FILE), "no metric records"));
    }
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("run")
        .to_string();
    Ok(curve_from_records(&name, &records))
}

/// Score of the last record at or before `frames`.
pub fn score_at(stream: &[(u64, f64)], frames: u64) -> Option<f64> {
    stream
        .iter()
        .take_while(|(f, _)| *f <= frames)
        .last()
        .map(|(_, s)| *s)
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Relative change in percent, `+12.3%`.
pub fn improvement(base: f64, other: f64) -> Option<f64> {
    (base != 0.0).then(|| 100.0 * (other - base) / base.abs())
}

/// Frames the baseline needed divided by frames the run needed. Two runs
/// that cross at the same stamp (including frame 0) are 1x; a run that
/// crosses at frame 0 against a baseline that did not has no finite ratio.
pub fn speedup(base_frames: u64, other_frames: u64) -> Option<f64> {
    if base_frames == other_frames {
        return Some(1.0);
    }
    (other_frames > 0).then(|| base_frames as f64 / other_frames as f64)
}

pub fn report(runs: &[RunCurve], score_frames: &[u64], thresholds: &[f64]) -> Result<String> {
    if runs.is_empty() {
        return Err(Error::config("report needs at least one run directory"));
    }
    let mut s = String::from("run");
    for f in score_frames {
        let _ = write!(s, ",score_at_{f}");
    }
    for t in thresholds {
        let _ = write!(s, ",frames_to_{t}");
    }
    s.push('\n');
    for r in runs {
        s.push_str(&r.name);
        for &f in score_frames {
            let _ = write!(s, ",{}", fmt_opt(score_at(&r.stream, f).map(|v| format!("{v:.2}"))));
        }
        for &t in thresholds {
            let _ = write!(s, ",{}", fmt_opt(frames_to_score(&r.stream, t)));
        }
        s.push('\n');
    }
    let base = &runs[0];
    for r in &runs[1..] {
        let _ = write!(s, "improvement {} vs {}", r.name, base.name);
        for &f in score_frames {
            let v = score_at(&base.stream, f)
                .zip(score_at(&r.stream, f))
                .and_then(|(b, o)| improvement(b, o));
            let _ = write!(s, ",{}", fmt_opt(v.map(|v| format!("{v:+.1}%"))));
        }
        for &t in thresholds {
            let v = frames_to_score(&base.stream, t)
                .zip(frames_to_score(&r.stream, t))
                .and_then(|(b, o)| speedup(b, o));
            let _ = write!(s, ",{}", fmt_opt(v.map(|v| format!("{v:.2}x"))));
        }
        s.push('\n');
    }
    Ok(s)
}
