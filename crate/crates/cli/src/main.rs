use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use kickstart::config::{ExperimentConfig, Mode};
use kickstart::experiment::{self, RunOptions};
use kickstart::report;

/// Kickstarting experiments on a toy grid-world suite.
#[derive(Parser, Debug)]
#[command(name = "kickstart", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (flat key = value file).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long)]
    deterministic: bool,
    /// Replace an existing non-empty output directory.
    #[arg(long)]
    overwrite: bool,
    /// Output directory (overrides output_dir in the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Measure random and expert returns per task and write a reference table.
    Calibrate(Common),
    /// Train a teacher from scratch on the configured suite.
    TrainExpert(Common),
    /// Train without a teacher.
    Scratch(Common),
    /// Train with one or more teachers (kickstart-single or kickstart-multi).
    Kickstart(Common),
    /// Distillation only, no reinforcement learning losses.
    Distill(Common),
    /// Population based training over the configured mode.
    Pbt(Common),
    /// Compare run directories; the first is the baseline.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Frame stamps for the "score at" columns.
        #[arg(long, value_delimiter = ',')]
        frames: Vec<u64>,
        /// Score thresholds for the "frames to reach" columns.
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<f64>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate every artifact in an output directory.
    Selfcheck { dir: PathBuf },
}

/// Configuration problems found by the CLI itself.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load(common: &Common) -> anyhow::Result<(ExperimentConfig, PathBuf, RunOptions)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| usage("no output directory: pass --out or set output_dir"))?;
    let opts = RunOptions {
        deterministic: common.deterministic,
        overwrite: common.overwrite,
    };
    Ok((cfg, out, opts))
}

fn require_mode(cfg: &ExperimentConfig, allowed: &[Mode], cmd: &str) -> anyhow::Result<()> {
    if !allowed.contains(&cfg.mode) {
        return Err(usage(format!(
            "subcommand {cmd} cannot run mode {}",
            cfg.mode.as_str()
        )));
    }
    Ok(())
}

fn train(common: &Common, allowed: &[Mode], cmd: &str) -> anyhow::Result<()> {
    let (cfg, out, opts) = load(common)?;
    require_mode(&cfg, allowed, cmd)?;
    if cmd == "pbt" && cfg.population_size < 2 {
        return Err(usage("pbt needs pbt.population_size >= 2"));
    }
    let summary = experiment::run(&cfg, &out, opts)?;
    for r in &summary.final_records {
        println!(
            "member {} frames {} mean_return {} mean_capped_score {}",
            r.member_id,
            r.frames,
            fmt(r.mean_return()),
            fmt(r.mean_capped_score)
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Calibrate(c) => {
            let (cfg, out, opts) = load(&c)?;
            let table = experiment::calibrate(&cfg, &out, opts)?;
            print!("{}", table.to_text());
        }
        Command::TrainExpert(c) => {
            let (cfg, out, opts) = load(&c)?;
            let t = experiment::run_train_expert(&cfg, &out, opts)?;
            println!(
                "expert on {} after {} frames -> {}",
                t.trained_tasks().join(","),
                t.provenance().frames,
                out.join("expert.teacher").display()
            );
        }
        Command::Scratch(c) => train(&c, &[Mode::Scratch], "scratch")?,
        Command::Kickstart(c) => train(
            &c,
            &[Mode::KickstartSingle, Mode::KickstartMulti],
            "kickstart",
        )?,
        Command::Distill(c) => train(&c, &[Mode::DistillOnly], "distill")?,
        Command::Pbt(c) => train(
            &c,
            &[
                Mode::Scratch,
                Mode::KickstartSingle,
                Mode::KickstartMulti,
                Mode::DistillOnly,
            ],
            "pbt",
        )?,
        Command::Report {
            runs,
            frames,
            thresholds,
            out,
        } => {
            let curves = runs
                .iter()
                .map(|d| report::load_run(d))
                .collect::<Result<Vec<_>, _>>()?;
            let csv = report::report(&curves, &frames, &thresholds)?;
            match out {
                Some(p) => write_file(&p, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Selfcheck { dir } => {
            let checked = experiment::selfcheck(&dir)?;
            if checked.is_empty() {
                bail!("no artifacts found under {}", dir.display());
            }
            for f in checked {
                println!("ok {f}");
            }
        }
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<UsageError>().is_some()
            || c
                .downcast_ref::<kickstart::Error>()
                .is_some_and(kickstart::Error::is_config)
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config_error(&e) { 1 } else { 2 })
        }
    }
}
