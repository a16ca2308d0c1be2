//! Experiment records and the observer that produces a run's files.
//!
//! Every file written under `output_dir/name` is listed, by a path
//! relative to that directory, in exactly one place: the experiment record
//! (`record.json`) lists the echoed configuration, the tables and figures
//! it rendered and one run record per job, and each run record lists its
//! metrics streams, checkpoints and figures.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use msgan_core::eval::{accuracy, AblationTable, Alignment, EvalSplit, OrderingFlag, Standard, SweepMatrix};
use msgan_core::networks::ParameterGroups;
use msgan_core::trainer::{Observer, Phase, PhaseReport, Trainer};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointMeta};
use crate::error::{Error, IoContext, Result};

pub const RECORD_FILE: &str = "record.json";
pub const RECORD_SCHEMA: u32 = 1;

/// Content hash of the sources this binary was built from.
pub const CODE_HASH: &str = env!("MSGAN_CODE_HASH");

/// File-name form of a run label: lowercase, `+` becomes `-` and anything
/// else outside `[a-z0-9._-]` becomes `_`.
pub fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| match c.to_ascii_lowercase() {
            c @ ('a'..='z' | '0'..='9' | '.' | '-' | '_') => c,
            '+' => '-',
            _ => '_',
        })
        .collect()
}

/// One unit of work, trained in its own process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Job {
    Standard { standard: Standard, seed: u64 },
    Variant { variant: String, seed: u64 },
    Sweep { kl: f64, nll: f64, seed: u64 },
}

impl Job {
    pub fn seed(&self) -> u64 {
        match *self {
            Job::Standard { seed, .. } | Job::Variant { seed, .. } | Job::Sweep { seed, .. } => seed,
        }
    }

    /// Run directory relative to the experiment directory.
    pub fn dir(&self) -> PathBuf {
        let seed = PathBuf::from(self.seed().to_string());
        match self {
            Job::Standard { .. } => seed,
            Job::Variant { variant, .. } => seed.join("ablation").join(slug(variant)),
            Job::Sweep { kl, nll, .. } => seed.join("sweep").join(format!("kl{kl}_nll{nll}")),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Job::Standard { standard, seed } => format!("{} seed {seed}", standard.name()),
            Job::Variant { variant, seed } => format!("{variant} seed {seed}"),
            Job::Sweep { kl, nll, seed } => format!("kl {kl} nll {nll} seed {seed}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub label: String,
    pub step: u64,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub label: String,
    pub step: u64,
    pub accuracy: f64,
}

/// A trained model inside a job and the checkpoint holding its final
/// parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub accuracy: f64,
    pub checkpoint: String,
}

/// Everything one job produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub experiment: String,
    pub job: Job,
    pub code_hash: String,
    /// The normalized configuration, byte for byte as echoed to
    /// `config.toml`.
    pub config_snapshot: String,
    /// Reported target accuracy of the job.
    pub accuracy: f64,
    pub runs: Vec<RunSummary>,
    pub alignment: Option<Alignment>,
    pub evaluations: Vec<Evaluation>,
    pub metrics: Vec<String>,
    pub checkpoints: Vec<CheckpointRef>,
    pub figures: Vec<String>,
    pub wallclock_ms: u64,
}

impl RunRecord {
    /// The run whose accuracy is reported.
    pub fn best(&self) -> Option<&RunSummary> {
        self.runs.iter().find(|r| r.accuracy == self.accuracy)
    }
}

/// Accuracy of one standard across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardRow {
    pub standard: Standard,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// The top-level record of `output_dir/name`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub schema_version: u32,
    pub name: String,
    pub code_hash: String,
    pub config_snapshot: String,
    pub config_path: String,
    /// Commands that contributed, in order.
    pub commands: Vec<String>,
    /// Run record paths, one per job.
    pub runs: Vec<String>,
    pub standards: Vec<StandardRow>,
    pub ablation: Option<AblationTable>,
    pub ablation_flags: Vec<OrderingFlag>,
    pub sweep: Option<SweepMatrix>,
    pub tables: Vec<String>,
    pub figures: Vec<String>,
    /// Summed over every job, in process wallclock.
    pub wallclock_ms: u64,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(dir)?;
    }
    let json = serde_json::to_string_pretty(value).expect("records serialize");
    fs::write(path, json + "\n").at(path)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Slash-separated form of a relative path.
pub fn rel(path: &Path) -> String {
    path.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// One line of a metrics stream.
#[derive(Serialize)]
struct MetricLine<'a> {
    step: u64,
    source_index: Option<usize>,
    phase: Phase,
    losses: &'a std::collections::BTreeMap<String, f64>,
    wallclock_ms: u64,
}

/// Streams phase losses as NDJSON, writes periodic checkpoints and scores
/// intermediate models. One metrics file is opened per model trained.
pub struct RunObserver<'a> {
    exp_dir: PathBuf,
    run_dir: PathBuf,
    split: &'a EvalSplit,
    /// Name files after the run label even for a single run.
    per_run_files: bool,
    eval_every: u64,
    label: String,
    writer: Option<BufWriter<File>>,
    started: Instant,
    pub metrics: Vec<String>,
    pub checkpoints: Vec<CheckpointRef>,
    pub evaluations: Vec<Evaluation>,
}

impl<'a> RunObserver<'a> {
    /// `run_dir` is relative to `exp_dir`.
    pub fn new(exp_dir: &Path, run_dir: &Path, split: &'a EvalSplit, per_run_files: bool, eval_every: u64) -> Self {
        Self {
            exp_dir: exp_dir.to_path_buf(),
            run_dir: run_dir.to_path_buf(),
            split,
            per_run_files,
            eval_every,
            label: String::new(),
            writer: None,
            started: Instant::now(),
            metrics: Vec::new(),
            checkpoints: Vec::new(),
            evaluations: Vec::new(),
        }
    }

    pub fn elapsed_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    fn file_name(&self, stem: &str, ext: &str) -> PathBuf {
        if self.per_run_files {
            PathBuf::from(format!("{stem}-{}.{ext}", slug(&self.label)))
        } else {
            PathBuf::from(format!("{stem}.{ext}"))
        }
    }

    /// Relative path of the final checkpoint of the run labelled `label`.
    pub fn final_checkpoint(&self, label: &str) -> PathBuf {
        let name = if self.per_run_files {
            format!("{}-final.json", slug(label))
        } else {
            "final.json".into()
        };
        self.run_dir.join("checkpoints").join(name)
    }

    pub fn finish(&mut self) -> Result<()> {
        if let Some(mut w) = self.writer.take() {
            let path = self.exp_dir.join(self.metrics.last().expect("open stream is listed"));
            w.flush().at(&path)?;
        }
        Ok(())
    }

    /// Saves a run's final parameters and records the checkpoint.
    pub fn save_final(&mut self, label: &str, params: &ParameterGroups, config: &msgan_core::trainer::TrainConfig, acc: f64) -> Result<String> {
        let rel_path = self.final_checkpoint(label);
        let meta = CheckpointMeta {
            label: label.to_string(),
            step: config.max_steps,
            accuracy: Some(acc),
        };
        checkpoint::save(&self.exp_dir.join(&rel_path), params, config, None, meta)?;
        let path = rel(&rel_path);
        self.checkpoints.push(CheckpointRef {
            label: label.to_string(),
            step: if config.dry_run { 0 } else { config.max_steps },
            path: path.clone(),
        });
        Ok(path)
    }

    fn evaluate(&mut self, step: u64, params: &ParameterGroups) -> msgan_core::Result<()> {
        let acc = accuracy(params, self.split)?;
        self.evaluations.push(Evaluation {
            label: self.label.clone(),
            step,
            accuracy: acc,
        });
        Ok(())
    }
}

fn io_failure(e: Error) -> msgan_core::Error {
    msgan_core::Error::Invariant(format!("could not write run output: {e}"))
}

impl Observer for RunObserver<'_> {
    fn begin_run(&mut self, label: &str) -> msgan_core::Result<()> {
        self.finish().map_err(io_failure)?;
        self.label = label.to_string();
        let rel_path = self.run_dir.join(self.file_name("metrics", "ndjson"));
        let path = self.exp_dir.join(&rel_path);
        let open = || -> Result<File> {
            let dir = path.parent().expect("metrics live in a run directory");
            fs::create_dir_all(dir).at(dir)?;
            File::create(&path).at(&path)
        };
        self.writer = Some(BufWriter::new(open().map_err(io_failure)?));
        self.metrics.push(rel(&rel_path));
        Ok(())
    }

    fn phase(&mut self, report: &PhaseReport, params: &ParameterGroups) -> msgan_core::Result<()> {
        let line = MetricLine {
            step: report.step,
            source_index: report.source_index,
            phase: report.phase,
            losses: &report.losses,
            wallclock_ms: self.elapsed_ms(),
        };
        if let Some(w) = self.writer.as_mut() {
            let mut json = serde_json::to_vec(&line).expect("metric lines serialize");
            json.push(b'\n');
            w.write_all(&json)
                .map_err(|e| msgan_core::Error::Invariant(format!("could not write metrics: {e}")))?;
        }
        let every = self.eval_every;
        if report.phase == Phase::Supervised && every > 0 && (report.step + 1) % every == 0 {
            self.evaluate(report.step + 1, params)?;
        }
        Ok(())
    }

    fn step_end(&mut self, trainer: &Trainer) -> msgan_core::Result<()> {
        let cfg = trainer.config();
        let step = trainer.step();
        if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
            self.evaluate(step, trainer.params())?;
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            let name = if self.per_run_files {
                format!("{}-step{step}.json", slug(&self.label))
            } else {
                format!("step{step}.json")
            };
            let rel_path = self.run_dir.join("checkpoints").join(name);
            let meta = CheckpointMeta {
                label: self.label.clone(),
                step,
                accuracy: None,
            };
            checkpoint::save(&self.exp_dir.join(&rel_path), trainer.params(), cfg, Some(trainer.state()), meta)
                .map_err(io_failure)?;
            self.checkpoints.push(CheckpointRef {
                label: self.label.clone(),
                step,
                path: rel(&rel_path),
            });
        }
        Ok(())
    }
}
