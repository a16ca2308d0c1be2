//! Turning a configuration into jobs, running one job, and folding the
//! resulting run records into the experiment record.

use std::path::{Path, PathBuf};
use std::time::Instant;

use msgan_core::data::{generate_benchmark, DomainDataset};
use msgan_core::eval::{
    ablation_flags, latent_alignment, run_standard, run_variant, translation_grid, AblationRow, AblationTable,
    AblationVariant, EvalSplit, Experiment, RunResult, Standard, SweepMatrix,
};
use msgan_core::networks::{Domain, NetSpec, ParameterGroups, Pipelines};
use msgan_core::Tensor;

use crate::config::{ExperimentConfig, CONFIG_FILE};
use crate::error::{Error, Result};
use crate::folders::{load_image_folders, IngestionReport};
use crate::record::{
    read_json, rel, write_json, ExperimentRecord, Job, RunObserver, RunRecord, RunSummary, StandardRow, CODE_HASH,
    RECORD_FILE, RECORD_SCHEMA,
};
use crate::report;

/// Datasets and architecture resolved from a configuration.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub net: NetSpec,
    pub sources: Vec<DomainDataset>,
    pub split: EvalSplit,
    pub ingestion: Option<IngestionReport>,
}

impl Prepared {
    pub fn experiment(&self, cfg: &ExperimentConfig, seed: u64) -> Experiment {
        Experiment {
            net: self.net.clone(),
            sources: self.sources.clone(),
            split: self.split.clone(),
            train: cfg.train.config(seed),
        }
    }
}

/// Generates or loads the domains and splits the target. The split depends
/// only on the data seed, so every run seed scores the same test images.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (sources, target, num_classes, image_size, split_seed, ingestion) = match (&cfg.benchmark, &cfg.data) {
        (Some(b), None) => {
            let spec = b.spec();
            let mut domains = generate_benchmark(&spec)?;
            let target = domains.pop().expect("benchmark has a target");
            (domains, target, spec.num_classes, spec.image_size, spec.seed, None)
        }
        (None, Some(d)) => {
            let data = load_image_folders(&d.root, &d.target, d.image_size)?;
            let classes = data.num_classes();
            let (sources, target, report) = data.into_parts();
            (sources, target, classes, d.image_size, d.seed, Some(report))
        }
        _ => return Err(Error::Data("exactly one of [benchmark] and [data] must be set".into())),
    };
    if target.held_out().is_none() {
        return Err(Error::Data(format!(
            "target `{}` has no class subfolders, so accuracy cannot be scored",
            target.domain_id
        )));
    }
    let net = cfg.network.spec(image_size, 3, num_classes);
    net.validate()?;
    let split = EvalSplit::stratified(&target, cfg.evaluation.test_fraction, split_seed)?;
    Ok(Prepared {
        net,
        sources,
        split,
        ingestion,
    })
}

/// The jobs of `command` for every configured seed.
pub fn jobs(cfg: &ExperimentConfig, command: &str) -> Vec<Job> {
    let seeds = &cfg.seeds;
    match command {
        "ablate" => cfg
            .ablation
            .variants
            .iter()
            .flat_map(|v| {
                seeds.iter().map(move |&seed| Job::Variant {
                    variant: v.clone(),
                    seed,
                })
            })
            .collect(),
        "sweep" => {
            let mut out = Vec::new();
            for &kl in &cfg.sweep.kl_weights {
                for &nll in &cfg.sweep.nll_weights {
                    out.extend(seeds.iter().map(|&seed| Job::Sweep { kl, nll, seed }));
                }
            }
            out
        }
        _ => seeds
            .iter()
            .map(|&seed| Job::Standard {
                standard: cfg.standard,
                seed,
            })
            .collect(),
    }
}

fn train_job(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    job: &Job,
    observer: &mut dyn msgan_core::trainer::Observer,
) -> Result<(Vec<RunResult>, f64, Experiment)> {
    let mut exp = prepared.experiment(cfg, job.seed());
    Ok(match job {
        Job::Standard { standard, .. } => {
            let r = run_standard(*standard, &exp, observer)?;
            (r.runs, r.accuracy, exp)
        }
        Job::Variant { variant, seed } => {
            let v = AblationVariant::named(variant, &cfg.train.weights)?;
            let r = run_variant(&v, &exp, *seed, observer)?;
            exp.train = v.config(&exp.train, *seed);
            let acc = r.accuracy;
            (vec![r], acc, exp)
        }
        Job::Sweep { kl, nll, .. } => {
            exp.train.weights = exp.train.weights.with_kl_nll(*kl, *nll);
            exp.train.weights.validate()?;
            let r = run_standard(Standard::MultiSource, &exp, observer)?;
            (r.runs, r.accuracy, exp)
        }
    })
}

/// Builds the models and validates every job without updating anything.
pub fn dry_run(cfg: &ExperimentConfig, prepared: &Prepared, job: &Job) -> Result<f64> {
    let mut cfg = cfg.clone();
    cfg.train.dry_run = true;
    Ok(train_job(&cfg, prepared, job, &mut ())?.1)
}

fn trains_all_sources(job: &Job) -> bool {
    !matches!(
        job,
        Job::Standard {
            standard: Standard::SourceOnly | Standard::Oracle | Standard::SingleBest | Standard::SourceCombined,
            ..
        }
    )
}

fn exemplar(data: &DomainDataset, i: usize) -> Tensor {
    let [h, w, c] = data.image_dims();
    data.batch_tensor(&[i]).reshape(&[h, w, c]).expect("single image")
}

/// `k` images per source and from the target test split, each translated
/// into the target style and reconstructed.
fn grid(params: &ParameterGroups, prepared: &Prepared, k: usize) -> Result<msgan_core::eval::RgbImage> {
    let test = &prepared.split.target_test;
    let mut rows = Vec::new();
    for (i, s) in prepared.sources.iter().enumerate().take(params.num_sources()) {
        rows.extend((0..k.min(s.len())).map(|j| (Domain::Source(i), exemplar(s, j))));
    }
    rows.extend((0..k.min(test.len())).map(|j| (Domain::Target, exemplar(test, j))));
    Ok(translation_grid(params, params.tensors(), &rows, &exemplar(test, 0))?)
}

/// Trains one job and writes its run directory. `snapshot` must be the
/// echoed configuration text.
pub fn run_job(cfg: &ExperimentConfig, snapshot: &str, prepared: &Prepared, job: &Job) -> Result<RunRecord> {
    let started = Instant::now();
    let exp_dir = cfg.experiment_dir();
    let run_dir = job.dir();
    let per_run_files = matches!(
        job,
        Job::Standard {
            standard: Standard::SingleBest,
            ..
        }
    );
    let mut obs = RunObserver::new(&exp_dir, &run_dir, &prepared.split, per_run_files, cfg.train.eval_every);
    let (runs, accuracy, exp) = train_job(cfg, prepared, job, &mut obs)?;
    obs.finish()?;

    let mut summaries = Vec::new();
    for r in &runs {
        let checkpoint = obs.save_final(&r.label, &r.params, &exp.train, r.accuracy)?;
        summaries.push(RunSummary {
            label: r.label.clone(),
            accuracy: r.accuracy,
            checkpoint,
        });
    }
    let mut alignment = None;
    let mut figures = Vec::new();
    if trains_all_sources(job) {
        let params = &runs[0].params;
        alignment = Some(latent_alignment(params, &prepared.sources, &prepared.split.target_test, job.seed())?);
        if cfg.evaluation.grid_exemplars > 0 {
            let path = run_dir.join("translation_grid.png");
            report::save_png(&grid(params, prepared, cfg.evaluation.grid_exemplars)?, &exp_dir.join(&path))?;
            figures.push(rel(&path));
        }
    }
    let record = RunRecord {
        schema_version: RECORD_SCHEMA,
        experiment: cfg.name.clone(),
        job: job.clone(),
        code_hash: CODE_HASH.into(),
        config_snapshot: snapshot.into(),
        accuracy,
        runs: summaries,
        alignment,
        evaluations: std::mem::take(&mut obs.evaluations),
        metrics: std::mem::take(&mut obs.metrics),
        checkpoints: std::mem::take(&mut obs.checkpoints),
        figures,
        wallclock_ms: started.elapsed().as_millis() as u64,
    };
    write_json(&exp_dir.join(run_dir.join(RECORD_FILE)), &record)?;
    Ok(record)
}

pub fn run_record_path(cfg: &ExperimentConfig, job: &Job) -> PathBuf {
    cfg.experiment_dir().join(job.dir()).join(RECORD_FILE)
}

/// Reads the experiment record, or starts a new one when none exists or it
/// was written for a different configuration.
pub fn open_record(cfg: &ExperimentConfig, snapshot: &str) -> Result<ExperimentRecord> {
    let path = cfg.experiment_dir().join(RECORD_FILE);
    if path.is_file() {
        let rec: ExperimentRecord = read_json(&path)?;
        if rec.config_snapshot == snapshot {
            return Ok(rec);
        }
    }
    Ok(ExperimentRecord {
        schema_version: RECORD_SCHEMA,
        name: cfg.name.clone(),
        code_hash: CODE_HASH.into(),
        config_snapshot: snapshot.into(),
        config_path: CONFIG_FILE.into(),
        ..Default::default()
    })
}

/// Folds the finished jobs of `command` into `record`, re-renders the
/// tables and writes `record.json`. Returns the text tables.
pub fn aggregate(
    cfg: &ExperimentConfig,
    record: &mut ExperimentRecord,
    command: &str,
    jobs: &[Job],
    runs: &[RunRecord],
) -> Result<String> {
    let exp_dir = cfg.experiment_dir();
    record.code_hash = CODE_HASH.into();
    record.commands.push(command.into());
    for job in jobs {
        let path = rel(&job.dir().join(RECORD_FILE));
        if !record.runs.contains(&path) {
            record.runs.push(path);
        }
    }
    record.wallclock_ms += runs.iter().map(|r| r.wallclock_ms).sum::<u64>();
    let acc_of = |j: &Job| runs.iter().find(|r| r.job == *j).map(|r| r.accuracy);
    match command {
        "ablate" => {
            let rows = cfg
                .ablation
                .variants
                .iter()
                .map(|v| {
                    let accs = cfg
                        .seeds
                        .iter()
                        .filter_map(|&seed| {
                            acc_of(&Job::Variant {
                                variant: v.clone(),
                                seed,
                            })
                        })
                        .collect();
                    AblationRow::new(v.clone(), accs)
                })
                .collect();
            let table = AblationTable {
                seeds: cfg.seeds.clone(),
                rows,
            };
            record.ablation_flags = ablation_flags(&table);
            record.ablation = Some(table);
        }
        "sweep" => {
            let accuracy = cfg
                .sweep
                .kl_weights
                .iter()
                .map(|&kl| {
                    cfg.sweep
                        .nll_weights
                        .iter()
                        .map(|&nll| {
                            let a: Vec<f64> = cfg
                                .seeds
                                .iter()
                                .filter_map(|&seed| acc_of(&Job::Sweep { kl, nll, seed }))
                                .collect();
                            a.iter().sum::<f64>() / a.len() as f64
                        })
                        .collect()
                })
                .collect();
            record.sweep = Some(SweepMatrix {
                kl_weights: cfg.sweep.kl_weights.clone(),
                nll_weights: cfg.sweep.nll_weights.clone(),
                accuracy,
            });
        }
        _ => {
            let (seeds, accs): (Vec<u64>, Vec<f64>) = cfg
                .seeds
                .iter()
                .filter_map(|&seed| {
                    acc_of(&Job::Standard {
                        standard: cfg.standard,
                        seed,
                    })
                    .map(|a| (seed, a))
                })
                .unzip();
            record.standards.retain(|r| r.standard != cfg.standard);
            record.standards.push(StandardRow::new(cfg.standard, seeds, accs));
            record.standards.sort_by_key(|r| r.standard);
        }
    }
    let text = report::render(&exp_dir, record)?;
    write_json(&exp_dir.join(RECORD_FILE), record)?;
    Ok(text)
}

/// Loads the experiment record of `exp_dir` for `report`.
pub fn load_record(exp_dir: &Path) -> Result<ExperimentRecord> {
    let path = exp_dir.join(RECORD_FILE);
    if !path.is_file() {
        return Err(Error::Data(format!("no experiment record at {}", path.display())));
    }
    read_json(&path)
}
