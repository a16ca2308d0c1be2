use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode, Stdio};
use std::time::Duration;

use clap::{Parser, Subcommand};
use msgan::checkpoint;
use msgan::config::{self, ExperimentConfig, Overrides, CONFIG_FILE, ENV_PREFIX};
use msgan::error::{Error, Result};
use msgan::folders::export_benchmark;
use msgan::record::{read_json, Job, RunRecord};
use msgan::report;
use msgan::run::{self, Prepared};
use msgan_core::data::generate_benchmark;
use msgan_core::eval::{accuracy, Standard};

/// Multi-source shared-latent domain adaptation experiments.
///
/// Settings come from a TOML file, then `MSGAN_*` environment variables
/// (`__` separates nested keys, e.g. `MSGAN_TRAIN__MAX_STEPS=50`), then
/// flags. Outputs go to `<output_dir>/<name>/`.
#[derive(Parser, Debug)]
#[command(name = "msgan", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run only this seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training processes to run at once.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output root, overriding `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Evaluation standard for `train` and `evaluate`.
    #[arg(long, global = true, value_parser = parse_standard)]
    standard: Option<Standard>,
    /// Validate the configuration, data and models without training or
    /// writing anything.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write the configured synthetic benchmark as image folders.
    GenerateData {
        /// Destination root.
        dest: PathBuf,
    },
    /// Train the configured standard for every seed.
    Train,
    /// Re-score a checkpoint on the target test split.
    Evaluate {
        /// Defaults to the reported run of the first seed.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train every ablation variant for every seed.
    Ablate,
    /// Train every (kl, nll) weight pair for every seed.
    Sweep,
    /// Re-render tables and figures from the stored records.
    Report,
    #[command(hide = true)]
    Job {
        #[arg(long)]
        job: String,
    },
}

fn parse_standard(s: &str) -> std::result::Result<Standard, String> {
    Standard::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Standard::ALL.iter().map(|s| s.name()).collect();
        format!("unknown standard `{s}`; expected one of {}", names.join(", "))
    })
}

fn load_config(cli: &Cli, with_env: bool) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Data("--config <FILE> is required".into()))?;
    let flags = Overrides {
        seed: cli.seed,
        output_dir: cli.out.clone(),
        standard: cli.standard,
        dry_run: cli.dry_run,
    };
    let env: Vec<(String, String)> = if with_env { std::env::vars().collect() } else { Vec::new() };
    config::load(path, env, &flags)
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let prepared = run::prepare(cfg)?;
    if let Some(report) = &prepared.ingestion {
        for s in &report.skipped {
            eprintln!("warning: skipped {}: {}", s.path.display(), s.reason);
        }
    }
    Ok(prepared)
}

fn spawn(exe: &Path, config_path: &Path, job: &Job) -> Result<Child> {
    let mut cmd = Command::new(exe);
    cmd.arg("job")
        .arg("--config")
        .arg(config_path)
        .arg("--job")
        .arg(serde_json::to_string(job).expect("jobs serialize"))
        .stdin(Stdio::null());
    for (k, _) in std::env::vars_os() {
        if k.to_string_lossy().starts_with(ENV_PREFIX) {
            cmd.env_remove(k);
        }
    }
    cmd.spawn().map_err(|source| Error::Io {
        path: exe.to_path_buf(),
        source,
    })
}

/// Runs every job, in this process when there is only one and otherwise one
/// child process per job with at most `parallel` alive. Returns the records
/// of the jobs that succeeded and the number that failed.
fn execute(cfg: &ExperimentConfig, prepared: &Prepared, jobs: &[Job], parallel: usize) -> Result<(Vec<RunRecord>, usize)> {
    if let [job] = jobs {
        return Ok(match run::run_job(cfg, &cfg.to_toml(), prepared, job) {
            Ok(r) => {
                println!("finished {}: accuracy {:.4}", job.describe(), r.accuracy);
                (vec![r], 0)
            }
            Err(e) => {
                eprintln!("error: {} failed: {e}", job.describe());
                (Vec::new(), 1)
            }
        });
    }
    let exe = std::env::current_exe().map_err(|source| Error::Io {
        path: PathBuf::from("msgan"),
        source,
    })?;
    let config_path = cfg.experiment_dir().join(CONFIG_FILE);
    let mut queue = jobs.iter();
    let mut running: Vec<(&Job, Child)> = Vec::new();
    let mut records = Vec::new();
    let mut failed = 0;
    loop {
        while running.len() < parallel.max(1) {
            let Some(job) = queue.next() else { break };
            running.push((job, spawn(&exe, &config_path, job)?));
        }
        if running.is_empty() {
            break;
        }
        let mut i = 0;
        let mut reaped = false;
        while i < running.len() {
            let status = running[i].1.try_wait().map_err(|source| Error::Io {
                path: exe.clone(),
                source,
            })?;
            match status {
                Some(status) => {
                    let (job, _) = running.swap_remove(i);
                    reaped = true;
                    if status.success() {
                        records.push(read_json(&run::run_record_path(cfg, job))?);
                    } else {
                        eprintln!("error: {} failed ({status})", job.describe());
                        failed += 1;
                    }
                }
                None => i += 1,
            }
        }
        if !reaped {
            std::thread::sleep(Duration::from_millis(50));
        }
    }
    Ok((records, failed))
}

fn command_name(cmd: &Cmd) -> &'static str {
    match cmd {
        Cmd::Ablate => "ablate",
        Cmd::Sweep => "sweep",
        _ => "train",
    }
}

fn train_like(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli, true)?;
    let prepared = prepare(&cfg)?;
    let command = command_name(&cli.command);
    let jobs = run::jobs(&cfg, command);
    if cfg.train.dry_run {
        for job in &jobs {
            run::dry_run(&cfg, &prepared, job)?;
            println!("ok {} -> {}", job.describe(), cfg.experiment_dir().join(job.dir()).display());
        }
        println!("dry run: {} job(s) validated, nothing written", jobs.len());
        return Ok(true);
    }
    cfg.echo()?;
    let snapshot = cfg.to_toml();
    let mut record = run::open_record(&cfg, &snapshot)?;
    let (runs, failed) = execute(&cfg, &prepared, &jobs, cli.jobs)?;
    let text = run::aggregate(&cfg, &mut record, command, &jobs, &runs)?;
    print!("{text}");
    if failed > 0 {
        eprintln!("{failed} of {} job(s) failed", jobs.len());
    }
    Ok(failed == 0)
}

fn job(cli: &Cli, spec: &str) -> Result<bool> {
    let job: Job = serde_json::from_str(spec).map_err(|e| Error::Data(format!("bad job description: {e}")))?;
    let cfg = load_config(cli, false)?;
    let prepared = run::prepare(&cfg)?;
    let r = run::run_job(&cfg, &cfg.to_toml(), &prepared, &job)?;
    println!("finished {}: accuracy {:.4}", job.describe(), r.accuracy);
    Ok(true)
}

fn evaluate(cli: &Cli, checkpoint_path: Option<&Path>) -> Result<bool> {
    let cfg = load_config(cli, true)?;
    let prepared = prepare(&cfg)?;
    let path = match checkpoint_path {
        Some(p) => p.to_path_buf(),
        None => {
            let job = run::jobs(&cfg, "train").remove(0);
            let rec: RunRecord = read_json(&run::run_record_path(&cfg, &job))?;
            let best = rec
                .best()
                .ok_or_else(|| Error::Data("run record lists no runs".into()))?;
            cfg.experiment_dir().join(&best.checkpoint)
        }
    };
    if !path.is_file() {
        return Err(Error::Data(format!("checkpoint {} not found", path.display())));
    }
    let ckpt = checkpoint::load(&path, Some(&prepared.net))?;
    let acc = accuracy(&ckpt.params, &prepared.split)?;
    println!("{}: accuracy {acc:.6} ({} test images)", path.display(), prepared.split.target_test.len());
    match ckpt.meta.accuracy {
        Some(recorded) if recorded.to_bits() != acc.to_bits() => Err(Error::Data(format!(
            "accuracy {acc} differs from the recorded {recorded}"
        ))),
        Some(_) => {
            println!("matches the recorded accuracy");
            Ok(true)
        }
        None => Ok(true),
    }
}

fn report(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli, true)?;
    let dir = cfg.experiment_dir();
    let mut record = run::load_record(&dir)?;
    let text = report::render(&dir, &mut record)?;
    msgan::record::write_json(&dir.join(msgan::record::RECORD_FILE), &record)?;
    print!("{text}");
    Ok(true)
}

fn generate_data(cli: &Cli, dest: &Path) -> Result<bool> {
    let cfg = load_config(cli, true)?;
    let bench = cfg
        .benchmark
        .as_ref()
        .ok_or_else(|| Error::Data("generate-data needs a [benchmark] section".into()))?;
    let spec = bench.spec();
    let domains = generate_benchmark(&spec)?;
    if cfg.train.dry_run {
        println!("dry run: would write {} domains to {}", domains.len(), dest.display());
        return Ok(true);
    }
    let manifest = export_benchmark(&spec, &domains, dest)?;
    println!(
        "wrote {} domains ({} images each) to {}; target is `{}`",
        manifest.domains.len(),
        spec.per_domain,
        dest.display(),
        manifest.target
    );
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Cmd::GenerateData { dest } => generate_data(&cli, dest),
        Cmd::Train | Cmd::Ablate | Cmd::Sweep => train_like(&cli),
        Cmd::Evaluate { checkpoint } => evaluate(&cli, checkpoint.as_deref()),
        Cmd::Report => report(&cli),
        Cmd::Job { job: spec } => job(&cli, spec),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
