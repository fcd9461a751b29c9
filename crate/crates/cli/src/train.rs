use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use twsc::checkpoint;
use twsc::training::{EpochRecord, StepRecord, METRICS_HEADER};
use twsc::{Dataset, Error, ExperimentConfig, Observer, Scalar, SystemKind, TrainRun};

use crate::cli::{Precision, TrainArgs};
use crate::rundir::{self, RunRecord, RunStatus};

/// Config from `--config` (or defaults) with command-line overrides applied.
pub fn build_config(args: &TrainArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = args.system {
        cfg.system_kind = v;
    }
    if let Some(v) = args.channel {
        cfg.channel_kind = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.train_limit {
        cfg.train_limit = v;
    }
    if let Some(v) = args.test_limit {
        cfg.test_limit = v;
    }
    if let Some(v) = args.loss_mode {
        cfg.loss_mode = v;
    }
    if let Some(v) = args.execution {
        cfg.execution = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Where a training run goes and how it is computed.
#[derive(Clone, Debug)]
pub struct TrainJob {
    pub config: ExperimentConfig,
    pub precision: Precision,
    pub runs_dir: PathBuf,
    pub run_id: Option<String>,
    /// Echo per-epoch progress to stderr.
    pub verbose: bool,
}

/// Writes metrics, checkpoints and the run record as training proceeds.
struct RunWriter {
    dir: PathBuf,
    metrics: BufWriter<File>,
    record: RunRecord,
    started: Instant,
    epoch_started: Instant,
    verbose: bool,
}

impl RunWriter {
    fn save(&self) -> Result<()> {
        rundir::write_json(&self.dir.join(rundir::RECORD_FILE), &self.record)
    }
}

fn to_core(e: anyhow::Error) -> Error {
    Error::Contract(format!("{e:#}"))
}

impl<T: Scalar> Observer<T> for RunWriter {
    fn on_step(&mut self, r: &StepRecord) -> twsc::Result<()> {
        writeln!(self.metrics, "{}", r.csv_line()).map_err(|e| Error::io(self.dir.join(rundir::METRICS_FILE), e))
    }

    fn on_epoch(&mut self, run: &TrainRun<T>, r: &EpochRecord) -> twsc::Result<()> {
        self.metrics.flush().map_err(|e| Error::io(self.dir.join(rundir::METRICS_FILE), e))?;
        let cfg = &run.config;
        if r.epoch % cfg.checkpoint_every == 0 || r.epoch == cfg.epochs {
            checkpoint::save_run(run, &self.dir)?;
        }
        self.record.epochs.push(r.clone());
        self.record.audit = run.link.audit().clone();
        self.record.steps = run.step;
        self.record.epoch_seconds.push(self.epoch_started.elapsed().as_secs_f64());
        self.record.total_seconds = self.started.elapsed().as_secs_f64();
        self.epoch_started = Instant::now();
        if self.verbose {
            let links: Vec<String> =
                r.links.iter().map(|l| format!("{} psnr {:.2} ssim {:.4}", l.direction, l.psnr, l.ssim)).collect();
            eprintln!(
                "[{}] epoch {}/{} loss {:.5} | {} | {:.1}s",
                self.record.run_id,
                r.epoch,
                cfg.epochs,
                r.train_loss,
                links.join(" | "),
                self.record.epoch_seconds.last().copied().unwrap_or(0.0)
            );
        }
        self.save().map_err(to_core)
    }
}

/// Train per `job` on `data`. The run directory is written even when
/// training fails; its record then carries the failure.
pub fn train(job: &TrainJob, data: &Dataset) -> Result<(RunRecord, PathBuf)> {
    match job.precision {
        Precision::F32 => train_typed::<f32>(job, data),
        Precision::F64 => train_typed::<f64>(job, data),
    }
}

fn train_typed<T: Scalar>(job: &TrainJob, data: &Dataset) -> Result<(RunRecord, PathBuf)> {
    let cfg = job.config.clone();
    let base = job.run_id.clone().unwrap_or_else(|| rundir::default_run_id(&cfg));
    let (run_id, dir) = rundir::allocate(&job.runs_dir, &base)?;
    rundir::write_json(&dir.join(rundir::CONFIG_FILE), &cfg)?;
    let metrics_path = dir.join(rundir::METRICS_FILE);
    let mut metrics =
        BufWriter::new(File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?);
    writeln!(metrics, "{METRICS_HEADER}")?;
    let mut writer = RunWriter {
        record: RunRecord {
            run_id,
            status: RunStatus::Running,
            precision: T::NAME.to_string(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            dataset_checksum: data.checksum.clone(),
            code_version: rundir::code_version(),
            epochs: Vec::new(),
            audit: Default::default(),
            steps: 0,
            weight_discrepancy: None,
            started_unix_ms: rundir::unix_ms(),
            epoch_seconds: Vec::new(),
            total_seconds: 0.0,
            error: None,
        },
        dir: dir.clone(),
        metrics,
        started: Instant::now(),
        epoch_started: Instant::now(),
        verbose: job.verbose,
    };
    writer.save()?;

    let mut run = TrainRun::<T>::new(cfg)?;
    let outcome = run.train(data, &mut writer);
    writer.metrics.flush()?;
    writer.record.audit = run.link.audit().clone();
    writer.record.steps = run.step;
    writer.record.total_seconds = writer.started.elapsed().as_secs_f64();
    if run.config.system_kind != SystemKind::Jscc {
        writer.record.weight_discrepancy = Some(run.weight_reciprocity_check());
    }
    match outcome {
        Ok(()) => {
            writer.record.status = RunStatus::Complete;
            writer.save()?;
            Ok((writer.record, dir))
        }
        Err(e) => {
            writer.record.status =
                if matches!(e, Error::Divergence { .. }) { RunStatus::Diverged } else { RunStatus::Failed };
            writer.record.error = Some(e.to_string());
            writer.save()?;
            Err(anyhow::Error::new(e).context(format!("training {} aborted", dir.display())))
        }
    }
}

pub fn metrics_path(dir: &Path) -> PathBuf {
    dir.join(rundir::METRICS_FILE)
}
