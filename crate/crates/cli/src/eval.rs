use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use twsc::checkpoint;
use twsc::metrics::evaluate_sweep;
use twsc::{ChannelKind, Dataset, MetricTable, Scalar, TrainRun};

use crate::cli::Precision;
use crate::rundir::{self, RunRecord};

/// Restore the run in `dir` at `epoch` (default: latest checkpoint).
pub fn restore<T: Scalar>(dir: &Path, record: &RunRecord, epoch: Option<usize>) -> Result<TrainRun<T>> {
    let epoch = match epoch.or_else(|| rundir::latest_checkpoint(dir)) {
        Some(e) => e,
        None => bail!("no checkpoint in {} (expected {})", dir.display(), checkpoint::node_path(dir, twsc::NodeId::A, 1).display()),
    };
    let mut run = TrainRun::<T>::new(record.config.clone())?;
    checkpoint::load_run(&mut run, dir, epoch)?;
    Ok(run)
}

pub struct EvalRequest<'a> {
    pub dir: &'a Path,
    pub eval_channel: ChannelKind,
    pub snr: Option<Vec<f64>>,
    pub epoch: Option<usize>,
    pub test_limit: Option<usize>,
}

/// Sweep the run over the requested SNRs on the real channel.
pub fn evaluate(req: &EvalRequest, data: &Dataset) -> Result<MetricTable> {
    let record = rundir::load_record(req.dir)?;
    match Precision::parse(&record.precision) {
        Some(Precision::F32) => evaluate_typed::<f32>(req, &record, data),
        Some(Precision::F64) => evaluate_typed::<f64>(req, &record, data),
        None => bail!("run {} has unknown precision `{}`", req.dir.display(), record.precision),
    }
}

fn evaluate_typed<T: Scalar>(req: &EvalRequest, record: &RunRecord, data: &Dataset) -> Result<MetricTable> {
    let mut run = restore::<T>(req.dir, record, req.epoch)?;
    // after loading: the checkpoint is bound to the original config hash
    if let Some(n) = req.test_limit {
        run.config.test_limit = n;
    }
    let snr = req.snr.clone().unwrap_or_else(|| run.config.eval_snr_list_db.clone());
    Ok(evaluate_sweep(&run, req.eval_channel, &snr, &data.test)?)
}

/// Write `table` into the run's `eval/` directory without replacing
/// earlier results. Returns the CSV path.
pub fn write_table(dir: &Path, table: &MetricTable, eval_channel: ChannelKind, epoch_label: &str) -> Result<PathBuf> {
    let eval_dir = dir.join(rundir::EVAL_DIR);
    std::fs::create_dir_all(&eval_dir)?;
    let csv = rundir::fresh_path(&eval_dir.join(format!("{eval_channel}_{epoch_label}.csv")));
    table.write_csv(&csv)?;
    rundir::write_json(&csv.with_extension("json"), table)?;
    Ok(csv)
}
