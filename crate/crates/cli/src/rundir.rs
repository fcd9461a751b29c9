//! Run directory layout and the run record.
//!
//! ```text
//! runs/<id>/config.json  metrics.csv  run.json
//!          /eval/*.csv   /plots/*     /<node>/<epoch>.ckpt
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use twsc::channel::LinkAudit;
use twsc::training::EpochRecord;
use twsc::ExperimentConfig;

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RECORD_FILE: &str = "run.json";
pub const EVAL_DIR: &str = "eval";
pub const PLOTS_DIR: &str = "plots";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Diverged,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub status: RunStatus,
    pub precision: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub dataset_checksum: String,
    pub code_version: String,
    pub epochs: Vec<EpochRecord>,
    pub audit: LinkAudit,
    pub steps: u64,
    /// Max |w_A - w_B| over all weights at the end of the run (two-way systems).
    pub weight_discrepancy: Option<f64>,
    pub started_unix_ms: u64,
    pub epoch_seconds: Vec<f64>,
    pub total_seconds: f64,
    pub error: Option<String>,
}

pub fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Package version plus the git revision of the working tree, when known.
pub fn code_version() -> String {
    let rev = std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string());
    match rev {
        Some(r) if !r.is_empty() => format!("{}+{r}", env!("CARGO_PKG_VERSION")),
        _ => env!("CARGO_PKG_VERSION").to_string(),
    }
}

pub fn default_run_id(cfg: &ExperimentConfig) -> String {
    format!("{}-{}-seed{}-{}", cfg.system_kind, cfg.channel_kind, cfg.seed, &cfg.hash()[..8])
}

/// Create a fresh run directory. An existing directory is never reused; a
/// numeric suffix is appended instead.
pub fn allocate(runs_dir: &Path, base_id: &str) -> Result<(String, PathBuf)> {
    fs::create_dir_all(runs_dir).with_context(|| format!("creating {}", runs_dir.display()))?;
    for k in 1.. {
        let id = if k == 1 { base_id.to_string() } else { format!("{base_id}-{k}") };
        let dir = runs_dir.join(&id);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok((id, dir)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}

/// A run given as an existing path, or as an id under `runs_dir`.
pub fn resolve(runs_dir: &Path, run: &str) -> Result<PathBuf> {
    let direct = PathBuf::from(run);
    let dir = if direct.join(RECORD_FILE).exists() { direct } else { runs_dir.join(run) };
    if !dir.join(RECORD_FILE).exists() {
        bail!("no run at {} (expected {})", dir.display(), dir.join(RECORD_FILE).display());
    }
    Ok(dir)
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_record(dir: &Path) -> Result<RunRecord> {
    read_json(&dir.join(RECORD_FILE))
}

/// Highest epoch with a checkpoint for both nodes.
pub fn latest_checkpoint(dir: &Path) -> Option<usize> {
    let epochs = |node: &str| -> Vec<usize> {
        fs::read_dir(dir.join(node))
            .map(|rd| {
                rd.filter_map(|e| e.ok())
                    .filter_map(|e| e.file_name().to_str()?.strip_suffix(".ckpt")?.parse().ok())
                    .collect()
            })
            .unwrap_or_default()
    };
    let b = epochs("B");
    epochs("A").into_iter().filter(|e| b.contains(e)).max()
}

/// `path`, or `path` with a timestamp before the extension if it exists.
pub fn fresh_path(path: &Path) -> PathBuf {
    if !path.exists() {
        return path.to_path_buf();
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("");
    let mut k = unix_ms();
    loop {
        let p = path.with_file_name(format!("{stem}_{k}.{ext}"));
        if !p.exists() {
            return p;
        }
        k += 1;
    }
}
