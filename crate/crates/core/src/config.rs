//! Experiment configuration: a flat `key=value` text format with
//! comma-separated list values and `#` comments.
//!
//! ```text
//! # smoke run
//! system_kind=twsc
//! channel_kind=awgn
//! seed=7
//! eval_snr_list_db=0,10,20
//! ```

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    /// Two-way transceivers trained through a pilot-conditioned surrogate.
    Twsc,
    /// One-way end-to-end training through a differentiable channel.
    Jscc,
    /// Two-stage pipeline with an unconditioned surrogate.
    Gansc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `mean(-D(real) - max(1 - D(fake), 0))` exactly as printed.
    PaperLiteral,
    /// `mean(max(0, 1 - D(real))) + mean(max(0, 1 + D(fake)))`
    StandardHinge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    /// Both node loops on the calling thread.
    Deterministic,
    /// Per-node work of each stage on its own scoped thread.
    Threaded,
}

macro_rules! keyword_enum {
    ($ty:ty, $label:literal, { $($text:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(format!(concat!("unknown ", $label, " `{}` (expected one of: {})"), other, [$($text),+].join(", "))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($text); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(ChannelKind, "channel kind", { "awgn" => ChannelKind::Awgn, "rayleigh" => ChannelKind::Rayleigh });
keyword_enum!(SystemKind, "system kind", { "twsc" => SystemKind::Twsc, "jscc" => SystemKind::Jscc, "gansc" => SystemKind::Gansc });
keyword_enum!(LossMode, "loss mode", { "paper_literal" => LossMode::PaperLiteral, "standard_hinge" => LossMode::StandardHinge });
keyword_enum!(Execution, "execution mode", { "deterministic" => Execution::Deterministic, "threaded" => Execution::Threaded });

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub channel_kind: ChannelKind,
    pub system_kind: SystemKind,
    pub train_snr_range_db: [f64; 2],
    pub eval_snr_list_db: Vec<f64>,
    pub learning_rate: f64,
    pub lr_decay: f64,
    /// Surrogate optimizer settings; the decay law is shared with the transceivers.
    pub gan_learning_rate: f64,
    pub gan_beta1: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub symbol_count: usize,
    pub loss_mode: LossMode,
    pub noise_dim: usize,
    /// Use only the first `n` training images (0 = all).
    pub train_limit: usize,
    /// Use only the first `n` test images during sweeps (0 = all).
    pub test_limit: usize,
    /// SNR and test-subset size of the per-epoch quality record.
    pub epoch_eval_snr_db: f64,
    pub epoch_eval_images: usize,
    pub eval_seed: u64,
    pub execution: Execution,
    pub checkpoint_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            channel_kind: ChannelKind::Awgn,
            system_kind: SystemKind::Twsc,
            train_snr_range_db: [0.0, 20.0],
            eval_snr_list_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            learning_rate: 1e-3,
            lr_decay: 1e-4,
            gan_learning_rate: 1e-4,
            gan_beta1: 0.5,
            batch_size: 128,
            epochs: 100,
            seed: 0,
            symbol_count: 256,
            loss_mode: LossMode::StandardHinge,
            noise_dim: 2,
            train_limit: 0,
            test_limit: 0,
            epoch_eval_snr_db: 10.0,
            epoch_eval_images: 1000,
            eval_seed: 2024,
            execution: Execution::Deterministic,
            checkpoint_every: 1,
        }
    }
}

fn parse_value<V: FromStr>(line: usize, key: &str, raw: &str) -> Result<V>
where
    V::Err: fmt::Display,
{
    raw.parse::<V>()
        .map_err(|e| Error::ConfigParse { line, message: format!("bad value for `{key}`: {e}") })
}

fn parse_list(line: usize, key: &str, raw: &str) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',').map(|p| parse_value::<f64>(line, key, p.trim())).collect()
}

fn render_list(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Parse config text; absent keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::ConfigParse { line, message: format!("expected key=value, got `{content}`") })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::ConfigParse { line, message: format!("duplicate key `{key}`") });
            }
            cfg.set(line, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Assign one key from its textual value. `line` only feeds error messages.
    pub fn set(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        match key {
            "channel_kind" => self.channel_kind = parse_value(line, key, value)?,
            "system_kind" => self.system_kind = parse_value(line, key, value)?,
            "train_snr_range_db" => {
                let v = parse_list(line, key, value)?;
                if v.len() != 2 {
                    return Err(Error::ConfigParse { line, message: format!("`{key}` needs exactly two values") });
                }
                self.train_snr_range_db = [v[0], v[1]];
            }
            "eval_snr_list_db" => self.eval_snr_list_db = parse_list(line, key, value)?,
            "learning_rate" => self.learning_rate = parse_value(line, key, value)?,
            "lr_decay" => self.lr_decay = parse_value(line, key, value)?,
            "gan_learning_rate" => self.gan_learning_rate = parse_value(line, key, value)?,
            "gan_beta1" => self.gan_beta1 = parse_value(line, key, value)?,
            "batch_size" => self.batch_size = parse_value(line, key, value)?,
            "epochs" => self.epochs = parse_value(line, key, value)?,
            "seed" => self.seed = parse_value(line, key, value)?,
            "symbol_count" => self.symbol_count = parse_value(line, key, value)?,
            "loss_mode" => self.loss_mode = parse_value(line, key, value)?,
            "noise_dim" => self.noise_dim = parse_value(line, key, value)?,
            "train_limit" => self.train_limit = parse_value(line, key, value)?,
            "test_limit" => self.test_limit = parse_value(line, key, value)?,
            "epoch_eval_snr_db" => self.epoch_eval_snr_db = parse_value(line, key, value)?,
            "epoch_eval_images" => self.epoch_eval_images = parse_value(line, key, value)?,
            "eval_seed" => self.eval_seed = parse_value(line, key, value)?,
            "execution" => self.execution = parse_value(line, key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(line, key, value)?,
            other => return Err(Error::ConfigParse { line, message: format!("unknown key `{other}`") }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &'static str, message: &str| Err(Error::Validation { field, message: message.into() });
        if self.batch_size < 1 {
            return fail("batch_size", "must be at least 1");
        }
        if self.epochs < 1 {
            return fail("epochs", "must be at least 1");
        }
        let [lo, hi] = self.train_snr_range_db;
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return fail("train_snr_range_db", "needs finite bounds with low <= high");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate", "must be positive");
        }
        if !(self.gan_learning_rate > 0.0 && self.gan_learning_rate.is_finite()) {
            return fail("gan_learning_rate", "must be positive");
        }
        if !(0.0..1.0).contains(&self.gan_beta1) {
            return fail("gan_beta1", "must lie in [0, 1)");
        }
        if !(self.lr_decay >= 0.0 && self.lr_decay.is_finite()) {
            return fail("lr_decay", "must be non-negative");
        }
        if self.symbol_count < 1 {
            return fail("symbol_count", "must be at least 1");
        }
        if self.noise_dim < 1 {
            return fail("noise_dim", "must be at least 1");
        }
        if self.eval_snr_list_db.iter().any(|v| !v.is_finite()) {
            return fail("eval_snr_list_db", "values must be finite");
        }
        if !self.epoch_eval_snr_db.is_finite() {
            return fail("epoch_eval_snr_db", "must be finite");
        }
        if self.checkpoint_every < 1 {
            return fail("checkpoint_every", "must be at least 1");
        }
        Ok(())
    }

    /// Canonical text form: every key, fixed order. Parsing it back yields an
    /// equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("channel_kind", self.channel_kind.to_string());
        kv("system_kind", self.system_kind.to_string());
        kv("train_snr_range_db", render_list(&self.train_snr_range_db));
        kv("eval_snr_list_db", render_list(&self.eval_snr_list_db));
        kv("learning_rate", self.learning_rate.to_string());
        kv("lr_decay", self.lr_decay.to_string());
        kv("gan_learning_rate", self.gan_learning_rate.to_string());
        kv("gan_beta1", self.gan_beta1.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("seed", self.seed.to_string());
        kv("symbol_count", self.symbol_count.to_string());
        kv("loss_mode", self.loss_mode.to_string());
        kv("noise_dim", self.noise_dim.to_string());
        kv("train_limit", self.train_limit.to_string());
        kv("test_limit", self.test_limit.to_string());
        kv("epoch_eval_snr_db", self.epoch_eval_snr_db.to_string());
        kv("epoch_eval_images", self.epoch_eval_images.to_string());
        kv("eval_seed", self.eval_seed.to_string());
        kv("execution", self.execution.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        s
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex_digest(Sha256::digest(self.to_text().as_bytes()).as_slice())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
