//! MNIST download and local unpacking.

use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use flate2::read::GzDecoder;
use twsc::data::{ingest_mnist, Dataset, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS};

pub const DATA_ENV: &str = "TWSC_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data/mnist";
pub const DEFAULT_BASE_URL: &str = "https://storage.googleapis.com/cvdf-datasets/mnist/";

pub const FILES: [&str; 4] = [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS];

/// `--data-dir`, else `$TWSC_DATA_DIR`, else `data/mnist`.
pub fn data_dir(flag: Option<&Path>) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(DATA_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR)),
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.join(TRAIN_IMAGES).exists() {
        bail!(
            "MNIST not found in {}; run `twsc fetch-data` (or set {DATA_ENV})",
            dir.display()
        );
    }
    ingest_mnist(dir).with_context(|| format!("loading MNIST from {}", dir.display()))
}

fn gunzip_if_needed(bytes: Vec<u8>) -> Result<Vec<u8>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice()).read_to_end(&mut out).context("decompressing")?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn read_local(src: &Path, name: &str) -> Result<Vec<u8>> {
    for candidate in [src.join(name), src.join(format!("{name}.gz"))] {
        if candidate.exists() {
            let bytes = std::fs::read(&candidate).with_context(|| format!("reading {}", candidate.display()))?;
            return gunzip_if_needed(bytes).with_context(|| candidate.display().to_string());
        }
    }
    bail!("{} has neither {name} nor {name}.gz", src.display())
}

fn download(base_url: &str, name: &str) -> Result<Vec<u8>> {
    let url = format!("{}/{name}.gz", base_url.trim_end_matches('/'));
    let mut resp = ureq::get(&url).call().with_context(|| format!("GET {url}"))?;
    let bytes = resp.body_mut().with_config().limit(100 << 20).read_to_vec().with_context(|| format!("reading {url}"))?;
    gunzip_if_needed(bytes).with_context(|| url)
}

/// Populate `dest` with the four raw IDX files and validate them.
pub fn fetch(dest: &Path, from: Option<&Path>, base_url: &str) -> Result<Dataset> {
    std::fs::create_dir_all(dest).with_context(|| format!("creating {}", dest.display()))?;
    for name in FILES {
        let bytes = match from {
            Some(src) => read_local(src, name)?,
            None => download(base_url, name)?,
        };
        let path = dest.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    load_dataset(dest)
}
