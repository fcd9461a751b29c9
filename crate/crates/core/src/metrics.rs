//! Image quality metrics and SNR sweeps over the real channel.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::config::{ChannelKind, SystemKind};
use crate::channel::{apply_item, noise_variance, rayleigh_coefficient, Complex};
use crate::data::{ImageBatch, ImageSet};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::scalar::Scalar;
use crate::sp_cgan::generate_call_count;
use crate::training::TrainRun;
use crate::transceiver::{NodeId, SymbolBlock};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// PSNR in dB, or the exact-reconstruction sentinel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Db(f64),
    Exact,
}

impl Psnr {
    pub fn from_mse(mse: f64) -> Psnr {
        if mse == 0.0 {
            Psnr::Exact
        } else {
            Psnr::Db(10.0 * (1.0 / mse).log10())
        }
    }

    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Db(v) => Some(v),
            Psnr::Exact => None,
        }
    }

    /// Mean over the finite values; `Exact` only when every entry is exact.
    pub fn mean(values: &[Psnr]) -> Psnr {
        let finite: Vec<f64> = values.iter().filter_map(|p| p.db()).collect();
        if finite.is_empty() {
            Psnr::Exact
        } else {
            Psnr::Db(finite.iter().sum::<f64>() / finite.len() as f64)
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.6}"),
            Psnr::Exact => f.write_str("exact"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Db(v) => s.serialize_f64(*v),
            Psnr::Exact => s.serialize_str("exact"),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr::Db(v)),
            Raw::Text(t) if t == "exact" => Ok(Psnr::Exact),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad psnr value {t:?}"))),
        }
    }
}

fn check_pair<T: Scalar>(a: &ImageBatch<T>, b: &ImageBatch<T>) -> Result<()> {
    if a.tensor().shape() != b.tensor().shape() {
        return Err(Error::Contract(format!(
            "image batches differ in shape: {:?} vs {:?}",
            a.tensor().shape(),
            b.tensor().shape()
        )));
    }
    Ok(())
}

/// Per-image PSNR with peak 1.
pub fn psnr<T: Scalar>(reference: &ImageBatch<T>, test: &ImageBatch<T>) -> Result<Vec<Psnr>> {
    check_pair(reference, test)?;
    Ok((0..reference.len())
        .map(|i| {
            let (a, b) = (reference.image(i), test.image(i));
            let se: f64 = a.iter().zip(b).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum();
            Psnr::from_mse(se / a.len() as f64)
        })
        .collect())
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(j, t)| t * img[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// SSIM of two single-channel planes.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Contract(format!("{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let taps = gaussian_taps();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let aa = filter_valid(&prod(a, a), h, w, &taps);
    let bb = filter_valid(&prod(b, b), h, w, &taps);
    let ab = filter_valid(&prod(a, b), h, w, &taps);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(total / n as f64)
}

/// Per-image SSIM, averaged over channels.
pub fn ssim<T: Scalar>(reference: &ImageBatch<T>, test: &ImageBatch<T>) -> Result<Vec<f64>> {
    check_pair(reference, test)?;
    let s = reference.tensor().shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    (0..reference.len())
        .map(|i| {
            let (a, b) = (reference.image(i), test.image(i));
            let mut acc = 0.0;
            for ch in 0..c {
                let plane = |v: &[T]| v[ch * h * w..(ch + 1) * h * w].iter().map(|x| x.as_f64()).collect::<Vec<_>>();
                acc += ssim_plane(&plane(a), &plane(b), h, w)?;
            }
            Ok(acc / c as f64)
        })
        .collect()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// Which link a row describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "A->B")]
    AToB,
    #[serde(rename = "B->A")]
    BToA,
    #[serde(rename = "avg")]
    Average,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::AToB => "A->B",
            Direction::BToA => "B->A",
            Direction::Average => "avg",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A->B" => Ok(Direction::AToB),
            "B->A" => Ok(Direction::BToA),
            "avg" => Ok(Direction::Average),
            _ => Err(Error::Contract(format!("unknown direction {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub system_kind: SystemKind,
    pub train_channel: ChannelKind,
    pub eval_channel: ChannelKind,
    pub snr_db: f64,
    pub direction: Direction,
    pub psnr_db: Psnr,
    pub ssim: f64,
    pub n_images: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
}

pub const TABLE_HEADER: &str = "system_kind,train_channel,eval_channel,snr_db,direction,psnr_db,ssim,n_images";

impl MetricTable {
    pub fn averaged(&self) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().filter(|r| r.direction == Direction::Average)
    }

    pub fn find(&self, snr_db: f64, direction: Direction) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.snr_db == snr_db && r.direction == direction)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TABLE_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.6},{}\n",
                r.system_kind, r.train_channel, r.eval_channel, r.snr_db, r.direction, r.psnr_db, r.ssim, r.n_images
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(TABLE_HEADER) {
            return Err(Error::Contract("metric table header mismatch".into()));
        }
        let bad = |line: usize, m: String| Error::ConfigParse { line, message: m };
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad(i + 2, format!("expected 8 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(i + 2, e.to_string()));
            rows.push(MetricRow {
                system_kind: f[0].parse().map_err(|m| bad(i + 2, m))?,
                train_channel: f[1].parse().map_err(|m| bad(i + 2, m))?,
                eval_channel: f[2].parse().map_err(|m| bad(i + 2, m))?,
                snr_db: num(f[3])?,
                direction: f[4].parse()?,
                psnr_db: if f[5] == "exact" { Psnr::Exact } else { Psnr::Db(num(f[5])?) },
                ssim: num(f[6])?,
                n_images: f[7].parse().map_err(|e: std::num::ParseIntError| bad(i + 2, e.to_string()))?,
            });
        }
        Ok(MetricTable { rows })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Per-image results of one link at one SNR.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionResult {
    pub psnr: Vec<Psnr>,
    pub ssim: Vec<f64>,
    pub mse: f64,
}

impl DirectionResult {
    /// Mean PSNR in dB; infinite only when every image is reconstructed exactly.
    pub fn mean_psnr(&self) -> f64 {
        Psnr::mean(&self.psnr).db().unwrap_or(f64::INFINITY)
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(&self.ssim)
    }
}

/// Send the first `n` test images over one link of the real channel.
///
/// Image `g` gets its own fading and noise streams keyed by the evaluation
/// seed, so both directions see the same channel draws. Power is normalized
/// per batch of `config.batch_size` images, as in training.
pub fn evaluate_direction<T: Scalar>(
    run: &TrainRun<T>,
    direction: Direction,
    images: &ImageSet,
    n: usize,
    channel: ChannelKind,
    snr_db: f64,
) -> Result<DirectionResult> {
    let (src, dst) = match direction {
        Direction::AToB => (NodeId::A, NodeId::B),
        Direction::BToA => (NodeId::B, NodeId::A),
        Direction::Average => return Err(Error::Contract("evaluate one link at a time".into())),
    };
    let tx = &run.node(src).state.transceiver;
    let rx = &run.node(dst).state.transceiver;
    let (seed, bs) = (run.config.eval_seed, run.config.batch_size);
    let noise_var = noise_variance(snr_db);
    let n = n.min(images.len());
    let mut out = DirectionResult { psnr: Vec::with_capacity(n), ssim: Vec::with_capacity(n), mse: 0.0 };
    let mut se = 0.0;
    for start in (0..n).step_by(bs) {
        let end = (start + bs).min(n);
        let batch: ImageBatch<T> = images.range(start, end);
        let x = tx.transmit(&batch)?;
        let mut y = SymbolBlock::zeros(x.batch(), x.symbols_per_item());
        for i in 0..x.batch() {
            let g = (start + i) as u64;
            let h = match channel {
                ChannelKind::Awgn => Complex::ONE,
                ChannelKind::Rayleigh => rayleigh_coefficient(&mut stream(seed, Purpose::EvalFading, g)),
            };
            let mut rng = stream(seed, Purpose::EvalChannel, g);
            apply_item(x.tensor().item(i), y.tensor_mut().item_mut(i), h, noise_var, &mut rng);
        }
        let recon = rx.receive(&y)?;
        se += batch
            .tensor()
            .data()
            .iter()
            .zip(recon.tensor().data())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
            .sum::<f64>();
        out.psnr.extend(psnr(&batch, &recon)?);
        out.ssim.extend(ssim(&batch, &recon)?);
    }
    out.mse = se / (n * images.rows() * images.cols()).max(1) as f64;
    Ok(out)
}

/// Metric rows for every SNR in `snr_list`: one per evaluated link plus
/// their average. Only the real channel is used; a call into any surrogate
/// generator during the sweep is reported as an error.
pub fn evaluate_sweep<T: Scalar>(
    run: &TrainRun<T>,
    eval_channel: ChannelKind,
    snr_list: &[f64],
    test: &ImageSet,
) -> Result<MetricTable> {
    let calls = generate_call_count();
    let n = match run.config.test_limit {
        0 => test.len(),
        l => l.min(test.len()),
    };
    let mut table = MetricTable::default();
    for &snr in snr_list {
        let mut per = Vec::new();
        for d in run.directions() {
            let r = evaluate_direction(run, d, test, n, eval_channel, snr)?;
            per.push((d, Psnr::mean(&r.psnr), r.mean_ssim()));
        }
        let row = |direction, psnr_db, ssim| MetricRow {
            system_kind: run.config.system_kind,
            train_channel: run.config.channel_kind,
            eval_channel,
            snr_db: snr,
            direction,
            psnr_db,
            ssim,
            n_images: n,
        };
        let psnrs: Vec<Psnr> = per.iter().map(|p| p.1).collect();
        let ssims: Vec<f64> = per.iter().map(|p| p.2).collect();
        table.rows.push(row(Direction::Average, Psnr::mean(&psnrs), mean(&ssims)));
        for (d, p, s) in per {
            table.rows.push(row(d, p, s));
        }
    }
    if generate_call_count() != calls {
        return Err(Error::Contract("a surrogate generator ran during evaluation".into()));
    }
    Ok(table)
}
