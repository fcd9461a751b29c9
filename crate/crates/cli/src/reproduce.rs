//! The system x channel grid, figure emission and the summary report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use rand::Rng;
use serde::Serialize;
use twsc::channel::{apply_awgn, noise_variance, rayleigh_coefficient};
use twsc::rng::{stream, Purpose};
use twsc::sp_cgan::ResidualStats;
use twsc::{ChannelKind, Dataset, Direction, ExperimentConfig, MetricTable, Scalar, SymbolBlock, SystemKind, Tensor};

use crate::cli::{PlotAxis, PlotMetric, Precision, ReproduceArgs, Scale};
use crate::eval::{self, EvalRequest};
use crate::plot::{self, Series};
use crate::rundir::{self, RunRecord, RunStatus};
use crate::train::{self, TrainJob};

pub const SYSTEMS: [SystemKind; 3] = [SystemKind::Twsc, SystemKind::Jscc, SystemKind::Gansc];
pub const CHANNELS: [ChannelKind; 2] = [ChannelKind::Awgn, ChannelKind::Rayleigh];
/// SNRs at which the baseline ordering is checked.
pub const ORDERING_SNRS: [f64; 4] = [0.0, 5.0, 10.0, 15.0];
pub const ORDERING_PSNR_SLACK_DB: f64 = 0.5;
pub const CONVERGENCE_EPOCH: usize = 20;
pub const CONVERGENCE_RATIO: f64 = 0.95;
pub const DIRECTION_GAP: f64 = 0.01;
pub const FIDELITY_SNR_DB: f64 = 10.0;
pub const FIDELITY_MEAN_MAX: f64 = 0.05;
pub const FIDELITY_VARIANCE_REL: f64 = 0.2;

/// Budget of one grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Plan {
    pub epochs: usize,
    pub train_limit: usize,
    pub test_limit: usize,
    pub snr_grid: Vec<f64>,
}

impl Plan {
    pub fn for_scale(scale: Scale) -> Plan {
        match scale {
            Scale::Smoke => Plan { epochs: 5, train_limit: 2560, test_limit: 2000, snr_grid: vec![0.0, 10.0, 20.0] },
            Scale::Full => Plan { epochs: 100, train_limit: 0, test_limit: 0, snr_grid: vec![0.0, 5.0, 10.0, 15.0, 20.0] },
        }
    }

    pub fn config(&self, system: SystemKind, channel: ChannelKind, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            system_kind: system,
            channel_kind: channel,
            seed,
            epochs: self.epochs,
            train_limit: self.train_limit,
            test_limit: self.test_limit,
            eval_snr_list_db: self.snr_grid.clone(),
            ..ExperimentConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
    NotRun,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::NotApplicable => "N/A",
            Status::NotRun => "NOT RUN",
        }
    }

    fn of(ok: bool) -> Status {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub criterion: u8,
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

/// A trained grid cell and its evaluation tables.
#[derive(Clone, Debug)]
pub struct Cell {
    pub system: SystemKind,
    pub channel: ChannelKind,
    pub dir: PathBuf,
    pub record: Option<RunRecord>,
    pub evals: Vec<(ChannelKind, MetricTable)>,
    pub error: Option<String>,
}

impl Cell {
    pub fn id(&self) -> String {
        format!("{}-{}", self.system, self.channel)
    }

    fn eval(&self, channel: ChannelKind) -> Option<&MetricTable> {
        self.evals.iter().find(|(c, _)| *c == channel).map(|(_, t)| t)
    }
}

fn cell(cells: &[Cell], system: SystemKind, channel: ChannelKind) -> Option<&Cell> {
    cells.iter().find(|c| c.system == system && c.channel == channel)
}

/// No inter-node feedback: no gradient ever crossed, and the only payloads
/// are the two stage-1 transmissions per step.
pub fn check_no_feedback(cells: &[Cell]) -> Verdict {
    let mut ok = true;
    let mut detail = Vec::new();
    for c in cells.iter().filter(|c| c.system == SystemKind::Twsc) {
        match &c.record {
            Some(r) => {
                let fine = r.audit.backward_gradient_count == 0 && r.audit.forward_payload_count == 2 * r.steps;
                ok &= fine;
                detail.push(format!(
                    "{}: {} payloads over {} steps, {} gradients",
                    c.id(),
                    r.audit.forward_payload_count,
                    r.steps,
                    r.audit.backward_gradient_count
                ));
            }
            None => {
                ok = false;
                detail.push(format!("{}: no run", c.id()));
            }
        }
    }
    Verdict { criterion: 1, name: "no inter-node feedback", status: Status::of(ok && !detail.is_empty()), detail: detail.join("; ") }
}

pub fn check_reciprocity(cells: &[Cell]) -> Verdict {
    let mut ok = true;
    let mut detail = Vec::new();
    for c in cells.iter().filter(|c| c.system == SystemKind::Twsc) {
        let d = c.record.as_ref().and_then(|r| r.weight_discrepancy);
        let threaded = c.record.as_ref().is_some_and(|r| r.config.execution == twsc::Execution::Threaded);
        let limit = if threaded { 1e-5 } else { 0.0 };
        ok &= d.is_some_and(|d| d <= limit);
        detail.push(format!("{}: max |w_A - w_B| = {}", c.id(), d.map(|d| format!("{d:e}")).unwrap_or("n/a".into())));
    }
    Verdict { criterion: 2, name: "weight reciprocity", status: Status::of(ok && !detail.is_empty()), detail: detail.join("; ") }
}

/// SSIM at epoch 20 against the final epoch, and the per-epoch gap between
/// the two link directions, from the per-epoch records of a two-way run.
pub fn check_convergence(record: &RunRecord) -> Verdict {
    let name = "convergence within 20 epochs";
    let ssim = |e: usize, d: Direction| {
        record.epochs.iter().find(|r| r.epoch == e).and_then(|r| r.link(d)).map(|l| l.ssim)
    };
    let mut gap: f64 = 0.0;
    for r in &record.epochs {
        if let (Some(a), Some(b)) = (r.link(Direction::AToB), r.link(Direction::BToA)) {
            gap = gap.max((a.ssim - b.ssim).abs());
        }
    }
    let last = record.epochs.last().map(|r| r.epoch).unwrap_or(0);
    if last < CONVERGENCE_EPOCH || record.config.epochs < 100 {
        return Verdict {
            criterion: 3,
            name,
            status: Status::NotApplicable,
            detail: format!("needs the 100-epoch budget (ran {last}); largest direction gap so far {gap:.4}"),
        };
    }
    let mut ok = gap < DIRECTION_GAP;
    let mut parts = vec![format!("largest direction gap {gap:.4}")];
    for d in [Direction::AToB, Direction::BToA] {
        match (ssim(CONVERGENCE_EPOCH, d), ssim(last, d)) {
            (Some(early), Some(end)) => {
                ok &= early >= CONVERGENCE_RATIO * end;
                parts.push(format!("{d}: epoch {CONVERGENCE_EPOCH} {early:.4} vs epoch {last} {end:.4}"));
            }
            _ => ok = false,
        }
    }
    Verdict { criterion: 3, name, status: Status::of(ok), detail: parts.join("; ") }
}

/// jscc >= twsc - slack >= gansc - slack on the given metric.
pub fn check_ordering(cells: &[Cell], snr_grid: &[f64]) -> Verdict {
    let name = "baseline ordering";
    let snrs: Vec<f64> = ORDERING_SNRS.iter().copied().filter(|s| snr_grid.contains(s)).collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for (channel, psnr) in [(ChannelKind::Awgn, true), (ChannelKind::Rayleigh, false)] {
        let table = |s| cell(cells, s, channel).and_then(|c| c.eval(channel));
        let (Some(j), Some(t), Some(g)) = (table(SystemKind::Jscc), table(SystemKind::Twsc), table(SystemKind::Gansc)) else {
            ok = false;
            parts.push(format!("{channel}: missing runs"));
            continue;
        };
        for &snr in &snrs {
            let val = |tbl: &MetricTable| {
                tbl.find(snr, Direction::Average).map(|r| if psnr { r.psnr_db.db().unwrap_or(f64::INFINITY) } else { r.ssim })
            };
            let (Some(vj), Some(vt), Some(vg)) = (val(j), val(t), val(g)) else {
                ok = false;
                continue;
            };
            let slack = if psnr { ORDERING_PSNR_SLACK_DB } else { 0.0 };
            let fine = vj >= vt - slack && vt >= vg;
            ok &= fine;
            parts.push(format!(
                "{channel} {} @{snr} dB: jscc {vj:.4} twsc {vt:.4} gansc {vg:.4}{}",
                if psnr { "PSNR" } else { "SSIM" },
                if fine { "" } else { " (violated)" }
            ));
        }
    }
    if snrs.is_empty() {
        return Verdict { criterion: 4, name, status: Status::NotApplicable, detail: "no ordering SNR in the grid".into() };
    }
    Verdict { criterion: 4, name, status: Status::of(ok), detail: parts.join("; ") }
}

/// Fresh Monte Carlo check of the channel models at 1e5 samples.
pub fn check_calibration(seed: u64) -> Verdict {
    const N: usize = 100_000;
    let mut ok = true;
    let mut parts = Vec::new();
    let zeros = SymbolBlock::<f64>::zeros(1, N);
    for snr in [0.0, 10.0, 20.0] {
        let y = apply_awgn(&zeros, snr, &mut stream(seed, Purpose::Probe, 100 + snr as u64));
        let v = y.tensor().data().iter().map(|a| a * a).sum::<f64>() / N as f64;
        let rel = (v / noise_variance(snr) - 1.0).abs();
        ok &= rel < 0.01;
        parts.push(format!("AWGN {snr} dB variance off by {:.3}%", 100.0 * rel));
    }
    let mut rng = stream(seed, Purpose::Probe, 200);
    let mut g: Vec<f64> = (0..N).map(|_| rayleigh_coefficient(&mut rng).norm_sqr()).collect();
    let power = g.iter().sum::<f64>() / N as f64;
    g.sort_by(f64::total_cmp);
    let ks = g
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = 1.0 - (-x).exp();
            (f - i as f64 / N as f64).abs().max(((i + 1) as f64 / N as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    ok &= (power - 1.0).abs() < 0.01 && ks < 0.01;
    parts.push(format!("Rayleigh E|h|^2 = {power:.4}, KS = {ks:.4}"));
    Verdict { criterion: 5, name: "channel calibration", status: Status::of(ok), detail: parts.join("; ") }
}

fn fidelity_typed<T: Scalar>(cells: &[Cell], data: &Dataset, seed: u64) -> Result<Verdict> {
    let name = "surrogate fidelity";
    let (Some(tw), Some(ga)) = (cell(cells, SystemKind::Twsc, ChannelKind::Awgn), cell(cells, SystemKind::Gansc, ChannelKind::Awgn))
    else {
        bail!("missing AWGN two-way runs");
    };
    let load = |c: &Cell| -> Result<twsc::TrainRun<T>> {
        let rec = c.record.as_ref().ok_or_else(|| anyhow::anyhow!("{} has no record", c.id()))?;
        eval::restore::<T>(&c.dir, rec, None)
    };
    let run = load(tw)?;
    let side = run.node(twsc::NodeId::A);
    let surrogate = side.surrogate.as_ref().expect("two-way run has a surrogate");
    let bs = run.config.batch_size;
    let n = data.test.len().min(8 * bs);
    let mut pilots = Vec::new();
    for start in (0..n).step_by(bs) {
        let batch = data.test.range::<T>(start, (start + bs).min(n));
        pilots.push(side.state.transceiver.transmit(&batch)?);
    }
    let stats: ResidualStats =
        surrogate.residual_stats(&pilots, FIDELITY_SNR_DB, &mut stream(seed, Purpose::Probe, 300))?;
    let target = noise_variance(FIDELITY_SNR_DB);
    let moments_ok = stats.mean_magnitude() <= FIDELITY_MEAN_MAX
        && (stats.variance - target).abs() <= FIDELITY_VARIANCE_REL * target;

    // the unconditioned surrogate must ignore its pilot entirely
    let ablation = load(ga)?;
    let g = ablation.node(twsc::NodeId::A).surrogate.as_ref().expect("two-way run has a surrogate");
    let x = pilots[0].clone();
    let mut perturbed = x.tensor().clone();
    let mut rng = stream(seed, Purpose::Probe, 301);
    for v in perturbed.data_mut() {
        *v = *v + T::of(rng.random_range(-1.0..1.0));
    }
    let x2 = SymbolBlock::new(Tensor::from_vec(x.tensor().shape(), perturbed.data().to_vec()))?;
    let z = stream(seed, Purpose::GeneratorNoise, 302);
    let c1 = twsc::sp_cgan::ConditionInput::sample(x, FIDELITY_SNR_DB, g.arch.noise_dim, &mut z.clone());
    let c2 = twsc::sp_cgan::ConditionInput::sample(x2, FIDELITY_SNR_DB, g.arch.noise_dim, &mut z.clone());
    let independent = g.generate(&c1)? == g.generate(&c2)?;

    Ok(Verdict {
        criterion: 6,
        name,
        status: Status::of(moments_ok && independent),
        detail: format!(
            "twsc-awgn surrogate at {FIDELITY_SNR_DB} dB over {} symbols: |mean| {:.4}, variance {:.4} (target {target:.3}); gansc output pilot-independent: {independent}",
            stats.symbols,
            stats.mean_magnitude(),
            stats.variance
        ),
    })
}

pub fn check_fidelity(cells: &[Cell], data: &Dataset, seed: u64, precision: Precision) -> Verdict {
    let out = match precision {
        Precision::F32 => fidelity_typed::<f32>(cells, data, seed),
        Precision::F64 => fidelity_typed::<f64>(cells, data, seed),
    };
    out.unwrap_or_else(|e| Verdict { criterion: 6, name: "surrogate fidelity", status: Status::Fail, detail: format!("{e:#}") })
}

pub fn report(verdicts: &[Verdict], plan: &Plan, scale: Scale) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Reproduction summary ({})\n", if scale == Scale::Smoke { "smoke" } else { "full" });
    let _ = writeln!(
        s,
        "epochs {}, training images {}, test images {}, SNR grid {:?}\n",
        plan.epochs,
        if plan.train_limit == 0 { "all".to_string() } else { plan.train_limit.to_string() },
        if plan.test_limit == 0 { "all".to_string() } else { plan.test_limit.to_string() },
        plan.snr_grid
    );
    let _ = writeln!(s, "| # | criterion | status | detail |\n|---|---|---|---|");
    for v in verdicts {
        let _ = writeln!(s, "| {} | {} | {} | {} |", v.criterion, v.name, v.status.as_str(), v.detail.replace('|', "/"));
    }
    s
}

fn figure_series(cells: &[Cell], channel: ChannelKind, metric: PlotMetric) -> Vec<Series> {
    cells
        .iter()
        .filter(|c| c.channel == channel)
        .filter_map(|c| {
            let t = c.eval(channel)?;
            let points = t
                .averaged()
                .map(|r| (r.snr_db, if metric == PlotMetric::Psnr { r.psnr_db.db() } else { Some(r.ssim) }))
                .collect();
            Some(Series { label: c.id(), points })
        })
        .collect()
}

/// The five figure analogues; returns the SVG paths.
pub fn figures(cells: &[Cell], root: &Path) -> Result<Vec<PathBuf>> {
    let dir = root.join("figures");
    let mut out = Vec::new();
    for (metric, channel) in [
        (PlotMetric::Psnr, ChannelKind::Awgn),
        (PlotMetric::Psnr, ChannelKind::Rayleigh),
        (PlotMetric::Ssim, ChannelKind::Awgn),
        (PlotMetric::Ssim, ChannelKind::Rayleigh),
    ] {
        let series = figure_series(cells, channel, metric);
        if series.is_empty() {
            continue;
        }
        let m = plot::metric_name(metric);
        let title = format!("{} vs SNR, {channel}", m.to_uppercase());
        let path = dir.join(format!("{m}_vs_snr_{channel}.svg"));
        out.push(plot::emit(&series, metric, PlotAxis::Snr, &title, &path)?.0);
    }
    if let Some(c) = cell(cells, SystemKind::Twsc, ChannelKind::Awgn).filter(|c| c.record.is_some()) {
        let mut series = Vec::new();
        for d in [Direction::AToB, Direction::BToA] {
            let mut s = plot::epoch_series(&c.dir, PlotMetric::Ssim, d)?;
            s.label = format!("{} {d}", c.id());
            series.push(s);
        }
        let path = dir.join("ssim_vs_epoch.svg");
        out.push(plot::emit(&series, PlotMetric::Ssim, PlotAxis::Epoch, "SSIM vs epoch, twsc AWGN", &path)?.0);
    }
    Ok(out)
}

/// Outcome of a full reproduction.
pub struct Reproduction {
    pub root: PathBuf,
    pub cells: Vec<Cell>,
    pub verdicts: Vec<Verdict>,
    pub figures: Vec<PathBuf>,
}

pub fn reproduce(args: &ReproduceArgs, data: &Dataset) -> Result<Reproduction> {
    let mut plan = Plan::for_scale(args.scale);
    if let Some(e) = args.epochs {
        plan.epochs = e;
    }
    if let Some(l) = args.train_limit {
        plan.train_limit = l;
    }
    let scale = if args.scale == Scale::Smoke { "smoke" } else { "full" };
    let (_, root) = rundir::allocate(&args.common.runs_dir, &format!("reproduce-{scale}-seed{}", args.seed))?;
    rundir::write_json(&root.join("plan.json"), &plan)?;

    let mut cells = Vec::new();
    for system in SYSTEMS {
        for channel in CHANNELS {
            let job = TrainJob {
                config: plan.config(system, channel, args.seed),
                precision: args.precision,
                runs_dir: root.clone(),
                run_id: Some(format!("{system}-{channel}")),
                verbose: true,
            };
            let mut c = Cell { system, channel, dir: root.join(format!("{system}-{channel}")), record: None, evals: Vec::new(), error: None };
            match train::train(&job, data) {
                Ok((record, dir)) => {
                    c.dir = dir;
                    c.record = Some(record);
                }
                Err(e) => {
                    eprintln!("{}: {e:#}", c.id());
                    c.record = rundir::load_record(&c.dir).ok().filter(|r| r.status != RunStatus::Running);
                    c.error = Some(format!("{e:#}"));
                }
            }
            if c.record.as_ref().is_some_and(|r| r.status == RunStatus::Complete) {
                for eval_channel in CHANNELS {
                    let req = EvalRequest { dir: &c.dir, eval_channel, snr: Some(plan.snr_grid.clone()), epoch: None, test_limit: None };
                    let table = eval::evaluate(&req, data)?;
                    eval::write_table(&c.dir, &table, eval_channel, "final")?;
                    c.evals.push((eval_channel, table));
                }
            }
            cells.push(c);
        }
    }

    let figures = figures(&cells, &root)?;
    let mut verdicts = vec![check_no_feedback(&cells), check_reciprocity(&cells)];
    verdicts.push(match cell(&cells, SystemKind::Twsc, ChannelKind::Awgn).and_then(|c| c.record.as_ref()) {
        Some(r) => check_convergence(r),
        None => Verdict { criterion: 3, name: "convergence within 20 epochs", status: Status::Fail, detail: "no twsc-awgn run".into() },
    });
    verdicts.push(check_ordering(&cells, &plan.snr_grid));
    verdicts.push(check_calibration(args.seed));
    verdicts.push(check_fidelity(&cells, data, args.seed, args.precision));
    for (criterion, name) in [(7, "metric oracles"), (8, "numerical soundness")] {
        verdicts.push(Verdict {
            criterion,
            name,
            status: Status::NotRun,
            detail: "checked by `cargo test --test acceptance`".into(),
        });
    }
    let text = report(&verdicts, &plan, args.scale);
    std::fs::write(root.join("summary.md"), &text)?;
    rundir::write_json(&root.join("summary.json"), &verdicts)?;
    Ok(Reproduction { root, cells, verdicts, figures })
}
