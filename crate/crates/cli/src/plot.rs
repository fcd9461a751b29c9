//! Static SVG curves plus a sidecar CSV with the exact plotted numbers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use plotters::prelude::*;
use twsc::{Direction, MetricTable};

use crate::cli::{PlotArgs, PlotAxis, PlotDirection, PlotMetric};
use crate::rundir;

pub const SIDECAR_HEADER: &str = "series,x,y";

/// One curve. `None` marks an exact reconstruction (no finite PSNR).
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, Option<f64>)>,
}

fn run_id_of(dir: &Path) -> String {
    dir.file_name().and_then(|s| s.to_str()).unwrap_or("run").to_string()
}

fn parse_opt(raw: &str) -> Result<Option<f64>> {
    match raw {
        "" | "exact" => Ok(None),
        v => Ok(Some(v.parse().with_context(|| format!("bad number `{v}`"))?)),
    }
}

/// Per-epoch evaluation curves from a run's `metrics.csv`.
pub fn epoch_series(run_dir: &Path, metric: PlotMetric, direction: Direction) -> Result<Series> {
    let path = run_dir.join(rundir::METRICS_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).with_context(|| format!("{} lacks `{name}`", path.display()));
    let (c_epoch, c_mode, c_dir) = (col("epoch")?, col("mode")?, col("direction")?);
    let c_val = col(match metric {
        PlotMetric::Psnr => "psnr",
        PlotMetric::Ssim => "ssim",
    })?;
    let mut points = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() || f[c_mode] != "eval" || f[c_dir] != direction.as_str() {
            continue;
        }
        points.push((f[c_epoch].parse::<f64>()?, parse_opt(f[c_val])?));
    }
    Ok(Series { label: run_id_of(run_dir), points })
}

/// Averaged-link curve versus SNR from one evaluation CSV.
pub fn snr_series(csv: &Path, metric: PlotMetric) -> Result<Series> {
    let text = std::fs::read_to_string(csv).with_context(|| format!("reading {}", csv.display()))?;
    let table = MetricTable::from_csv(&text)?;
    let points = table
        .averaged()
        .map(|r| {
            let y = match metric {
                PlotMetric::Psnr => r.psnr_db.db(),
                PlotMetric::Ssim => Some(r.ssim),
            };
            (r.snr_db, y)
        })
        .collect();
    // runs/<id>/eval/<file>.csv -> <id>
    let label = csv
        .parent()
        .filter(|p| p.file_name().is_some_and(|n| n == rundir::EVAL_DIR))
        .and_then(|p| p.parent())
        .map(run_id_of)
        .unwrap_or_else(|| csv.file_stem().and_then(|s| s.to_str()).unwrap_or("eval").to_string());
    Ok(Series { label, points })
}

pub fn sidecar_csv(series: &[Series]) -> String {
    let mut s = format!("{SIDECAR_HEADER}\n");
    for c in series {
        for (x, y) in &c.points {
            let y = y.map(|v| v.to_string()).unwrap_or_else(|| "exact".into());
            let _ = writeln!(s, "{},{x},{y}", c.label);
        }
    }
    s
}

fn axis_label(metric: PlotMetric) -> &'static str {
    match metric {
        PlotMetric::Psnr => "PSNR (dB)",
        PlotMetric::Ssim => "SSIM",
    }
}

/// Draw `series` into an SVG file.
pub fn render(series: &[Series], x_label: &str, y_label: &str, title: &str, out: &Path) -> Result<()> {
    let finite: Vec<(f64, f64)> =
        series.iter().flat_map(|s| s.points.iter().filter_map(|&(x, y)| y.map(|y| (x, y)))).collect();
    if finite.is_empty() {
        bail!("nothing to plot: no finite values in the input");
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 - x0 < 1e-9 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let pad = ((y1 - y0) * 0.08).max(1e-3);
    let (y0, y1) = (y0 - pad, y1 + pad);

    let root = SVGBackend::new(out, (800, 560)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(16)
        .x_label_area_size(44)
        .y_label_area_size(64)
        .build_cartesian_2d(x0..x1, y0..y1)?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw()?;
    for (i, s) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let pts: Vec<(f64, f64)> = s.points.iter().filter_map(|&(x, y)| y.map(|y| (x, y))).collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))?
            .label(s.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        chart.draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled())))?;
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.85)).border_style(BLACK).draw()?;
    root.present().with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

/// Write the SVG and its sidecar; returns both paths.
pub fn emit(series: &[Series], metric: PlotMetric, x: PlotAxis, title: &str, out: &Path) -> Result<(PathBuf, PathBuf)> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let x_label = match x {
        PlotAxis::Snr => "SNR (dB)",
        PlotAxis::Epoch => "epoch",
    };
    render(series, x_label, axis_label(metric), title, out)?;
    let sidecar = out.with_extension("csv");
    std::fs::write(&sidecar, sidecar_csv(series)).with_context(|| format!("writing {}", sidecar.display()))?;
    Ok((out.to_path_buf(), sidecar))
}

pub fn metric_name(metric: PlotMetric) -> &'static str {
    match metric {
        PlotMetric::Psnr => "psnr",
        PlotMetric::Ssim => "ssim",
    }
}

pub fn run(args: &PlotArgs) -> Result<(PathBuf, PathBuf)> {
    let mut series = Vec::new();
    match args.x {
        PlotAxis::Epoch => {
            let dirs: Vec<Direction> = match args.direction {
                PlotDirection::AToB => vec![Direction::AToB],
                PlotDirection::BToA => vec![Direction::BToA],
                PlotDirection::Both => vec![Direction::AToB, Direction::BToA],
            };
            for input in &args.inputs {
                for &d in &dirs {
                    let mut s = epoch_series(input, args.metric, d)?;
                    if dirs.len() > 1 {
                        s.label = format!("{} {d}", s.label);
                    }
                    if !s.points.is_empty() {
                        series.push(s);
                    }
                }
            }
        }
        PlotAxis::Snr => {
            for input in &args.inputs {
                if input.is_dir() {
                    bail!("{} is a directory; --x snr takes evaluation CSV files", input.display());
                }
                series.push(snr_series(input, args.metric)?);
            }
        }
    }
    if series.iter().all(|s| s.points.is_empty()) {
        bail!("the input tables are empty");
    }
    let name = format!("{}_vs_{}.svg", metric_name(args.metric), if args.x == PlotAxis::Snr { "snr" } else { "epoch" });
    let out = match &args.out {
        Some(p) => p.clone(),
        None => {
            let first = &args.inputs[0];
            let run_dir = match args.x {
                PlotAxis::Epoch => first.clone(),
                PlotAxis::Snr => first.parent().and_then(|p| p.parent()).map(Path::to_path_buf).unwrap_or_default(),
            };
            rundir::fresh_path(&run_dir.join(rundir::PLOTS_DIR).join(name))
        }
    };
    let title = args.title.clone().unwrap_or_else(|| {
        format!("{} vs {}", axis_label(args.metric), if args.x == PlotAxis::Snr { "SNR" } else { "epoch" })
    });
    emit(&series, args.metric, args.x, &title, &out)
}
