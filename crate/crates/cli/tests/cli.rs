use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use twsc::data::{write_idx_dir, ImageSet, MNIST_TEST, MNIST_TRAIN};
use twsc_cli::cli::{Cli, Command as Sub};
use twsc_cli::rundir::{self, RunRecord, RunStatus};

/// Canonically sized random stand-in for MNIST, written once per test binary.
fn data_dir() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut set = |n: usize| {
            let mut px = vec![0u8; n * 784];
            rng.fill(&mut px[..]);
            ImageSet::new(px, n, 28, 28).unwrap()
        };
        let (train, test) = (set(MNIST_TRAIN), set(MNIST_TEST));
        write_idx_dir(dir.path(), &train, &test).unwrap();
        dir
    })
    .path()
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.cfg");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "batch_size=8\ntrain_limit=16\ntest_limit=16\nepoch_eval_images=8\neval_snr_list_db=0,10").unwrap();
    path
}

fn twsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twsc"))
        .args(args)
        .env("TWSC_DATA_DIR", data_dir())
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn train(runs: &Path, extra: &[&str]) -> PathBuf {
    let cfg = small_config(runs);
    let mut args = vec!["train", "--config", cfg.to_str().unwrap(), "--runs-dir", runs.to_str().unwrap()];
    args.extend_from_slice(extra);
    PathBuf::from(ok(twsc(&args)).trim())
}

#[test]
fn train_writes_a_complete_run_directory() {
    let runs = tempfile::tempdir().unwrap();
    let dir = train(runs.path(), &["--system", "twsc", "--channel", "awgn", "--seed", "1", "--epochs", "3"]);
    for f in ["config.json", "metrics.csv", "run.json", "A/3.ckpt", "B/3.ckpt", "A/1.ckpt"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let record: RunRecord = rundir::load_record(&dir).unwrap();
    assert_eq!(record.status, RunStatus::Complete);
    assert_eq!(record.epochs.len(), 3);
    assert_eq!(record.config.seed, 1);
    assert_eq!(record.steps, 6);
    assert_eq!(record.audit.backward_gradient_count, 0);
    assert_eq!(record.audit.forward_payload_count, 12);
    assert_eq!(record.weight_discrepancy, Some(0.0));
    let metrics = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with(twsc::training::METRICS_HEADER));
    assert_eq!(metrics.lines().filter(|l| l.contains(",eval,")).count(), 6);
}

#[test]
fn default_flags_keep_the_full_budget() {
    let cli = <Cli as clap::Parser>::try_parse_from(["twsc", "train", "--system", "jscc", "--channel", "rayleigh"]).unwrap();
    let Sub::Train(args) = cli.command else { panic!("not a train command") };
    let cfg = twsc_cli::train::build_config(&args).unwrap();
    assert_eq!((cfg.epochs, cfg.batch_size), (100, 128));
    assert_eq!(cfg.system_kind, twsc::SystemKind::Jscc);
    assert_eq!(cfg.channel_kind, twsc::ChannelKind::Rayleigh);
}

#[test]
fn identical_reruns_give_identical_metrics() {
    let runs = tempfile::tempdir().unwrap();
    let flags = ["--system", "gansc", "--channel", "rayleigh", "--seed", "4", "--epochs", "1"];
    let a = train(runs.path(), &flags);
    let b = train(runs.path(), &flags);
    assert_ne!(a, b);
    let read = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(std::fs::read(a.join("A/1.ckpt")).unwrap(), std::fs::read(b.join("A/1.ckpt")).unwrap());
}

#[test]
fn eval_sweeps_and_is_repeatable() {
    let runs = tempfile::tempdir().unwrap();
    let dir = train(runs.path(), &["--system", "twsc", "--epochs", "1"]);
    let run = dir.to_str().unwrap();
    let args = ["eval", "--run", run, "--eval-channel", "awgn", "--snr", "0,5,10,15,20"];
    let first = ok(twsc(&args));
    let second = ok(twsc(&args));
    assert_eq!(first, second);
    let table = twsc::MetricTable::from_csv(&first).unwrap();
    let avg: Vec<_> = table.averaged().collect();
    assert_eq!(avg.len(), 5);
    assert!(avg.iter().all(|r| r.psnr_db.db().is_some_and(f64::is_finite) && r.n_images == 16));
    let files: Vec<_> = std::fs::read_dir(dir.join("eval")).unwrap().filter_map(|e| e.ok()).collect();
    assert_eq!(files.iter().filter(|e| e.path().extension().is_some_and(|x| x == "csv")).count(), 2);
    let id = dir.file_name().unwrap().to_str().unwrap();
    let by_id = ["eval", "--run", id, "--runs-dir", runs.path().to_str().unwrap(), "--snr", "-5"];
    assert!(ok(twsc(&by_id)).contains(",-5,"));
}

#[test]
fn eval_reports_missing_checkpoint_path() {
    let runs = tempfile::tempdir().unwrap();
    let dir = train(runs.path(), &["--system", "jscc", "--epochs", "1"]);
    let out = twsc(&["eval", "--run", dir.to_str().unwrap(), "--epoch", "7"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("7.ckpt"), "{err}");
}

#[test]
fn plots_carry_exact_sidecars_and_run_labels() {
    let runs = tempfile::tempdir().unwrap();
    let a = train(runs.path(), &["--system", "twsc", "--epochs", "2"]);
    let b = train(runs.path(), &["--system", "jscc", "--epochs", "2"]);
    let out_svg = runs.path().join("cmp.svg");
    let lines = ok(twsc(&[
        "plot",
        "--metric",
        "ssim",
        "--x",
        "epoch",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out",
        out_svg.to_str().unwrap(),
    ]));
    assert!(lines.contains("cmp.csv"));
    let svg = std::fs::read_to_string(&out_svg).unwrap();
    let sidecar = std::fs::read_to_string(runs.path().join("cmp.csv")).unwrap();
    let ids = [a.file_name().unwrap().to_str().unwrap(), b.file_name().unwrap().to_str().unwrap()];
    for id in ids {
        assert!(svg.contains(id), "legend lacks {id}");
    }
    let rows: Vec<Vec<&str>> = sidecar.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    let labels: std::collections::BTreeSet<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(labels, ids.into_iter().collect());
    for (dir, id) in [(&a, ids[0]), (&b, ids[1])] {
        let epochs: Vec<&str> = rows.iter().filter(|r| r[0] == id).map(|r| r[1]).collect();
        assert_eq!(epochs, ["1", "2"]);
        let metrics = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
        let want: Vec<f64> = metrics
            .lines()
            .filter(|l| l.contains(",eval,A->B,"))
            .map(|l| l.split(',').nth(6).unwrap().parse().unwrap())
            .collect();
        let got: Vec<f64> = rows.iter().filter(|r| r[0] == id).map(|r| r[2].parse().unwrap()).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn default_plot_goes_into_run_plots_dir() {
    let runs = tempfile::tempdir().unwrap();
    let dir = train(runs.path(), &["--system", "twsc", "--epochs", "1"]);
    ok(twsc(&["eval", "--run", dir.to_str().unwrap(), "--snr", "0,10"]));
    let csv = std::fs::read_dir(dir.join("eval"))
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .find(|p| p.extension().is_some_and(|x| x == "csv"))
        .unwrap();
    ok(twsc(&["plot", "--metric", "psnr", "--x", "snr", csv.to_str().unwrap()]));
    assert!(dir.join("plots/psnr_vs_snr.svg").exists());
    let sidecar = std::fs::read_to_string(dir.join("plots/psnr_vs_snr.csv")).unwrap();
    assert_eq!(sidecar.lines().count(), 3);
}

#[test]
fn plot_rejects_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    std::fs::write(&csv, format!("{}\n", twsc::metrics::TABLE_HEADER)).unwrap();
    let out = twsc(&["plot", "--metric", "psnr", "--x", "snr", csv.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn missing_dataset_points_to_fetch_data() {
    let empty = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_twsc"))
        .args(["train", "--epochs", "1", "--runs-dir", empty.path().to_str().unwrap()])
        .env("TWSC_DATA_DIR", empty.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("fetch-data"));
}

#[test]
fn invalid_flags_are_usage_errors() {
    let out = twsc(&["train", "--system", "tw-sc"]);
    assert_eq!(out.status.code(), Some(2));
    let out = twsc(&["train", "--batch-size", "0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_size"));
}

#[test]
fn fetch_data_unpacks_a_local_gzip_mirror() {
    use flate2::{write::GzEncoder, Compression};
    let src = tempfile::tempdir().unwrap();
    for name in twsc_cli::fetch::FILES {
        let raw = std::fs::read(data_dir().join(name)).unwrap();
        let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(&raw).unwrap();
        std::fs::write(src.path().join(format!("{name}.gz")), enc.finish().unwrap()).unwrap();
    }
    let dest = tempfile::tempdir().unwrap();
    let line = ok(twsc(&["fetch-data", "--from", src.path().to_str().unwrap(), "--dest", dest.path().to_str().unwrap()]));
    assert!(line.contains("60000 training and 10000 test images"));
    for name in twsc_cli::fetch::FILES {
        assert_eq!(std::fs::read(dest.path().join(name)).unwrap(), std::fs::read(data_dir().join(name)).unwrap());
    }
}
