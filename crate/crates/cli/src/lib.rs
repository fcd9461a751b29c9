//! Command implementations behind the `twsc` binary.

pub mod cli;
pub mod eval;
pub mod fetch;
pub mod plot;
pub mod reproduce;
pub mod rundir;
pub mod train;

use anyhow::{bail, Result};

use crate::cli::{Cli, Command};
use crate::reproduce::Status;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let config = train::build_config(&args)?;
            let data = fetch::load_dataset(&fetch::data_dir(args.common.data_dir.as_deref()))?;
            let job = train::TrainJob {
                config,
                precision: args.precision,
                runs_dir: args.common.runs_dir.clone(),
                run_id: args.run_id.clone(),
                verbose: true,
            };
            let (record, dir) = train::train(&job, &data)?;
            println!("{}", dir.display());
            eprintln!("run {} complete: {} steps, {} epochs", record.run_id, record.steps, record.epochs.len());
        }
        Command::Eval(args) => {
            let dir = rundir::resolve(&args.common.runs_dir, &args.run)?;
            let data = fetch::load_dataset(&fetch::data_dir(args.common.data_dir.as_deref()))?;
            let req = eval::EvalRequest {
                dir: &dir,
                eval_channel: args.eval_channel,
                snr: args.snr.clone(),
                epoch: args.epoch,
                test_limit: args.test_limit,
            };
            let table = eval::evaluate(&req, &data)?;
            let label = match args.epoch {
                Some(e) => format!("epoch{e}"),
                None => "latest".to_string(),
            };
            let path = eval::write_table(&dir, &table, args.eval_channel, &label)?;
            print!("{}", table.to_csv());
            eprintln!("wrote {}", path.display());
        }
        Command::Plot(args) => {
            let (svg, csv) = plot::run(&args)?;
            println!("{}\n{}", svg.display(), csv.display());
        }
        Command::Reproduce(args) => {
            let data = fetch::load_dataset(&fetch::data_dir(args.common.data_dir.as_deref()))?;
            let out = reproduce::reproduce(&args, &data)?;
            for v in &out.verdicts {
                println!("criterion {} ({}): {} - {}", v.criterion, v.name, v.status.as_str(), v.detail);
            }
            println!("summary: {}", out.root.join("summary.md").display());
            let failed: Vec<String> = out
                .verdicts
                .iter()
                .filter(|v| v.status == Status::Fail)
                .map(|v| format!("{} ({})", v.criterion, v.name))
                .collect();
            if !failed.is_empty() {
                bail!("acceptance criteria failed: {}", failed.join(", "));
            }
        }
        Command::FetchData(args) => {
            let dest = fetch::data_dir(args.dest.as_deref());
            let data = fetch::fetch(&dest, args.from.as_deref(), &args.base_url)?;
            println!(
                "{}: {} training and {} test images, checksum {}",
                dest.display(),
                data.train.len(),
                data.test.len(),
                data.checksum
            );
        }
    }
    Ok(())
}
