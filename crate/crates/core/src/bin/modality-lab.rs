// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end for config-driven experiments.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use modality_lab::benchgen::save_dataset;
use modality_lab::decoder::save_checkpoint;
use modality_lab::harness::{self, EvalReport, ExperimentConfig};
use modality_lab::{Error, Result};

#[derive(Parser)]
#[command(name = "modality-lab", version, about = "Modality-level attention interventions on a toy decoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path; its meaning depends on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for evaluation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the training set and evaluation datasets into the --out directory.
    Generate,
    /// Train a model and write its checkpoint to --out.
    Train,
    /// Evaluate all interventions; writes <out>.csv and <out>.txt.
    Eval,
    /// Run the config's [sweep] template over the layer quarters.
    Sweep,
    /// Write pre-intervention attention for one dataset to --out.
    DumpAttn {
        /// Dataset name; defaults to the first configured dataset.
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Re-render a CSV report as text (to --out or stdout).
    Report {
        /// Report CSV written by `eval` or `sweep`.
        input: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = jobs;
    }
    config.validate()?;
    Ok(config)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn report_prefix(cli: &Cli, config: &ExperimentConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| config.report.as_ref().map(|p| config.resolve(p)))
        .unwrap_or_else(|| PathBuf::from("report"))
}

fn save_report(report: &EvalReport, prefix: &Path) -> Result<()> {
    report.save_csv(with_ext(prefix, "csv"))?;
    let text = report.render();
    write(&with_ext(prefix, "txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate => {
            let config = load_config(cli)?;
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("data"));
            fs::create_dir_all(&dir).map_err(|e| Error::Io {
                path: dir.clone(),
                source: e,
            })?;
            if config.train.is_some() {
                let path = dir.join("train.tsv");
                save_dataset(&harness::build_training_set(&config)?, &path)?;
                println!("wrote {}", path.display());
            }
            for (name, data) in harness::build_datasets(&config)? {
                let path = dir.join(format!("{name}.tsv"));
                save_dataset(&data, &path)?;
                println!("wrote {}", path.display());
            }
        }
        Command::Train => {
            let config = load_config(cli)?;
            if config.train.is_none() {
                return Err(Error::Config("`train` needs a [train] section".into()));
            }
            let mut config = config;
            config.model.checkpoint = None;
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("model.mbl"));
            let model = harness::prepare_model(&config)?;
            save_checkpoint(&model.params, &out)?;
            let record = model.train_report.expect("trained").to_record();
            write(&with_ext(&out, "report.txt"), &record)?;
            print!("{record}");
            println!("wrote {}", out.display());
        }
        Command::Eval => {
            let config = load_config(cli)?;
            let report = harness::run_experiment(&config)?;
            save_report(&report, &report_prefix(cli, &config))?;
        }
        Command::Sweep => {
            let config = load_config(cli)?;
            let sweep = config
                .sweep
                .clone()
                .ok_or_else(|| Error::Config("`sweep` needs a [sweep] section".into()))?;
            let report = harness::sweep_quarters(&config, &sweep)?;
            save_report(&report, &report_prefix(cli, &config))?;
        }
        Command::DumpAttn { dataset } => {
            let config = load_config(cli)?;
            let datasets = harness::build_datasets(&config)?;
            let (name, data) = match dataset {
                Some(want) => datasets
                    .iter()
                    .find(|(n, _)| n == want)
                    .ok_or_else(|| Error::Config(format!("no dataset named `{want}`")))?,
                None => datasets
                    .first()
                    .ok_or_else(|| Error::Config("no [[dataset]] entries".into()))?,
            };
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(format!("{name}.attn")));
            let model = harness::prepare_model(&config)?;
            let n = harness::dump_attention(&model.params, data, &out)?;
            println!("wrote {n} records to {}", out.display());
        }
        Command::Report { input } => {
            let text = EvalReport::load_csv(input)?.render();
            match &cli.out {
                Some(out) => write(out, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}
