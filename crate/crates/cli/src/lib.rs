//! Command-line orchestration of the anonymization pipeline.

pub mod config;
pub mod pipeline;
pub mod prepare;
pub mod reports;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use eeganon::synthetic::{export_corpus, generate};

pub use config::{PipelineConfig, TrainSpec};
pub use pipeline::{MissingArtifact, Pipeline, SweepRow};

#[derive(Debug, Parser)]
#[command(name = "eeganon", version, about = "EEG anonymization against frozen sleep-staging and re-identification models")]
pub struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory (default: $EEGANON_RUN_ROOT/default, else runs/default).
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Phase {
    Utility,
    Reid,
    Anon,
    FreshAudit,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus as EDF files, hypnograms and a manifest.
    Synth {
        #[arg(long, default_value = "data/synthetic")]
        out: PathBuf,
    },
    /// Extract, stage-map and epoch paired EDF/hypnogram files into a dataset file.
    Prepare {
        #[arg(long)]
        edf_dir: PathBuf,
        #[arg(long)]
        hypnogram_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one training phase.
    Train {
        #[arg(value_enum)]
        phase: Phase,
    },
    /// Pass both splits through the trained autoencoder.
    Anonymize,
    /// Write the privacy summary and utility table; exit status 1 if a threshold fails.
    Eval,
    /// Train one autoencoder per omega_id value and tabulate the trade-off.
    Sweep {
        #[arg(long, default_value = "omega_id", value_parser = ["omega_id"])]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

impl Cli {
    fn pipeline_config(&self) -> Result<Option<PipelineConfig>> {
        let mut cfg = match &self.config {
            Some(p) => Some(PipelineConfig::load(p)?),
            None => None,
        };
        if let Some(seed) = self.seed {
            let base = match cfg {
                Some(c) => c,
                None => {
                    let echo = config::default_run_dir(self.run_dir.as_deref()).join("config.json");
                    if echo.exists() {
                        PipelineConfig::load(&echo)?
                    } else {
                        PipelineConfig::default()
                    }
                }
            };
            cfg = Some(base.with_seed(seed)?);
        }
        Ok(cfg)
    }

    fn pipeline(&self) -> Result<Pipeline> {
        let dir = config::default_run_dir(self.run_dir.as_deref());
        Pipeline::open(&dir, self.pipeline_config()?)
    }
}

/// Runs one command; `Ok(false)` means `eval` found a failed threshold.
pub fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Synth { out } => {
            let cfg = cli.pipeline_config()?.unwrap_or_default();
            let corpus = generate(&cfg.synth)?;
            let manifest = export_corpus(&corpus, out).with_context(|| format!("exporting to {}", out.display()))?;
            println!("{}", manifest.display());
        }
        Command::Prepare {
            edf_dir,
            hypnogram_dir,
            out,
        } => {
            let s = prepare::prepare(edf_dir, hypnogram_dir, out)?;
            println!("subject\tW\tN1\tN2\tN3\tREM");
            for (subject, c) in &s.counts {
                println!("{}\t{}\t{}\t{}\t{}\t{}", subject, c[0], c[1], c[2], c[3], c[4]);
            }
            for k in &s.skipped {
                println!("skipped\t{}", k);
            }
            println!("total\t{}", s.total_epochs);
        }
        Command::Train { phase } => {
            let p = cli.pipeline()?;
            match phase {
                Phase::Utility => println!("utility test accuracy {:.4}", p.train_utility()?.accuracy),
                Phase::Reid => println!("re-id test accuracy {:.4}", p.train_reid()?.accuracy),
                Phase::Anon => {
                    let run = p.train_anon()?;
                    if let Some(last) = run.epochs.last() {
                        println!(
                            "final epoch l_util {:.4} l_id {:.4} l_dist {:.4} combined {:.4}",
                            last.l_util, last.l_id, last.l_dist, last.combined
                        );
                    }
                }
                Phase::FreshAudit => {
                    let (reid, utility) = p.fresh_audit()?;
                    println!("fresh re-id accuracy {:.4}", reid.accuracy);
                    println!("fresh utility accuracy {:.4}", utility.accuracy);
                }
            }
        }
        Command::Anonymize => {
            let p = cli.pipeline()?;
            let (train, test) = p.anonymize()?;
            println!(
                "anonymized {} train and {} test epochs; median MSE {:.4} / {:.4}",
                train.dataset.len(),
                test.dataset.len(),
                train.median_mse(),
                test.median_mse()
            );
        }
        Command::Eval => {
            let p = cli.pipeline()?;
            let outcome = p.eval()?;
            for c in &outcome.checks {
                println!("{}\t{}\t{}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("reports in {}", p.path("reports").display());
            return Ok(outcome.passed);
        }
        Command::Sweep { values, .. } => {
            let p = cli.pipeline()?;
            println!("omega_id\tfrozen_reid_acc\tfresh_reid_acc\tutility_acc");
            for r in p.sweep(values)? {
                println!(
                    "{}\t{:.4}\t{:.4}\t{:.4}",
                    r.omega_id, r.frozen_reid_acc, r.fresh_reid_acc, r.utility_acc
                );
            }
        }
    }
    Ok(true)
}
