//! Run-directory orchestration of the train → anonymize → audit → evaluate protocol.
//!
//! Layout under the run directory:
//!
//! ```text
//! config.json                    resolved pipeline configuration
//! split/{train,test}.ds          stratified split of the source dataset
//! utility/ reid/ anon/           params.ckpt, trace.csv, config.json
//! anonymized/{train,test}.ds     autoencoder output, epoch_mse.csv
//! fresh/{utility,reid}/          classifiers retrained on anonymized data
//! reports/                       evaluation tables
//! sweep/omega_<v>/               one autoencoder per swept omega_id
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use eeganon::evaluation::EvalReport;
use eeganon::models::{load_params, save_params, ClassifierConfig, ModelSpec, ParameterStore};
use eeganon::signal_io::{load_dataset, save_dataset, stratified_split, EpochDataset, SplitTag};
use eeganon::synthetic::generate_corpus;
use eeganon::training::{
    anonymize_dataset, evaluate_classifier, train_autoencoder, train_classifier, Anonymized, AutoencoderRun,
    ClassifierRun, FrozenModel, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::reports;

/// A required input of a phase does not exist yet.
#[derive(Debug, thiserror::Error)]
#[error("missing artifact {}: {hint}", path.display())]
pub struct MissingArtifact {
    pub path: PathBuf,
    pub hint: String,
}

pub struct Pipeline {
    pub run_dir: PathBuf,
    pub config: PipelineConfig,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub omega_id: f64,
    pub frozen_reid_acc: f64,
    pub fresh_reid_acc: f64,
    pub utility_acc: f64,
}

impl Pipeline {
    /// Opens `run_dir`, creating it with `config` or reusing the configuration
    /// stored there. A run directory never changes configuration.
    pub fn open(run_dir: &Path, config: Option<PipelineConfig>) -> Result<Self> {
        let echo = run_dir.join("config.json");
        let stored: Option<PipelineConfig> = if echo.exists() { Some(read_json(&echo)?) } else { None };
        let config = match (config, stored) {
            (Some(c), Some(s)) => {
                let c = c.resolved()?;
                if c != s {
                    bail!(
                        "run directory {} was created with a different configuration; pick a new --run-dir",
                        run_dir.display()
                    );
                }
                c
            }
            (None, Some(s)) => s,
            (c, None) => {
                let c = c.unwrap_or_default().resolved()?;
                ensure_dir(run_dir)?;
                write_json(&echo, &c)?;
                c
            }
        };
        Ok(Pipeline {
            run_dir: run_dir.to_path_buf(),
            config,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.run_dir.join(rel)
    }

    fn require(&self, rel: &str, hint: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if !p.exists() {
            return Err(MissingArtifact {
                path: p,
                hint: hint.to_string(),
            }
            .into());
        }
        Ok(p)
    }

    /// The configured dataset, or the synthetic corpus when none is given.
    pub fn source_dataset(&self) -> Result<EpochDataset> {
        match &self.config.dataset {
            Some(p) => load_dataset(p).with_context(|| format!("loading dataset {}", p.display())),
            None => Ok(generate_corpus(&self.config.synth)?),
        }
    }

    /// Train and test splits, computed once and then read back from the run directory.
    pub fn split(&self) -> Result<(EpochDataset, EpochDataset)> {
        let (train_p, test_p) = (self.path("split/train.ds"), self.path("split/test.ds"));
        if train_p.exists() && test_p.exists() {
            return Ok((load_dataset(&train_p)?, load_dataset(&test_p)?));
        }
        let full = self.source_dataset()?;
        let out = stratified_split(&full, self.config.split.train_fraction, self.config.split.seed)?;
        for w in &out.warnings {
            log::warn!("{}", w);
        }
        ensure_dir(&self.path("split"))?;
        save_dataset(&out.train, &train_p)?;
        save_dataset(&out.test, &test_p)?;
        Ok((out.train, out.test))
    }

    fn n_subjects(&self, train: &EpochDataset) -> usize {
        train.n_subjects()
    }

    pub fn reid_model(&self, train: &EpochDataset) -> ClassifierConfig {
        self.config.reid_model_for(self.n_subjects(train))
    }

    fn save_classifier(&self, dir: &str, model: &ClassifierConfig, config: &TrainConfig, run: &ClassifierRun) -> Result<()> {
        let d = self.path(dir);
        ensure_dir(&d)?;
        save_params(&run.params, &ModelSpec::Classifier(model.clone()), &d.join("params.ckpt"))?;
        reports::write_rows(&d.join("trace.csv"), &run.trace)?;
        write_json(&d.join("config.json"), &(model, config))
    }

    fn classifier_phase(&self, dir: &str, model: &ClassifierConfig, config: &TrainConfig) -> Result<EvalReport> {
        let (train, test) = self.split()?;
        log::info!("training {} on {} epochs", dir, train.len());
        let run = train_classifier(&train, model, config)?;
        self.save_classifier(dir, model, config, &run)?;
        let report = evaluate_classifier(&run.params, model, &test)?;
        write_json(&self.path(&format!("{dir}/test_report.json")), &report)?;
        Ok(report)
    }

    pub fn train_utility(&self) -> Result<EvalReport> {
        self.classifier_phase("utility", &self.config.utility_model, &self.config.utility_train()?)
    }

    pub fn train_reid(&self) -> Result<EvalReport> {
        let (train, _) = self.split()?;
        self.classifier_phase("reid", &self.reid_model(&train), &self.config.reid_train()?)
    }

    fn load_classifier(&self, dir: &str, model: &ClassifierConfig, hint: &str) -> Result<ParameterStore<f32>> {
        let p = self.require(&format!("{dir}/params.ckpt"), hint)?;
        Ok(load_params(&p, &ModelSpec::Classifier(model.clone()))?)
    }

    /// The pretrained utility and re-id models.
    pub fn frozen(&self) -> Result<(FrozenModel<f32>, FrozenModel<f32>)> {
        let (train, _) = self.split()?;
        let reid_model = self.reid_model(&train);
        let utility = self.load_classifier("utility", &self.config.utility_model, "run `eeganon train utility` first")?;
        let reid = self.load_classifier("reid", &reid_model, "run `eeganon train reid` first")?;
        Ok((
            FrozenModel::new(self.config.utility_model.clone(), utility),
            FrozenModel::new(reid_model, reid),
        ))
    }

    fn autoencoder_phase(&self, dir: &str, config: &TrainConfig) -> Result<AutoencoderRun> {
        let (utility, reid) = self.frozen()?;
        let (train, _) = self.split()?;
        log::info!(
            "training autoencoder in {} with omega = ({}, {}, {})",
            dir,
            config.omega_util,
            config.omega_id,
            config.omega_dist
        );
        let run = train_autoencoder(&train, &self.config.autoencoder, config, &utility, &reid)?;
        let d = self.path(dir);
        ensure_dir(&d)?;
        save_params(
            &run.params,
            &ModelSpec::Autoencoder(self.config.autoencoder.clone()),
            &d.join("params.ckpt"),
        )?;
        reports::write_rows(&d.join("trace.csv"), &run.epochs)?;
        reports::write_batch_trace(&d.join("batch_trace.csv"), &run.batches)?;
        write_json(&d.join("config.json"), &(&self.config.autoencoder, config))?;
        Ok(run)
    }

    pub fn train_anon(&self) -> Result<AutoencoderRun> {
        self.autoencoder_phase("anon", &self.config.anon_train()?)
    }

    fn load_autoencoder(&self, dir: &str) -> Result<ParameterStore<f32>> {
        let p = self.require(&format!("{dir}/params.ckpt"), "run `eeganon train anon` first")?;
        Ok(load_params(&p, &ModelSpec::Autoencoder(self.config.autoencoder.clone()))?)
    }

    fn anonymize_into(&self, ae_dir: &str, out_dir: &str) -> Result<(Anonymized, Anonymized)> {
        let params = self.load_autoencoder(ae_dir)?;
        let (train, test) = self.split()?;
        let a_train = anonymize_dataset(&train, &params, &self.config.autoencoder)?;
        let a_test = anonymize_dataset(&test, &params, &self.config.autoencoder)?;
        let d = self.path(out_dir);
        ensure_dir(&d)?;
        save_dataset(&a_train.dataset, &d.join("train.ds"))?;
        save_dataset(&a_test.dataset, &d.join("test.ds"))?;
        reports::write_epoch_mse(&d.join("epoch_mse.csv"), &[&a_train, &a_test])?;
        Ok((a_train, a_test))
    }

    /// Passes both splits through the trained autoencoder.
    pub fn anonymize(&self) -> Result<(Anonymized, Anonymized)> {
        self.anonymize_into("anon", "anonymized")
    }

    pub fn anonymized(&self) -> Result<(EpochDataset, EpochDataset)> {
        let hint = "run `eeganon anonymize` first";
        let train = self.require("anonymized/train.ds", hint)?;
        let test = self.require("anonymized/test.ds", hint)?;
        Ok((load_dataset(&train)?, load_dataset(&test)?))
    }

    /// Retrains both classifiers from scratch on anonymized training data.
    pub fn fresh_audit(&self) -> Result<(EvalReport, EvalReport)> {
        let (a_train, a_test) = self.anonymized()?;
        let config = self.config.fresh_train()?;
        let reid_model = self.reid_model(&a_train);
        let mut out = Vec::new();
        for (dir, model) in [("fresh/reid", &reid_model), ("fresh/utility", &self.config.utility_model)] {
            log::info!("training {} on anonymized data", dir);
            let run = train_classifier(&a_train, model, &config)?;
            self.save_classifier(dir, model, &config, &run)?;
            let report = evaluate_classifier(&run.params, model, &a_test)?;
            write_json(&self.path(&format!("{dir}/test_report.json")), &report)?;
            out.push(report);
        }
        let utility = out.pop().expect("two reports");
        let reid = out.pop().expect("two reports");
        Ok((reid, utility))
    }

    /// Evaluates every model on original and anonymized test data and writes the reports.
    pub fn eval(&self) -> Result<reports::EvalOutcome> {
        let (train, test) = self.split()?;
        let (utility, reid) = self.frozen()?;
        let (_, a_test) = self.anonymized()?;
        let hint = "run `eeganon train fresh-audit` first";
        let fresh_reid = self.load_classifier("fresh/reid", &reid.config, hint)?;
        let fresh_utility = self.load_classifier("fresh/utility", &utility.config, hint)?;
        let inputs = reports::EvalInputs {
            n_subjects: train.n_subjects(),
            baseline_reid: evaluate_classifier(&reid.params, &reid.config, &test)?,
            frozen_reid: evaluate_classifier(&reid.params, &reid.config, &a_test)?,
            fresh_reid: evaluate_classifier(&fresh_reid, &reid.config, &a_test)?,
            baseline_utility: evaluate_classifier(&utility.params, &utility.config, &test)?,
            frozen_utility: evaluate_classifier(&utility.params, &utility.config, &a_test)?,
            fresh_utility: evaluate_classifier(&fresh_utility, &utility.config, &a_test)?,
        };
        reports::write_all(&self.path("reports"), &inputs, &test, &a_test, &self.config.thresholds)
    }

    /// Trains, anonymizes and audits one autoencoder per `omega_id` value against
    /// the shared pretrained classifiers.
    pub fn sweep(&self, values: &[f64]) -> Result<Vec<SweepRow>> {
        let mut values: Vec<f64> = values.to_vec();
        if values.is_empty() {
            bail!("sweep needs at least one value");
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            bail!("omega_id values must be finite and non-negative, got {}", bad);
        }
        values.sort_by(|a, b| a.total_cmp(b));
        values.dedup();
        let (utility, reid) = self.frozen()?;
        let base = self.config.anon_train()?;
        let fresh_config = self.config.fresh_train()?;
        let mut rows = Vec::new();
        for v in values {
            let dir = format!("sweep/omega_{}", v);
            let config = TrainConfig { omega_id: v, ..base.clone() };
            config.validate_for_autoencoder()?;
            self.autoencoder_phase(&dir, &config)?;
            let (a_train, a_test) = self.anonymize_into(&dir, &format!("{dir}/anonymized"))?;
            let fresh = train_classifier(&a_train.dataset, &reid.config, &fresh_config)?;
            let row = SweepRow {
                omega_id: v,
                frozen_reid_acc: evaluate_classifier(&reid.params, &reid.config, &a_test.dataset)?.accuracy,
                fresh_reid_acc: evaluate_classifier(&fresh.params, &reid.config, &a_test.dataset)?.accuracy,
                utility_acc: evaluate_classifier(&utility.params, &utility.config, &a_test.dataset)?.accuracy,
            };
            log::info!("{:?}", row);
            write_json(&self.path(&format!("{dir}/metrics.json")), &row)?;
            rows.push(row);
        }
        reports::write_rows(&self.path("sweep/sweep.csv"), &rows)?;
        Ok(rows)
    }
}

/// Split tag as used in file names and reports.
pub fn split_name(tag: SplitTag) -> &'static str {
    match tag {
        SplitTag::Full => "full",
        SplitTag::Train => "train",
        SplitTag::Test => "test",
    }
}
