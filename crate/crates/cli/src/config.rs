use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use eeganon::models::{AutoencoderConfig, ClassifierConfig};
use eeganon::synthetic::SynthConfig;
use eeganon::training::TrainConfig;
use serde::{Deserialize, Serialize};

/// Environment variable naming the directory under which default runs live.
pub const RUN_ROOT_ENV: &str = "EEGANON_RUN_ROOT";
pub const DEFAULT_RUN_NAME: &str = "default";

/// A training phase given either as a preset name or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrainSpec {
    Preset(String),
    Config(TrainConfig),
}

impl TrainSpec {
    pub fn resolve(&self) -> Result<TrainConfig> {
        Ok(match self {
            TrainSpec::Preset(name) => TrainConfig::preset(name)?,
            TrainSpec::Config(c) => c.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Pass/fail limits applied by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub min_baseline_reid: f64,
    /// Frozen re-id on anonymized data must not exceed this multiple of chance.
    pub max_frozen_reid_over_chance: f64,
    pub min_baseline_utility: f64,
    pub max_utility_drop: f64,
    /// Margin around chance and baseline for the fresh re-id ordering check.
    pub fresh_margin: f64,
    /// Slack allowed when fresh re-id falls below frozen re-id.
    pub fresh_below_frozen_slack: f64,
    pub min_band_retention: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            min_baseline_reid: 0.80,
            max_frozen_reid_over_chance: 2.0,
            min_baseline_utility: 0.85,
            max_utility_drop: 0.10,
            fresh_margin: 0.05,
            fresh_below_frozen_slack: 0.02,
            min_band_retention: 0.60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Prepared dataset (`prepare` output); the synthetic corpus is generated when absent.
    pub dataset: Option<PathBuf>,
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub utility_model: ClassifierConfig,
    /// `n_classes` is set from the dataset's subject count.
    pub reid_model: ClassifierConfig,
    pub autoencoder: AutoencoderConfig,
    pub utility_training: TrainSpec,
    pub reid_training: TrainSpec,
    pub anon_training: TrainSpec,
    pub fresh_training: TrainSpec,
    pub thresholds: Thresholds,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let classifier = |seed| TrainSpec::Config(TrainConfig::desk_classifier().with_seed(seed));
        PipelineConfig {
            dataset: None,
            reid_model: ClassifierConfig::reid_transformer(synth.n_subjects),
            synth,
            split: SplitConfig::default(),
            utility_model: ClassifierConfig::utility_cnn(),
            autoencoder: AutoencoderConfig::default(),
            utility_training: classifier(1),
            reid_training: classifier(2),
            anon_training: TrainSpec::Config(TrainConfig::desk().with_seed(3)),
            fresh_training: classifier(4),
            thresholds: Thresholds::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Replaces every preset name by its full configuration so the run echo is explicit.
    pub fn resolved(mut self) -> Result<Self> {
        for spec in [
            &mut self.utility_training,
            &mut self.reid_training,
            &mut self.anon_training,
            &mut self.fresh_training,
        ] {
            *spec = TrainSpec::Config(spec.resolve()?);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.utility_model.validate()?;
        self.autoencoder.validate()?;
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            bail!("invalid configuration field 'split.train_fraction': must lie in (0, 1)");
        }
        for spec in [&self.utility_training, &self.reid_training, &self.fresh_training] {
            spec.resolve()?.validate()?;
        }
        self.anon_training.resolve()?.validate_for_autoencoder()?;
        Ok(())
    }

    /// Sets every seed from one value: corpus and split use `seed`, the training
    /// phases `seed + 1` through `seed + 4`.
    pub fn with_seed(mut self, seed: u64) -> Result<Self> {
        self.synth.master_seed = seed;
        self.split.seed = seed;
        for (k, spec) in [
            &mut self.utility_training,
            &mut self.reid_training,
            &mut self.anon_training,
            &mut self.fresh_training,
        ]
        .into_iter()
        .enumerate()
        {
            *spec = TrainSpec::Config(spec.resolve()?.with_seed(seed + 1 + k as u64));
        }
        Ok(self)
    }

    pub fn utility_train(&self) -> Result<TrainConfig> {
        self.utility_training.resolve()
    }

    pub fn reid_train(&self) -> Result<TrainConfig> {
        self.reid_training.resolve()
    }

    pub fn anon_train(&self) -> Result<TrainConfig> {
        self.anon_training.resolve()
    }

    pub fn fresh_train(&self) -> Result<TrainConfig> {
        self.fresh_training.resolve()
    }

    pub fn reid_model_for(&self, n_subjects: usize) -> ClassifierConfig {
        ClassifierConfig {
            n_classes: n_subjects,
            ..self.reid_model.clone()
        }
    }
}

/// `--run-dir`, else `$EEGANON_RUN_ROOT/default`, else `runs/default`.
pub fn default_run_dir(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    let root = std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(DEFAULT_RUN_NAME)
}
