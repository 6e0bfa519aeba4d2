//! Classifier pretraining, adversarial autoencoder training against frozen
//! classifiers, anonymization and the fresh-model audit.

mod gradcheck;
mod loops;
mod objective;
mod optim;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use gradcheck::{gradient_check, CheckObjective, GradCheckReport, TinySetup};
pub use loops::{
    anonymize_dataset, evaluate_classifier, fresh_retrain_audit, predict, train_autoencoder, train_classifier,
    Anonymized, AutoencoderRun, BatchRecord, ClassifierEpoch, ClassifierRun, EpochLosses, FreshAudit,
};
pub use objective::{combined_loss, objective_graph, FrozenModel, ObjectiveVars};
pub use optim::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Upper bound applied to the identity loss before it enters the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IdLossCeiling {
    /// `2 · ln(n_subjects)`.
    #[default]
    Auto,
    Value(f64),
    /// No clamp: the raw unbounded objective.
    Unbounded,
}

impl IdLossCeiling {
    pub fn resolve(self, n_subjects: usize) -> Option<f64> {
        match self {
            IdLossCeiling::Auto => Some(2.0 * (n_subjects.max(2) as f64).ln()),
            IdLossCeiling::Value(v) => Some(v),
            IdLossCeiling::Unbounded => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub omega_util: f64,
    pub omega_id: f64,
    pub omega_dist: f64,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub id_loss_ceiling: IdLossCeiling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

pub const PRESET_NAMES: [&str; 4] = ["deepsleep-preset", "robustsleep-preset", "desk-preset", "desk-classifier"];

impl TrainConfig {
    /// Autoencoder settings for a DeepSleepNet-style utility model.
    pub fn deepsleep() -> Self {
        TrainConfig {
            learning_rate: 4e-6,
            batch_size: 32,
            n_epochs: 30,
            omega_util: 2000.0,
            omega_id: 25.0,
            omega_dist: 1.0,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            id_loss_ceiling: IdLossCeiling::Auto,
        }
    }

    /// Autoencoder settings for a RobustSleepNet-style utility model.
    pub fn robustsleep() -> Self {
        TrainConfig {
            learning_rate: 8e-7,
            batch_size: 64,
            omega_util: 1300.0,
            omega_id: 10.0,
            ..TrainConfig::deepsleep()
        }
    }

    /// Autoencoder settings sized for the synthetic corpus on one CPU core.
    pub fn desk() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            n_epochs: 16,
            omega_util: 40.0,
            omega_id: 25.0,
            omega_dist: 15.0,
            ..TrainConfig::deepsleep()
        }
    }

    /// Classifier pretraining on the synthetic corpus.
    pub fn desk_classifier() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            n_epochs: 12,
            omega_util: 0.0,
            omega_id: 0.0,
            omega_dist: 0.0,
            ..TrainConfig::deepsleep()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "deepsleep-preset" => Ok(Self::deepsleep()),
            "robustsleep-preset" => Ok(Self::robustsleep()),
            "desk-preset" => Ok(Self::desk()),
            "desk-classifier" => Ok(Self::desk_classifier()),
            other => Err(Error::config(
                "preset",
                format!("unknown preset '{}'; known: {}", other, PRESET_NAMES.join(", ")),
            )),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn weights(&self, n_subjects: usize) -> LossWeights {
        LossWeights {
            omega_util: self.omega_util,
            omega_id: self.omega_id,
            omega_dist: self.omega_dist,
            id_ceiling: self.id_loss_ceiling.resolve(n_subjects),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        for (name, w) in [
            ("omega_util", self.omega_util),
            ("omega_id", self.omega_id),
            ("omega_dist", self.omega_dist),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(name, format!("must be finite and non-negative, got {}", w)));
            }
        }
        let o = &self.optimizer;
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.epsilon > 0.0) {
            return Err(Error::config("optimizer", "betas must lie in [0, 1) and epsilon be positive"));
        }
        if let IdLossCeiling::Value(v) = self.id_loss_ceiling {
            if !(v > 0.0) {
                return Err(Error::config("id_loss_ceiling", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn validate_for_autoencoder(&self) -> Result<()> {
        self.validate()?;
        if self.omega_util == 0.0 && self.omega_id == 0.0 && self.omega_dist == 0.0 {
            return Err(Error::config("omega", "at least one of omega_util, omega_id, omega_dist must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub omega_util: f64,
    pub omega_id: f64,
    pub omega_dist: f64,
    /// `None` leaves the identity term unbounded.
    pub id_ceiling: Option<f64>,
}

impl LossWeights {
    pub fn new(omega_util: f64, omega_id: f64, omega_dist: f64) -> Self {
        LossWeights {
            omega_util,
            omega_id,
            omega_dist,
            id_ceiling: None,
        }
    }

    pub fn with_ceiling(mut self, ceiling: Option<f64>) -> Self {
        self.id_ceiling = ceiling;
        self
    }
}

/// The three loss components and their weighted combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_util: f64,
    pub l_id: f64,
    pub l_dist: f64,
    pub combined: f64,
}

impl LossBreakdown {
    /// `ω_util·l_util − ω_id·min(l_id, ceiling) + ω_dist·l_dist`.
    pub fn combine(weights: &LossWeights, l_util: f64, l_id: f64, l_dist: f64) -> Self {
        let id = match weights.id_ceiling {
            Some(c) => l_id.min(c),
            None => l_id,
        };
        LossBreakdown {
            l_util,
            l_id,
            l_dist,
            combined: weights.omega_util * l_util - weights.omega_id * id + weights.omega_dist * l_dist,
        }
    }
}
