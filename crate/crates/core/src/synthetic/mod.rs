//! Deterministic synthetic sleep EEG with planted subject fingerprints.

mod export;
mod oracle;
mod render;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::signal_io::{Epoch, EpochDataset, SleepStage};
use crate::{Error, Result};

pub use export::{export_corpus, CorpusManifest, ManifestEntry};
pub use oracle::{oracle_stage, oracle_subject, stage_features, subject_features, StageOracle};
pub use render::{render_epoch, Renderer};

/// Lowest and highest planted alpha peaks.
pub const ALPHA_RANGE_HZ: (f64, f64) = (8.0, 11.5);
pub const TILT_RANGE: (f64, f64) = (-1.5, -0.5);
pub const AMPLITUDE_RANGE: (f64, f64) = (0.8, 1.2);
/// Minimum spacing of alpha peaks between any two subjects.
pub const MIN_ALPHA_SEPARATION_HZ: f64 = 0.3;

/// Planted per-subject characteristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: String,
    pub alpha_peak_hz: f64,
    /// Power-law exponent of the background spectrum, `P(f) ∝ f^tilt`.
    pub spectral_tilt: f64,
    pub amplitude_scale: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub epochs_per_subject: usize,
    /// Probabilities of W, N1, N2, N3, REM.
    pub stage_mix: [f64; 5],
    /// Standard deviation of additive white sensor noise.
    pub noise_sigma_uv: f64,
    pub sampling_rate_hz: f64,
    pub epoch_s: f64,
    pub master_seed: u64,
}

pub const DEFAULT_NOISE_SIGMA_UV: f64 = 1.0;

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 8,
            epochs_per_subject: 200,
            stage_mix: [0.2; 5],
            noise_sigma_uv: DEFAULT_NOISE_SIGMA_UV,
            sampling_rate_hz: 100.0,
            epoch_s: 30.0,
            master_seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn max_subjects() -> usize {
        ((ALPHA_RANGE_HZ.1 - ALPHA_RANGE_HZ.0) / MIN_ALPHA_SEPARATION_HZ).floor() as usize + 1
    }

    pub fn samples_per_epoch(&self) -> usize {
        (self.epoch_s * self.sampling_rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(Error::config("n_subjects", format!("must be at least 2, got {}", self.n_subjects)));
        }
        if self.n_subjects > Self::max_subjects() {
            return Err(Error::config(
                "n_subjects",
                format!(
                    "at most {} subjects fit {:?} Hz with {} Hz alpha separation, got {}",
                    Self::max_subjects(),
                    ALPHA_RANGE_HZ,
                    MIN_ALPHA_SEPARATION_HZ,
                    self.n_subjects
                ),
            ));
        }
        if self.epochs_per_subject == 0 {
            return Err(Error::config("epochs_per_subject", "must be positive"));
        }
        if self.stage_mix.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::config(
                "stage_mix",
                format!("probabilities must be finite and non-negative, got {:?}", self.stage_mix),
            ));
        }
        let sum: f64 = self.stage_mix.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config("stage_mix", format!("must sum to 1, sums to {}", sum)));
        }
        if !(self.noise_sigma_uv.is_finite() && self.noise_sigma_uv >= 0.0) {
            return Err(Error::config("noise_sigma_uv", "must be finite and non-negative"));
        }
        if !(self.sampling_rate_hz >= 80.0 && self.sampling_rate_hz.is_finite()) {
            return Err(Error::config(
                "sampling_rate_hz",
                format!("must be at least 80 Hz to carry the 30 Hz beta band, got {}", self.sampling_rate_hz),
            ));
        }
        let n = self.epoch_s * self.sampling_rate_hz;
        if !(self.epoch_s > 0.0) || (n - n.round()).abs() > 1e-9 || n.round() < 2.0 * self.sampling_rate_hz {
            return Err(Error::config(
                "epoch_s",
                format!("must span a whole number of samples and at least 2 s, got {}", self.epoch_s),
            ));
        }
        Ok(())
    }
}

/// A generated dataset together with the profiles that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub config: SynthConfig,
    pub profiles: Vec<SubjectProfile>,
    pub dataset: EpochDataset,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a subject's stream, derived from the master seed and the id only.
pub fn subject_seed(master_seed: u64, subject_id: &str) -> u64 {
    subject_id
        .bytes()
        .fold(splitmix(master_seed), |h, b| splitmix(h ^ b as u64))
}

pub fn subject_id(index: usize) -> String {
    format!("S{:02}", index + 1)
}

/// Alpha peaks and tilts on evenly spaced slots, assigned by independent seeded permutations.
pub fn subject_profiles(config: &SynthConfig) -> Result<Vec<SubjectProfile>> {
    config.validate()?;
    let n = config.n_subjects;
    let slot = |range: (f64, f64), i: usize| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(config.master_seed ^ 0x5052_4f46));
    let mut alpha: Vec<usize> = (0..n).collect();
    let mut tilt: Vec<usize> = (0..n).collect();
    alpha.shuffle(&mut rng);
    tilt.shuffle(&mut rng);
    Ok((0..n)
        .map(|i| {
            let id = subject_id(i);
            SubjectProfile {
                seed: subject_seed(config.master_seed, &id),
                alpha_peak_hz: slot(ALPHA_RANGE_HZ, alpha[i]),
                spectral_tilt: slot(TILT_RANGE, tilt[i]),
                amplitude_scale: rng.gen_range(AMPLITUDE_RANGE.0..=AMPLITUDE_RANGE.1),
                subject_id: id,
            }
        })
        .collect())
}

/// Epochs of one subject: stages drawn i.i.d. from the mix, onsets every `epoch_s`.
pub fn generate_subject(config: &SynthConfig, profile: &SubjectProfile, renderer: &Renderer) -> Result<Vec<Epoch>> {
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let stages: Vec<SleepStage> = (0..config.epochs_per_subject)
        .map(|_| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (s, p) in SleepStage::ALL.iter().zip(&config.stage_mix) {
                acc += p;
                if u < acc && *p > 0.0 {
                    return *s;
                }
            }
            *SleepStage::ALL
                .iter()
                .zip(&config.stage_mix)
                .rev()
                .find(|(_, p)| **p > 0.0)
                .expect("validated mix")
                .0
        })
        .collect();
    stages
        .into_iter()
        .enumerate()
        .map(|(k, stage)| {
            let data = renderer.render(profile, stage, config.noise_sigma_uv, &mut rng);
            Epoch::new(profile.subject_id.clone(), stage, k as f64 * config.epoch_s, 2, data)
        })
        .collect()
}

pub fn generate(config: &SynthConfig) -> Result<SyntheticCorpus> {
    let profiles = subject_profiles(config)?;
    let renderer = Renderer::new(config.sampling_rate_hz, config.samples_per_epoch());
    let mut epochs = Vec::with_capacity(config.n_subjects * config.epochs_per_subject);
    for p in &profiles {
        epochs.extend(generate_subject(config, p, &renderer)?);
    }
    Ok(SyntheticCorpus {
        config: config.clone(),
        profiles,
        dataset: EpochDataset::new(epochs, config.sampling_rate_hz),
    })
}

pub fn generate_corpus(config: &SynthConfig) -> Result<EpochDataset> {
    Ok(generate(config)?.dataset)
}
