//! Recordings, hypnograms and the 30 s epochs cut from them.

mod dataset_file;
mod edf;
mod epochs;
mod hypnogram;
mod split;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use dataset_file::{load_dataset, save_dataset};
pub use edf::{read_edf, write_edf, EdfReadOptions, SignalCalibration, DEFAULT_EEG_CHANNELS};
pub use epochs::{
    epochize, extract_sleep_period, extract_sleep_period_with, map_stage, SleepOnsetRule,
    SleepPeriodOptions, SLEEP_PADDING_S,
};
pub use hypnogram::{parse_hypnogram, read_hypnogram, write_hypnogram};
pub use split::{stratified_split, SplitOutcome};

/// Length of one scoring epoch.
pub const EPOCH_SECONDS: f64 = 30.0;
/// Channels per epoch used by every model.
pub const EPOCH_CHANNELS: usize = 2;
/// Sampling rate of all data the models consume.
pub const SAMPLING_RATE_HZ: f64 = 100.0;
/// Samples per channel in one epoch at [`SAMPLING_RATE_HZ`].
pub const EPOCH_SAMPLES: usize = 3000;

/// A continuous multichannel recording in physical units (µV).
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub sampling_rate_hz: f64,
    pub channel_labels: Vec<String>,
    /// One vector per channel.
    pub samples: Vec<Vec<f64>>,
    pub duration_s: f64,
    /// Offset of the first sample from the start of the original recording.
    pub start_s: f64,
    /// Per-channel calibration carried over from the source file, if any.
    pub calibration: Option<Vec<SignalCalibration>>,
}

impl Recording {
    pub fn new(
        subject_id: impl Into<String>,
        sampling_rate_hz: f64,
        channel_labels: Vec<String>,
        samples: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = samples.first().map(|c| c.len()).unwrap_or(0);
        let rec = Recording {
            subject_id: subject_id.into(),
            sampling_rate_hz,
            channel_labels,
            duration_s: n as f64 / sampling_rate_hz,
            samples,
            start_s: 0.0,
            calibration: None,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn n_samples(&self) -> usize {
        self.samples.first().map(|c| c.len()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_rate_hz > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sampling rate must be positive, got {}",
                self.sampling_rate_hz
            )));
        }
        if self.channel_labels.len() != self.samples.len() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} channels",
                self.channel_labels.len(),
                self.samples.len()
            )));
        }
        let n = self.n_samples();
        if self.samples.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidInput("channels differ in sample count".into()));
        }
        let expected = self.duration_s * self.sampling_rate_hz;
        if (expected - n as f64).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "duration {} s at {} Hz does not match {} samples",
                self.duration_s, self.sampling_rate_hz, n
            )));
        }
        Ok(())
    }
}

/// Rechtschaffen & Kales stage vocabulary as found in hypnograms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RawStage {
    W,
    S1,
    S2,
    S3,
    S4,
    Rem,
    Movement,
    Unknown,
}

impl RawStage {
    pub const ALL: [RawStage; 8] = [
        RawStage::W,
        RawStage::S1,
        RawStage::S2,
        RawStage::S3,
        RawStage::S4,
        RawStage::Rem,
        RawStage::Movement,
        RawStage::Unknown,
    ];

    pub fn token(self) -> &'static str {
        match self {
            RawStage::W => "W",
            RawStage::S1 => "S1",
            RawStage::S2 => "S2",
            RawStage::S3 => "S3",
            RawStage::S4 => "S4",
            RawStage::Rem => "REM",
            RawStage::Movement => "MOVEMENT",
            RawStage::Unknown => "UNKNOWN",
        }
    }
}

impl FromStr for RawStage {
    type Err = String;

    /// Accepts the canonical tokens plus the Sleep-EDF annotation spellings.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let t = s.trim();
        let stage = match t.to_ascii_uppercase().as_str() {
            "W" | "SLEEP STAGE W" => RawStage::W,
            "S1" | "1" | "SLEEP STAGE 1" => RawStage::S1,
            "S2" | "2" | "SLEEP STAGE 2" => RawStage::S2,
            "S3" | "3" | "SLEEP STAGE 3" => RawStage::S3,
            "S4" | "4" | "SLEEP STAGE 4" => RawStage::S4,
            "REM" | "R" | "SLEEP STAGE R" => RawStage::Rem,
            "MOVEMENT" | "M" | "MT" | "MOVEMENT TIME" => RawStage::Movement,
            "UNKNOWN" | "?" | "SLEEP STAGE ?" => RawStage::Unknown,
            _ => return Err(t.to_string()),
        };
        Ok(stage)
    }
}

/// One scored interval of a hypnogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypnogramEntry {
    pub onset_s: f64,
    pub duration_s: f64,
    pub raw_stage: RawStage,
}

impl HypnogramEntry {
    pub fn new(onset_s: f64, duration_s: f64, raw_stage: RawStage) -> Self {
        HypnogramEntry {
            onset_s,
            duration_s,
            raw_stage,
        }
    }

    pub fn end_s(&self) -> f64 {
        self.onset_s + self.duration_s
    }
}

/// AASM sleep stages; the discriminant is the class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SleepStage {
    W = 0,
    N1 = 1,
    N2 = 2,
    N3 = 3,
    Rem = 4,
}

impl SleepStage {
    pub const COUNT: usize = 5;
    pub const ALL: [SleepStage; 5] = [
        SleepStage::W,
        SleepStage::N1,
        SleepStage::N2,
        SleepStage::N3,
        SleepStage::Rem,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SleepStage::W => "Wake",
            SleepStage::N1 => "N1",
            SleepStage::N2 => "N2",
            SleepStage::N3 => "N3",
            SleepStage::Rem => "REM",
        }
    }

    pub fn is_sleep(self) -> bool {
        self != SleepStage::W
    }
}

impl fmt::Display for SleepStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One 30 s multichannel segment with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub subject_id: String,
    pub stage: SleepStage,
    /// Position in the source recording; together with the subject this identifies the epoch.
    pub onset_s: f64,
    pub n_channels: usize,
    /// Channel-major samples in µV: `data[c * n_samples + t]`.
    pub data: Vec<f32>,
}

impl Epoch {
    pub fn new(
        subject_id: impl Into<String>,
        stage: SleepStage,
        onset_s: f64,
        n_channels: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if n_channels == 0 || data.is_empty() || data.len() % n_channels != 0 {
            return Err(Error::Shape(format!(
                "epoch with {} values for {} channels",
                data.len(),
                n_channels
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure {
                location: "epoch samples".into(),
            });
        }
        Ok(Epoch {
            subject_id: subject_id.into(),
            stage,
            onset_s,
            n_channels,
            data,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.data.len() / self.n_channels
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.n_samples();
        &self.data[c * n..(c + 1) * n]
    }
}

/// Which part of a split a dataset represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Full,
    Train,
    Test,
}

/// Ordered epochs plus the subject → class-index map shared by every split.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochDataset {
    pub epochs: Vec<Epoch>,
    pub subject_index: BTreeMap<String, usize>,
    pub sampling_rate_hz: f64,
    pub split: SplitTag,
}

impl EpochDataset {
    /// Builds a dataset whose subject classes follow the sorted subject ids.
    pub fn new(epochs: Vec<Epoch>, sampling_rate_hz: f64) -> Self {
        let mut ids: Vec<&str> = epochs.iter().map(|e| e.subject_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        let subject_index = ids
            .into_iter()
            .enumerate()
            .map(|(i, s)| (s.to_string(), i))
            .collect();
        EpochDataset {
            epochs,
            subject_index,
            sampling_rate_hz,
            split: SplitTag::Full,
        }
    }

    pub fn with_index(
        epochs: Vec<Epoch>,
        subject_index: BTreeMap<String, usize>,
        sampling_rate_hz: f64,
        split: SplitTag,
    ) -> Result<Self> {
        let ds = EpochDataset {
            epochs,
            subject_index,
            sampling_rate_hz,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.subject_index.len()];
        for &i in self.subject_index.values() {
            if i >= seen.len() || seen[i] {
                return Err(Error::InvalidInput("subject indices are not dense".into()));
            }
            seen[i] = true;
        }
        for e in &self.epochs {
            if !self.subject_index.contains_key(&e.subject_id) {
                return Err(Error::InvalidInput(format!(
                    "epoch subject '{}' missing from subject index",
                    e.subject_id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_index.len()
    }

    pub fn subject_label(&self, e: &Epoch) -> usize {
        self.subject_index[&e.subject_id]
    }

    pub fn subject_labels(&self) -> Vec<usize> {
        self.epochs.iter().map(|e| self.subject_label(e)).collect()
    }

    pub fn stage_labels(&self) -> Vec<usize> {
        self.epochs.iter().map(|e| e.stage.index()).collect()
    }

    /// Subject ids ordered by class index.
    pub fn subject_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.subject_index.len()];
        for (s, &i) in &self.subject_index {
            names[i] = s.clone();
        }
        names
    }

    /// Epoch counts per subject and stage, keyed by subject id.
    pub fn counts(&self) -> BTreeMap<String, [usize; SleepStage::COUNT]> {
        let mut out: BTreeMap<String, [usize; SleepStage::COUNT]> = self
            .subject_index
            .keys()
            .map(|s| (s.clone(), [0; SleepStage::COUNT]))
            .collect();
        for e in &self.epochs {
            out.get_mut(&e.subject_id).expect("validated")[e.stage.index()] += 1;
        }
        out
    }
}
