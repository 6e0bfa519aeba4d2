use super::{Epoch, HypnogramEntry, RawStage, Recording, SleepStage, EPOCH_SECONDS};
use crate::{Error, Result};

/// Wake kept on either side of the sleep period.
pub const SLEEP_PADDING_S: f64 = 1800.0;

const EPS_S: f64 = 1e-6;

/// R&K → AASM. Stages 3 and 4 merge into N3; movement and unscored intervals
/// have no AASM class and map to `None` (dropped).
pub fn map_stage(raw: RawStage) -> Option<SleepStage> {
    match raw {
        RawStage::W => Some(SleepStage::W),
        RawStage::S1 => Some(SleepStage::N1),
        RawStage::S2 => Some(SleepStage::N2),
        RawStage::S3 | RawStage::S4 => Some(SleepStage::N3),
        RawStage::Rem => Some(SleepStage::Rem),
        RawStage::Movement | RawStage::Unknown => None,
    }
}

/// How the start of the sleep period is located.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SleepOnsetRule {
    /// First interval scored as any of N1, N2, N3, REM.
    #[default]
    AnySleepStage,
    /// First interval scored as N1.
    FirstN1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SleepPeriodOptions {
    pub padding_s: f64,
    pub onset_rule: SleepOnsetRule,
}

impl Default for SleepPeriodOptions {
    fn default() -> Self {
        SleepPeriodOptions {
            padding_s: SLEEP_PADDING_S,
            onset_rule: SleepOnsetRule::AnySleepStage,
        }
    }
}

pub fn extract_sleep_period(recording: &Recording, hypnogram: &[HypnogramEntry]) -> Result<Recording> {
    extract_sleep_period_with(recording, hypnogram, &SleepPeriodOptions::default())
}

/// Trims `recording` to the sleep period plus padding on both sides, clipped to the
/// recording and snapped inward to the 30 s grid of the hypnogram.
pub fn extract_sleep_period_with(
    recording: &Recording,
    hypnogram: &[HypnogramEntry],
    options: &SleepPeriodOptions,
) -> Result<Recording> {
    let is_sleep = |e: &&HypnogramEntry| map_stage(e.raw_stage).map(SleepStage::is_sleep).unwrap_or(false);
    let first = match options.onset_rule {
        SleepOnsetRule::AnySleepStage => hypnogram.iter().find(is_sleep),
        SleepOnsetRule::FirstN1 => hypnogram.iter().find(|e| map_stage(e.raw_stage) == Some(SleepStage::N1)),
    }
    .ok_or(Error::EmptySleep)?;
    let last = hypnogram.iter().rev().find(is_sleep).ok_or(Error::EmptySleep)?;

    let rec_start = recording.start_s;
    let rec_end = recording.start_s + recording.duration_s;
    let start = (first.onset_s - options.padding_s).max(rec_start).max(0.0);
    let end = (last.end_s() + options.padding_s).min(rec_end);

    let origin = hypnogram.first().map(|e| e.onset_s).unwrap_or(0.0);
    let start = origin + ((start - origin) / EPOCH_SECONDS - EPS_S).ceil() * EPOCH_SECONDS;
    let end = origin + ((end - origin) / EPOCH_SECONDS + EPS_S).floor() * EPOCH_SECONDS;
    let start = start.max(rec_start);
    if end <= start {
        return Err(Error::EmptySleep);
    }

    let fs = recording.sampling_rate_hz;
    let i0 = ((start - rec_start) * fs).round() as usize;
    let i1 = (((end - rec_start) * fs).round() as usize).min(recording.n_samples());
    let samples = recording.samples.iter().map(|c| c[i0..i1].to_vec()).collect();
    let out = Recording {
        subject_id: recording.subject_id.clone(),
        sampling_rate_hz: fs,
        channel_labels: recording.channel_labels.clone(),
        samples,
        duration_s: (i1 - i0) as f64 / fs,
        start_s: start,
        calibration: recording.calibration.clone(),
    };
    out.validate()?;
    Ok(out)
}

/// The single AASM stage covering `[t0, t1)`, or `None` when the window is not fully
/// covered, touches a dropped interval, or spans two different stages.
fn window_stage(hypnogram: &[HypnogramEntry], t0: f64, t1: f64) -> Option<SleepStage> {
    let mut stage: Option<SleepStage> = None;
    let mut covered_until = t0;
    for e in hypnogram {
        if e.end_s() <= t0 + EPS_S {
            continue;
        }
        if e.onset_s >= t1 - EPS_S {
            break;
        }
        if e.onset_s > covered_until + EPS_S {
            return None;
        }
        let mapped = map_stage(e.raw_stage)?;
        match stage {
            Some(s) if s != mapped => return None,
            _ => stage = Some(mapped),
        }
        covered_until = e.end_s();
    }
    if covered_until + EPS_S < t1 {
        return None;
    }
    stage
}

/// Cuts consecutive non-overlapping 30 s windows, labels each from the hypnogram and
/// drops windows without a single AASM stage. A partial trailing window is discarded.
pub fn epochize(recording: &Recording, hypnogram: &[HypnogramEntry]) -> Vec<Epoch> {
    let fs = recording.sampling_rate_hz;
    let per = (EPOCH_SECONDS * fs).round() as usize;
    if per == 0 {
        return Vec::new();
    }
    let n_windows = recording.n_samples() / per;
    let n_channels = recording.samples.len();
    let mut out = Vec::with_capacity(n_windows);
    for k in 0..n_windows {
        let onset = recording.start_s + k as f64 * EPOCH_SECONDS;
        let Some(stage) = window_stage(hypnogram, onset, onset + EPOCH_SECONDS) else {
            continue;
        };
        let mut data = Vec::with_capacity(per * n_channels);
        for ch in &recording.samples {
            data.extend(ch[k * per..(k + 1) * per].iter().map(|&v| v as f32));
        }
        if let Ok(e) = Epoch::new(recording.subject_id.clone(), stage, onset, n_channels, data) {
            out.push(e);
        } else {
            log::warn!(
                "{}: dropping epoch at {} s with non-finite samples",
                recording.subject_id,
                onset
            );
        }
    }
    out
}
