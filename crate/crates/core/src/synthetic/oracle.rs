//! Hand-built classifiers on spectral features, independent of the learned models.

use serde::{Deserialize, Serialize};

use super::SubjectProfile;
use crate::evaluation::{band_powers, Welch, WelchParams};
use crate::signal_io::{Epoch, SleepStage};
use crate::{Error, Result};

fn psd_mean(epoch: &Epoch, fs: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let welch = Welch::new(fs, WelchParams::default())?;
    let chans: Vec<&[f32]> = (0..epoch.n_channels).map(|c| epoch.channel(c)).collect();
    let r = welch.report(&chans)?;
    Ok((r.frequencies_hz.clone(), r.mean_power()))
}

/// Log relative band powers (delta, theta, alpha, sigma, beta) summed over channels.
pub fn stage_features(epoch: &Epoch, fs: f64) -> Result<[f64; 5]> {
    let welch = Welch::new(fs, WelchParams::default())?;
    let chans: Vec<&[f32]> = (0..epoch.n_channels).map(|c| epoch.channel(c)).collect();
    let r = welch.report(&chans)?;
    let mut p = [0.0; 5];
    for ch in 0..chans.len() {
        for (a, b) in p.iter_mut().zip(band_powers(&r, ch)) {
            *a += b;
        }
    }
    let total: f64 = p.iter().sum::<f64>() + 1e-12;
    Ok(p.map(|v| ((v + 1e-12) / total).ln()))
}

/// Nearest-centroid stage classifier over [`stage_features`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOracle {
    pub fs: f64,
    pub centroids: Vec<Option<[f64; 5]>>,
}

impl StageOracle {
    pub fn fit<'a>(epochs: impl IntoIterator<Item = &'a Epoch>, fs: f64) -> Result<Self> {
        let mut sums = [[0.0; 5]; 5];
        let mut counts = [0usize; 5];
        for e in epochs {
            let f = stage_features(e, fs)?;
            let s = e.stage.index();
            counts[s] += 1;
            for (a, b) in sums[s].iter_mut().zip(f) {
                *a += b;
            }
        }
        if counts.iter().all(|c| *c == 0) {
            return Err(Error::InvalidInput("stage oracle needs at least one calibration epoch".into()));
        }
        let centroids = sums
            .iter()
            .zip(counts)
            .map(|(s, c)| (c > 0).then(|| s.map(|v| v / c as f64)))
            .collect();
        Ok(StageOracle { fs, centroids })
    }

    pub fn predict(&self, epoch: &Epoch) -> Result<SleepStage> {
        let f = stage_features(epoch, self.fs)?;
        let mut best = (f64::INFINITY, SleepStage::W);
        for (i, c) in self.centroids.iter().enumerate() {
            if let Some(c) = c {
                let d: f64 = c.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, SleepStage::from_index(i).expect("five stages"));
                }
            }
        }
        Ok(best.1)
    }
}

pub fn oracle_stage(oracle: &StageOracle, epoch: &Epoch) -> Result<SleepStage> {
    oracle.predict(epoch)
}

/// `(alpha peak in Hz, spectral tilt)` estimated from the channel-averaged Welch spectrum.
pub fn subject_features(epoch: &Epoch, fs: f64) -> Result<(f64, f64)> {
    let (freqs, p) = psd_mean(epoch, fs)?;
    let lp: Vec<f64> = p.iter().map(|v| (v + 1e-20).ln()).collect();

    let in_alpha: Vec<usize> = (0..freqs.len()).filter(|&k| freqs[k] >= 7.5 && freqs[k] <= 12.5).collect();
    let k = *in_alpha
        .iter()
        .max_by(|a, b| lp[**a].total_cmp(&lp[**b]))
        .expect("alpha band inside the grid");
    let df = freqs[1] - freqs[0];
    let mut peak = freqs[k];
    if k > 0 && k + 1 < lp.len() {
        let (a, b, c) = (lp[k - 1], lp[k], lp[k + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            peak += 0.5 * (a - c) / denom * df;
        }
    }

    let pts: Vec<(f64, f64)> = freqs
        .iter()
        .zip(&p)
        .filter(|(f, _)| **f >= 16.0 && **f <= 40.0)
        .map(|(f, v)| (f.log10(), (v + 1e-20).log10()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|q| q.0).sum::<f64>() / n;
    let my = pts.iter().map(|q| q.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|q| (q.0 - mx) * (q.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|q| (q.0 - mx) * (q.0 - mx)).sum();
    Ok((peak, sxy / sxx))
}

fn spread(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let sd = (values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        sd
    } else {
        1.0
    }
}

/// Profile nearest to the epoch's (peak, tilt) estimate, each axis scaled by its spread across profiles.
pub fn oracle_subject(epoch: &Epoch, profiles: &[SubjectProfile], fs: f64) -> Result<String> {
    if profiles.is_empty() {
        return Err(Error::InvalidInput("no profiles to match against".into()));
    }
    let (peak, tilt) = subject_features(epoch, fs)?;
    let sp = spread(profiles.iter().map(|p| p.alpha_peak_hz));
    let st = spread(profiles.iter().map(|p| p.spectral_tilt));
    let best = profiles
        .iter()
        .min_by(|a, b| {
            let d = |p: &SubjectProfile| ((peak - p.alpha_peak_hz) / sp).powi(2) + ((tilt - p.spectral_tilt) / st).powi(2);
            d(a).total_cmp(&d(b))
        })
        .expect("non-empty");
    Ok(best.subject_id.clone())
}
