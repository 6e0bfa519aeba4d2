//! Canonical EEG frequency bands and per-epoch band summaries.

use serde::{Deserialize, Serialize};

use super::{BandPass, PsdReport, Welch, WelchParams, DEFAULT_BAND_HZ};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Band {
    Delta,
    Theta,
    Alpha,
    Sigma,
    Beta,
}

impl Band {
    pub const ALL: [Band; 5] = [Band::Delta, Band::Theta, Band::Alpha, Band::Sigma, Band::Beta];

    /// `[lo, hi)` in Hz.
    pub fn range_hz(self) -> (f64, f64) {
        match self {
            Band::Delta => (0.5, 4.0),
            Band::Theta => (4.0, 8.0),
            Band::Alpha => (8.0, 12.0),
            Band::Sigma => (12.0, 15.0),
            Band::Beta => (15.0, 30.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::Delta => "delta",
            Band::Theta => "theta",
            Band::Alpha => "alpha",
            Band::Sigma => "sigma",
            Band::Beta => "beta",
        }
    }
}

/// Integrated power of each band, in [`Band::ALL`] order.
pub fn band_powers(report: &PsdReport, channel: usize) -> [f64; 5] {
    Band::ALL.map(|b| {
        let (lo, hi) = b.range_hz();
        report.band_power(channel, lo, hi)
    })
}

/// Band-pass, Welch spectrum and band integration for one epoch, reusing the designs.
#[derive(Debug)]
pub struct BandAnalyzer {
    filter: BandPass,
    welch: Welch,
}

impl BandAnalyzer {
    pub fn new(fs: f64) -> Result<Self> {
        Ok(BandAnalyzer {
            filter: BandPass::butterworth(4, DEFAULT_BAND_HZ.0, DEFAULT_BAND_HZ.1, fs)?,
            welch: Welch::new(fs, WelchParams::default())?,
        })
    }

    /// Band powers of the filtered signal summed over channels.
    pub fn powers(&self, channels: &[&[f64]]) -> Result<[f64; 5]> {
        let filtered: Vec<Vec<f64>> = channels.iter().map(|c| self.filter.filtfilt(c)).collect();
        let refs: Vec<&[f64]> = filtered.iter().map(|c| c.as_slice()).collect();
        let report = self.welch.report(&refs)?;
        let mut total = [0.0; 5];
        for ch in 0..refs.len() {
            for (t, p) in total.iter_mut().zip(band_powers(&report, ch)) {
                *t += p;
            }
        }
        Ok(total)
    }

    pub fn dominant_band(&self, channels: &[&[f64]]) -> Result<Band> {
        let p = self.powers(channels)?;
        let best = (0..5).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        Ok(Band::ALL[best])
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    #[test]
    fn pure_tones_land_in_their_band() {
        let a = BandAnalyzer::new(100.0).unwrap();
        for (f, band) in [(2.0, Band::Delta), (6.0, Band::Theta), (10.0, Band::Alpha), (13.5, Band::Sigma), (22.0, Band::Beta)] {
            let x: Vec<f64> = (0..3000).map(|i| (2.0 * PI * f * i as f64 / 100.0).sin()).collect();
            assert_eq!(a.dominant_band(&[&x, &x]).unwrap(), band, "{f} Hz");
        }
    }

    #[test]
    fn bands_tile_half_to_thirty_hz() {
        for w in Band::ALL.windows(2) {
            assert_eq!(w[0].range_hz().1, w[1].range_hz().0);
        }
    }
}
