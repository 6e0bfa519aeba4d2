use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchParams {
    pub window_s: f64,
    /// Fraction of a segment shared with the next one, in [0, 1).
    pub overlap: f64,
}

impl Default for WelchParams {
    fn default() -> Self {
        WelchParams {
            window_s: 4.0,
            overlap: 0.5,
        }
    }
}

/// One-sided power spectral density per channel, µV²/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdReport {
    pub sampling_rate_hz: f64,
    pub params: WelchParams,
    pub frequencies_hz: Vec<f64>,
    pub power: Vec<Vec<f64>>,
}

impl PsdReport {
    pub fn resolution_hz(&self) -> f64 {
        self.frequencies_hz.get(1).copied().unwrap_or(0.0)
    }

    /// Integrated power of `channel` over `[lo, hi)` Hz (rectangle rule on the bin grid).
    pub fn band_power(&self, channel: usize, lo: f64, hi: f64) -> f64 {
        let df = self.resolution_hz();
        self.frequencies_hz
            .iter()
            .zip(&self.power[channel])
            .filter(|(f, _)| **f >= lo && **f < hi)
            .map(|(_, p)| p * df)
            .sum()
    }

    /// Trapezoidal integral of `channel` over the whole grid.
    pub fn total_power(&self, channel: usize) -> f64 {
        let p = &self.power[channel];
        let df = self.resolution_hz();
        p.windows(2).map(|w| 0.5 * (w[0] + w[1]) * df).sum()
    }

    /// Channel-averaged spectrum.
    pub fn mean_power(&self) -> Vec<f64> {
        let n = self.power.len() as f64;
        (0..self.frequencies_hz.len())
            .map(|k| self.power.iter().map(|c| c[k]).sum::<f64>() / n)
            .collect()
    }
}

/// Reusable Welch estimator (Hann window, no detrending, density scaling).
pub struct Welch {
    fs: f64,
    params: WelchParams,
    nperseg: usize,
    step: usize,
    window: Vec<f64>,
    scale: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Welch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Welch")
            .field("fs", &self.fs)
            .field("nperseg", &self.nperseg)
            .field("step", &self.step)
            .finish()
    }
}

impl Welch {
    pub fn new(fs: f64, params: WelchParams) -> Result<Self> {
        if !(fs > 0.0) || !(params.window_s > 0.0) || !(0.0..1.0).contains(&params.overlap) {
            return Err(Error::InvalidInput(format!(
                "invalid Welch parameters {:?} at {} Hz",
                params, fs
            )));
        }
        let nperseg = (params.window_s * fs).round() as usize;
        if nperseg < 2 {
            return Err(Error::InvalidInput("Welch segment shorter than two samples".into()));
        }
        let step = (nperseg - (params.overlap * nperseg as f64).round() as usize).max(1);
        // periodic Hann
        let window: Vec<f64> = (0..nperseg)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / nperseg as f64).cos())
            .collect();
        let scale = 1.0 / (fs * window.iter().map(|w| w * w).sum::<f64>());
        let fft = FftPlanner::new().plan_fft_forward(nperseg);
        Ok(Welch {
            fs,
            params,
            nperseg,
            step,
            window,
            scale,
            fft,
        })
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..=self.nperseg / 2)
            .map(|k| k as f64 * self.fs / self.nperseg as f64)
            .collect()
    }

    pub fn segment_len(&self) -> usize {
        self.nperseg
    }

    pub fn spectrum<T: Copy + Into<f64>>(&self, signal: &[T]) -> Result<Vec<f64>> {
        if signal.len() < self.nperseg {
            return Err(Error::InvalidInput(format!(
                "signal of {} samples is shorter than the {}-sample Welch window",
                signal.len(),
                self.nperseg
            )));
        }
        let n_bins = self.nperseg / 2 + 1;
        let n_segments = 1 + (signal.len() - self.nperseg) / self.step;
        let mut acc = vec![0.0; n_bins];
        let mut buf = vec![Complex::new(0.0, 0.0); self.nperseg];
        for s in 0..n_segments {
            let seg = &signal[s * self.step..s * self.step + self.nperseg];
            for ((b, x), w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex::new((*x).into() * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b.norm_sqr();
            }
        }
        let nyquist_bin = (self.nperseg % 2 == 0).then_some(self.nperseg / 2);
        for (k, a) in acc.iter_mut().enumerate() {
            *a *= self.scale / n_segments as f64;
            if k != 0 && Some(k) != nyquist_bin {
                *a *= 2.0;
            }
        }
        Ok(acc)
    }

    pub fn report<T: Copy + Into<f64>>(&self, channels: &[&[T]]) -> Result<PsdReport> {
        let power = channels
            .iter()
            .map(|c| self.spectrum(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(PsdReport {
            sampling_rate_hz: self.fs,
            params: self.params,
            frequencies_hz: self.frequencies(),
            power,
        })
    }
}

/// Hann-windowed averaged periodogram of one signal.
pub fn welch_psd(signal: &[f64], fs: f64, params: &WelchParams) -> Result<PsdReport> {
    Welch::new(fs, *params)?.report(&[signal])
}
