//! Butterworth band-pass as cascaded biquads, applied forward and backward.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::{Error, Result};

/// Default pass band for spectral comparisons.
pub const DEFAULT_BAND_HZ: (f64, f64) = (0.2, 40.0);

/// One second-order section `b0 + b1 z^-1 + b2 z^-2 / 1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + self.b[1] * zi + self.b[2] * zi * zi;
        let den = 1.0 + self.a[0] * zi + self.a[1] * zi * zi;
        num / den
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct-form II state for a unit step held forever.
    fn step_state(&self) -> [f64; 2] {
        let y = self.dc_gain();
        [y - self.b[0], self.b[2] - self.a[1] * y]
    }
}

/// Digital band-pass of prototype order `order` (the band-pass has twice as many poles).
#[derive(Debug, Clone, PartialEq)]
pub struct BandPass {
    pub sections: Vec<Biquad>,
    pub low_hz: f64,
    pub high_hz: f64,
    pub fs: f64,
}

impl BandPass {
    pub fn butterworth(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Result<Self> {
        if !(low_hz > 0.0 && low_hz < high_hz && high_hz < fs / 2.0) {
            return Err(Error::InvalidInput(format!(
                "band [{}, {}] Hz must satisfy 0 < low < high < {} Hz",
                low_hz,
                high_hz,
                fs / 2.0
            )));
        }
        if order == 0 || order % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "band-pass prototype order must be even and positive, got {}",
                order
            )));
        }
        // prewarped analog edges
        let w1 = 2.0 * fs * (PI * low_hz / fs).tan();
        let w2 = 2.0 * fs * (PI * high_hz / fs).tan();
        let bw = w2 - w1;
        let w0_sq = w1 * w2;

        let mut poles = Vec::with_capacity(2 * order);
        for k in 0..order {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let p = Complex64::from_polar(1.0, theta) * (bw / 2.0);
            let disc = (p * p - w0_sq).sqrt();
            for s in [p + disc, p - disc] {
                let z = (2.0 * fs + s) / (2.0 * fs - s);
                poles.push(z);
            }
        }
        let mut upper: Vec<Complex64> = poles.into_iter().filter(|z| z.im > 0.0).collect();
        if upper.len() != order {
            return Err(Error::InvalidInput(format!(
                "band [{}, {}] Hz yields real poles; pick a wider band",
                low_hz, high_hz
            )));
        }
        upper.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap());
        let mut sections: Vec<Biquad> = upper
            .iter()
            .map(|z| Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-2.0 * z.re, z.norm_sqr()],
            })
            .collect();

        // unit gain at the geometric centre of the analog band
        let center = 2.0 * (w0_sq.sqrt() / (2.0 * fs)).atan();
        let zc = Complex64::from_polar(1.0, center);
        let gain: f64 = sections.iter().map(|s| s.response(zc).norm()).product();
        let per = gain.powf(-1.0 / sections.len() as f64);
        for s in &mut sections {
            for b in &mut s.b {
                *b *= per;
            }
        }
        Ok(BandPass {
            sections,
            low_hz,
            high_hz,
            fs,
        })
    }

    /// Magnitude response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * freq_hz / self.fs);
        self.sections.iter().map(|s| s.response(z).norm()).product()
    }

    /// Causal filtering starting from the steady state for a constant `x[0]`.
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        let mut level = x.first().copied().unwrap_or(0.0);
        for s in &self.sections {
            let zi = s.step_state();
            let (mut z1, mut z2) = (zi[0] * level, zi[1] * level);
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[0] * out + z2;
                z2 = s.b[2] * input - s.a[1] * out;
                *v = out;
            }
            level *= s.dc_gain();
        }
        y
    }

    /// Zero-phase forward-backward filtering with odd reflection at both ends.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = ((3.0 * self.fs / self.low_hz).round() as usize).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        let mut y = self.forward(&ext);
        y.reverse();
        let mut y = self.forward(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

/// Zero-phase 4th-order Butterworth band-pass of `signal` sampled at `fs`.
pub fn bandpass(signal: &[f64], fs: f64, low_hz: f64, high_hz: f64) -> Result<Vec<f64>> {
    Ok(BandPass::butterworth(4, low_hz, high_hz, fs)?.filtfilt(signal))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn tone(freq: f64, n: usize, fs: f64) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn passband_tone_keeps_its_amplitude() {
        let x = tone(10.0, 3000, 100.0);
        let y = bandpass(&x, 100.0, 0.2, 40.0).unwrap();
        let ratio = rms(&y) / (1.0 / 2f64.sqrt());
        assert!((ratio - 1.0).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn slow_drift_is_attenuated_by_20_db() {
        let x = tone(0.05, 60_000, 100.0);
        let y = bandpass(&x, 100.0, 0.2, 40.0).unwrap();
        let db = 20.0 * (rms(&y) / rms(&x)).log10();
        assert!(db <= -20.0, "{db} dB");
    }

    #[test]
    fn zero_in_zero_out() {
        let y = bandpass(&[0.0; 500], 100.0, 0.2, 40.0).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
        assert_eq!(y.len(), 500);
    }

    #[test]
    fn invalid_band_is_rejected() {
        assert!(bandpass(&[0.0; 10], 100.0, 40.0, 0.2).is_err());
        assert!(bandpass(&[0.0; 10], 100.0, 0.2, 50.0).is_err());
        assert!(bandpass(&[0.0; 10], 100.0, 0.0, 10.0).is_err());
    }

    #[test]
    fn butterworth_shape() {
        let f = BandPass::butterworth(4, 0.2, 40.0, 100.0).unwrap();
        assert_eq!(f.sections.len(), 4);
        assert!((f.magnitude(10.0) - 1.0).abs() < 0.01);
        // -3 dB at both edges
        let edge = 1.0 / 2f64.sqrt();
        assert!((f.magnitude(0.2) - edge).abs() < 1e-6, "{}", f.magnitude(0.2));
        assert!((f.magnitude(40.0) - edge).abs() < 1e-6, "{}", f.magnitude(40.0));
    }

    proptest! {
        #[test]
        fn filtering_is_linear(
            x in proptest::collection::vec(-100.0f64..100.0, 600),
            y in proptest::collection::vec(-100.0f64..100.0, 600),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let f = BandPass::butterworth(4, 0.2, 40.0, 100.0).unwrap();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = f.filtfilt(&mix);
            let fx = f.filtfilt(&x);
            let fy = f.filtfilt(&y);
            let scale = lhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for i in 0..lhs.len() {
                let rhs = a * fx[i] + b * fy[i];
                prop_assert!((lhs[i] - rhs).abs() <= 1e-8 * scale);
            }
        }
    }
}
