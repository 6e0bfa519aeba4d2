use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::SubjectProfile;
use crate::signal_io::SleepStage;

/// Inter-channel amplitude ratio of the shared components.
pub const CHANNEL_GAINS: [f64; 2] = [1.0, 0.9];

const BACKGROUND_RMS: f64 = 10.0;
const ALPHA_AMPLITUDE: f64 = 8.0;
const WAKE_ALPHA_AMPLITUDE: f64 = 20.0;
const REM_ALPHA_FACTOR: f64 = 0.3;
const WAKE_HF_RMS: f64 = 5.0;
const REM_HF_RMS: f64 = 3.0;
const N1_THETA_RMS: f64 = 15.0;
const N2_THETA_RMS: f64 = 10.0;
const REM_THETA_RMS: f64 = 7.0;
const N3_DELTA_RMS: f64 = 50.0;
const SPINDLE_AMPLITUDE: f64 = 25.0;

/// Renders epochs of a fixed length; holds the inverse FFT used for coloured noise.
pub struct Renderer {
    fs: f64,
    n: usize,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Renderer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Renderer").field("fs", &self.fs).field("n", &self.n).finish()
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

impl Renderer {
    pub fn new(fs: f64, n_samples: usize) -> Self {
        Renderer {
            fs,
            n: n_samples,
            ifft: FftPlanner::new().plan_fft_inverse(n_samples),
        }
    }

    /// Gaussian noise with power spectrum shape `psd`, rescaled to exactly `rms`.
    pub fn coloured_noise<R: Rng>(&self, rng: &mut R, psd: impl Fn(f64) -> f64, rms: f64) -> Vec<f64> {
        let n = self.n;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for k in 1..=n / 2 {
            let f = k as f64 * self.fs / n as f64;
            let amp = psd(f).max(0.0).sqrt();
            let (a, b) = (normal(rng), normal(rng));
            if 2 * k == n {
                buf[k] = Complex64::new(amp * a, 0.0);
            } else {
                buf[k] = Complex64::new(amp * a, amp * b);
                buf[n - k] = buf[k].conj();
            }
        }
        self.ifft.process(&mut buf);
        let mut x: Vec<f64> = buf.iter().map(|c| c.re).collect();
        let cur = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        if cur > 0.0 {
            let g = rms / cur;
            x.iter_mut().for_each(|v| *v *= g);
        }
        x
    }

    fn band_noise<R: Rng>(&self, rng: &mut R, lo: f64, hi: f64, rms: f64) -> Vec<f64> {
        self.coloured_noise(rng, |f| if f >= lo && f <= hi { 1.0 } else { 0.0 }, rms)
    }

    fn alpha<R: Rng>(&self, rng: &mut R, freq: f64, amplitude: f64) -> Vec<f64> {
        let phase = rng.gen_range(0.0..2.0 * PI);
        let am_freq = rng.gen_range(0.05..0.2);
        let am_phase = rng.gen_range(0.0..2.0 * PI);
        (0..self.n)
            .map(|i| {
                let t = i as f64 / self.fs;
                let env = 1.0 + 0.3 * (2.0 * PI * am_freq * t + am_phase).sin();
                amplitude * env * (2.0 * PI * freq * t + phase).sin()
            })
            .collect()
    }

    fn spindles<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        let span = self.n as f64 / self.fs;
        for _ in 0..rng.gen_range(2..=4) {
            let dur = rng.gen_range(0.5..1.5);
            let freq = rng.gen_range(12.0..14.0);
            let start = rng.gen_range(0.0..(span - dur));
            let amp = SPINDLE_AMPLITUDE * rng.gen_range(0.8..1.2);
            let i0 = (start * self.fs) as usize;
            let len = (dur * self.fs) as usize;
            for j in 0..len.min(self.n - i0) {
                let w = 0.5 - 0.5 * (2.0 * PI * j as f64 / len as f64).cos();
                x[i0 + j] += amp * w * (2.0 * PI * freq * j as f64 / self.fs).sin();
            }
        }
        x
    }

    /// Stage signature shared by both channels, including the subject's alpha rhythm.
    fn signature<R: Rng>(&self, profile: &SubjectProfile, stage: SleepStage, rng: &mut R) -> Vec<f64> {
        let tilt = profile.spectral_tilt;
        let hf = |rng: &mut R, rms| self.coloured_noise(rng, |f| if f >= 15.0 { f.powf(tilt) } else { 0.0 }, rms);
        let f_alpha = profile.alpha_peak_hz;
        let parts: Vec<Vec<f64>> = match stage {
            SleepStage::W => vec![self.alpha(rng, f_alpha, WAKE_ALPHA_AMPLITUDE), hf(rng, WAKE_HF_RMS)],
            SleepStage::N1 => vec![
                self.band_noise(rng, 4.0, 7.0, N1_THETA_RMS),
                self.alpha(rng, f_alpha, ALPHA_AMPLITUDE),
            ],
            SleepStage::N2 => vec![
                self.band_noise(rng, 4.0, 7.0, N2_THETA_RMS),
                self.spindles(rng),
                self.alpha(rng, f_alpha, ALPHA_AMPLITUDE),
            ],
            SleepStage::N3 => vec![
                self.band_noise(rng, 0.5, 2.0, N3_DELTA_RMS),
                self.alpha(rng, f_alpha, ALPHA_AMPLITUDE),
            ],
            SleepStage::Rem => vec![
                self.band_noise(rng, 4.0, 7.0, REM_THETA_RMS),
                hf(rng, REM_HF_RMS),
                self.alpha(rng, f_alpha, ALPHA_AMPLITUDE * REM_ALPHA_FACTOR),
            ],
        };
        let mut out = vec![0.0; self.n];
        for p in parts {
            out.iter_mut().zip(p).for_each(|(o, v)| *o += v);
        }
        out
    }

    /// Two-channel epoch, channel-major, in µV.
    pub fn render<R: Rng>(&self, profile: &SubjectProfile, stage: SleepStage, noise_sigma_uv: f64, rng: &mut R) -> Vec<f32> {
        let sig = self.signature(profile, stage, rng);
        let tilt = profile.spectral_tilt;
        let mut data = Vec::with_capacity(2 * self.n);
        for gain in CHANNEL_GAINS {
            let bg = self.coloured_noise(rng, |f| f.max(0.5).powf(tilt), BACKGROUND_RMS * profile.amplitude_scale);
            for (s, b) in sig.iter().zip(&bg) {
                let v = gain * (s + b) + noise_sigma_uv * normal(rng);
                data.push(v as f32);
            }
        }
        data
    }
}

/// One-off rendering of a 30 s epoch at 100 Hz.
pub fn render_epoch<R: Rng>(profile: &SubjectProfile, stage: SleepStage, noise_sigma_uv: f64, rng: &mut R) -> Vec<f32> {
    Renderer::new(100.0, 3000).render(profile, stage, noise_sigma_uv, rng)
}
