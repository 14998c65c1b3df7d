use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Framing and filterbank constants for log-filterbank extraction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogFBConfig {
    pub sample_rate: f64,
    /// Samples per analysis frame (16 ms at 22.05 kHz is about 800).
    pub frame_length: usize,
    /// Samples between frame starts.
    pub hop: usize,
    pub fft_size: usize,
    pub n_filters: usize,
    /// Added to band power before the logarithm.
    pub floor: f64,
}

impl Default for LogFBConfig {
    fn default() -> Self {
        LogFBConfig {
            sample_rate: 22_050.0,
            frame_length: 800,
            hop: 500,
            fft_size: 2048,
            n_filters: 22,
            floor: 1e-10,
        }
    }
}

impl LogFBConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_length == 0 || self.hop == 0 || self.hop > self.frame_length {
            return Err(Error::Param(format!(
                "need 0 < hop <= frame_length, got hop={} frame_length={}",
                self.hop, self.frame_length
            )));
        }
        if self.frame_length > self.fft_size {
            return Err(Error::Param(format!(
                "frame_length {} exceeds fft_size {}",
                self.frame_length, self.fft_size
            )));
        }
        if self.n_filters == 0 || self.n_filters > self.fft_size / 2 {
            return Err(Error::Param(format!("n_filters must be in 1..={}", self.fft_size / 2)));
        }
        if !(self.sample_rate > 0.0) || !(self.floor > 0.0) {
            return Err(Error::Param("sample_rate and floor must be positive".into()));
        }
        Ok(())
    }

    /// Spectrum bins kept from the real FFT (`fft_size / 2 + 1`).
    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// `floor((len - frame_length) / hop) + 1`, or zero if the signal is
    /// shorter than one frame.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_length {
            0
        } else {
            (len - self.frame_length) / self.hop + 1
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Symmetric Hamming window.
pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / denom).cos())
        .collect()
}

/// Triangular mel-spaced filters over `0..=Nyquist`, peak weight 1.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    /// `n_filters x n_bins`
    weights: Matrix,
}

impl MelFilterbank {
    pub fn new(config: &LogFBConfig) -> Result<Self> {
        config.validate()?;
        let n_bins = config.n_bins();
        let max_mel = hz_to_mel(config.sample_rate / 2.0);
        let edges: Vec<f64> = (0..config.n_filters + 2)
            .map(|i| mel_to_hz(max_mel * i as f64 / (config.n_filters + 1) as f64))
            .collect();
        let bin_hz = config.sample_rate / config.fft_size as f64;
        let weights = Matrix::from_fn(config.n_filters, n_bins, |f, b| {
            let (lo, center, hi) = (edges[f], edges[f + 1], edges[f + 2]);
            let hz = b as f64 * bin_hz;
            if hz > lo && hz <= center {
                (hz - lo) / (center - lo)
            } else if hz > center && hz < hi {
                (hi - hz) / (hi - center)
            } else {
                0.0
            }
        });
        Ok(MelFilterbank { weights })
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn n_filters(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.cols()
    }

    /// Band energies of one power spectrum.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        (0..self.n_filters())
            .map(|f| self.weights.row(f).iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// Short-time Fourier analysis with a Hamming window and zero padding.
pub(crate) struct Stft {
    config: LogFBConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub(crate) fn new(config: &LogFBConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Stft {
            config: *config,
            window: hamming(config.frame_length),
            forward: planner.plan_fft_forward(config.fft_size),
            inverse: planner.plan_fft_inverse(config.fft_size),
        })
    }

    pub(crate) fn window(&self) -> &[f64] {
        &self.window
    }

    /// Full complex spectrum of windowed frame `m`.
    pub(crate) fn spectrum(&self, signal: &[f64], m: usize) -> Vec<Complex<f64>> {
        let start = m * self.config.hop;
        let mut buf = vec![Complex::new(0.0, 0.0); self.config.fft_size];
        for (n, (b, &w)) in buf.iter_mut().zip(&self.window).enumerate() {
            b.re = signal[start + n] * w;
        }
        self.forward.process(&mut buf);
        buf
    }

    /// Real part of the normalised inverse transform.
    pub(crate) fn inverse(&self, mut spectrum: Vec<Complex<f64>>) -> Vec<f64> {
        self.inverse.process(&mut spectrum);
        let scale = 1.0 / self.config.fft_size as f64;
        spectrum.iter().map(|c| c.re * scale).collect()
    }

    /// `|X_b|^2` for the non-negative frequency bins.
    pub(crate) fn power(&self, spectrum: &[Complex<f64>]) -> Vec<f64> {
        spectrum[..self.config.n_bins()].iter().map(|c| c.norm_sqr()).collect()
    }
}

/// Log filterbank energies, one row per frame.
pub fn extract_logfb(waveform: &[f64], config: &LogFBConfig) -> Result<Matrix> {
    config.validate()?;
    let m = config.frame_count(waveform.len());
    if m == 0 {
        return Err(Error::Param(format!(
            "waveform of {} samples is shorter than one {}-sample frame",
            waveform.len(),
            config.frame_length
        )));
    }
    if waveform.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("waveform sample".into()));
    }
    let stft = Stft::new(config)?;
    let bank = MelFilterbank::new(config)?;
    let mut out = Matrix::zeros(m, config.n_filters);
    for frame in 0..m {
        let power = stft.power(&stft.spectrum(waveform, frame));
        for (dst, e) in out.row_mut(frame).iter_mut().zip(bank.apply(&power)) {
            *dst = (e + config.floor).ln();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(len: usize, hz: f64, amp: f64) -> Vec<f64> {
        (0..len)
            .map(|n| amp * (2.0 * std::f64::consts::PI * hz * n as f64 / 22_050.0).sin())
            .collect()
    }

    #[test]
    fn one_second_gives_43_frames() {
        let cfg = LogFBConfig::default();
        let out = extract_logfb(&tone(22_050, 440.0, 0.3), &cfg).unwrap();
        assert_eq!(out.shape(), (43, 22));
    }

    #[test]
    fn silence_sits_on_the_floor() {
        let cfg = LogFBConfig::default();
        let out = extract_logfb(&vec![0.0; 4000], &cfg).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == cfg.floor.ln()));
    }

    #[test]
    fn short_input_is_rejected() {
        assert!(matches!(
            extract_logfb(&[0.0; 799], &LogFBConfig::default()),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn filters_cover_the_interior_band() {
        let cfg = LogFBConfig::default();
        let bank = MelFilterbank::new(&cfg).unwrap();
        let w = bank.weights();
        assert!(w.as_slice().iter().all(|&v| v >= 0.0));
        for b in 1..cfg.n_bins() - 1 {
            assert!((0..bank.n_filters()).any(|f| w[(f, b)] > 0.0), "bin {b} uncovered");
        }
    }

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 100.0, 1000.0, 11_025.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }
}
