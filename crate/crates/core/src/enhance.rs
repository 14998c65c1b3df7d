//! Wiener-filter enhancement driven by estimated clean log filterbank
//! features.

use crate::data::{LogFBConfig, MelFilterbank, Stft};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Power floor used by the Wiener gain.
pub const SPECTRAL_FLOOR: f64 = 1e-10;

/// Triangular filterbank together with its expansion back to spectrum bins.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterbankOperator {
    forward: Matrix,
    expansion: Matrix,
}

impl FilterbankOperator {
    /// The expansion spreads each band's energy over its filter support in
    /// proportion to the filter weights, divided by the filter's total
    /// weight. The outer halves of the first and last filters are held at 1
    /// so that, with overlapping triangles summing to one in between, a flat
    /// power spectrum is reproduced exactly from its own band energies.
    pub fn new(config: &LogFBConfig) -> Result<Self> {
        let forward = MelFilterbank::new(config)?.weights().clone();
        let (f, b) = forward.shape();
        let peak = |band: usize| {
            let row = forward.row(band);
            (0..b).fold(0, |best, i| if row[i] > row[best] { i } else { best })
        };
        let (first_peak, last_peak) = (peak(0), peak(f - 1));
        let sums: Vec<f64> = (0..f).map(|band| forward.row(band).iter().sum()).collect();
        let expansion = Matrix::from_fn(b, f, |bin, band| {
            if sums[band] <= 0.0 {
                return 0.0;
            }
            let w = if (band == 0 && bin <= first_peak) || (band == f - 1 && bin >= last_peak) {
                1.0
            } else {
                forward[(band, bin)]
            };
            w / sums[band]
        });
        Ok(FilterbankOperator { forward, expansion })
    }

    /// `n_filters x n_bins`.
    pub fn forward(&self) -> &Matrix {
        &self.forward
    }

    /// `n_bins x n_filters`.
    pub fn expansion(&self) -> &Matrix {
        &self.expansion
    }

    pub fn n_filters(&self) -> usize {
        self.forward.rows()
    }

    pub fn n_bins(&self) -> usize {
        self.forward.cols()
    }

    /// Band energies of a power spectrum.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        (0..self.n_filters())
            .map(|f| self.forward.row(f).iter().zip(power).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// Power spectrum estimate `Expand(exp(logfb))`.
pub fn inverse_filterbank(logfb_frame: &[f64], op: &FilterbankOperator) -> Result<Vec<f64>> {
    if logfb_frame.len() != op.n_filters() {
        return Err(Error::shape(
            "inverse_filterbank",
            format!("{} features for {} filters", logfb_frame.len(), op.n_filters()),
        ));
    }
    if logfb_frame.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log filterbank feature".into()));
    }
    let energy: Vec<f64> = logfb_frame.iter().map(|v| v.exp()).collect();
    Ok((0..op.n_bins())
        .map(|b| op.expansion.row(b).iter().zip(&energy).map(|(w, e)| w * e).sum())
        .collect())
}

/// Per-bin `clamp(clean / max(noisy, floor), 0, 1)`.
pub fn wiener_gain(clean_ps: &[f64], noisy_ps: &[f64]) -> Result<Vec<f64>> {
    if clean_ps.len() != noisy_ps.len() {
        return Err(Error::shape(
            "wiener_gain",
            format!("{} vs {} bins", clean_ps.len(), noisy_ps.len()),
        ));
    }
    Ok(clean_ps
        .iter()
        .zip(noisy_ps)
        .map(|(&c, &n)| {
            let g = c / n.max(SPECTRAL_FLOOR);
            if g.is_nan() {
                0.0
            } else {
                g.clamp(0.0, 1.0)
            }
        })
        .collect())
}

/// Filters frame `m` of `signal` by `gains` over the non-negative bins
/// (mirrored onto the negative ones) and returns the time-domain frame.
fn filter_frame(stft: &Stft, signal: &[f64], m: usize, gains: &[f64]) -> Vec<f64> {
    let mut spec = stft.spectrum(signal, m);
    let n = spec.len();
    for (b, &g) in gains.iter().enumerate() {
        spec[b] *= g;
        if b != 0 && n - b != b {
            spec[n - b] *= g;
        }
    }
    stft.inverse(spec)
}

fn check_waveform(noisy: &[f64], config: &LogFBConfig) -> Result<usize> {
    config.validate()?;
    if noisy.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("waveform sample".into()));
    }
    let m = config.frame_count(noisy.len());
    if m == 0 {
        return Err(Error::Param(format!(
            "waveform of {} samples is shorter than one {}-sample frame",
            noisy.len(),
            config.frame_length
        )));
    }
    Ok(m)
}

/// Applies per-frame spectral gains (`M x n_bins`, values in `[0, 1]`) and
/// resynthesizes by window-weighted overlap-add normalized by the summed
/// analysis window. Samples past the last frame are zero.
pub fn apply_spectral_gains(noisy: &[f64], gains: &Matrix, config: &LogFBConfig) -> Result<Vec<f64>> {
    let m = check_waveform(noisy, config)?;
    if gains.shape() != (m, config.n_bins()) {
        return Err(Error::Param(format!(
            "gain matrix is {:?}, waveform framing needs ({m}, {})",
            gains.shape(),
            config.n_bins()
        )));
    }
    let stft = Stft::new(config)?;
    let mut out = vec![0.0; noisy.len()];
    let mut norm = vec![0.0; noisy.len()];
    for frame in 0..m {
        let y = filter_frame(&stft, noisy, frame, gains.row(frame));
        let start = frame * config.hop;
        for (n, &w) in stft.window().iter().enumerate() {
            out[start + n] += y[n];
            norm[start + n] += w;
        }
    }
    for (o, &w) in out.iter_mut().zip(&norm) {
        *o = if w > 0.0 { *o / w } else { 0.0 };
    }
    Ok(out)
}

/// Wiener-filters `noisy` with gains derived from estimated clean log
/// filterbank features (one row per frame).
pub fn enhance_waveform(noisy: &[f64], estimated_clean_logfb: &Matrix, config: &LogFBConfig) -> Result<Vec<f64>> {
    let m = check_waveform(noisy, config)?;
    if estimated_clean_logfb.rows() != m || estimated_clean_logfb.cols() != config.n_filters {
        return Err(Error::Param(format!(
            "feature matrix is {:?}, waveform framing needs ({m}, {})",
            estimated_clean_logfb.shape(),
            config.n_filters
        )));
    }
    let op = FilterbankOperator::new(config)?;
    let stft = Stft::new(config)?;
    let mut gains = Matrix::zeros(m, config.n_bins());
    for frame in 0..m {
        let noisy_ps = stft.power(&stft.spectrum(noisy, frame));
        let clean_ps = inverse_filterbank(estimated_clean_logfb.row(frame), &op)?;
        gains
            .row_mut(frame)
            .copy_from_slice(&wiener_gain(&clean_ps, &noisy_ps)?);
    }
    apply_spectral_gains(noisy, &gains, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::extract_logfb;
    use crate::metrics::segmental_snr;
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn tone(len: usize, hz: f64, amp: f64) -> Vec<f64> {
        (0..len)
            .map(|n| amp * (2.0 * std::f64::consts::PI * hz * n as f64 / 22_050.0).sin())
            .collect()
    }

    fn white(len: usize, std: f64, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, 0);
        (0..len).map(|_| std * r.sample::<f64, _>(StandardNormal)).collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn operator_shapes_and_signs() {
        let cfg = LogFBConfig::default();
        let op = FilterbankOperator::new(&cfg).unwrap();
        assert_eq!(op.forward().shape(), (22, 1025));
        assert_eq!(op.expansion().shape(), (1025, 22));
        assert!(op.expansion().as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn zero_features_expand_to_a_flat_non_negative_spectrum() {
        let op = FilterbankOperator::new(&LogFBConfig::default()).unwrap();
        let ps = inverse_filterbank(&[0.0; 22], &op).unwrap();
        assert!(ps.iter().all(|&v| v >= 0.0));
        for e in op.apply(&ps) {
            assert!((e - 1.0).abs() < 0.1, "band energy {e}");
        }
    }

    #[test]
    fn smooth_features_round_trip_within_ten_percent() {
        let op = FilterbankOperator::new(&LogFBConfig::default()).unwrap();
        let v: Vec<f64> = (0..22)
            .map(|i| (i as f64 / 6.0).sin() * 1.5 - 0.02 * i as f64)
            .collect();
        let back = op.apply(&inverse_filterbank(&v, &op).unwrap());
        for (b, x) in back.iter().zip(&v) {
            let target = x.exp();
            assert!((b - target).abs() / target < 0.1, "band {b} vs {target}");
        }
    }

    #[test]
    fn log4_shift_scales_spectrum_by_four() {
        let op = FilterbankOperator::new(&LogFBConfig::default()).unwrap();
        let v: Vec<f64> = (0..22).map(|i| 0.1 * i as f64).collect();
        let shifted: Vec<f64> = v.iter().map(|x| x + 4f64.ln()).collect();
        let a = inverse_filterbank(&v, &op).unwrap();
        let b = inverse_filterbank(&shifted, &op).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y - 4.0 * x).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn wiener_gain_examples() {
        assert_eq!(wiener_gain(&[2.0, 3.0], &[2.0, 3.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(wiener_gain(&[0.0, 0.0], &[2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(wiener_gain(&[4.0], &[8.0]).unwrap(), vec![0.5]);
        assert_eq!(wiener_gain(&[4.0], &[0.0]).unwrap(), vec![1.0]);
        assert!(wiener_gain(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn unit_gains_reconstruct_the_interior() {
        let cfg = LogFBConfig::default();
        let x = white(8000, 0.3, 4);
        let m = cfg.frame_count(x.len());
        let y = apply_spectral_gains(&x, &Matrix::filled(m, cfg.n_bins(), 1.0), &cfg).unwrap();
        assert_eq!(y.len(), x.len());
        let end = (m - 1) * cfg.hop + cfg.frame_length;
        let interior = cfg.frame_length..end - cfg.frame_length;
        assert!(rel_err(&y[interior.clone()], &x[interior]) < 1e-12);
    }

    #[test]
    fn frame_energy_never_grows() {
        let cfg = LogFBConfig::default();
        let stft = Stft::new(&cfg).unwrap();
        let x = white(2000, 1.0, 9);
        let mut r = rng::stream(10, 0);
        for frame in 0..cfg.frame_count(x.len()) {
            let gains: Vec<f64> = (0..cfg.n_bins()).map(|_| r.random::<f64>()).collect();
            let y = filter_frame(&stft, &x, frame, &gains);
            let out: f64 = y.iter().map(|v| v * v).sum();
            let start = frame * cfg.hop;
            let inp: f64 = stft
                .window()
                .iter()
                .enumerate()
                .map(|(n, w)| (w * x[start + n]).powi(2))
                .sum();
            assert!(out <= inp * (1.0 + 1e-12));
        }
    }

    fn self_consistency_error(x: &[f64]) -> f64 {
        let cfg = LogFBConfig::default();
        let feats = extract_logfb(x, &cfg).unwrap();
        let y = enhance_waveform(x, &feats, &cfg).unwrap();
        let end = (cfg.frame_count(x.len()) - 1) * cfg.hop + cfg.frame_length;
        rel_err(&y[..end], &x[..end])
    }

    #[test]
    fn own_features_leave_a_flat_spectrum_signal_unchanged() {
        // One click per frame has a flat power spectrum, which band
        // energies describe completely. Tonal or noisy frames carry
        // within-band detail the features cannot represent.
        let clicks: Vec<f64> = (0..11_025).map(|n| if n % 1000 == 137 { 1.0 } else { 0.0 }).collect();
        let err = self_consistency_error(&clicks);
        assert!(err < 0.05, "relative error {err}");
    }

    #[test]
    fn oracle_features_improve_segmental_snr() {
        let cfg = LogFBConfig::default();
        let clean = tone(22_050, 1000.0, 0.5);
        let noise_power = clean.iter().map(|v| v * v).sum::<f64>() / clean.len() as f64;
        let noisy: Vec<f64> = clean
            .iter()
            .zip(white(clean.len(), noise_power.sqrt(), 5))
            .map(|(c, n)| c + n)
            .collect();
        let feats = extract_logfb(&clean, &cfg).unwrap();
        let out = enhance_waveform(&noisy, &feats, &cfg).unwrap();
        let before = segmental_snr(&clean, &noisy, cfg.frame_length).unwrap();
        let after = segmental_snr(&clean, &out, cfg.frame_length).unwrap();
        assert!(after > before, "{after} <= {before}");
    }

    #[test]
    fn floored_features_silence_the_output() {
        let cfg = LogFBConfig::default();
        let x = white(6000, 0.5, 3);
        let m = cfg.frame_count(x.len());
        let y = enhance_waveform(&x, &Matrix::filled(m, 22, cfg.floor.ln()), &cfg).unwrap();
        let ey: f64 = y.iter().map(|v| v * v).sum();
        let ex: f64 = x.iter().map(|v| v * v).sum();
        assert!(ey < 0.01 * ex);
    }

    #[test]
    fn mismatched_frame_count_is_rejected() {
        let cfg = LogFBConfig::default();
        let x = white(6000, 0.5, 3);
        assert!(matches!(
            enhance_waveform(&x, &Matrix::zeros(3, 22), &cfg),
            Err(Error::Param(_))
        ));
    }
}
