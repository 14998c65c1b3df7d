//! Reconstruction error, neuron activation rates, discrete AUC, the Wilcoxon
//! signed-rank test and segmental SNR.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::ActivationStats;
use crate::numeric::Matrix;

/// Mean over all entries of the squared difference.
pub fn mse(y: &Matrix, y_hat: &Matrix) -> Result<f64> {
    y.expect_same_shape(y_hat, "mse")?;
    if y.is_empty() {
        return Err(Error::Param("mse of an empty matrix".into()));
    }
    Ok(y.sub(y_hat)?.frobenius_sq() / y.len() as f64)
}

/// Per-neuron firing rates sorted in descending order.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationCurve {
    pub rates: Vec<f64>,
}

impl ActivationCurve {
    pub fn auc(&self) -> f64 {
        area_under_curve(&self.rates)
    }
}

pub fn activation_rate_curve(stats: &ActivationStats) -> Result<ActivationCurve> {
    if stats.total() == 0 {
        return Err(Error::Contract(
            "activation curve needs at least one recorded forward".into(),
        ));
    }
    let total = stats.total() as f64;
    let mut rates: Vec<f64> = stats.fire_counts().iter().map(|&c| c as f64 / total).collect();
    rates.sort_by(|a, b| b.total_cmp(a));
    Ok(ActivationCurve { rates })
}

/// Discrete area under a curve: the plain sum of its values.
pub fn area_under_curve(values: &[f64]) -> f64 {
    values.iter().sum()
}

/// Largest sample size evaluated by exact enumeration.
pub const WILCOXON_EXACT_MAX_N: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WilcoxonResult {
    /// Non-zero differences used.
    pub n: usize,
    /// Rank sum of positive differences `a - b`; this is the reported statistic.
    pub w_plus: f64,
    pub w_minus: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub reject: bool,
    /// `true` when the p-value came from the exact null distribution.
    pub exact: bool,
}

impl WilcoxonResult {
    pub fn statistic(&self) -> f64 {
        self.w_plus
    }
}

/// Average ranks (1-based) of `values` in ascending order.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped and tied magnitudes share their average
/// rank. Up to [`WILCOXON_EXACT_MAX_N`] pairs the null distribution of the
/// positive rank sum is built exactly; above that a normal approximation
/// with tie and continuity corrections is used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alpha: f64) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "wilcoxon_signed_rank",
            format!("{} vs {} samples", a.len(), b.len()),
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Param(format!(
            "significance level must be in (0, 1), got {alpha}"
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("paired difference".into()));
    }
    if diffs.is_empty() {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    let n = diffs.len();
    if n < 5 {
        return Err(Error::Param(format!("need at least 5 non-zero differences, got {n}")));
    }
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&magnitudes);
    let w_plus: f64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;

    let (p_value, exact) = if n <= WILCOXON_EXACT_MAX_N {
        (exact_two_sided_p(&ranks, w_plus), true)
    } else {
        (normal_two_sided_p(&magnitudes, n, w_plus), false)
    };
    Ok(WilcoxonResult {
        n,
        w_plus,
        w_minus,
        p_value,
        reject: p_value < alpha,
        exact,
    })
}

/// Exact null distribution by counting subset sums of doubled ranks (average
/// ranks are multiples of one half, so doubling keeps everything integral).
fn exact_two_sided_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let observed = (2.0 * w_plus).round() as i64;
    let center = total as i64;
    let dev = (2 * observed - center).abs();
    let extreme: u64 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (2 * *s as i64 - center).abs() >= dev)
        .map(|(_, &c)| c)
        .sum();
    extreme as f64 / 2f64.powi(ranks.len() as i32)
}

fn normal_two_sided_p(magnitudes: &[f64], n: usize, w_plus: f64) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut sorted = magnitudes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal parameters are valid");
    (2.0 * normal.sf(z)).min(1.0)
}

/// Segmental SNR clamp range in dB.
pub const SEG_SNR_MIN_DB: f64 = -10.0;
pub const SEG_SNR_MAX_DB: f64 = 35.0;

/// Mean over non-overlapping frames of `10 log10(sum ref^2 / sum (ref - test)^2)`,
/// each frame clamped to `[-10, 35]` dB. Frames with a silent reference are
/// skipped; a trailing partial frame is ignored.
pub fn segmental_snr(reference: &[f64], test: &[f64], frame: usize) -> Result<f64> {
    if reference.len() != test.len() {
        return Err(Error::shape(
            "segmental_snr",
            format!("{} vs {} samples", reference.len(), test.len()),
        ));
    }
    if frame == 0 || reference.len() < frame {
        return Err(Error::Param(format!(
            "segmental SNR needs at least one {frame}-sample frame, got {} samples",
            reference.len()
        )));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for (r, t) in reference.chunks_exact(frame).zip(test.chunks_exact(frame)) {
        let signal: f64 = r.iter().map(|v| v * v).sum();
        if signal == 0.0 {
            continue;
        }
        let noise: f64 = r.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        let db = if noise == 0.0 {
            SEG_SNR_MAX_DB
        } else {
            (10.0 * (signal / noise).log10()).clamp(SEG_SNR_MIN_DB, SEG_SNR_MAX_DB)
        };
        sum += db;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Degenerate("every reference frame is silent".into()));
    }
    Ok(sum / used as f64)
}
