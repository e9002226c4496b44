//! Histograms over non-overlapping windows and smoothed-histogram mode counting.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use super::AnalysisError;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges; a constant sample gives one degenerate bin.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    /// Probability density per bin (1/unit). Zero-width bins report zero.
    pub fn density(&self) -> Vec<f64> {
        let n = self.total() as f64;
        let w = self.bin_width();
        self.counts.iter().map(|&c| if w > 0.0 { c as f64 / (n * w) } else { 0.0 }).collect()
    }
}

/// Histogram of finite values over `[min, max]` with `bins` equal bins.
pub fn histogram(data: &[f64], bins: usize) -> Result<Histogram, AnalysisError> {
    if bins == 0 {
        return Err(AnalysisError::InvalidArgument("bins must be > 0"));
    }
    let (lo, hi) = data
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if lo > hi {
        return Err(AnalysisError::InvalidArgument("no finite samples"));
    }
    if lo == hi {
        let n = data.iter().filter(|v| v.is_finite()).count() as u64;
        return Ok(Histogram { edges: vec![lo, hi], counts: vec![n] });
    }
    histogram_range(data, lo, hi, bins)
}

/// Histogram over a fixed range; values outside `[lo, hi]` are dropped.
pub fn histogram_range(data: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Histogram, AnalysisError> {
    if bins == 0 || !(hi > lo) {
        return Err(AnalysisError::InvalidArgument("need bins > 0 and hi > lo"));
    }
    let w = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + i as f64 * w }).collect();
    let mut counts = vec![0u64; bins];
    for &v in data {
        if v.is_finite() && v >= lo && v <= hi {
            let i = (((v - lo) / w) as usize).min(bins - 1);
            counts[i] += 1;
        }
    }
    Ok(Histogram { edges, counts })
}

pub fn mean_std(data: &[f64]) -> (f64, f64) {
    if data.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mode counting settings.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ModeConfig {
    /// Gaussian kernel standard deviation in bins.
    pub smoothing_bins: f64,
    /// Minimum peak prominence as a fraction of the smoothed maximum.
    pub prominence: f64,
}

impl Default for ModeConfig {
    fn default() -> Self {
        Self { smoothing_bins: 2.0, prominence: 0.05 }
    }
}

fn smooth(counts: &[u64], sigma: f64) -> Vec<f64> {
    let n = counts.len();
    if sigma <= 0.0 {
        return counts.iter().map(|&c| c as f64).collect();
    }
    let half = (4.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-half..=half).map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    (0..n as isize)
        .map(|i| {
            let mut s = 0.0;
            for (j, kv) in (-half..=half).zip(&kernel) {
                let idx = i + j;
                if idx >= 0 && (idx as usize) < n {
                    s += kv * counts[idx as usize] as f64;
                }
            }
            s / norm
        })
        .collect()
}

/// Number of local maxima of the smoothed histogram whose topographic
/// prominence reaches `prominence · max`.
pub fn count_modes(counts: &[u64], cfg: &ModeConfig) -> usize {
    let s = smooth(counts, cfg.smoothing_bins);
    let n = s.len();
    let top = s.iter().copied().fold(0.0, f64::max);
    if n == 0 || top <= 0.0 {
        return 0;
    }
    if n == 1 {
        return 1;
    }
    let floor = cfg.prominence * top;
    let mut modes = 0;
    let mut i = 0;
    while i < n {
        // Collapse plateaus to one candidate.
        let mut j = i;
        while j + 1 < n && s[j + 1] == s[i] {
            j += 1;
        }
        let left_ok = i == 0 || s[i - 1] < s[i];
        let right_ok = j + 1 == n || s[j + 1] < s[i];
        if left_ok && right_ok {
            let peak = s[i];
            // Ties stop the leftward walk only, so equal peaks count once.
            let mut lmin = peak;
            let mut k = i;
            while k > 0 && s[k - 1] < peak {
                k -= 1;
                lmin = lmin.min(s[k]);
            }
            // A side that reaches the edge falls to zero outside the histogram.
            let left_base = if k > 0 { lmin } else { lmin.min(0.0) };
            let mut rmin = peak;
            let mut k = j;
            while k + 1 < n && s[k + 1] <= peak {
                k += 1;
                rmin = rmin.min(s[k]);
            }
            let right_base = if k + 1 < n { rmin } else { rmin.min(0.0) };
            if peak - left_base.max(right_base) >= floor {
                modes += 1;
            }
        }
        i = j + 1;
    }
    modes
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowPdf {
    pub t_start: f64,
    pub hist: Histogram,
    pub mean: f64,
    pub std: f64,
    pub modes: usize,
    pub unimodal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdfEvolution {
    pub t_avg: f64,
    pub samples_per_window: usize,
    pub windows: Vec<WindowPdf>,
}

impl PdfEvolution {
    pub fn unimodal_fraction(&self) -> f64 {
        if self.windows.is_empty() {
            return f64::NAN;
        }
        self.windows.iter().filter(|w| w.unimodal).count() as f64 / self.windows.len() as f64
    }
}

/// Samples per window for `t_avg` at `sample_rate_hz`.
pub fn window_samples(sample_rate_hz: f64, t_avg: f64) -> usize {
    (t_avg * sample_rate_hz).round().max(1.0) as usize
}

/// Histograms over consecutive non-overlapping windows of length `t_avg`;
/// a trailing partial window is dropped.
pub fn windowed_pdf(
    series: &[f64],
    sample_rate_hz: f64,
    t_avg: f64,
    bins: usize,
    modes: &ModeConfig,
) -> Result<PdfEvolution, AnalysisError> {
    if !(sample_rate_hz > 0.0) || !(t_avg > 0.0) {
        return Err(AnalysisError::InvalidArgument("sample rate and t_avg must be > 0"));
    }
    let w = window_samples(sample_rate_hz, t_avg);
    if series.len() < w {
        return Err(AnalysisError::TooShort { needed: w, got: series.len() });
    }
    let windows = series
        .chunks_exact(w)
        .enumerate()
        .map(|(i, chunk)| {
            let hist = histogram(chunk, bins)?;
            let (mean, std) = mean_std(chunk);
            let m = count_modes(&hist.counts, modes);
            Ok(WindowPdf {
                t_start: (i * w) as f64 / sample_rate_hz,
                hist,
                mean,
                std,
                modes: m,
                unimodal: m == 1,
            })
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    Ok(PdfEvolution { t_avg, samples_per_window: w, windows })
}
