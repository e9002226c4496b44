//! Welch power spectral density.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;

use super::fft::fft;
use super::AnalysisError;
use nalgebra::Complex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            // Periodic Hann, as is customary for spectral estimation.
            Self::Hann => (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect(),
            Self::Rectangular => vec![1.0; n],
        }
    }
}

/// One-sided spectral density.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    /// Bin frequencies (Hz), `k · fs / segment_len`.
    pub freq: Vec<f64>,
    /// Density (unit²/Hz).
    pub density: Vec<f64>,
    pub sample_rate_hz: f64,
    pub segment_len: usize,
    pub n_segments: usize,
    pub window: Window,
}

impl Psd {
    pub fn resolution(&self) -> f64 {
        self.sample_rate_hz / self.segment_len as f64
    }

    /// `∫ S df` over all bins.
    pub fn total_power(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.resolution()
    }

    /// `∫ S df` over bins with `lo ≤ f < hi`.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        self.band(lo, hi).map(|(_, s)| s).sum::<f64>() * self.resolution()
    }

    /// Bins with `lo ≤ f < hi`.
    pub fn band(&self, lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.freq.iter().copied().zip(self.density.iter().copied()).filter(move |(f, _)| *f >= lo && *f < hi)
    }

    pub fn peak_frequency(&self) -> f64 {
        self.freq
            .iter()
            .zip(&self.density)
            .skip(1)
            .fold((0.0, f64::NEG_INFINITY), |acc, (f, s)| if *s > acc.1 { (*f, *s) } else { acc })
            .0
    }
}

/// Averaged modified periodogram.
///
/// Each segment has its mean removed and is windowed; the one-sided density
/// is scaled so that its integral equals the variance of the segment.
/// `overlap` is the fractional overlap in `[0, 1)`.
pub fn welch_psd(
    series: &[f64],
    sample_rate_hz: f64,
    segment_len: usize,
    overlap: f64,
    window: Window,
) -> Result<Psd, AnalysisError> {
    if segment_len < 2 {
        return Err(AnalysisError::InvalidArgument("segment length must be at least 2"));
    }
    if !(sample_rate_hz > 0.0) || !(0.0..1.0).contains(&overlap) {
        return Err(AnalysisError::InvalidArgument("sample rate must be > 0 and overlap in [0, 1)"));
    }
    if series.len() < segment_len {
        return Err(AnalysisError::TooShort { needed: segment_len, got: series.len() });
    }
    let w = window.coefficients(segment_len);
    let w_energy: f64 = w.iter().map(|v| v * v).sum();
    let hop = ((segment_len as f64 * (1.0 - overlap)).round() as usize).max(1);
    let n_bins = segment_len / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut n_segments = 0;
    let mut buf = vec![Complex::new(0.0, 0.0); segment_len];
    let mut start = 0;
    while start + segment_len <= series.len() {
        let seg = &series[start..start + segment_len];
        let mean = seg.iter().sum::<f64>() / segment_len as f64;
        for ((b, x), wi) in buf.iter_mut().zip(seg).zip(&w) {
            *b = Complex::new((x - mean) * wi, 0.0);
        }
        fft(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        n_segments += 1;
        start += hop;
    }
    let scale = 1.0 / (sample_rate_hz * w_energy * n_segments as f64);
    let density = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let edge = k == 0 || (segment_len % 2 == 0 && k == segment_len / 2);
            a * scale * if edge { 1.0 } else { 2.0 }
        })
        .collect();
    let freq = (0..n_bins).map(|k| k as f64 * sample_rate_hz / segment_len as f64).collect();
    Ok(Psd { freq, density, sample_rate_hz, segment_len, n_segments, window })
}
