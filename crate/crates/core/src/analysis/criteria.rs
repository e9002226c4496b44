//! The three statistical stabilization criteria, evaluated per window.

use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;

use super::pdf::{count_modes, histogram, mean_std, window_samples, ModeConfig};
use super::psd::{welch_psd, Psd, Window};
use super::AnalysisError;
use crate::dynamics::{Column, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriteriaConfig {
    /// Window length (s).
    pub t_avg: f64,
    pub bins: usize,
    pub modes: ModeConfig,
    /// Well resonance (rad/s).
    pub omega_well: f64,
    /// Relative half-width δ of the well band.
    pub band_rel: f64,
    /// Band-to-flank ratio above which a well peak is declared.
    pub baseline_factor: f64,
    /// Target frequency resolution of the per-window PSD (Hz).
    pub psd_resolution_hz: f64,
}

impl Default for CriteriaConfig {
    fn default() -> Self {
        Self {
            t_avg: 3e-3,
            bins: 50,
            modes: ModeConfig::default(),
            omega_well: 2.0 * PI * 65e3,
            band_rel: 0.1,
            baseline_factor: 3.0,
            psd_resolution_hz: 2e3,
        }
    }
}

impl CriteriaConfig {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let ok = self.t_avg > 0.0
            && self.bins > 0
            && self.omega_well > 0.0
            && self.band_rel > 0.0
            && self.band_rel < 1.0 / 3.0
            && self.baseline_factor > 0.0
            && self.psd_resolution_hz > 0.0;
        if ok {
            Ok(())
        } else {
            Err(AnalysisError::InvalidArgument("criteria config out of range"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowCriteria {
    pub t_start: f64,
    pub unimodal: bool,
    pub zero_mean_force: bool,
    pub no_well_peak: bool,
    pub stabilized: bool,
    pub mean_chi_x: f64,
    pub std_chi_x: f64,
    pub mean_u: f64,
    pub std_u: f64,
    /// Mean band PSD over median flank PSD.
    pub peak_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriteriaReport {
    pub config: CriteriaConfig,
    pub windows: Vec<WindowCriteria>,
}

impl CriteriaReport {
    fn fraction(&self, f: impl Fn(&WindowCriteria) -> bool) -> f64 {
        if self.windows.is_empty() {
            return f64::NAN;
        }
        self.windows.iter().filter(|w| f(w)).count() as f64 / self.windows.len() as f64
    }

    pub fn unimodal_fraction(&self) -> f64 {
        self.fraction(|w| w.unimodal)
    }

    pub fn zero_mean_fraction(&self) -> f64 {
        self.fraction(|w| w.zero_mean_force)
    }

    pub fn no_well_peak_fraction(&self) -> f64 {
        self.fraction(|w| w.no_well_peak)
    }

    pub fn stabilized_fraction(&self) -> f64 {
        self.fraction(|w| w.stabilized)
    }
}

/// Mean PSD inside `[Ω(1−δ), Ω(1+δ)]` divided by the median PSD of the two
/// flanking bands of equal width. NaN when a band holds no bins.
pub fn well_peak_ratio(psd: &Psd, omega_well: f64, band_rel: f64) -> f64 {
    let f0 = omega_well / (2.0 * PI);
    let (lo, hi) = (f0 * (1.0 - band_rel), f0 * (1.0 + band_rel));
    let width = hi - lo;
    let band: Vec<f64> = psd.band(lo, hi).map(|(_, s)| s).collect();
    let mut flank: Vec<f64> = psd.band(lo - width, lo).chain(psd.band(hi, hi + width)).map(|(_, s)| s).collect();
    if band.is_empty() || flank.is_empty() {
        return f64::NAN;
    }
    flank.sort_by(f64::total_cmp);
    let m = flank.len();
    let median = if m % 2 == 1 { flank[m / 2] } else { 0.5 * (flank[m / 2 - 1] + flank[m / 2]) };
    let mean = band.iter().sum::<f64>() / band.len() as f64;
    mean / median
}

/// Unimodality of χ_x, zero-mean feedback `|mean u| ≤ std u`, and absence of
/// a χ_x spectral peak near Ω_well, over consecutive `t_avg` windows.
pub fn evaluate_criteria(record: &RunRecord, cfg: &CriteriaConfig) -> Result<CriteriaReport, AnalysisError> {
    cfg.validate()?;
    let fs = record.sample_rate_hz;
    if !(fs > 0.0) {
        return Err(AnalysisError::InvalidArgument("record sample rate must be > 0"));
    }
    let w = window_samples(fs, cfg.t_avg);
    let seg = ((fs / cfg.psd_resolution_hz).round() as usize).clamp(16, w);
    let chi = record.col(Column::ChiX);
    let u = record.col(Column::U);
    let mut windows = Vec::with_capacity(chi.len() / w);
    for (i, (cw, uw)) in chi.chunks_exact(w).zip(u.chunks_exact(w)).enumerate() {
        let hist = histogram(cw, cfg.bins)?;
        let unimodal = count_modes(&hist.counts, &cfg.modes) == 1;
        let (mean_u, std_u) = mean_std(uw);
        let (mean_chi_x, std_chi_x) = mean_std(cw);
        let psd = welch_psd(cw, fs, seg, 0.5, Window::Hann)?;
        let peak_ratio = well_peak_ratio(&psd, cfg.omega_well, cfg.band_rel);
        // Without resolvable bands there is no evidence of a peak.
        let no_well_peak = !(peak_ratio > cfg.baseline_factor);
        let zero_mean_force = mean_u.abs() <= std_u;
        windows.push(WindowCriteria {
            t_start: (i * w) as f64 / fs,
            unimodal,
            zero_mean_force,
            no_well_peak,
            stabilized: unimodal && zero_mean_force && no_well_peak,
            mean_chi_x,
            std_chi_x,
            mean_u,
            std_u,
            peak_ratio,
        });
    }
    Ok(CriteriaReport { config: *cfg, windows })
}
