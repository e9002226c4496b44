//! Statistics of run records: windowed PDFs, Welch PSDs, the stabilization
//! criteria and the calibration fits.

use core::fmt;

pub mod calibration;
pub mod criteria;
pub mod fft;
pub mod fit;
pub mod pdf;
pub mod psd;

pub use calibration::{force_calibration, HarmonicAxes, ToneResponse};
pub use criteria::{evaluate_criteria, well_peak_ratio, CriteriaConfig, CriteriaReport, WindowCriteria};
pub use fit::{fit_double_well_pdf, fit_harmonic_psd, harmonic_psd_model, DoubleWellFit, HarmonicFit, HarmonicFitConfig};
pub use pdf::{count_modes, histogram, mean_std, windowed_pdf, Histogram, ModeConfig, PdfEvolution, WindowPdf};
pub use psd::{welch_psd, Psd, Window};

#[derive(Debug, Clone, PartialEq)]
pub enum AnalysisError {
    /// The trace holds fewer samples than one window or segment.
    TooShort { needed: usize, got: usize },
    InvalidArgument(&'static str),
    /// Fit did not converge; carries the last cost and iteration count.
    NoConvergence { iterations: usize, cost: f64 },
    /// One lobe of a double-well histogram is empty.
    NonErgodic,
    /// Drive tone not above the noise floor.
    ToneNotFound { freq_hz: f64 },
}

impl fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TooShort { needed, got } => write!(f, "trace too short: need {needed} samples, got {got}"),
            Self::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            Self::NoConvergence { iterations, cost } => {
                write!(f, "fit did not converge after {iterations} iterations (cost {cost:.3e})")
            }
            Self::NonErgodic => f.write_str("non-ergodic sample"),
            Self::ToneNotFound { freq_hz } => write!(f, "tone not found at {freq_hz} Hz"),
        }
    }
}

impl core::error::Error for AnalysisError {}
