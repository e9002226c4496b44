//! Calibration fits: damped-oscillator PSD and Boltzmann double-well PDF.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use super::pdf::{count_modes, Histogram, ModeConfig};
use super::psd::Psd;
use super::AnalysisError;
use crate::consts::BOLTZMANN;
use crate::potential::{double_well_1d, find_apex, PotentialParams};

pub(crate) struct LmResult {
    pub params: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
}

/// Levenberg-Marquardt on `½‖r(θ)‖²` with a central-difference Jacobian and
/// Marquardt diagonal scaling.
pub(crate) fn levenberg_marquardt(
    resid: impl Fn(&[f64]) -> Option<Vec<f64>>,
    x0: &[f64],
    max_iter: usize,
) -> Result<LmResult, AnalysisError> {
    let cost_of = |r: &[f64]| 0.5 * r.iter().map(|v| v * v).sum::<f64>();
    let mut x = x0.to_vec();
    let mut r = resid(&x).ok_or(AnalysisError::InvalidArgument("residual undefined at the initial guess"))?;
    let mut cost = cost_of(&r);
    let n = x.len();
    let m = r.len();
    if m < n {
        return Err(AnalysisError::InvalidArgument("fewer data points than parameters"));
    }
    let mut lambda = 1e-3;
    for it in 1..=max_iter {
        let mut jac = DMatrix::<f64>::zeros(m, n);
        for j in 0..n {
            let h = 1e-6 * x[j].abs().max(1e-3);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let (Some(rp), Some(rm)) = (resid(&xp), resid(&xm)) else {
                return Err(AnalysisError::NoConvergence { iterations: it, cost });
            };
            for i in 0..m {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        if g.amax() < 1e-14 * (1.0 + cost) {
            return Ok(LmResult { params: x, cost, iterations: it });
        }
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if let Some(rn) = resid(&xn) {
                let cn = cost_of(&rn);
                if cn.is_finite() && cn <= cost {
                    let small_step = step.iter().zip(&x).all(|(s, xi)| s.abs() <= 1e-12 * (1.0 + xi.abs()));
                    let small_gain = cost - cn <= 1e-15 * cost;
                    x = xn;
                    r = rn;
                    cost = cn;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    if small_step || small_gain || cost < 1e-30 {
                        return Ok(LmResult { params: x, cost, iterations: it });
                    }
                    break;
                }
            }
            lambda *= 4.0;
        }
        if !accepted {
            // No downhill step at any damping: a local minimum to working precision.
            return Ok(LmResult { params: x, cost, iterations: it });
        }
    }
    Err(AnalysisError::NoConvergence { iterations: max_iter, cost })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicFitConfig {
    /// Fit band `(lo, hi)` (Hz).
    pub band_hz: (f64, f64),
    pub mass: f64,
    pub temperature: f64,
    /// Fit an additive white floor.
    pub fit_floor: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicFit {
    /// Damping rate Γ (1/s).
    pub gamma: f64,
    /// Resonance Ω (rad/s).
    pub omega: f64,
    /// Detection gain (V/m).
    pub gain: f64,
    /// White floor (V²/Hz).
    pub floor: f64,
    /// Half the sum of squared log residuals.
    pub cost: f64,
    /// RMS log residual per bin.
    pub rms_log_residual: f64,
    pub iterations: usize,
}

/// One-sided measured PSD of a thermally driven oscillator (V²/Hz):
/// `g² 4 Γ k_B T / (m ((Ω² − ω²)² + Γ²ω²)) + floor`.
pub fn harmonic_psd_model(f: f64, gamma: f64, omega: f64, gain: f64, floor: f64, mass: f64, temperature: f64) -> f64 {
    let w = 2.0 * PI * f;
    let d = (omega * omega - w * w).powi(2) + gamma * gamma * w * w;
    gain * gain * 4.0 * gamma * BOLTZMANN * temperature / (mass * d) + floor
}

/// Fits Γ, Ω, gain (and optionally a floor) to the PSD bins inside the band
/// by least squares on log density.
pub fn fit_harmonic_psd(psd: &Psd, cfg: &HarmonicFitConfig) -> Result<HarmonicFit, AnalysisError> {
    let (lo, hi) = cfg.band_hz;
    if !(hi > lo && lo >= 0.0 && cfg.mass > 0.0 && cfg.temperature > 0.0) {
        return Err(AnalysisError::InvalidArgument("need 0 <= lo < hi, mass > 0, temperature > 0"));
    }
    let pts: Vec<(f64, f64)> = psd.band(lo, hi).filter(|(f, s)| *f > 0.0 && *s > 0.0).collect();
    let n_par = if cfg.fit_floor { 4 } else { 3 };
    if pts.len() < 2 * n_par {
        return Err(AnalysisError::InvalidArgument("too few PSD bins in the fit band"));
    }

    let (f_pk, s_pk) = pts.iter().copied().fold((0.0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let res = psd.resolution();
    let above: Vec<f64> = pts.iter().filter(|(_, s)| *s >= 0.5 * s_pk).map(|(f, _)| *f).collect();
    let fwhm = (above.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - above.iter().copied().fold(f64::INFINITY, f64::min))
    .max(res);
    let omega0 = 2.0 * PI * f_pk;
    let gamma0 = 2.0 * PI * fwhm;
    let kt = BOLTZMANN * cfg.temperature;
    let gain0 = (s_pk * cfg.mass * gamma0 * omega0 * omega0 / (4.0 * kt)).sqrt();
    let s_min = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);

    let mut x0 = vec![omega0.ln(), gamma0.ln(), gain0.ln()];
    if cfg.fit_floor {
        x0.push((0.5 * s_min).ln());
    }
    let model = |th: &[f64], f: f64| {
        let floor = if th.len() > 3 { th[3].exp() } else { 0.0 };
        harmonic_psd_model(f, th[1].exp(), th[0].exp(), th[2].exp(), floor, cfg.mass, cfg.temperature)
    };
    let resid = |th: &[f64]| {
        if th.iter().any(|v| !v.is_finite() || v.abs() > 700.0) {
            return None;
        }
        Some(pts.iter().map(|&(f, s)| model(th, f).ln() - s.ln()).collect::<Vec<f64>>())
    };
    let out = levenberg_marquardt(resid, &x0, 500)?;
    let th = &out.params;
    Ok(HarmonicFit {
        omega: th[0].exp(),
        gamma: th[1].exp(),
        gain: th[2].exp(),
        floor: if cfg.fit_floor { th[3].exp() } else { 0.0 },
        cost: out.cost,
        rms_log_residual: (2.0 * out.cost / pts.len() as f64).sqrt(),
        iterations: out.iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleWellFit {
    /// Fitted TEM00 depth (J).
    pub alpha: f64,
    /// Fitted TEM01 depth coefficient (J).
    pub beta: f64,
    /// Common beam offset (m).
    pub delta: f64,
    pub delta_apex: f64,
    /// Apex curvature of the fitted potential (N/m).
    pub k_apex: f64,
    /// Poisson deviance at the optimum.
    pub deviance: f64,
    pub iterations: usize,
}

/// Fits the Boltzmann density `∝ exp(−U_x(x; α, β, Δ)/k_B T)` to a position
/// histogram (m) by Poisson maximum likelihood and returns the apex curvature
/// of the fitted potential. The waist is taken from `template`.
pub fn fit_double_well_pdf(
    hist: &Histogram,
    template: &PotentialParams,
    temperature: f64,
) -> Result<DoubleWellFit, AnalysisError> {
    if !(temperature > 0.0) || hist.counts.len() < 8 || !(hist.bin_width() > 0.0) {
        return Err(AnalysisError::InvalidArgument("need temperature > 0 and at least 8 bins"));
    }
    if count_modes(&hist.counts, &ModeConfig::default()) < 2 {
        return Err(AnalysisError::NonErgodic);
    }
    let kt = BOLTZMANN * temperature;
    let w0 = template.w0;
    let centers = hist.centers();
    let counts: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let total: f64 = counts.iter().sum();
    let mean = centers.iter().zip(&counts).map(|(x, c)| x * c).sum::<f64>() / total;

    let pot = |th: &[f64]| PotentialParams {
        alpha_scale: th[0] * kt,
        beta_scale: th[1] * kt,
        delta0: th[2] * w0,
        delta1: th[2] * w0,
        ..*template
    };
    let log_shape = |th: &[f64]| -> Vec<f64> {
        let p = pot(th);
        centers.iter().map(|&x| -double_well_1d(x, &p) / kt).collect()
    };
    // The normalization is profiled out: N = Σc / Σ e^{ℓ}.
    let resid = |th: &[f64]| {
        if th.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let ls = log_shape(th);
        let top = ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = ls.iter().map(|l| (l - top).exp()).sum();
        Some(
            ls.iter()
                .zip(&counts)
                .map(|(l, &c)| {
                    let m = total * (l - top).exp() / z;
                    let d = if c > 0.0 { 2.0 * (m - c + c * (c / m).ln()) } else { 2.0 * m };
                    let d = d.max(0.0);
                    if c >= m { d.sqrt() } else { -d.sqrt() }
                })
                .collect::<Vec<f64>>(),
        )
    };
    let x0 = [template.alpha_scale / kt, template.beta_scale / kt, mean / w0];
    let out = levenberg_marquardt(resid, &x0, 500)?;
    let p = pot(&out.params);
    let apex = find_apex(&p);
    if !apex.valid {
        return Err(AnalysisError::NoConvergence { iterations: out.iterations, cost: out.cost });
    }
    Ok(DoubleWellFit {
        alpha: p.alpha_scale,
        beta: p.beta_scale,
        delta: p.delta0,
        delta_apex: apex.delta_apex,
        k_apex: apex.k_apex,
        deviance: 2.0 * out.cost,
        iterations: out.iterations,
    })
}
