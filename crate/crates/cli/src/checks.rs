//! Quantitative checks of simulated behavior against the reference results.
//! `reproduce` prints them, the acceptance suite asserts them.

use std::fmt;

use darktrap_core::analysis::{
    evaluate_criteria, fit_harmonic_psd, mean_std, welch_psd, well_peak_ratio, CriteriaReport, HarmonicFitConfig, Psd,
    Window,
};
use darktrap_core::consts::{hz_to_rad, rad_to_hz};
use darktrap_core::dynamics::{Column, RunStatus};
use darktrap_core::potential::{axis_stiffness, find_apex, quadratic_fit_error, PotentialParams};
use darktrap_core::BOLTZMANN;

use crate::error::CliError;
use crate::scenario::{ControllerSpec, Scenario};
use crate::trace::Trace;

#[derive(Debug, Clone)]
pub struct Part {
    pub pass: bool,
    pub text: String,
}

/// A numbered criterion made of sub-checks; it passes when all of them do.
#[derive(Debug, Clone)]
pub struct Check {
    pub id: u8,
    pub title: &'static str,
    pub parts: Vec<Part>,
}

impl Check {
    pub fn new(id: u8, title: &'static str) -> Self {
        Self { id, title, parts: Vec::new() }
    }

    pub fn part(&mut self, pass: bool, text: String) {
        self.parts.push(Part { pass, text });
    }

    pub fn pass(&self) -> bool {
        !self.parts.is_empty() && self.parts.iter().all(|p| p.pass)
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} criterion {}: {}", if self.pass() { "PASS" } else { "FAIL" }, self.id, self.title)?;
        for p in &self.parts {
            writeln!(f, "    [{}] {}", if p.pass { "ok" } else { "FAIL" }, p.text)?;
        }
        Ok(())
    }
}

pub fn find<'a>(traces: &'a [Trace], variant: &str) -> Result<&'a Trace, CliError> {
    traces
        .iter()
        .find(|t| t.variant == variant)
        .ok_or_else(|| CliError::Invalid(format!("no `{variant}` trace")))
}

fn reports(scn: &Scenario, traces: &[Trace]) -> Result<Vec<CriteriaReport>, CliError> {
    let cfg = scn.analysis.criteria();
    traces
        .iter()
        .map(|t| evaluate_criteria(&t.record, &cfg).map_err(|e| CliError::Invalid(format!("{}: {e}", t.variant))))
        .collect()
}

/// Mean over windows of the per-window standard deviation of χ_x (V).
pub fn window_std_chi(r: &CriteriaReport) -> f64 {
    if r.windows.is_empty() {
        return f64::NAN;
    }
    r.windows.iter().map(|w| w.std_chi_x).sum::<f64>() / r.windows.len() as f64
}

/// Apex position against TEM01 offset over ±30 nm, and the stiffness drop at 30 nm.
pub fn apex_geometry(pot: &PotentialParams) -> Check {
    let mut c = Check::new(1, "apex geometry");
    let offsets: Vec<f64> = (-30..=30).map(|i| f64::from(i) * 1e-9).collect();
    let apex: Vec<_> = offsets.iter().map(|&d| find_apex(&pot.with_offsets(0.0, d))).collect();
    let all_valid = apex.iter().all(|a| a.valid);
    c.part(all_valid, format!("apex exists over the whole range: {all_valid}"));

    let n = offsets.len() as f64;
    let ys: Vec<f64> = apex.iter().map(|a| a.delta_apex).collect();
    let (mx, my) = (offsets.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = offsets.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = offsets.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    c.part(r2 > 0.99, format!("linear fit R^2 = {r2:.6} (> 0.99), slope {:.3}", sxy / sxx));

    let ratio = apex[60].k_apex.abs() / apex[30].k_apex.abs();
    c.part((ratio - 0.92).abs() <= 0.04, format!("|k_apex(30 nm)|/|k_apex(0)| = {ratio:.4} (0.92 +- 0.04)"));
    c
}

pub fn quadratic_approximation(pot: &PotentialParams) -> Check {
    let mut c = Check::new(2, "quadratic approximation");
    match quadratic_fit_error(pot, 170e-9) {
        Ok(e) => c.part(e <= 0.02, format!("max error over +-170 nm = {:.3}% of the barrier (<= 2%)", e * 100.0)),
        Err(e) => c.part(false, format!("quadratic_fit_error failed: {e}")),
    }
    c
}

/// Equipartition and PSD fit on a free harmonic z record.
pub fn thermal(scn: &Scenario, trace: &Trace) -> Result<Check, CliError> {
    let mut c = Check::new(3, "thermal physics");
    let res = scn.resolve()?;
    let rec = &trace.record;
    let m = scn.mass();
    let t = scn.particle.temperature_k;
    let omega_z = (axis_stiffness([0.0; 3], &res.potential, 2) / m).sqrt();
    let expected = BOLTZMANN * t / (m * omega_z * omega_z);
    let (_, sz) = mean_std(rec.col(Column::Z));
    let rel = sz * sz / expected - 1.0;
    c.part(
        rel.abs() <= 0.05,
        format!("Var(z) = {:.4e} m^2 vs kT/(m Omega_z^2) = {expected:.4e} ({:+.2}%, within 5%)", sz * sz, rel * 100.0),
    );

    let psd = welch_psd(rec.col(Column::ChiZ), rec.sample_rate_hz, scn.analysis.psd_segment, 0.5, Window::Hann)
        .map_err(|e| CliError::Invalid(format!("z PSD: {e}")))?;
    let f0 = rad_to_hz(omega_z);
    let cfg = HarmonicFitConfig { band_hz: (0.7 * f0, 1.3 * f0), mass: m, temperature: t, fit_floor: true };
    match fit_harmonic_psd(&psd, &cfg) {
        Ok(fit) => {
            let f_fit = rad_to_hz(fit.omega);
            let f_ref = scn.potential.f_z_khz * 1e3;
            let g_fit = rad_to_hz(fit.gamma);
            let g_ref = scn.particle.damping_hz;
            c.part(
                ((f_fit - f_ref) / f_ref).abs() <= 0.01,
                format!("fitted Omega_z/2pi = {:.3} kHz (target {:.1} kHz +- 1%)", f_fit / 1e3, f_ref / 1e3),
            );
            c.part(
                ((g_fit - g_ref) / g_ref).abs() <= 0.10,
                format!("fitted Gamma/2pi = {g_fit:.1} Hz (target {g_ref:.0} Hz +- 10%)"),
            );
        }
        Err(e) => c.part(false, format!("harmonic PSD fit failed: {e}")),
    }
    Ok(c)
}

const NA1D: &str = "non_adaptive_1d";
const A1D: &str = "adaptive_1d";
const A2D: &str = "adaptive_2d";

/// Zero-mean force and χ_x spread of the three variants on the drift scenario.
pub fn controller_comparison(scn: &Scenario, traces: &[Trace]) -> Result<Check, CliError> {
    let mut c = Check::new(4, "controller comparison");
    let picked = [find(traces, NA1D)?.clone(), find(traces, A1D)?.clone(), find(traces, A2D)?.clone()];
    for t in &picked {
        c.part(t.record.status == RunStatus::Completed, format!("{} run {}", t.variant, t.record.status.name()));
    }
    let reps = reports(scn, &picked)?;
    let onset = scn.drift_onset_s().unwrap_or(0.0);

    let na = &reps[0];
    let failed_after: Vec<f64> =
        na.windows.iter().filter(|w| w.t_start >= onset && !w.zero_mean_force).map(|w| w.t_start).collect();
    c.part(
        !failed_after.is_empty(),
        format!(
            "{NA1D} fails zero-mean force after the onset at {:.0} ms in {} windows (first at {:.0} ms)",
            onset * 1e3,
            failed_after.len(),
            failed_after.first().map_or(f64::NAN, |t| t * 1e3)
        ),
    );
    for (name, r) in [(A1D, &reps[1]), (A2D, &reps[2])] {
        let bad = r.windows.iter().filter(|w| !w.zero_mean_force).count();
        c.part(
            bad == 0 && !r.windows.is_empty(),
            format!("{name} keeps zero-mean force in all windows ({bad} of {} fail)", r.windows.len()),
        );
    }

    let s: Vec<f64> = reps.iter().map(window_std_chi).collect();
    let (s_na, s_a1, s_a2) = (s[0], s[1], s[2]);
    c.part(s_a2 < s_na, format!("std(chi_x) {A2D} {:.1} mV < {NA1D} {:.1} mV", s_a2 * 1e3, s_na * 1e3));
    c.part(s_na <= s_a1, format!("std(chi_x) {NA1D} {:.1} mV <= {A1D} {:.1} mV", s_na * 1e3, s_a1 * 1e3));
    let ratio = s_a2 / s_a1;
    c.part((0.4..=0.8).contains(&ratio), format!("std ratio {A2D}/{A1D} = {ratio:.3} (within [0.40, 0.80])"));
    Ok(c)
}

/// Whole-segment χ_x PSD of each trace between `t0` and the end.
pub fn sustained_psds(scn: &Scenario, traces: &[Trace], t0: f64) -> Result<Vec<Psd>, CliError> {
    traces
        .iter()
        .map(|t| {
            let seg = t.record.slice_time(t0, f64::INFINITY);
            welch_psd(seg.col(Column::ChiX), seg.sample_rate_hz, scn.analysis.psd_segment, 0.5, Window::Hann)
                .map_err(|e| CliError::Invalid(format!("{} PSD: {e}", t.variant)))
        })
        .collect()
}

pub const LOW_BAND_HZ: f64 = 10e3;

/// Well peak and low-frequency power of χ_x once the misalignment has settled.
pub fn spectral(scn: &Scenario, traces: &[Trace]) -> Result<Check, CliError> {
    let mut c = Check::new(5, "spectral criterion");
    let picked = [find(traces, NA1D)?.clone(), find(traces, A1D)?.clone(), find(traces, A2D)?.clone()];
    let t0 = scn.drift_settled_s().unwrap_or(0.0);
    let psds = sustained_psds(scn, &picked, t0)?;
    let a = &scn.analysis;
    let omega = hz_to_rad(a.well_freq_khz * 1e3);
    let ratios: Vec<f64> = psds.iter().map(|p| well_peak_ratio(p, omega, a.band_rel)).collect();
    c.part(
        ratios[0] >= a.baseline_factor,
        format!(
            "{NA1D} peak/flank ratio at {:.0} kHz = {:.2} (>= {})",
            a.well_freq_khz, ratios[0], a.baseline_factor
        ),
    );
    for (name, r) in [(A1D, ratios[1]), (A2D, ratios[2])] {
        c.part(r < a.baseline_factor, format!("{name} peak/flank ratio = {r:.2} (< {})", a.baseline_factor));
    }
    let low: Vec<f64> = psds.iter().map(|p| p.band_power(0.0, LOW_BAND_HZ)).collect();
    c.part(
        low[2] < low[0],
        format!(
            "power below {:.0} kHz: {A2D} {:.3e} V^2 < {NA1D} {:.3e} V^2 ({A1D} {:.3e} V^2)",
            LOW_BAND_HZ / 1e3,
            low[2],
            low[0],
            low[1]
        ),
    );
    Ok(c)
}

/// Saturation of the projected apex estimate and recovery after the true
/// apex returns inside the bound.
pub fn constraint(scn: &Scenario, trace: &Trace) -> Result<Check, CliError> {
    let mut c = Check::new(6, "constraint robustness");
    let ControllerSpec::Lqg { apex_max_v, .. } = &scn.controller else {
        return Err(CliError::Invalid("constraint check needs an LQG scenario".into()));
    };
    let apex_max = apex_max_v / scn.detection.c_v_per_m[0][0];
    let rec = &trace.record;
    c.part(rec.status == RunStatus::Completed, format!("{} run {}", trace.variant, rec.status.name()));

    let est = rec.col(Column::EstApex);
    let peak = est.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let within = peak <= apex_max * (1.0 + 1e-12);
    let reached = peak >= apex_max * (1.0 - 1e-9);
    c.part(
        within && reached,
        format!("max |apex estimate| = {:.3} nm, bound {:.3} nm", peak * 1e9, apex_max * 1e9),
    );

    let t = rec.col(Column::T);
    let apex = rec.col(Column::Apex);
    let true_peak = apex.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let Some(last_out) = apex.iter().rposition(|a| a.abs() > apex_max) else {
        c.part(false, format!("true apex never leaves the bound (peak {:.1} nm)", true_peak * 1e9));
        return Ok(c);
    };
    let t_re = t[last_out];
    c.part(
        last_out + 1 < t.len(),
        format!("true apex peaks at {:.1} nm and re-enters at {:.2} ms", true_peak * 1e9, t_re * 1e3),
    );
    let rep = &reports(scn, std::slice::from_ref(trace))?[0];
    let t_avg = rep.config.t_avg;
    let after: Vec<_> = rep.windows.iter().filter(|w| w.t_start + t_avg > t_re).collect();
    // First window from which zero-mean force holds for the rest of the run.
    let from = after.iter().rposition(|w| !w.zero_mean_force).map_or(0, |i| i + 1);
    match after.get(from) {
        Some(w) => {
            let regained = w.t_start + t_avg;
            c.part(
                regained <= t_re + 10e-3,
                format!(
                    "zero-mean force holds from the window ending {:.1} ms after re-entry (<= 10 ms)",
                    (regained - t_re) * 1e3
                ),
            );
        }
        None => c.part(false, "zero-mean force not regained before the end of the run".into()),
    }
    Ok(c)
}

pub fn determinism(a: &[u8], b: &[u8]) -> Check {
    let mut c = Check::new(8, "determinism");
    let first_diff = a.iter().zip(b).position(|(x, y)| x != y);
    c.part(
        a == b && !a.is_empty(),
        match first_diff {
            None if a.len() == b.len() => format!("binary traces identical ({} bytes)", a.len()),
            None => format!("binary traces differ in length ({} vs {})", a.len(), b.len()),
            Some(i) => format!("binary traces differ at byte {i}"),
        },
    );
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_checks_pass_on_the_default_potential() {
        let pot = Scenario::bundled("default").unwrap().calibrated_potential().unwrap();
        assert!(apex_geometry(&pot).pass(), "{}", apex_geometry(&pot));
        assert!(quadratic_approximation(&pot).pass());
    }

    #[test]
    fn display_marks_failures() {
        let mut c = Check::new(9, "demo");
        c.part(true, "fine".into());
        c.part(false, "broken".into());
        let s = c.to_string();
        assert!(s.starts_with("FAIL criterion 9: demo\n"));
        assert!(s.contains("[ok] fine") && s.contains("[FAIL] broken"));
        assert!(!Check::new(1, "empty").pass());
    }

    #[test]
    fn determinism_reports_first_difference() {
        assert!(determinism(b"abc", b"abc").pass());
        let c = determinism(b"abc", b"abd");
        assert!(!c.pass() && c.parts[0].text.contains("byte 2"));
    }
}
