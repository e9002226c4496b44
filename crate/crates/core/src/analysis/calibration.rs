//! Force-per-volt calibration from sine drives in a harmonic trap.

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{Complex, Matrix2, Vector2};
#[allow(unused_imports)]
use num_traits::Float;

use super::AnalysisError;
use crate::dynamics::{Column, RunRecord};

type C64 = Complex<f64>;

/// Known harmonic response of the x and z axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicAxes {
    pub mass: f64,
    /// Γ (1/s).
    pub gamma: f64,
    pub omega_x: f64,
    pub omega_z: f64,
    /// Detection rows `[[c_xx, c_xz], [c_zx, c_zz]]` (V/m).
    pub c: [[f64; 2]; 2],
}

/// Lock-in result at one drive tone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToneResponse {
    pub freq_hz: f64,
    /// Drive amplitude seen in the recorded `u` (V).
    pub drive_amplitude: f64,
    /// χ amplitudes (V).
    pub chi_amplitude: [f64; 2],
    /// Off-tone lock-in RMS of χ (V).
    pub noise_floor: [f64; 2],
    /// `(c_fx, c_fz)` from this tone (N/V).
    pub cf: [f64; 2],
}

/// Minimum tone-to-floor amplitude ratio.
const SNR_MIN: f64 = 5.0;

fn lock_in(s: &[f64], t: &[f64], w: &[f64], f: f64) -> C64 {
    let wsum: f64 = w.iter().sum();
    let acc: C64 = s
        .iter()
        .zip(t)
        .zip(w)
        .map(|((v, ti), wi)| {
            let a = -2.0 * PI * f * ti;
            C64::new(a.cos(), a.sin()) * (v * wi)
        })
        .sum();
    acc * (2.0 / wsum)
}

/// Recovers `(c_fx, c_fz)` from a run driven by sine tones at `tones_hz`.
///
/// For each tone the complex amplitudes of `u`, χ_x and χ_z are extracted by
/// a Hann-weighted lock-in, the detection matrix is inverted to displacement
/// amplitudes, and the oscillator response `1/(m(Ω² − ω² + iΓω))` is divided
/// out. Results are averaged over tones.
pub fn force_calibration(
    record: &RunRecord,
    tones_hz: &[f64],
    axes: &HarmonicAxes,
) -> Result<([f64; 2], Vec<ToneResponse>), AnalysisError> {
    if tones_hz.is_empty() {
        return Err(AnalysisError::InvalidArgument("no drive tones"));
    }
    let n = record.len();
    if n < 64 {
        return Err(AnalysisError::TooShort { needed: 64, got: n });
    }
    let c = Matrix2::new(axes.c[0][0], axes.c[0][1], axes.c[1][0], axes.c[1][1]);
    let c_inv = c.try_inverse().ok_or(AnalysisError::InvalidArgument("singular detection matrix"))?;
    let t = record.col(Column::T);
    let u = record.col(Column::U);
    let chi = [record.col(Column::ChiX), record.col(Column::ChiZ)];
    let w: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
    let df = record.sample_rate_hz / n as f64;
    let nyquist = 0.5 * record.sample_rate_hz;

    let mut out = Vec::with_capacity(tones_hz.len());
    for &f in tones_hz {
        if !(f > 0.0 && f < nyquist) {
            return Err(AnalysisError::InvalidArgument("tone frequency outside (0, Nyquist)"));
        }
        let a_u = lock_in(u, t, &w, f);
        let a_chi = [lock_in(chi[0], t, &w, f), lock_in(chi[1], t, &w, f)];
        let floor: [f64; 2] = core::array::from_fn(|k| {
            let offs = [-9.0, -7.0, -5.0, -3.0, 3.0, 5.0, 7.0, 9.0];
            let ms = offs
                .iter()
                .map(|o| f + o * df)
                .filter(|g| *g > 0.0 && *g < nyquist)
                .map(|g| lock_in(chi[k], t, &w, g).norm_sqr())
                .collect::<Vec<f64>>();
            (ms.iter().sum::<f64>() / ms.len().max(1) as f64).sqrt()
        });
        let found = a_u.norm_sqr().sqrt() > 0.0 && (0..2).any(|k| a_chi[k].norm_sqr().sqrt() > SNR_MIN * floor[k]);
        if !found {
            return Err(AnalysisError::ToneNotFound { freq_hz: f });
        }
        let q_re = c_inv * Vector2::new(a_chi[0].re, a_chi[1].re);
        let q_im = c_inv * Vector2::new(a_chi[0].im, a_chi[1].im);
        let om = 2.0 * PI * f;
        let cf: [f64; 2] = core::array::from_fn(|k| {
            let omega = if k == 0 { axes.omega_x } else { axes.omega_z };
            let q = C64::new(q_re[k], q_im[k]);
            let inv_h = C64::new(omega * omega - om * om, axes.gamma * om) * axes.mass;
            let ratio = q * inv_h / a_u;
            // Sampling delays rotate the phase slightly; the sign comes from the real part.
            ratio.norm_sqr().sqrt().copysign(ratio.re)
        });
        out.push(ToneResponse {
            freq_hz: f,
            drive_amplitude: a_u.norm_sqr().sqrt(),
            chi_amplitude: [a_chi[0].norm_sqr().sqrt(), a_chi[1].norm_sqr().sqrt()],
            noise_floor: floor,
            cf,
        });
    }
    let k = out.len() as f64;
    let cf = [out.iter().map(|r| r.cf[0]).sum::<f64>() / k, out.iter().map(|r| r.cf[1]).sum::<f64>() / k];
    Ok((cf, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{run_closed_loop, DetectionConfig, DriftModel, LoopConfig, ParticleParams, ToneDriver};
    use crate::potential::{axis_stiffness, CalibrationTargets, PotentialParams};

    const TONES: [f64; 2] = [17e3, 23e3];

    fn drive(amplitude: f64, seed: u64) -> (RunRecord, HarmonicAxes) {
        let full = PotentialParams::calibrate(&CalibrationTargets::default()).unwrap();
        let pot = full.with_powers(full.p00, 0.0);
        let particle = ParticleParams::default();
        let det = DetectionConfig::default();
        let cfg = LoopConfig { duration_s: 20e-3, seed, ..Default::default() };
        let tones = TONES.iter().map(|f| (amplitude, *f)).collect();
        let mut ctrl = ToneDriver::new(tones, cfg.controller_dt_s);
        let rec = run_closed_loop(&pot, &particle, &det, &DriftModel::default(), &cfg, &mut ctrl).unwrap();
        let m = particle.mass;
        let axes = HarmonicAxes {
            mass: m,
            gamma: particle.damping_rate(),
            omega_x: (axis_stiffness([0.0; 3], &pot, 0) / m).sqrt(),
            omega_z: (axis_stiffness([0.0; 3], &pot, 2) / m).sqrt(),
            c: [[det.c[0][0], det.c[0][2]], [det.c[1][0], det.c[1][2]]],
        };
        (rec, axes)
    }

    #[test]
    fn recovers_force_coefficients() {
        let (rec, axes) = drive(0.5, 3);
        let (cf, per_tone) = force_calibration(&rec, &TONES, &axes).unwrap();
        assert_eq!(per_tone.len(), 2);
        let truth = ParticleParams::default().cf;
        assert!((cf[0] / truth[0] - 1.0).abs() < 0.05, "c_fx {}", cf[0]);
        assert!((cf[1] / truth[2] - 1.0).abs() < 0.05, "c_fz {}", cf[1]);
        for r in &per_tone {
            assert!((r.drive_amplitude - 0.5).abs() < 0.01);
            assert!(r.chi_amplitude[0] > SNR_MIN * r.noise_floor[0]);
        }
    }

    #[test]
    fn linear_in_drive_amplitude() {
        let (rec1, axes) = drive(0.5, 4);
        let (rec2, _) = drive(1.0, 4);
        let (a, _) = force_calibration(&rec1, &TONES, &axes).unwrap();
        let (b, _) = force_calibration(&rec2, &TONES, &axes).unwrap();
        assert!((b[0] / a[0] - 1.0).abs() < 0.02);
    }

    #[test]
    fn zero_drive_is_not_found() {
        let (rec, axes) = drive(0.0, 5);
        assert_eq!(force_calibration(&rec, &TONES, &axes), Err(AnalysisError::ToneNotFound { freq_hz: TONES[0] }));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (rec, axes) = drive(0.5, 6);
        assert!(matches!(force_calibration(&rec, &[], &axes), Err(AnalysisError::InvalidArgument(_))));
        assert!(matches!(force_calibration(&rec, &[3e6], &axes), Err(AnalysisError::InvalidArgument(_))));
        let singular = HarmonicAxes { c: [[1.0, 1.0], [1.0, 1.0]], ..axes };
        assert!(force_calibration(&rec, &TONES, &singular).is_err());
    }
}
