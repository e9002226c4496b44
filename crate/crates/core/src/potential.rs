//! Optical potential of a TEM00 + TEM01 beam pair.
//!
//! The TEM00 beam is a single Gaussian lobe. The TEM01 beam has a node along its
//! own axis. With both depths negative (attractive), the sum forms a double well
//! along `x`. Its central local maximum, the apex, is the point the controller
//! has to hold.
//!
//! Depths are stored as energies: `alpha_scale` is the on-axis TEM00 potential,
//! and `beta_scale` multiplies the TEM01 shape normalized so that the 1-D
//! reduction along `x` reads
//!
//! ```text
//! U_x(x) = α exp(-2 (x-Δ0)²/w0²) + β ((x-Δ1)/w0)² exp(-2 (x-Δ1)²/w0²)
//! ```

use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::consts::hz_to_rad;

/// Geometry and depth of the two-beam optical potential.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PotentialParams {
    /// TEM00 power (W).
    pub p00: f64,
    /// TEM01 power (W).
    pub p01: f64,
    /// TEM00 transverse offset along x (m).
    pub delta0: f64,
    /// TEM01 transverse offset along x (m).
    pub delta1: f64,
    pub w00x: f64,
    pub w00y: f64,
    pub w01x: f64,
    pub w01y: f64,
    /// TEM00 Rayleigh length (m).
    pub z00: f64,
    /// TEM01 Rayleigh length (m).
    pub z01: f64,
    /// TEM00 depth at `p00` (J), negative for an attractive beam.
    pub alpha_scale: f64,
    /// TEM01 depth coefficient at `p01` (J), negative for an attractive beam.
    pub beta_scale: f64,
    /// Common waist used by the 1-D reduction (m).
    pub w0: f64,
}

/// Location and curvature of the central maximum of `U_x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApexInfo {
    pub delta_apex: f64,
    /// `d²U_x/dx²` at the apex (N/m); negative when `valid`.
    pub k_apex: f64,
    pub valid: bool,
}

/// Minima flanking the apex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellInfo {
    pub x_left: f64,
    pub x_right: f64,
    /// Small-oscillation angular frequency of the deeper well (rad/s).
    pub omega_well: f64,
    pub omega_left: f64,
    pub omega_right: f64,
    /// Height of the lower of the two barriers seen from the wells (J).
    pub barrier: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialError {
    InvalidParameter(&'static str),
    NotDoubleWell,
    CalibrationFailed(&'static str),
}

impl fmt::Display for PotentialError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidParameter(what) => write!(f, "invalid potential parameter: {what}"),
            Self::NotDoubleWell => f.write_str("not a double well: no two minima bracket the apex"),
            Self::CalibrationFailed(why) => write!(f, "potential calibration failed: {why}"),
        }
    }
}

impl core::error::Error for PotentialError {}

impl PotentialParams {
    pub fn validate(&self) -> Result<(), PotentialError> {
        let lengths = [
            (self.w00x, "w00x must be > 0"),
            (self.w00y, "w00y must be > 0"),
            (self.w01x, "w01x must be > 0"),
            (self.w01y, "w01y must be > 0"),
            (self.z00, "z00 must be > 0"),
            (self.z01, "z01 must be > 0"),
            (self.w0, "w0 must be > 0"),
        ];
        for (v, msg) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return Err(PotentialError::InvalidParameter(msg));
            }
        }
        if !(self.p00.is_finite() && self.p00 >= 0.0) {
            return Err(PotentialError::InvalidParameter("p00 must be >= 0"));
        }
        if !(self.p01.is_finite() && self.p01 >= 0.0) {
            return Err(PotentialError::InvalidParameter("p01 must be >= 0"));
        }
        for (v, msg) in [
            (self.delta0, "delta0 must be finite"),
            (self.delta1, "delta1 must be finite"),
            (self.alpha_scale, "alpha_scale must be finite"),
            (self.beta_scale, "beta_scale must be finite"),
        ] {
            if !v.is_finite() {
                return Err(PotentialError::InvalidParameter(msg));
            }
        }
        Ok(())
    }

    /// Both depths attractive and the aligned center curved downward.
    pub fn is_double_well(&self) -> bool {
        self.alpha_scale < 0.0 && self.beta_scale < 0.0 && self.beta_scale < 2.0 * self.alpha_scale
    }

    /// Copy with new beam offsets.
    pub fn with_offsets(&self, delta0: f64, delta1: f64) -> Self {
        Self { delta0, delta1, ..*self }
    }

    /// Copy at new beam powers. Depths scale linearly with power; a beam whose
    /// reference power is zero keeps its depth.
    pub fn with_powers(&self, p00: f64, p01: f64) -> Self {
        let mut out = *self;
        if self.p00 > 0.0 {
            out.alpha_scale = self.alpha_scale * p00 / self.p00;
        }
        if self.p01 > 0.0 {
            out.beta_scale = self.beta_scale * p01 / self.p01;
        }
        out.p00 = p00;
        out.p01 = p01;
        out
    }

    /// Peak TEM00 intensity at the focus (W/m²).
    pub fn i00_peak(&self) -> f64 {
        2.0 * self.p00 / (core::f64::consts::PI * self.w00x * self.w00y)
    }

    /// TEM01 intensity scale (W/m²) such that `I01 = I01_0 · 8 (x/w)² exp(...)`.
    pub fn i01_scale(&self) -> f64 {
        self.p01 / (core::f64::consts::PI * self.w01x * self.w01y)
    }
}

/// Normalized beam shapes and their gradients at one point.
struct BeamTerms {
    t00: f64,
    t01: f64,
    g00: [f64; 3],
    g01: [f64; 3],
}

// t00 = F e^{-2Fρ}, F = zR²/(z²+zR²) so that w(z)² = w(0)²/F.
// t01 = F² a e^{-2Fρ}, a = (x-Δ1)²/w01x².
fn beam_terms(q: [f64; 3], p: &PotentialParams) -> BeamTerms {
    let [x, y, z] = q;

    let f0 = p.z00 * p.z00 / (z * z + p.z00 * p.z00);
    let dx0 = x - p.delta0;
    let rho0 = y * y / (p.w00y * p.w00y) + dx0 * dx0 / (p.w00x * p.w00x);
    let t00 = f0 * (-2.0 * f0 * rho0).exp();
    let g00 = [
        t00 * (-4.0 * f0 * dx0 / (p.w00x * p.w00x)),
        t00 * (-4.0 * f0 * y / (p.w00y * p.w00y)),
        t00 * (-2.0 * z * f0 / (p.z00 * p.z00)) * (1.0 - 2.0 * rho0 * f0),
    ];

    let f1 = p.z01 * p.z01 / (z * z + p.z01 * p.z01);
    let dx1 = x - p.delta1;
    let a = dx1 * dx1 / (p.w01x * p.w01x);
    let rho1 = y * y / (p.w01y * p.w01y) + a;
    let e1 = (-2.0 * f1 * rho1).exp();
    let t01 = f1 * f1 * a * e1;
    let g01 = [
        f1 * f1 * e1 * 2.0 * dx1 / (p.w01x * p.w01x) * (1.0 - 2.0 * f1 * a),
        t01 * (-4.0 * f1 * y / (p.w01y * p.w01y)),
        t01 * (-4.0 * z * f1 / (p.z01 * p.z01)) * (1.0 - f1 * rho1),
    ];

    BeamTerms { t00, t01, g00, g01 }
}

/// Intensities `(I00, I01)` of both beams at `q` (W/m²).
pub fn intensity_profile(q: [f64; 3], p: &PotentialParams) -> (f64, f64) {
    let t = beam_terms(q, p);
    (p.i00_peak() * t.t00, p.i01_scale() * 8.0 * t.t01)
}

/// Optical potential energy at `q` (J).
pub fn potential_energy(q: [f64; 3], p: &PotentialParams) -> f64 {
    let t = beam_terms(q, p);
    p.alpha_scale * t.t00 + p.beta_scale * t.t01
}

/// Conservative optical force `-∇U` at `q` (N).
pub fn optical_force(q: [f64; 3], p: &PotentialParams) -> [f64; 3] {
    let t = beam_terms(q, p);
    core::array::from_fn(|i| -(p.alpha_scale * t.g00[i] + p.beta_scale * t.g01[i]))
}

/// 1-D double-well potential along x with the common waist `w0`.
pub fn double_well_1d(x: f64, p: &PotentialParams) -> f64 {
    let s = (x - p.delta0) / p.w0;
    let t = (x - p.delta1) / p.w0;
    p.alpha_scale * (-2.0 * s * s).exp() + p.beta_scale * t * t * (-2.0 * t * t).exp()
}

/// `dU_x/dx` (N).
pub fn double_well_1d_d1(x: f64, p: &PotentialParams) -> f64 {
    let s = (x - p.delta0) / p.w0;
    let t = (x - p.delta1) / p.w0;
    (p.alpha_scale * (-2.0 * s * s).exp() * (-4.0 * s)
        + p.beta_scale * (-2.0 * t * t).exp() * (2.0 * t - 4.0 * t * t * t))
        / p.w0
}

/// `d²U_x/dx²` (N/m).
pub fn double_well_1d_d2(x: f64, p: &PotentialParams) -> f64 {
    let s = (x - p.delta0) / p.w0;
    let t = (x - p.delta1) / p.w0;
    let t2 = t * t;
    (p.alpha_scale * (-2.0 * s * s).exp() * (16.0 * s * s - 4.0)
        + p.beta_scale * (-2.0 * t2).exp() * (2.0 - 20.0 * t2 + 16.0 * t2 * t2))
        / (p.w0 * p.w0)
}

const SCAN_POINTS: usize = 3001;
const SCAN_HALF_WIDTH: f64 = 1.5;
const ROOT_TOL: f64 = 1e-13;

/// Stationary points of `U_x` found as sign changes of the derivative on a grid
/// centered between the two beams.
struct Scan {
    maxima: alloc::vec::Vec<(f64, f64)>,
    minima: alloc::vec::Vec<(f64, f64)>,
}

fn scan(p: &PotentialParams) -> Scan {
    let c = 0.5 * (p.delta0 + p.delta1);
    let lo = c - SCAN_HALF_WIDTH * p.w0;
    let h = 2.0 * SCAN_HALF_WIDTH * p.w0 / (SCAN_POINTS - 1) as f64;
    let mut maxima = alloc::vec::Vec::new();
    let mut minima = alloc::vec::Vec::new();
    let mut x_prev = lo;
    let mut d_prev = double_well_1d_d1(lo, p);
    for i in 1..SCAN_POINTS {
        let x = lo + h * i as f64;
        let d = double_well_1d_d1(x, p);
        if d_prev > 0.0 && d <= 0.0 {
            maxima.push((x_prev, x));
        } else if d_prev < 0.0 && d >= 0.0 {
            minima.push((x_prev, x));
        }
        x_prev = x;
        d_prev = d;
    }
    Scan { maxima, minima }
}

/// Root of `U_x'` inside `[a, b]` where the derivative has sign `sign_a` at `a`.
/// Bisection to [`ROOT_TOL`], then one Newton step kept only if it stays in the bracket.
fn refine_root(mut a: f64, mut b: f64, p: &PotentialParams) -> f64 {
    let sign_a = double_well_1d_d1(a, p).signum();
    while b - a > ROOT_TOL {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let dm = double_well_1d_d1(m, p);
        if dm == 0.0 {
            return m;
        }
        if dm.signum() == sign_a {
            a = m;
        } else {
            b = m;
        }
    }
    let x = 0.5 * (a + b);
    let step = double_well_1d_d1(x, p) / double_well_1d_d2(x, p);
    let polished = x - step;
    let slack = 4.0 * ROOT_TOL;
    if polished.is_finite() && polished >= a - slack && polished <= b + slack {
        polished
    } else {
        x
    }
}

/// Locates the apex of `U_x` and its curvature.
///
/// Returns `valid = false` when no maximum is flanked by minima, which happens
/// once a misaligned maximum annihilates with one of the wells.
pub fn find_apex(p: &PotentialParams) -> ApexInfo {
    let c = 0.5 * (p.delta0 + p.delta1);
    let s = scan(p);
    let mut best: Option<(f64, f64)> = None;
    for &(a, b) in &s.maxima {
        let has_left = s.minima.iter().any(|&(_, mb)| mb <= a);
        let has_right = s.minima.iter().any(|&(ma, _)| ma >= b);
        if !(has_left && has_right) {
            continue;
        }
        let dist = (0.5 * (a + b) - c).abs();
        if best.is_none_or(|(ba, bb)| dist < (0.5 * (ba + bb) - c).abs()) {
            best = Some((a, b));
        }
    }
    match best {
        Some((a, b)) => {
            let x = refine_root(a, b, p);
            let k = double_well_1d_d2(x, p);
            ApexInfo { delta_apex: x, k_apex: k, valid: k < 0.0 }
        }
        None => ApexInfo { delta_apex: c, k_apex: double_well_1d_d2(c, p), valid: false },
    }
}

fn well_positions(p: &PotentialParams) -> Result<(ApexInfo, f64, f64), PotentialError> {
    let apex = find_apex(p);
    if !apex.valid {
        return Err(PotentialError::NotDoubleWell);
    }
    let s = scan(p);
    let left = s
        .minima
        .iter()
        .filter(|&&(_, b)| b <= apex.delta_apex)
        .max_by(|l, r| l.1.total_cmp(&r.1));
    let right = s
        .minima
        .iter()
        .filter(|&&(a, _)| a >= apex.delta_apex)
        .min_by(|l, r| l.0.total_cmp(&r.0));
    match (left, right) {
        (Some(&(la, lb)), Some(&(ra, rb))) => {
            Ok((apex, refine_root(la, lb, p), refine_root(ra, rb, p)))
        }
        _ => Err(PotentialError::NotDoubleWell),
    }
}

/// Well minima, their resonance frequencies for a particle of mass `mass`, and
/// the barrier height.
pub fn well_characteristics(p: &PotentialParams, mass: f64) -> Result<WellInfo, PotentialError> {
    if !(mass > 0.0) {
        return Err(PotentialError::InvalidParameter("mass must be > 0"));
    }
    let (apex, xl, xr) = well_positions(p)?;
    let ul = double_well_1d(xl, p);
    let ur = double_well_1d(xr, p);
    let kl = double_well_1d_d2(xl, p);
    let kr = double_well_1d_d2(xr, p);
    if !(kl > 0.0 && kr > 0.0) {
        return Err(PotentialError::NotDoubleWell);
    }
    let omega_left = (kl / mass).sqrt();
    let omega_right = (kr / mass).sqrt();
    let omega_well = if ul <= ur { omega_left } else { omega_right };
    Ok(WellInfo {
        x_left: xl,
        x_right: xr,
        omega_well,
        omega_left,
        omega_right,
        barrier: double_well_1d(apex.delta_apex, p) - ul.max(ur),
    })
}

/// Largest deviation of the harmonic apex approximation from `U_x` within
/// `half_range` of the apex, relative to the barrier height.
pub fn quadratic_fit_error(p: &PotentialParams, half_range: f64) -> Result<f64, PotentialError> {
    const N: usize = 2001;
    let (apex, xl, xr) = well_positions(p)?;
    let u0 = double_well_1d(apex.delta_apex, p);
    let barrier = u0 - double_well_1d(xl, p).max(double_well_1d(xr, p));
    if half_range <= 0.0 {
        return Ok(0.0);
    }
    let mut worst = 0.0_f64;
    for i in 0..N {
        let dx = -half_range + 2.0 * half_range * i as f64 / (N - 1) as f64;
        let quad = u0 + 0.5 * apex.k_apex * dx * dx;
        let err = (quad - double_well_1d(apex.delta_apex + dx, p)).abs();
        worst = worst.max(err);
    }
    Ok(worst / barrier)
}

/// Curvature `∂²U/∂q_axis²` at `q` (N/m) by central difference of the analytic force.
pub fn axis_stiffness(q: [f64; 3], p: &PotentialParams, axis: usize) -> f64 {
    let h = 1e-10;
    let mut qp = q;
    let mut qm = q;
    qp[axis] += h;
    qm[axis] -= h;
    -(optical_force(qp, p)[axis] - optical_force(qm, p)[axis]) / (2.0 * h)
}

/// How the 1-D waist `w0` is fixed during calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WaistChoice {
    /// Use the given waist (m).
    Fixed(f64),
    /// Choose the waist so that `|k_apex|` at TEM01 offset `delta1` is `ratio`
    /// times its aligned value.
    StiffnessDrop { delta1: f64, ratio: f64 },
}

/// Frequency anchors for a calibrated parameter set. Frequencies in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTargets {
    pub mass: f64,
    pub f_apex: f64,
    pub f_well: f64,
    pub f_y: f64,
    pub f_z: f64,
    pub p00: f64,
    pub p01: f64,
    pub waist: WaistChoice,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        Self {
            mass: crate::consts::sphere_mass(
                crate::consts::SILICA_DENSITY,
                crate::consts::PARTICLE_DIAMETER,
            ),
            f_apex: 50e3,
            f_well: 65e3,
            f_y: 159e3,
            f_z: 46e3,
            p00: 80e-3,
            p01: 135e-3,
            waist: WaistChoice::StiffnessDrop { delta1: 30e-9, ratio: 0.92 },
        }
    }
}

impl PotentialParams {
    /// Aligned parameter set whose apex and well frequencies, and the y/z
    /// frequencies at the apex, match `targets`.
    ///
    /// The aligned 1-D shape in units of `w0` depends only on `α/β`, which the
    /// frequency ratio fixes in closed form: with `ε = 1 - 2α/β`,
    /// `k_well/|k_apex| = 2 e^{-ε}`, `k_apex = 2εβ/w0²`.
    pub fn calibrate(targets: &CalibrationTargets) -> Result<Self, PotentialError> {
        let t = targets;
        if !(t.mass > 0.0 && t.f_apex > 0.0 && t.f_well > 0.0 && t.f_y > 0.0 && t.f_z > 0.0) {
            return Err(PotentialError::InvalidParameter("calibration targets must be > 0"));
        }
        let r2 = (t.f_well / t.f_apex).powi(2);
        let eps = (2.0 / r2).ln();
        if !(eps > 0.0 && eps < 1.0) {
            return Err(PotentialError::CalibrationFailed(
                "well/apex frequency ratio outside the double-well range (sqrt(2/e), sqrt(2))",
            ));
        }
        let rho = 0.5 * (1.0 - eps);
        let k_apex = t.mass * hz_to_rad(t.f_apex).powi(2);
        let shape = |w0: f64| {
            let beta = -k_apex * w0 * w0 / (2.0 * eps);
            let alpha = rho * beta;
            let k_y = t.mass * hz_to_rad(t.f_y).powi(2);
            let k_z = t.mass * hz_to_rad(t.f_z).powi(2);
            let wy = (4.0 * alpha.abs() / k_y).sqrt();
            let zr = (2.0 * alpha.abs() / k_z).sqrt();
            PotentialParams {
                p00: t.p00,
                p01: t.p01,
                delta0: 0.0,
                delta1: 0.0,
                w00x: w0,
                w00y: wy,
                w01x: w0,
                w01y: wy,
                z00: zr,
                z01: zr,
                alpha_scale: alpha,
                beta_scale: beta,
                w0,
            }
        };
        let w0 = match t.waist {
            WaistChoice::Fixed(w0) => w0,
            WaistChoice::StiffnessDrop { delta1, ratio } => {
                solve_waist(shape, delta1, ratio)?
            }
        };
        if !(w0 > 0.0) {
            return Err(PotentialError::InvalidParameter("w0 must be > 0"));
        }
        let p = shape(w0);
        p.validate()?;
        Ok(p)
    }
}

// The stiffness ratio depends on delta1/w0 only, and decreases with it.
fn solve_waist(
    shape: impl Fn(f64) -> PotentialParams,
    delta1: f64,
    ratio: f64,
) -> Result<f64, PotentialError> {
    if !(ratio > 0.0 && ratio < 1.0 && delta1 != 0.0) {
        return Err(PotentialError::CalibrationFailed("stiffness drop ratio must be in (0, 1)"));
    }
    let w_ref = 1e-6;
    let p_ref = shape(w_ref);
    let k0 = find_apex(&p_ref).k_apex;
    let ratio_at = |u: f64| {
        let a = find_apex(&p_ref.with_offsets(0.0, u * w_ref));
        if a.valid {
            a.k_apex / k0
        } else {
            0.0
        }
    };
    // Beyond ~0.05 the apex has annihilated for any usable ratio.
    let (mut lo, mut hi) = (1e-6, 0.05);
    if ratio_at(lo) < ratio || ratio_at(hi) > ratio {
        return Err(PotentialError::CalibrationFailed("stiffness drop target not bracketed"));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio_at(mid) > ratio {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok(delta1.abs() / (0.5 * (lo + hi)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consts::{sphere_mass, PARTICLE_DIAMETER, SILICA_DENSITY};
    use std::vec::Vec;

    fn mass() -> f64 {
        sphere_mass(SILICA_DENSITY, PARTICLE_DIAMETER)
    }

    fn calibrated() -> PotentialParams {
        PotentialParams::calibrate(&CalibrationTargets::default()).unwrap()
    }

    // Dense grid argmax of U_x between the two grid minima.
    fn grid_apex(p: &PotentialParams, step: f64) -> f64 {
        let c = 0.5 * (p.delta0 + p.delta1);
        let n = (0.2 * p.w0 / step) as i64;
        let mut best = (f64::NEG_INFINITY, c);
        for i in -n..=n {
            let x = c + i as f64 * step;
            let u = double_well_1d(x, p);
            if u > best.0 {
                best = (u, x);
            }
        }
        best.1
    }

    #[test]
    fn node_and_focal_peak() {
        let p = calibrated().with_offsets(20e-9, -15e-9);
        let (_, i01) = intensity_profile([p.delta1, 0.0, 0.0], &p);
        assert_eq!(i01, 0.0);
        let (i00, _) = intensity_profile([p.delta0, 0.0, 0.0], &p);
        assert!((i00 - p.i00_peak()).abs() <= 1e-15 * p.i00_peak());
    }

    #[test]
    fn rayleigh_length_halves_axial_intensity() {
        let p = calibrated();
        let (i00, _) = intensity_profile([0.0, 0.0, p.z00], &p);
        assert!((i00 - 0.5 * p.i00_peak()).abs() <= 1e-14 * p.i00_peak());
    }

    #[test]
    fn tem01_carries_its_power() {
        // Numerical ∫∫ I01 dx dy at the focus equals P01.
        let p = calibrated();
        let n = 600;
        let (hx, hy) = (8.0 * p.w01x / n as f64, 8.0 * p.w01y / n as f64);
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = -4.0 * p.w01x + (i as f64 + 0.5) * hx;
                let y = -4.0 * p.w01y + (j as f64 + 0.5) * hy;
                total += intensity_profile([x, y, 0.0], &p).1 * hx * hy;
            }
        }
        assert!((total - p.p01).abs() < 1e-6 * p.p01, "{total}");
    }

    #[test]
    fn aligned_origin_is_alpha() {
        let p = calibrated();
        assert_eq!(potential_energy([0.0; 3], &p), p.alpha_scale);
        assert_eq!(optical_force([0.0; 3], &p), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn aligned_symmetry() {
        let p = calibrated();
        for i in 0..200 {
            let x = i as f64 * 1.3e-8;
            let q = [x, 2.1e-8, -3.0e-7];
            let qm = [-x, 2.1e-8, -3.0e-7];
            assert_eq!(potential_energy(q, &p), potential_energy(qm, &p));
            assert_eq!(optical_force(q, &p)[0], -optical_force(qm, &p)[0]);
            assert_eq!(double_well_1d(x, &p), double_well_1d(-x, &p));
        }
    }

    #[test]
    fn wells_lie_below_center() {
        let p = calibrated();
        let umin = (0..4001)
            .map(|i| double_well_1d(-2.0 * p.w0 + i as f64 * p.w0 / 1000.0, &p))
            .fold(f64::INFINITY, f64::min);
        assert!(umin < double_well_1d(0.0, &p));
        let w = well_characteristics(&p, mass()).unwrap();
        assert!(potential_energy([w.x_right, 0.0, 0.0], &p) < potential_energy([0.0; 3], &p));
    }

    #[test]
    fn force_matches_finite_difference() {
        use rand::{Rng, SeedableRng};
        let p = calibrated().with_offsets(12e-9, -25e-9);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let h = 1e-12;
        for _ in 0..1000 {
            let q: [f64; 3] =
                core::array::from_fn(|_| rng.random_range(-2.0 * p.w0..2.0 * p.w0));
            let f = optical_force(q, &p);
            let scale = f.iter().map(|v| v.abs()).fold(0.0, f64::max);
            for axis in 0..3 {
                let mut qp = q;
                let mut qm = q;
                qp[axis] += h;
                qm[axis] -= h;
                let fd = -(potential_energy(qp, &p) - potential_energy(qm, &p)) / (2.0 * h);
                assert!(
                    (fd - f[axis]).abs() <= 1e-6 * scale.max(1e-30),
                    "axis {axis} at {q:?}: {fd} vs {}",
                    f[axis]
                );
            }
        }
    }

    #[test]
    fn well_has_no_x_force() {
        let p = calibrated();
        let w = well_characteristics(&p, mass()).unwrap();
        // Grid-scan oracle for the well position.
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..200_001 {
            let x = i as f64 * 1e-11;
            let u = double_well_1d(x, &p);
            if u < best.0 {
                best = (u, x);
            }
        }
        assert!((w.x_right - best.1).abs() < 2e-11);
        let fx = optical_force([w.x_right, 0.0, 0.0], &p)[0];
        let scale = p.alpha_scale.abs() / p.w0;
        assert!(fx.abs() < 1e-12 * scale, "{fx}");
    }

    #[test]
    fn beta_term_vanishes_on_its_axis() {
        let p = calibrated().with_offsets(5e-9, 40e-9);
        let s = (p.delta1 - p.delta0) / p.w0;
        assert_eq!(double_well_1d(p.delta1, &p), p.alpha_scale * (-2.0 * s * s).exp());
    }

    #[test]
    fn reduction_matches_full_potential() {
        let p = calibrated().with_offsets(-10e-9, 25e-9);
        for i in -100..=100 {
            let x = i as f64 * 1.7e-8;
            let a = double_well_1d(x, &p);
            let b = potential_energy([x, 0.0, 0.0], &p);
            assert!((a - b).abs() <= 1e-12 * a.abs(), "{a} {b}");
        }
    }

    #[test]
    fn analytic_derivatives_of_reduction() {
        let p = calibrated().with_offsets(-7e-9, 31e-9);
        for i in -50..=50 {
            let x = i as f64 * 3.1e-8;
            let h = 1e-11;
            let d1 = (double_well_1d(x + h, &p) - double_well_1d(x - h, &p)) / (2.0 * h);
            let d2 = (double_well_1d_d1(x + h, &p) - double_well_1d_d1(x - h, &p)) / (2.0 * h);
            let s1 = p.alpha_scale.abs() / p.w0;
            let s2 = s1 / p.w0;
            assert!((d1 - double_well_1d_d1(x, &p)).abs() < 1e-6 * s1);
            assert!((d2 - double_well_1d_d2(x, &p)).abs() < 1e-6 * s2);
        }
    }

    #[test]
    fn calibration_hits_frequency_anchors() {
        let p = calibrated();
        let m = mass();
        let apex = find_apex(&p);
        assert!(apex.valid);
        assert!(apex.delta_apex.abs() < 1e-20);
        let f = |k: f64| (k.abs() / m).sqrt() / (2.0 * core::f64::consts::PI);
        assert!((f(apex.k_apex) - 50e3).abs() < 1e-6 * 50e3);
        let w = well_characteristics(&p, m).unwrap();
        assert!((w.omega_well / (2.0 * core::f64::consts::PI) - 65e3).abs() < 1e-6 * 65e3);
        assert!((f(axis_stiffness([0.0; 3], &p, 1)) - 159e3).abs() < 1e-4 * 159e3);
        assert!((f(axis_stiffness([0.0; 3], &p, 2)) - 46e3).abs() < 1e-4 * 46e3);
        let k30 = find_apex(&p.with_offsets(0.0, 30e-9)).k_apex;
        assert!((k30 / apex.k_apex - 0.92).abs() < 1e-9);
    }

    #[test]
    fn fixed_waist_calibration_keeps_ratio() {
        let t = CalibrationTargets { waist: WaistChoice::Fixed(0.7e-6), ..Default::default() };
        let p = PotentialParams::calibrate(&t).unwrap();
        assert_eq!(p.w0, 0.7e-6);
        assert!(p.is_double_well());
        let bad = CalibrationTargets { f_well: 80e3, ..t };
        assert!(PotentialParams::calibrate(&bad).is_err());
    }

    #[test]
    fn apex_is_stationary_and_concave() {
        let p = calibrated();
        for d1 in [-30e-9, -11e-9, 0.0, 7e-9, 30e-9, 45e-9] {
            let a = find_apex(&p.with_offsets(3e-9, d1));
            assert!(a.valid);
            assert!(double_well_1d_d1(a.delta_apex, &p.with_offsets(3e-9, d1)).abs() < 1e-24);
            assert!(a.k_apex < 0.0);
        }
    }

    #[test]
    fn apex_matches_grid_argmax() {
        let p = calibrated();
        for i in -6..=6 {
            let q = p.with_offsets(0.0, i as f64 * 5e-9);
            let a = find_apex(&q);
            let g = grid_apex(&q, 1e-11);
            assert!((a.delta_apex - g).abs() < 1e-10, "{} vs {g}", a.delta_apex);
        }
    }

    #[test]
    fn apex_translation_covariance() {
        let p = calibrated().with_offsets(4e-9, 22e-9);
        let a = find_apex(&p);
        for d in [1e-9, -37e-9, 250e-9] {
            let b = find_apex(&p.with_offsets(p.delta0 + d, p.delta1 + d));
            assert!(((b.delta_apex - a.delta_apex) - d).abs() < 1e-12 * (a.delta_apex.abs() + d.abs()));
            assert!((b.k_apex - a.k_apex).abs() < 1e-12 * a.k_apex.abs());
        }
    }

    #[test]
    fn strong_misalignment_invalidates_apex() {
        let p = calibrated();
        let a = find_apex(&p.with_offsets(0.0, 0.15 * p.w0));
        assert!(!a.valid);
        assert_eq!(
            well_characteristics(&p.with_offsets(0.0, 0.15 * p.w0), mass()),
            Err(PotentialError::NotDoubleWell)
        );
    }

    #[test]
    fn apex_shift_is_linear_and_curvature_even() {
        let p = calibrated();
        let mut xs = Vec::new();
        let mut aps = Vec::new();
        let mut ks = Vec::new();
        for i in -30..=30 {
            let d1 = i as f64 * 1e-9;
            let a = find_apex(&p.with_offsets(0.0, d1));
            xs.push(d1);
            aps.push(a.delta_apex);
            ks.push(a.k_apex);
        }
        assert!(r_squared_line(&xs, &aps) > 0.99);
        let x2: Vec<f64> = xs.iter().map(|x| x * x).collect();
        assert!(r_squared_line(&x2, &ks) > 0.99);
    }

    fn r_squared_line(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        sxy * sxy / (sxx * syy)
    }

    #[test]
    fn barrier_reevaluates() {
        let p = calibrated();
        let w = well_characteristics(&p, mass()).unwrap();
        assert!((w.x_left + w.x_right).abs() < 1e-20);
        let a = find_apex(&p);
        let direct = double_well_1d(a.delta_apex, &p) - double_well_1d(w.x_right, &p);
        assert!((w.barrier - direct).abs() < 1e-10 * direct);
    }

    #[test]
    fn quadratic_error_is_small_and_monotone() {
        let p = calibrated();
        assert!(quadratic_fit_error(&p, 1e-12).unwrap() < 1e-12);
        let mut prev = 0.0;
        for i in 1..=20 {
            let e = quadratic_fit_error(&p, i as f64 * 20e-9).unwrap();
            assert!(e >= prev);
            prev = e;
        }
        assert!(quadratic_fit_error(&p, 170e-9).unwrap() <= 0.02);
    }

    #[test]
    fn power_scaling() {
        let p = calibrated();
        let q = p.with_powers(40e-3, 0.0);
        assert_eq!(q.alpha_scale, 0.5 * p.alpha_scale);
        assert_eq!(q.beta_scale, 0.0);
        assert!(!q.is_double_well());
    }

    #[test]
    fn validation_rejects_bad_geometry() {
        let mut p = calibrated();
        p.w00y = 0.0;
        assert!(p.validate().is_err());
        let mut p = calibrated();
        p.p01 = -1.0;
        assert!(p.validate().is_err());
    }
}
