//! Langevin dynamics of the particle, detection, drift, and the sampled loop.
//!
//! The deterministic part of `m q̈ + γ q̇ + ∂U/∂q = c_f u` is advanced with a
//! classical RK4 step; the thermal force enters as an additive velocity
//! increment of variance `2γk_BT dt / m²` per axis.

use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::consts::{sphere_mass, BOLTZMANN, PARTICLE_DIAMETER, ROOM_TEMPERATURE, SILICA_DENSITY};
use crate::potential::{optical_force, PotentialParams};

pub mod closed_loop;
pub mod drift;

pub use closed_loop::{
    run_closed_loop, ApexTracker, BiasController, Column, Controller, DelayLine, LoopConfig, RunRecord,
    RunStatus, ToneDriver, ZeroController,
};
pub use drift::{DriftModel, DriftProcess, DriftSample, Knot};

#[derive(Debug, Clone, PartialEq)]
pub enum DynamicsError {
    InvalidParameter(&'static str),
    /// The integrator produced a non-finite state.
    NonFinite,
    /// A replay drift was sampled outside its recorded range.
    ReplayOutOfRange { t: f64 },
}

impl fmt::Display for DynamicsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidParameter(m) => write!(f, "invalid parameter: {m}"),
            Self::NonFinite => f.write_str("non-finite particle state"),
            Self::ReplayOutOfRange { t } => write!(f, "drift replay has no data at t = {t} s"),
        }
    }
}

impl core::error::Error for DynamicsError {}

/// Mechanical parameters of the particle.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParticleParams {
    /// Mass (kg).
    pub mass: f64,
    /// Momentum damping γ (kg/s).
    pub gamma: f64,
    /// Bath temperature (K).
    pub temperature: f64,
    /// Force per electrode volt `(c_fx, c_fy, c_fz)` (N/V).
    pub cf: [f64; 3],
}

impl ParticleParams {
    pub fn from_damping_rate(mass: f64, damping_rate: f64, temperature: f64, cf: [f64; 3]) -> Self {
        Self { mass, gamma: damping_rate * mass, temperature, cf }
    }

    /// Γ = γ/m (1/s).
    pub fn damping_rate(&self) -> f64 {
        self.gamma / self.mass
    }

    /// Standard deviation of the per-axis velocity kick over `dt`.
    pub fn thermal_kick_std(&self, dt: f64) -> f64 {
        (2.0 * self.gamma * BOLTZMANN * self.temperature * dt).sqrt() / self.mass
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(DynamicsError::InvalidParameter("mass must be > 0"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(DynamicsError::InvalidParameter("gamma must be >= 0"));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(DynamicsError::InvalidParameter("temperature must be >= 0"));
        }
        if self.cf.iter().any(|c| !c.is_finite()) {
            return Err(DynamicsError::InvalidParameter("force coefficients must be finite"));
        }
        Ok(())
    }
}

impl Default for ParticleParams {
    /// 210 nm silica sphere at room temperature, Γ/2π = 660 Hz.
    fn default() -> Self {
        Self::from_damping_rate(
            sphere_mass(SILICA_DENSITY, PARTICLE_DIAMETER),
            2.0 * core::f64::consts::PI * 660.0,
            ROOM_TEMPERATURE,
            [-5.1e-13, 0.0, 1.4e-13],
        )
    }
}

/// Detection model: linear crosstalk matrix with a flat-top gain on the x row.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DetectionConfig {
    /// `[[c_xx, c_xy, c_xz], [c_zx, c_zy, c_zz]]` (V/m).
    pub c: [[f64; 3]; 2],
    /// Scale of the x-gain roll-off (m).
    pub x_nl: f64,
    /// Measurement noise intensities (V/√Hz).
    pub sigma_x: f64,
    pub sigma_z: f64,
    /// Bound on `|dΔχ,x/dt|` (V/s).
    pub drift_rate_max: f64,
}

impl DetectionConfig {
    /// `x_nl` such that the gain stays within `tol` of one for `|x| ≤ range`.
    pub fn x_nl_for_flatness(range: f64, tol: f64) -> f64 {
        range / (-(1.0 - tol).ln()).powf(0.25)
    }

    /// Relative x-row gain `exp(-(x/x_nl)⁴)`.
    pub fn gain(&self, x: f64) -> f64 {
        let s = x / self.x_nl;
        let s2 = s * s;
        (-(s2 * s2)).exp()
    }

    /// Noise-free detector output at `q` without drift.
    pub fn response(&self, q: [f64; 3]) -> [f64; 2] {
        let c = &self.c;
        [
            self.gain(q[0]) * (c[0][0] * q[0] + c[0][1] * q[1] + c[0][2] * q[2]),
            c[1][0] * q[0] + c[1][1] * q[1] + c[1][2] * q[2],
        ]
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let c = &self.c;
        if c.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DynamicsError::InvalidParameter("detection matrix must be finite"));
        }
        if !(c[0][0].abs() > c[0][1].abs() && c[0][0].abs() > c[0][2].abs()) {
            return Err(DynamicsError::InvalidParameter("c_xx must dominate the x row"));
        }
        if !(c[1][2].abs() > c[1][0].abs() && c[1][2].abs() > c[1][1].abs()) {
            return Err(DynamicsError::InvalidParameter("c_zz must dominate the z row"));
        }
        if !(self.x_nl > 0.0) {
            return Err(DynamicsError::InvalidParameter("x_nl must be > 0"));
        }
        if !(self.sigma_x > 0.0 && self.sigma_z > 0.0 && self.sigma_x.is_finite() && self.sigma_z.is_finite()) {
            return Err(DynamicsError::InvalidParameter("measurement noise must be > 0"));
        }
        if !(self.drift_rate_max >= 0.0) {
            return Err(DynamicsError::InvalidParameter("drift_rate_max must be >= 0"));
        }
        Ok(())
    }
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            c: [[2.7e6, 0.0, 7.7e4], [0.0, 0.0, 1.1e6]],
            x_nl: Self::x_nl_for_flatness(200e-9, 0.01),
            sigma_x: 2e-5,
            sigma_z: 2e-5,
            drift_rate_max: 1e-4,
        }
    }
}

/// Position, velocity and time of the particle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParticleState {
    pub q: [f64; 3],
    pub v: [f64; 3],
    pub t: f64,
}

impl ParticleState {
    pub fn at(q: [f64; 3]) -> Self {
        Self { q, v: [0.0; 3], t: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.v.iter()).all(|v| v.is_finite()) && self.t.is_finite()
    }
}

/// Independent random streams of one run.
#[derive(Debug, Clone)]
pub struct Streams {
    pub thermal: [ChaCha8Rng; 3],
    pub measurement: [ChaCha8Rng; 2],
    pub drift: ChaCha8Rng,
}

impl Streams {
    /// Stream ids: thermal x/y/z = 0..3, measurement x/z = 3..5, drift = 5.
    pub fn new(seed: u64) -> Self {
        let mk = |id: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(id);
            r
        };
        Self { thermal: [mk(0), mk(1), mk(2)], measurement: [mk(3), mk(4)], drift: mk(5) }
    }
}

/// One integrator step with acceleration field `accel(q)` (excluding damping),
/// damping rate `damping` and velocity kick `dv`.
pub fn step_with(
    state: &ParticleState,
    dt: f64,
    damping: f64,
    accel: impl Fn([f64; 3]) -> [f64; 3],
    dv: [f64; 3],
) -> Result<ParticleState, DynamicsError> {
    let f = |q: [f64; 3], v: [f64; 3]| {
        let a = accel(q);
        (v, core::array::from_fn(|i| a[i] - damping * v[i]))
    };
    let add = |x: [f64; 3], d: [f64; 3], h: f64| -> [f64; 3] { core::array::from_fn(|i| x[i] + h * d[i]) };
    let (q0, v0) = (state.q, state.v);
    let (k1q, k1v) = f(q0, v0);
    let (k2q, k2v) = f(add(q0, k1q, 0.5 * dt), add(v0, k1v, 0.5 * dt));
    let (k3q, k3v) = f(add(q0, k2q, 0.5 * dt), add(v0, k2v, 0.5 * dt));
    let (k4q, k4v) = f(add(q0, k3q, dt), add(v0, k3v, dt));
    let h6 = dt / 6.0;
    let next = ParticleState {
        q: core::array::from_fn(|i| q0[i] + h6 * (k1q[i] + 2.0 * k2q[i] + 2.0 * k3q[i] + k4q[i])),
        v: core::array::from_fn(|i| v0[i] + h6 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]) + dv[i]),
        t: state.t + dt,
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(DynamicsError::NonFinite)
    }
}

/// Advances the particle by `dt` under the optical potential, the electrode
/// force `c_f u` and thermal noise drawn from `rngs` (one per axis).
pub fn step<R: Rng>(
    state: &ParticleState,
    u: f64,
    p: &PotentialParams,
    pp: &ParticleParams,
    dt: f64,
    rngs: &mut [R; 3],
) -> Result<ParticleState, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::InvalidParameter("dt must be > 0"));
    }
    if !state.is_finite() || !u.is_finite() {
        return Err(DynamicsError::NonFinite);
    }
    let s = pp.thermal_kick_std(dt);
    let dv: [f64; 3] = core::array::from_fn(|i| {
        if s > 0.0 {
            s * rngs[i].sample::<f64, _>(StandardNormal)
        } else {
            0.0
        }
    });
    let inv_m = 1.0 / pp.mass;
    let ext: [f64; 3] = core::array::from_fn(|i| pp.cf[i] * u);
    step_with(
        state,
        dt,
        pp.damping_rate(),
        |q| {
            let fo = optical_force(q, p);
            core::array::from_fn(|i| (fo[i] + ext[i]) * inv_m)
        },
        dv,
    )
}

/// Detector output for `state` with reference offset `chi_drift` on χ_x and
/// white noise of intensity `sigma` sampled at `dt_sample`.
pub fn measure<R: Rng>(
    state: &ParticleState,
    det: &DetectionConfig,
    chi_drift: f64,
    rngs: &mut [R; 2],
    dt_sample: f64,
) -> [f64; 2] {
    let h = det.response(state.q);
    let k = 1.0 / dt_sample.sqrt();
    let nx: f64 = rngs[0].sample(StandardNormal);
    let nz: f64 = rngs[1].sample(StandardNormal);
    [h[0] + chi_drift + det.sigma_x * k * nx, h[1] + det.sigma_z * k * nz]
}

/// Highest small-oscillation frequency (Hz) of the potential at `q`, over the three axes.
pub fn max_mechanical_frequency(q: [f64; 3], p: &PotentialParams, mass: f64) -> f64 {
    (0..3)
        .map(|a| crate::potential::axis_stiffness(q, p, a).abs())
        .fold(0.0, f64::max)
        .sqrt()
        / mass.sqrt()
        / (2.0 * core::f64::consts::PI)
}
