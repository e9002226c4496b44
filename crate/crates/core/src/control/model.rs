//! Linear models around the apex.

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::consts::BOLTZMANN;
use crate::dynamics::{DetectionConfig, ParticleParams};
use crate::potential::{find_apex, PotentialParams};

use super::SynthesisError;

/// Named state coordinates used by the linear models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    X,
    Vx,
    Apex,
    Z,
    Vz,
}

impl StateKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::X => "x",
            Self::Vx => "vx",
            Self::Apex => "apex",
            Self::Z => "z",
            Self::Vz => "vz",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ControllerVariant {
    /// `(x, ẋ)`; assumes the apex sits at the detector origin.
    #[cfg_attr(feature = "serde", serde(rename = "non_adaptive_1d"))]
    NonAdaptive1D,
    /// `(x, ẋ, Δ_apex)`.
    #[cfg_attr(feature = "serde", serde(rename = "adaptive_1d"))]
    Adaptive1D,
    /// `(x, ẋ, Δ_apex, z, ż)` with both detector channels.
    #[cfg_attr(feature = "serde", serde(rename = "adaptive_2d"))]
    Adaptive2D,
}

impl ControllerVariant {
    pub const ALL: [Self; 3] = [Self::NonAdaptive1D, Self::Adaptive1D, Self::Adaptive2D];

    pub fn states(self) -> &'static [StateKind] {
        use StateKind::*;
        match self {
            Self::NonAdaptive1D => &[X, Vx],
            Self::Adaptive1D => &[X, Vx, Apex],
            Self::Adaptive2D => &[X, Vx, Apex, Z, Vz],
        }
    }

    pub fn state_dim(self) -> usize {
        self.states().len()
    }

    pub fn n_outputs(self) -> usize {
        match self {
            Self::Adaptive2D => 2,
            _ => 1,
        }
    }

    pub fn apex_index(self) -> Option<usize> {
        self.states().iter().position(|&s| s == StateKind::Apex)
    }

    pub fn has_z(self) -> bool {
        matches!(self, Self::Adaptive2D)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::NonAdaptive1D => "non_adaptive_1d",
            Self::Adaptive1D => "adaptive_1d",
            Self::Adaptive2D => "adaptive_2d",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

/// Parameters of the linearized plant as the controller believes them.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibratedModel {
    /// Velocity damping rate Γ = γ/m (1/s).
    pub gamma: f64,
    /// Apex curvature over mass (s⁻²); negative.
    pub k_apex_over_m: f64,
    /// z resonance (rad/s).
    pub omega_z: f64,
    /// `(c_fx/m, c_fz/m)` (N/(V·kg)).
    pub cf_over_m: [f64; 2],
    /// `[[c_xx, c_xz], [c_zx, c_zz]]` (V/m).
    pub c: [[f64; 2]; 2],
    pub mass: f64,
    /// Thermal force noise intensity 2γk_BT (N²/Hz).
    pub thermal_force_psd: f64,
    /// Intensity of the apex random walk (m²/s).
    pub sigma_apex_walk: f64,
    /// Measurement noise intensities `(σ_x², σ_z²)` (V²/Hz).
    pub r: [f64; 2],
}

impl CalibratedModel {
    /// Model consistent with the simulated physics at the aligned apex.
    pub fn from_physics(
        pot: &PotentialParams,
        particle: &ParticleParams,
        det: &DetectionConfig,
        sigma_apex_walk: f64,
    ) -> Result<Self, SynthesisError> {
        let apex = find_apex(pot);
        if !apex.valid {
            return Err(SynthesisError::InvalidModel("potential has no apex"));
        }
        let q = [apex.delta_apex, 0.0, 0.0];
        let kz = crate::potential::axis_stiffness(q, pot, 2);
        if !(kz > 0.0) {
            return Err(SynthesisError::InvalidModel("z is not confined at the apex"));
        }
        let m = particle.mass;
        let model = Self {
            gamma: particle.damping_rate(),
            k_apex_over_m: apex.k_apex / m,
            omega_z: (kz / m).sqrt(),
            cf_over_m: [particle.cf[0] / m, particle.cf[2] / m],
            c: [[det.c[0][0], det.c[0][2]], [det.c[1][0], det.c[1][2]]],
            mass: m,
            thermal_force_psd: 2.0 * particle.gamma * BOLTZMANN * particle.temperature,
            sigma_apex_walk,
            r: [det.sigma_x * det.sigma_x, det.sigma_z * det.sigma_z],
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), SynthesisError> {
        let ok = self.gamma.is_finite()
            && self.gamma >= 0.0
            && self.k_apex_over_m.is_finite()
            && self.omega_z > 0.0
            && self.mass > 0.0
            && self.thermal_force_psd > 0.0
            && self.sigma_apex_walk >= 0.0
            && self.r[0] > 0.0
            && self.r[1] > 0.0
            && self.cf_over_m.iter().all(|v| v.is_finite())
            && self.c.iter().flatten().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(SynthesisError::InvalidModel("calibrated model has non-physical entries"))
        }
    }

    /// `sqrt(|k_apex|/m)` (rad/s).
    pub fn omega_x(&self) -> f64 {
        self.k_apex_over_m.abs().sqrt()
    }

    /// Acceleration noise intensity (m²/s³).
    pub fn accel_noise(&self) -> f64 {
        self.thermal_force_psd / (self.mass * self.mass)
    }
}

/// Control-error dynamics `ξ_e = (x − Δ_apex, ẋ[, z, ż])`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub omega_x: f64,
    pub omega_z: f64,
}

impl ErrorModel {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Estimator model on the augmented state of a controller variant.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedModel {
    pub variant: ControllerVariant,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub g: DMatrix<f64>,
    /// Process noise intensities, one per column of `g`.
    pub w: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl AugmentedModel {
    /// `G W Gᵀ`.
    pub fn process_noise(&self) -> DMatrix<f64> {
        &self.g * &self.w * self.g.transpose()
    }
}

fn x_block(cal: &CalibratedModel) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -cal.k_apex_over_m, -cal.gamma])
}

fn z_block(cal: &CalibratedModel) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -cal.omega_z * cal.omega_z, -cal.gamma])
}

/// Full 4-state error model `(x − Δ, ẋ, z, ż)`.
pub fn build_error_model(cal: &CalibratedModel) -> ErrorModel {
    let a = crate::linalg::block_diag(&[&x_block(cal), &z_block(cal)]);
    let b = DMatrix::from_column_slice(4, 1, &[0.0, cal.cf_over_m[0], 0.0, cal.cf_over_m[1]]);
    let mut g = DMatrix::zeros(4, 2);
    g[(1, 0)] = 1.0;
    g[(3, 1)] = 1.0;
    let w = DMatrix::from_diagonal(&DVector::from_element(2, cal.accel_noise()));
    ErrorModel { a, b, g, w, omega_x: cal.omega_x(), omega_z: cal.omega_z }
}

/// Error model restricted to the x subsystem `(x − Δ, ẋ)`.
pub fn build_error_model_x(cal: &CalibratedModel) -> ErrorModel {
    let b = DMatrix::from_column_slice(2, 1, &[0.0, cal.cf_over_m[0]]);
    let g = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    let w = DMatrix::from_element(1, 1, cal.accel_noise());
    ErrorModel { a: x_block(cal), b, g, w, omega_x: cal.omega_x(), omega_z: cal.omega_z }
}

/// Error model matching the feedback structure of `variant`.
pub fn error_model_for(cal: &CalibratedModel, variant: ControllerVariant) -> ErrorModel {
    if variant.has_z() {
        build_error_model(cal)
    } else {
        build_error_model_x(cal)
    }
}

/// Augmented estimator model. The apex follows a random walk and enters the
/// x equation as `ẍ = −(k/m)(x − Δ) − Γẋ + (c_fx/m)u`.
pub fn build_augmented_model(cal: &CalibratedModel, variant: ControllerVariant) -> AugmentedModel {
    let states = variant.states();
    let n = states.len();
    let idx = |k: StateKind| states.iter().position(|&s| s == k);
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, 1);
    let ix = idx(StateKind::X).unwrap_or(0);
    let ivx = idx(StateKind::Vx).unwrap_or(1);
    a[(ix, ivx)] = 1.0;
    a[(ivx, ix)] = -cal.k_apex_over_m;
    a[(ivx, ivx)] = -cal.gamma;
    b[(ivx, 0)] = cal.cf_over_m[0];
    if let Some(ia) = idx(StateKind::Apex) {
        a[(ivx, ia)] = cal.k_apex_over_m;
    }
    if let (Some(iz), Some(ivz)) = (idx(StateKind::Z), idx(StateKind::Vz)) {
        a[(iz, ivz)] = 1.0;
        a[(ivz, iz)] = -cal.omega_z * cal.omega_z;
        a[(ivz, ivz)] = -cal.gamma;
        b[(ivz, 0)] = cal.cf_over_m[1];
    }

    // Noise inputs: x acceleration, then z acceleration, then the apex walk.
    let mut cols: alloc::vec::Vec<(usize, f64)> = alloc::vec![(ivx, cal.accel_noise())];
    if let Some(ivz) = idx(StateKind::Vz) {
        cols.push((ivz, cal.accel_noise()));
    }
    if let Some(ia) = idx(StateKind::Apex) {
        cols.push((ia, cal.sigma_apex_walk));
    }
    let mut g = DMatrix::zeros(n, cols.len());
    let mut w = DMatrix::zeros(cols.len(), cols.len());
    for (j, &(row, q)) in cols.iter().enumerate() {
        g[(row, j)] = 1.0;
        w[(j, j)] = q;
    }

    let p = variant.n_outputs();
    let mut c = DMatrix::zeros(p, n);
    c[(0, ix)] = cal.c[0][0];
    if let Some(iz) = idx(StateKind::Z) {
        c[(0, iz)] = cal.c[0][1];
        c[(1, ix)] = cal.c[1][0];
        c[(1, iz)] = cal.c[1][1];
    }
    let r = if p == 2 {
        DMatrix::from_diagonal(&DVector::from_column_slice(&cal.r))
    } else {
        DMatrix::from_element(1, 1, cal.r[0])
    };
    AugmentedModel { variant, a, b, g, w, c, r }
}

/// Matrix `M` with `ξ_e = M ξ_a` for the variant's augmented state.
pub fn error_projection(variant: ControllerVariant) -> DMatrix<f64> {
    let states = variant.states();
    let ne = if variant.has_z() { 4 } else { 2 };
    let mut m = DMatrix::zeros(ne, states.len());
    for (j, s) in states.iter().enumerate() {
        match s {
            StateKind::X => m[(0, j)] = 1.0,
            StateKind::Apex => m[(0, j)] = -1.0,
            StateKind::Vx => m[(1, j)] = 1.0,
            StateKind::Z => m[(2, j)] = 1.0,
            StateKind::Vz => m[(3, j)] = 1.0,
        }
    }
    m
}
