//! Linear models, Riccati solvers, LQG synthesis and the runnable controller.
//!
//! Sign convention: the input enters as `+b u` and the law is `u = kᵀ ξ_e`,
//! so the stabilizing gain is `k = −R⁻¹bᵀP`.

use core::fmt;

pub mod discretize;
pub mod lqg;
pub mod model;
pub mod normalize;
pub mod riccati;
pub mod synthesis;

pub use discretize::{discretize, DiscreteModel};
pub use lqg::{
    delayed_closed_loop, discrete_kalman_gain, project_box, projection, ArtifactError, DiscreteLqg,
    LqgConfig, LqgDesign,
};
pub use model::{
    build_augmented_model, build_error_model, build_error_model_x, error_model_for, error_projection,
    AugmentedModel, CalibratedModel, ControllerVariant, ErrorModel, StateKind,
};
pub use normalize::{
    apply_scaling, closed_loop_covariance, normalize_model, quantization_report, remove_scaling,
    LqgMatrices, QuantizationReport, ScalingRecord,
};
pub use riccati::{care_residual, dare_residual, solve_care, solve_care_kleinman, solve_dare};
pub use synthesis::{filter_covariance, kalman_gain, lqr_gain, unobservable_direction, LqgWeights};

#[derive(Debug, Clone, PartialEq)]
pub enum SynthesisError {
    Dimension(&'static str),
    NotPositiveDefinite(&'static str),
    NotStabilizable,
    NotDetectable { state: &'static str },
    NoConvergence(&'static str),
    UnstableDesign { what: &'static str, radius: f64 },
    InvalidModel(&'static str),
    InvalidConfig(&'static str),
}

impl fmt::Display for SynthesisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Dimension(m) => write!(f, "dimension mismatch: {m}"),
            Self::NotPositiveDefinite(m) => write!(f, "{m} is not positive definite"),
            Self::NotStabilizable => f.write_str("(A, B) is not stabilizable"),
            Self::NotDetectable { state } => write!(f, "not detectable: unobservable mode along `{state}`"),
            Self::NoConvergence(m) => write!(f, "no convergence: {m}"),
            Self::UnstableDesign { what, radius } => write!(f, "unstable {what} (spectral radius {radius:.6})"),
            Self::InvalidModel(m) => write!(f, "invalid model: {m}"),
            Self::InvalidConfig(m) => write!(f, "invalid configuration: {m}"),
        }
    }
}

impl core::error::Error for SynthesisError {}
