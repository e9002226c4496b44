//! LQR and steady-state Kalman gains.

use nalgebra::{Complex, DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::linalg::{balance_diagonal, eigenvalues, spectral_abscissa};

use super::model::{AugmentedModel, ErrorModel};
use super::riccati::solve_care;
use super::SynthesisError;

/// LQR weights. The state weight is
/// `diag(Ω_x/2, Ω_x/2, q_z Ω_z/2, q_z Ω_z/2)` with `Ω_x = sqrt(|k_apex|/m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LqgWeights {
    pub r_lqr: f64,
    pub q_z: f64,
}

impl LqgWeights {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        if !(self.r_lqr > 0.0 && self.r_lqr.is_finite()) {
            return Err(SynthesisError::InvalidConfig("r_lqr must be > 0"));
        }
        if !(self.q_z >= 0.0 && self.q_z.is_finite()) {
            return Err(SynthesisError::InvalidConfig("q_z must be >= 0"));
        }
        Ok(())
    }

    /// State weight for an error model of dimension 2 or 4.
    pub fn q_matrix(&self, model: &ErrorModel) -> DMatrix<f64> {
        let n = model.dim();
        let mut d = DVector::from_element(n, 0.5 * model.omega_x);
        if n == 4 {
            d[2] = 0.5 * self.q_z * model.omega_z;
            d[3] = 0.5 * self.q_z * model.omega_z;
        }
        DMatrix::from_diagonal(&d)
    }
}

/// Feedback row `k` with `u = kᵀ ξ_e`. Since `u` enters as `+b u`, the
/// stabilizing gain is `k = −R⁻¹bᵀP`.
pub fn lqr_gain(model: &ErrorModel, weights: &LqgWeights) -> Result<DVector<f64>, SynthesisError> {
    weights.validate()?;
    let q = weights.q_matrix(model);
    let r = DMatrix::from_element(1, 1, weights.r_lqr);
    let p = solve_care(&model.a, &model.b, &q, &r)?;
    let k = -(model.b.transpose() * p) / weights.r_lqr;
    Ok(DVector::from_column_slice(k.as_slice()))
}

/// The state most involved in an unobservable mode with `Re λ ≥ 0`, if any
/// (PBH test on the balanced pair).
pub fn unobservable_direction(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Option<usize> {
    let n = a.nrows();
    let d = balance_diagonal(a);
    let ab = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * d[j] / d[i]);
    let cb = DMatrix::from_fn(c.nrows(), n, |i, j| c[(i, j)] * d[j]);
    let scale = crate::linalg::fro(&ab).max(crate::linalg::fro(&cb)).max(f64::MIN_POSITIVE);
    for lambda in eigenvalues(&ab) {
        if lambda.re < -1e-9 * scale {
            continue;
        }
        let p = c.nrows();
        let m = DMatrix::<Complex<f64>>::from_fn(n + p, n, |i, j| {
            if i < n {
                let v = Complex::new(ab[(i, j)], 0.0);
                if i == j {
                    v - lambda
                } else {
                    v
                }
            } else {
                Complex::new(cb[(i - n, j)], 0.0)
            }
        });
        let svd = m.svd(false, true);
        let s = &svd.singular_values;
        let (imin, smin) = s.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &v)| {
            if v < acc.1 {
                (i, v)
            } else {
                acc
            }
        });
        if smin < 1e-9 * scale {
            let vt = svd.v_t.as_ref()?;
            let row = vt.row(imin);
            let (j, _) = row
                .iter()
                .enumerate()
                .map(|(j, z)| (j, z.re.hypot(z.im)))
                .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            return Some(j);
        }
    }
    None
}

/// Continuous steady-state Kalman gain `L = Σ Cᵀ R⁻¹` from the filter Riccati
/// equation `AΣ + ΣAᵀ − ΣCᵀR⁻¹CΣ + GWGᵀ = 0`.
pub fn kalman_gain(model: &AugmentedModel) -> Result<DMatrix<f64>, SynthesisError> {
    if let Some(j) = unobservable_direction(&model.a, &model.c) {
        let state = model.variant.states()[j].name();
        return Err(SynthesisError::NotDetectable { state });
    }
    let sigma = filter_covariance(model)?;
    let rinv = model.r.clone().try_inverse().ok_or(SynthesisError::NotPositiveDefinite("R"))?;
    let l = &sigma * model.c.transpose() * rinv;
    if !(spectral_abscissa(&(&model.a - &l * &model.c)) < 0.0) {
        return Err(SynthesisError::UnstableDesign { what: "continuous estimator", radius: f64::NAN });
    }
    Ok(l)
}

/// Stationary estimation-error covariance of the continuous filter.
pub fn filter_covariance(model: &AugmentedModel) -> Result<DMatrix<f64>, SynthesisError> {
    solve_care(&model.a.transpose(), &model.c.transpose(), &model.process_noise(), &model.r)
        .map_err(|e| match e {
            SynthesisError::NotStabilizable => SynthesisError::NotDetectable { state: "unknown" },
            other => other,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::model::tests::table_model;
    use crate::control::model::{build_augmented_model, build_error_model, build_error_model_x, ControllerVariant};
    use crate::control::riccati::care_residual;
    use crate::linalg::fro;

    fn w() -> LqgWeights {
        LqgWeights { r_lqr: 0.5, q_z: 0.0 }
    }

    #[test]
    fn unweighted_z_gets_no_gain() {
        let e = build_error_model(&table_model());
        let k = lqr_gain(&e, &w()).unwrap();
        assert!(k[2].abs() < 1e-9 * k.norm());
        assert!(k[3].abs() < 1e-9 * k.norm());
        // x block matches the isolated subsystem.
        let kx = lqr_gain(&build_error_model_x(&table_model()), &w()).unwrap();
        assert!((k[0] - kx[0]).abs() < 1e-9 * kx[0].abs());
        assert!((k[1] - kx[1]).abs() < 1e-9 * kx[1].abs());
    }

    #[test]
    fn heavier_input_weight_shrinks_gain() {
        let e = build_error_model(&table_model());
        for q_z in [0.0, 0.01] {
            let k1 = lqr_gain(&e, &LqgWeights { r_lqr: 0.5, q_z }).unwrap();
            let k2 = lqr_gain(&e, &LqgWeights { r_lqr: 50.0, q_z }).unwrap();
            assert!(k2.norm() < k1.norm());
        }
    }

    #[test]
    fn closed_loop_is_stable_and_residual_small() {
        let e = build_error_model(&table_model());
        let wt = LqgWeights { r_lqr: 0.5, q_z: 0.01 };
        let k = lqr_gain(&e, &wt).unwrap();
        let acl = &e.a + &e.b * k.transpose();
        assert!(eigenvalues(&acl).iter().all(|l| l.re < 0.0));
        let q = wt.q_matrix(&e);
        let r = DMatrix::from_element(1, 1, wt.r_lqr);
        let p = solve_care(&e.a, &e.b, &q, &r).unwrap();
        let res = care_residual(&e.a, &e.b, &q, &r, &p).unwrap();
        // Physical-unit models: residual measured against the size of the terms.
        let scale = fro(&(e.a.transpose() * &p)) + fro(&q);
        assert!(fro(&res) < 1e-10 * scale, "{}", fro(&res) / scale);
    }

    #[test]
    fn duality_with_lqr() {
        let cal = table_model();
        let aug = build_augmented_model(&cal, ControllerVariant::NonAdaptive1D);
        let l = kalman_gain(&aug).unwrap();
        // LQR on (Aᵀ, Cᵀ) with Q = GWGᵀ, R gives K = R⁻¹ C Σ = Lᵀ.
        let p = solve_care(&aug.a.transpose(), &aug.c.transpose(), &aug.process_noise(), &aug.r).unwrap();
        let k = aug.r.clone().try_inverse().unwrap() * &aug.c * p;
        assert!(fro(&(k.transpose() - &l)) < 1e-12 * fro(&l));
    }

    #[test]
    fn useless_channel_gets_no_gain() {
        // The z channel is not needed for detectability, so its column can vanish.
        let col1 = |rz: f64| {
            let mut cal = table_model();
            cal.r = [1e-12, rz];
            let l = kalman_gain(&build_augmented_model(&cal, ControllerVariant::Adaptive2D)).unwrap();
            l.column(1).norm()
        };
        let vals: std::vec::Vec<f64> = [1e-12, 1e-9, 1e-6, 1e-3, 1.0].iter().map(|&r| col1(r)).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
        assert!(vals[4] < 1e-3 * vals[0]);
    }

    #[test]
    fn undetectable_apex_is_named() {
        let cal = crate::control::CalibratedModel { k_apex_over_m: 0.0, ..table_model() };
        let aug = build_augmented_model(&cal, ControllerVariant::Adaptive2D);
        assert_eq!(kalman_gain(&aug), Err(SynthesisError::NotDetectable { state: "apex" }));
    }

    #[test]
    fn estimator_is_hurwitz() {
        for v in ControllerVariant::ALL {
            let aug = build_augmented_model(&table_model(), v);
            let l = kalman_gain(&aug).unwrap();
            assert!(spectral_abscissa(&(&aug.a - &l * &aug.c)) < 0.0);
        }
    }
}
