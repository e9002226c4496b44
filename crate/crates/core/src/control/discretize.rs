//! Zero-order-hold discretization with the Van Loan block exponentials.

use nalgebra::DMatrix;

use crate::linalg::{expm, symmetrize};

use super::SynthesisError;

/// Sampled model `ξ[n+1] = Ad ξ[n] + Bd u[n] + w[n]`, `y[n] = Cd ξ[n] + v[n]`
/// with `Cov w = Qd`, `Cov v = Rd`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub qd: DMatrix<f64>,
    pub cd: DMatrix<f64>,
    pub rd: DMatrix<f64>,
    pub dt: f64,
}

/// Discretizes `(A, B, GWGᵀ, C, R)` at step `dt`.
///
/// `Bd` comes from `exp([[A, B], [0, 0]] dt)` and `Qd` from
/// `exp([[−A, GWGᵀ], [0, Aᵀ]] dt)`; white measurement noise of intensity `R`
/// sampled at `dt` has covariance `R/dt`.
pub fn discretize(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    gwg: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r: &DMatrix<f64>,
    dt: f64,
) -> Result<DiscreteModel, SynthesisError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SynthesisError::InvalidConfig("dt must be > 0"));
    }
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || gwg.nrows() != n || gwg.ncols() != n || c.ncols() != n {
        return Err(SynthesisError::Dimension("discretize: inconsistent model dimensions"));
    }

    let mut mb = DMatrix::zeros(n + m, n + m);
    mb.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    mb.view_mut((0, n), (n, m)).copy_from(&(b * dt));
    let eb = expm(&mb);
    let ad = eb.view((0, 0), (n, n)).into_owned();
    let bd = eb.view((0, n), (n, m)).into_owned();

    let mut mq = DMatrix::zeros(2 * n, 2 * n);
    mq.view_mut((0, 0), (n, n)).copy_from(&(-a * dt));
    mq.view_mut((0, n), (n, n)).copy_from(&(gwg * dt));
    mq.view_mut((n, n), (n, n)).copy_from(&(a.transpose() * dt));
    let eq = expm(&mq);
    let f12 = eq.view((0, n), (n, n)).into_owned();
    let f22 = eq.view((n, n), (n, n)).into_owned();
    let qd = symmetrize(&(f22.transpose() * f12));

    Ok(DiscreteModel { ad, bd, qd, cd: c.clone(), rd: r / dt, dt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::model::tests::table_model;
    use crate::control::model::{build_augmented_model, ControllerVariant};
    use crate::linalg::fro;

    #[test]
    fn pure_integrator() {
        let d = discretize(
            &DMatrix::zeros(2, 2),
            &DMatrix::identity(2, 2),
            &DMatrix::zeros(2, 2),
            &DMatrix::identity(2, 2),
            &DMatrix::identity(2, 2),
            0.25,
        )
        .unwrap();
        assert_eq!(d.ad, DMatrix::identity(2, 2));
        assert!(fro(&(d.bd - DMatrix::identity(2, 2) * 0.25)) < 1e-15);
        assert_eq!(d.rd, DMatrix::identity(2, 2) * 4.0);
    }

    #[test]
    fn oscillator_closed_form() {
        let w = 2.0 * core::f64::consts::PI * 46e3;
        let dt = 32e-9;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -w * w, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let d = discretize(&a, &b, &DMatrix::zeros(2, 2), &DMatrix::zeros(1, 2), &DMatrix::identity(1, 1), dt)
            .unwrap();
        let (c, s) = ((w * dt).cos(), (w * dt).sin());
        let exact = [[c, s / w], [-w * s, c]];
        for i in 0..2 {
            for j in 0..2 {
                let e = exact[i][j];
                assert!((d.ad[(i, j)] - e).abs() <= 1e-12 * e.abs(), "{i}{j}");
            }
        }
        // Bd = ∫ exp(Aτ) dτ b = ((1 − cos)/w², sin/w).
        assert!((d.bd[(0, 0)] - (1.0 - c) / (w * w)).abs() <= 1e-12 * (1.0 - c) / (w * w));
        assert!((d.bd[(1, 0)] - s / w).abs() <= 1e-12 * s / w);
    }

    #[test]
    fn matches_fine_euler_product() {
        let dt = 32e-9;
        for v in ControllerVariant::ALL {
            let m = build_augmented_model(&table_model(), v);
            let d = discretize(&m.a, &m.b, &m.process_noise(), &m.c, &m.r, dt).unwrap();
            let n = m.a.nrows();
            let step = DMatrix::<f64>::identity(n, n) + &m.a * (dt / 1000.0);
            let mut prod = DMatrix::<f64>::identity(n, n);
            for _ in 0..1000 {
                prod = &prod * &step;
            }
            assert!(fro(&(&prod - &d.ad)) <= 1e-6 * fro(&d.ad));
        }
    }

    #[test]
    fn process_noise_first_order() {
        let dt = 32e-9;
        let m = build_augmented_model(&table_model(), ControllerVariant::Adaptive2D);
        let gwg = m.process_noise();
        let d = discretize(&m.a, &m.b, &gwg, &m.c, &m.r, dt).unwrap();
        assert_eq!(d.qd, d.qd.transpose());
        assert!(d.qd.clone().symmetric_eigen().eigenvalues.min() >= -1e-12 * fro(&d.qd));
        // Diagonal entries agree with GWGᵀdt to O(dt²) where GWGᵀ is nonzero.
        for i in 0..5 {
            let first = gwg[(i, i)] * dt;
            if first > 0.0 {
                assert!((d.qd[(i, i)] - first).abs() < 1e-3 * first, "{i}");
            }
        }
    }
}
