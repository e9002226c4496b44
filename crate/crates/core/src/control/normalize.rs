//! State, input and output scaling for the runtime controller, and a
//! coefficient-quantization report.
//!
//! With `ξ = S ξ_s`, `u = s_u u_s`, `y = S_y y_s` the scaled controller is
//! `Ad_s = S⁻¹AdS`, `Bd_s = S⁻¹Bd s_u`, `Cd_s = S_y⁻¹CdS`, `L_s = S⁻¹LS_y`,
//! `k_s = s_u⁻¹kS`. Scales are steady-state standard deviations of the
//! delay-free closed loop with the true apex held at zero.

use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;

use crate::linalg::{lyap_discrete, spectral_radius};

/// Matrices of a discrete LQG controller in a posteriori form.
#[derive(Debug, Clone, PartialEq)]
pub struct LqgMatrices {
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub cd: DMatrix<f64>,
    /// Kalman gain (n × p).
    pub l: DMatrix<f64>,
    /// Feedback row (1 × n) on the augmented estimate.
    pub k: DMatrix<f64>,
}

impl LqgMatrices {
    pub fn n(&self) -> usize {
        self.ad.nrows()
    }

    pub fn p(&self) -> usize {
        self.cd.nrows()
    }

    /// Estimator error propagation `Ad − L Cd Ad`.
    pub fn estimator_matrix(&self) -> DMatrix<f64> {
        &self.ad - &self.l * &self.cd * &self.ad
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRecord {
    pub state: Vec<f64>,
    pub input: f64,
    pub output: Vec<f64>,
    pub warnings: Vec<&'static str>,
}

impl ScalingRecord {
    pub fn identity(n: usize, p: usize) -> Self {
        Self { state: alloc::vec![1.0; n], input: 1.0, output: alloc::vec![1.0; p], warnings: Vec::new() }
    }
}

/// Applies `rec` to physical-unit matrices.
pub fn apply_scaling(m: &LqgMatrices, rec: &ScalingRecord) -> LqgMatrices {
    let (n, p) = (m.n(), m.p());
    let s = &rec.state;
    let sy = &rec.output;
    let su = rec.input;
    LqgMatrices {
        ad: DMatrix::from_fn(n, n, |i, j| m.ad[(i, j)] * s[j] / s[i]),
        bd: DMatrix::from_fn(n, 1, |i, _| m.bd[(i, 0)] * su / s[i]),
        cd: DMatrix::from_fn(p, n, |i, j| m.cd[(i, j)] * s[j] / sy[i]),
        l: DMatrix::from_fn(n, p, |i, j| m.l[(i, j)] * sy[j] / s[i]),
        k: DMatrix::from_fn(1, n, |_, j| m.k[(0, j)] * s[j] / su),
    }
}

/// Inverse of [`apply_scaling`].
pub fn remove_scaling(m: &LqgMatrices, rec: &ScalingRecord) -> LqgMatrices {
    let inv = ScalingRecord {
        state: rec.state.iter().map(|v| 1.0 / v).collect(),
        input: 1.0 / rec.input,
        output: rec.output.iter().map(|v| 1.0 / v).collect(),
        warnings: Vec::new(),
    };
    apply_scaling(m, &inv)
}

/// Joint stationary covariance of `[plant state without apex; estimate]` for
/// the delay-free loop `u = k x̂`.
///
/// Returns `(Σ_plant, Σ_estimate, plant_embedding)`, where the embedding maps
/// plant coordinates into the augmented state.
pub fn closed_loop_covariance(
    m: &LqgMatrices,
    qd: &DMatrix<f64>,
    rd: &DMatrix<f64>,
    apex: Option<usize>,
) -> Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = m.n();
    let plant_idx: Vec<usize> = (0..n).filter(|&i| Some(i) != apex).collect();
    let np = plant_idx.len();
    let e = DMatrix::from_fn(n, np, |i, j| if plant_idx[j] == i { 1.0 } else { 0.0 });
    let phi = e.transpose() * &m.ad * &e;
    let gam = e.transpose() * &m.bd;
    let qw = e.transpose() * qd * &e;
    let id = DMatrix::<f64>::identity(n, n);
    let lc = &m.l * &m.cd;
    let lce = &lc * &e;

    let mut f = DMatrix::zeros(np + n, np + n);
    f.view_mut((0, 0), (np, np)).copy_from(&phi);
    f.view_mut((0, np), (np, n)).copy_from(&(&gam * &m.k));
    f.view_mut((np, 0), (n, np)).copy_from(&(&lce * &phi));
    let est = (&id - &lc) * (&m.ad + &m.bd * &m.k) + &lce * &gam * &m.k;
    f.view_mut((np, np), (n, n)).copy_from(&est);

    let mut gw = DMatrix::zeros(np + n, np);
    gw.view_mut((0, 0), (np, np)).copy_from(&DMatrix::identity(np, np));
    gw.view_mut((np, 0), (n, np)).copy_from(&lce);
    let mut gv = DMatrix::zeros(np + n, m.p());
    gv.view_mut((np, 0), (n, m.p())).copy_from(&m.l);
    let q = &gw * qw * gw.transpose() + &gv * rd * gv.transpose();
    if spectral_radius(&f) >= 1.0 {
        return None;
    }
    let sigma = lyap_discrete(&f, &q)?;
    let sp = sigma.view((0, 0), (np, np)).into_owned();
    let sx = sigma.view((np, np), (n, n)).into_owned();
    Some((sp, sx, e))
}

/// Chooses the scaling from closed-loop statistics and returns the scaled matrices.
pub fn normalize_model(
    m: &LqgMatrices,
    qd: &DMatrix<f64>,
    rd: &DMatrix<f64>,
    apex: Option<usize>,
) -> (LqgMatrices, ScalingRecord) {
    let (n, p) = (m.n(), m.p());
    let mut rec = ScalingRecord::identity(n, p);
    let Some((sp, sx, e)) = closed_loop_covariance(m, qd, rd, apex) else {
        rec.warnings.push("closed loop not stationary; identity scaling");
        return (m.clone(), rec);
    };
    let pick = |v: f64, rec: &mut ScalingRecord| {
        if v > 0.0 && v.is_finite() {
            v.sqrt()
        } else {
            rec.warnings.push("zero-variance signal; unit scale");
            1.0
        }
    };
    for i in 0..n {
        rec.state[i] = pick(sx[(i, i)], &mut rec);
    }
    rec.input = pick((&m.k * &sx * m.k.transpose())[(0, 0)], &mut rec);
    let cy = &m.cd * &e * sp * e.transpose() * m.cd.transpose() + rd;
    for i in 0..p {
        rec.output[i] = pick(cy[(i, i)], &mut rec);
    }
    (apply_scaling(m, &rec), rec)
}

/// Effect of rounding every coefficient to a fixed-point grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizationReport {
    pub frac_bits: u32,
    pub max_abs_coefficient: f64,
    /// Integer bits needed for the largest coefficient (sign excluded).
    pub int_bits: u32,
    pub max_rel_error: f64,
    pub estimator_radius: f64,
    pub estimator_radius_quantized: f64,
}

pub fn quantization_report(scaled: &LqgMatrices, frac_bits: u32) -> QuantizationReport {
    let q = 2f64.powi(frac_bits as i32);
    let round = |m: &DMatrix<f64>| m.map(|v| (v * q).round() / q);
    let qm = LqgMatrices {
        ad: round(&scaled.ad),
        bd: round(&scaled.bd),
        cd: round(&scaled.cd),
        l: round(&scaled.l),
        k: round(&scaled.k),
    };
    let mut max_abs = 0.0_f64;
    let mut max_rel = 0.0_f64;
    for (a, b) in [
        (&scaled.ad, &qm.ad),
        (&scaled.bd, &qm.bd),
        (&scaled.cd, &qm.cd),
        (&scaled.l, &qm.l),
        (&scaled.k, &qm.k),
    ] {
        for (x, y) in a.iter().zip(b.iter()) {
            max_abs = max_abs.max(x.abs());
            if *x != 0.0 {
                max_rel = max_rel.max(((x - y) / x).abs());
            }
        }
    }
    QuantizationReport {
        frac_bits,
        max_abs_coefficient: max_abs,
        int_bits: if max_abs >= 1.0 { max_abs.log2().floor() as u32 + 1 } else { 0 },
        max_rel_error: max_rel,
        estimator_radius: spectral_radius(&scaled.estimator_matrix()),
        estimator_radius_quantized: spectral_radius(&qm.estimator_matrix()),
    }
}
