//! Algebraic Riccati equations.
//!
//! The continuous equation is solved through the stable invariant subspace of
//! the Hamiltonian, extracted with the matrix sign function (nalgebra has no
//! ordered Schur form), then polished with Newton–Kleinman steps. The discrete
//! equation uses the structure-preserving doubling algorithm.
//!
//! Both solvers rescale first: a diagonal state balancing for unit spreads, a
//! time scale for the continuous case, and a scalar that equalizes the
//! quadratic and constant terms.

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::linalg::{
    balance_diagonal, fro, lyap_continuous, spectral_abscissa, spectral_radius, symmetrize,
};

use super::SynthesisError;

const SIGN_MAX_ITER: usize = 100;
const SDA_MAX_ITER: usize = 200;

fn check_square(a: &DMatrix<f64>, n: usize, what: &'static str) -> Result<(), SynthesisError> {
    if a.nrows() == n && a.ncols() == n {
        Ok(())
    } else {
        Err(SynthesisError::Dimension(what))
    }
}

fn validate(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, SynthesisError> {
    let n = a.nrows();
    check_square(a, n, "A must be square")?;
    if b.nrows() != n {
        return Err(SynthesisError::Dimension("B rows must match A"));
    }
    check_square(q, n, "Q must match A")?;
    check_square(r, b.ncols(), "R must match B columns")?;
    if a.iter().chain(b.iter()).chain(q.iter()).chain(r.iter()).any(|v| !v.is_finite()) {
        return Err(SynthesisError::InvalidModel("non-finite Riccati data"));
    }
    let chol = symmetrize(r)
        .cholesky()
        .ok_or(SynthesisError::NotPositiveDefinite("R"))?;
    Ok(chol.inverse())
}

/// `D⁻¹ A D`, `D⁻¹ B`, `D Q D` for `ξ = D ξ̃`.
struct Scaled {
    d: DVector<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
}

fn scale_states(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>) -> Scaled {
    let d = balance_diagonal(a);
    let n = a.nrows();
    let mut sa = a.clone();
    let mut sq = q.clone();
    for i in 0..n {
        for j in 0..n {
            sa[(i, j)] *= d[j] / d[i];
            sq[(i, j)] *= d[i] * d[j];
        }
    }
    let mut sb = b.clone();
    for i in 0..n {
        for j in 0..b.ncols() {
            sb[(i, j)] /= d[i];
        }
    }
    Scaled { d, a: sa, b: sb, q: sq }
}

// P = D⁻¹ P̃ D⁻¹.
fn unscale(p: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let n = p.nrows();
    let mut out = p.clone();
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] /= d[i] * d[j];
        }
    }
    out
}

fn balance_factor(q: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let (nq, ng) = (fro(q), fro(g));
    if nq > 0.0 && ng > 0.0 {
        (nq / ng).sqrt()
    } else {
        1.0
    }
}

/// Residual `AᵀP + PA − PGP + Q`.
pub fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let rinv = r.clone().try_inverse()?;
    let g = b * rinv * b.transpose();
    Some(a.transpose() * p + p * a - p * g * p + q)
}

/// Stabilizing solution of `AᵀP + PA − PBR⁻¹BᵀP + Q = 0`.
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, SynthesisError> {
    let rinv = validate(a, b, q, r)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let s = scale_states(a, b, &symmetrize(q));
    let g = &s.b * &rinv * s.b.transpose();

    // Time scale: divide the whole equation so the spectrum is O(1).
    let t = fro(&s.a).max(fro(&g).sqrt() * fro(&s.q).sqrt()).max(f64::MIN_POSITIVE);
    let a1 = &s.a / t;
    let g1 = &g / t;
    let q1 = &s.q / t;
    let c = balance_factor(&q1, &g1);
    let g2 = &g1 * c;
    let q2 = &q1 / c;

    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&a1);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g2));
    h.view_mut((n, 0), (n, n)).copy_from(&(-&q2));
    h.view_mut((n, n), (n, n)).copy_from(&(-a1.transpose()));

    let w = matrix_sign(&h)?;
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    let mut w22 = w.view((n, n), (n, n)).into_owned();
    for i in 0..n {
        w22[(i, i)] += 1.0;
    }
    lhs.view_mut((n, 0), (n, n)).copy_from(&w22);
    let mut rhs = DMatrix::zeros(2 * n, n);
    let mut w11 = w.view((0, 0), (n, n)).into_owned();
    for i in 0..n {
        w11[(i, i)] += 1.0;
    }
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-w11));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w.view((n, 0), (n, n)).into_owned()));
    let svd = lhs.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(SynthesisError::NotStabilizable);
    }
    let mut p = symmetrize(&svd.solve(&rhs, 0.0).map_err(|_| SynthesisError::NotStabilizable)?);

    p = kleinman_polish(&a1, &g2, &q2, p, 4);

    if !(spectral_abscissa(&(&a1 - &g2 * &p)) < 0.0) {
        return Err(SynthesisError::NotStabilizable);
    }
    Ok(unscale(&(p * c), &s.d))
}

/// Newton–Kleinman refinement; keeps an iterate only if the residual drops.
fn kleinman_polish(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    mut p: DMatrix<f64>,
    steps: usize,
) -> DMatrix<f64> {
    let res = |p: &DMatrix<f64>| fro(&(a.transpose() * p + p * a - p * g * p + q));
    let mut best = res(&p);
    for _ in 0..steps {
        if best == 0.0 {
            break;
        }
        let ak = a - g * &p;
        let rhs = q + &p * g * &p;
        let Some(next) = lyap_continuous(&ak, &rhs) else { break };
        let r = res(&next);
        if r < best {
            best = r;
            p = next;
        } else {
            break;
        }
    }
    p
}

/// Newton–Kleinman iteration from a stabilizing initial gain, in original
/// coordinates. Used as an independent cross-check of [`solve_care`].
pub fn solve_care_kleinman(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    k0: &DMatrix<f64>,
    iterations: usize,
) -> Result<DMatrix<f64>, SynthesisError> {
    let rinv = validate(a, b, q, r)?;
    let mut k = k0.clone();
    let mut p = DMatrix::zeros(a.nrows(), a.nrows());
    for _ in 0..iterations {
        let ak = a - b * &k;
        if !(spectral_abscissa(&ak) < 0.0) {
            return Err(SynthesisError::NotStabilizable);
        }
        let rhs = q + k.transpose() * r * &k;
        p = lyap_continuous(&ak, &rhs).ok_or(SynthesisError::NoConvergence("Lyapunov solve"))?;
        k = &rinv * b.transpose() * &p;
    }
    Ok(p)
}

/// Matrix sign function by the scaled Newton iteration.
pub fn matrix_sign(h: &DMatrix<f64>) -> Result<DMatrix<f64>, SynthesisError> {
    let n = h.nrows();
    let mut z = h.clone();
    let mut scaling = true;
    let mut prev_change = f64::INFINITY;
    for _ in 0..SIGN_MAX_ITER {
        let lu = z.clone().lu();
        let mu = if scaling {
            let logdet: f64 = (0..n).map(|i| lu.u()[(i, i)].abs().ln()).sum();
            (logdet / n as f64).exp()
        } else {
            1.0
        };
        let zinv = lu.try_inverse().ok_or(SynthesisError::NotStabilizable)?;
        if !mu.is_finite() || mu == 0.0 {
            return Err(SynthesisError::NotStabilizable);
        }
        let next = (&z / mu + zinv * mu) * 0.5;
        let change = fro(&(&next - &z)) / fro(&next);
        z = next;
        if !change.is_finite() {
            return Err(SynthesisError::NotStabilizable);
        }
        if change < 1e-2 {
            scaling = false;
        }
        // Rounding stalls the quadratic phase on badly separated spectra;
        // stop once the change no longer shrinks.
        if change < 1e-14 || (change < 1e-8 && change >= prev_change) {
            return Ok(z);
        }
        if !scaling {
            prev_change = change;
        }
    }
    // Eigenvalues close to the imaginary axis stall the iteration.
    let check = fro(&(&z * &z - DMatrix::<f64>::identity(n, n))) / (n as f64 * fro(&z).powi(2).max(1.0));
    if check < 1e-9 {
        Ok(z)
    } else {
        Err(SynthesisError::NotStabilizable)
    }
}

/// Residual `AᵀXA − AᵀXB(R + BᵀXB)⁻¹BᵀXA + Q − X`.
pub fn dare_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let s = r + b.transpose() * x * b;
    let sinv = s.try_inverse()?;
    let axb = a.transpose() * x * b;
    Some(a.transpose() * x * a - &axb * sinv * axb.transpose() + q - x)
}

/// Stabilizing solution of the discrete Riccati equation
/// `X = AᵀXA − AᵀXB(R + BᵀXB)⁻¹BᵀXA + Q`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, SynthesisError> {
    let rinv = validate(a, b, q, r)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    // Balance the continuous-time part A − I, which carries the unit spread.
    let s = {
        let mut am = a.clone();
        for i in 0..n {
            am[(i, i)] -= 1.0;
        }
        let d = balance_diagonal(&am);
        let mut sa = a.clone();
        let mut sq = symmetrize(q);
        for i in 0..n {
            for j in 0..n {
                sa[(i, j)] *= d[j] / d[i];
                sq[(i, j)] *= d[i] * d[j];
            }
        }
        let mut sb = b.clone();
        for i in 0..n {
            for j in 0..b.ncols() {
                sb[(i, j)] /= d[i];
            }
        }
        Scaled { d, a: sa, b: sb, q: sq }
    };
    let g = &s.b * &rinv * s.b.transpose();
    let c = balance_factor(&s.q, &g);

    let id = DMatrix::<f64>::identity(n, n);
    let mut ak = s.a.clone();
    let mut gk = symmetrize(&(&g * c));
    let mut hk = &s.q / c;
    let mut converged = false;
    for _ in 0..SDA_MAX_ITER {
        let w = (&id + &gk * &hk).lu();
        let w_a = w.solve(&ak).ok_or(SynthesisError::NoConvergence("doubling step singular"))?;
        let w_g = w.solve(&gk).ok_or(SynthesisError::NoConvergence("doubling step singular"))?;
        let a_next = &ak * &w_a;
        let g_next = symmetrize(&(&gk + &ak * w_g * ak.transpose()));
        let h_next = symmetrize(&(&hk + ak.transpose() * &hk * &w_a));
        let change = fro(&(&h_next - &hk)) / fro(&h_next).max(f64::MIN_POSITIVE);
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if !change.is_finite() {
            return Err(SynthesisError::NotStabilizable);
        }
        if change < 1e-15 || fro(&ak) < 1e-300 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SynthesisError::NoConvergence("doubling algorithm"));
    }
    let x = hk * c;
    // Closed loop A − BK in scaled coordinates.
    let sbt = s.b.transpose();
    let kmat = (r + &sbt * &x * &s.b)
        .try_inverse()
        .ok_or(SynthesisError::NotStabilizable)?
        * &sbt
        * &x
        * &s.a;
    if !(spectral_radius(&(&s.a - &s.b * kmat)) < 1.0) {
        return Err(SynthesisError::NotStabilizable);
    }
    Ok(unscale(&x, &s.d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn scalar_analytic() {
        let p = solve_care(&m(1, 1, &[1.0]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0]))
            .unwrap();
        assert!((p[(0, 0)] - (1.0 + 2f64.sqrt())).abs() < 1e-13);
    }

    #[test]
    fn zero_cost_hurwitz() {
        let a = m(2, 2, &[-1.0, 2.0, 0.0, -3.0]);
        let p = solve_care(&a, &m(2, 1, &[0.0, 1.0]), &DMatrix::zeros(2, 2), &m(1, 1, &[1.0]))
            .unwrap();
        assert!(fro(&p) < 1e-14);
    }

    #[test]
    fn rejects_unstabilizable() {
        let a = m(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let b = m(2, 1, &[0.0, 1.0]);
        let r = solve_care(&a, &b, &DMatrix::identity(2, 2), &m(1, 1, &[1.0]));
        assert_eq!(r, Err(SynthesisError::NotStabilizable));
        assert!(matches!(
            solve_care(&a, &b, &DMatrix::identity(2, 2), &m(1, 1, &[-1.0])),
            Err(SynthesisError::NotPositiveDefinite(_))
        ));
    }

    fn random_system(rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = 4;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0));
        let b = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let cq = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q = cq.transpose() * cq + DMatrix::identity(n, n) * 1e-3;
        let rr = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.5..0.5));
        let r = rr.transpose() * rr + DMatrix::identity(2, 2) * 0.5;
        (a, b, q, r)
    }

    #[test]
    fn random_systems_residual_and_stability() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..100 {
            let (a, b, q, r) = random_system(&mut rng);
            let p = solve_care(&a, &b, &q, &r).unwrap();
            let res = care_residual(&a, &b, &q, &r, &p).unwrap();
            assert!(fro(&res) < 1e-10 * fro(&p), "residual {}", fro(&res) / fro(&p));
            let k = r.clone().try_inverse().unwrap() * b.transpose() * &p;
            assert!(spectral_abscissa(&(&a - &b * k)) < 0.0);
            assert!(p.clone().symmetric_eigen().eigenvalues.min() > -1e-12 * fro(&p));
        }
    }

    #[test]
    fn kleinman_cross_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let (a, b, q, r) = random_system(&mut rng);
            let p = solve_care(&a, &b, &q, &r).unwrap();
            // Stabilizing start: gain from a heavily weighted problem.
            let big = solve_care(&a, &b, &(&q * 1e3), &r).unwrap();
            let k0 = r.clone().try_inverse().unwrap() * b.transpose() * big;
            let pk = solve_care_kleinman(&a, &b, &q, &r, &k0, 30).unwrap();
            assert!(fro(&(&p - &pk)) < 1e-9 * fro(&p));
        }
    }

    #[test]
    fn dare_scalar_and_random() {
        // x = a²x − a²x²b²/(r + b²x) + q with a = 2, b = q = r = 1:
        // x² − 4x − 1 = 0 → x = 2 + √5.
        let x = solve_dare(&m(1, 1, &[2.0]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0]), &m(1, 1, &[1.0]))
            .unwrap();
        assert!((x[(0, 0)] - (2.0 + 5f64.sqrt())).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (a, b, q, r) = random_system(&mut rng);
            let ad = crate::linalg::expm(&(&a * 0.1));
            let x = solve_dare(&ad, &b, &q, &r).unwrap();
            let res = dare_residual(&ad, &b, &q, &r, &x).unwrap();
            assert!(fro(&res) < 1e-10 * fro(&x));
        }
    }
}
