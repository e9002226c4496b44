//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! The physical models mix quantities spanning twenty orders of magnitude
//! (positions of 1e-8 m, stiffness ratios of 1e11 s⁻²), so everything that
//! exponentiates or factorizes a system matrix first applies a diagonal
//! balancing similarity.

use alloc::vec::Vec;

use nalgebra::{Complex, DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

/// Diagonal scaling `d` (powers of two) such that `D⁻¹ M D` has rows and
/// columns of comparable norm (Osborne iteration, as in LAPACK `gebal`).
///
/// Rows/columns that are entirely zero off the diagonal keep scale 1.
pub fn balance_diagonal(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut d = DVector::from_element(n, 1.0);
    let mut a = m.clone();
    const RADIX: f64 = 2.0;
    for _sweep in 0..100 {
        let mut converged = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut cc = c;
            let mut rr = r;
            while cc < rr / RADIX {
                cc *= RADIX;
                rr /= RADIX;
                f *= RADIX;
            }
            while cc >= rr * RADIX {
                cc /= RADIX;
                rr *= RADIX;
                f /= RADIX;
            }
            if (cc + rr) < 0.95 * s {
                converged = false;
                d[i] *= f;
                // a ← D⁻¹ a D with D_ii = f: row i divided by f, column i times f.
                for j in 0..n {
                    a[(i, j)] /= f;
                    a[(j, i)] *= f;
                }
            }
        }
        if converged {
            break;
        }
    }
    d
}

/// `exp(M)` evaluated on a balanced copy of `M`.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = balance_diagonal(m);
    let n = m.nrows();
    let mut b = m.clone();
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] *= d[j] / d[i];
        }
    }
    let mut e = expm_pade(&b);
    for i in 0..n {
        for j in 0..n {
            e[(i, j)] *= d[i] / d[j];
        }
    }
    e
}

/// Diagonal [8/8] Padé approximant with scaling and squaring, scaled so that
/// `‖M/2ˢ‖₁ ≤ 1/2`; the truncation error is then below 1e-20.
fn expm_pade(m: &DMatrix<f64>) -> DMatrix<f64> {
    const Q: usize = 8;
    let n = m.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    if n == 0 {
        return id;
    }
    let norm1 = (0..n).map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut s = 0i32;
    if norm1 > 0.5 {
        s = ((norm1 / 0.5).log2().ceil() as i32).max(0);
    }
    let a = m * 2f64.powi(-s);
    // c_k = (2q-k)! q! / ((2q)! k! (q-k)!)
    let mut c = 1.0;
    let mut num = id.clone();
    let mut den = id.clone();
    let mut pow = id.clone();
    for k in 1..=Q {
        c *= (Q + 1 - k) as f64 / (k * (2 * Q + 1 - k)) as f64;
        pow = &pow * &a;
        num += &pow * c;
        if k % 2 == 0 {
            den += &pow * c;
        } else {
            den -= &pow * c;
        }
    }
    let mut e = den.lu().solve(&num).unwrap_or(id);
    for _ in 0..s {
        e = &e * &e;
    }
    e
}

/// Solves `AᵀX + XA + Q = 0` by vectorization. Intended for the small state
/// dimensions used here (n ≲ 20).
pub fn lyap_continuous(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let k = id.kronecker(&at) + at.kronecker(&id);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let x = k.lu().solve(&rhs)?;
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    Some(symmetrize(&x))
}

/// Solves `X = A X Aᵀ + Q` by vectorization.
pub fn lyap_discrete(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let nn = n * n;
    let k = DMatrix::<f64>::identity(nn, nn) - a.kronecker(a);
    let rhs = DVector::from_column_slice(q.as_slice());
    let x = k.lu().solve(&rhs)?;
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    Some(symmetrize(&x))
}

pub fn symmetrize(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    a.complex_eigenvalues().iter().copied().collect()
}

/// Largest real part of the spectrum.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a).iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a).iter().map(|l| l.re.hypot(l.im)).fold(0.0, f64::max)
}

/// Numerical rank: singular values above `rel_tol · σ_max`.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let s = m.clone().svd(false, false).singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel_tol * smax).count()
}

/// `[B, AB, …, Aⁿ⁻¹B]`.
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    out
}

/// `[C; CA; …; CAⁿ⁻¹]`.
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    controllability_matrix(&a.transpose(), &c.transpose()).transpose()
}

/// Rank of the controllability matrix after balancing the states and
/// rescaling time and inputs, so that physical unit spreads do not masquerade
/// as rank loss.
pub fn controllable_rank(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> usize {
    let d = balance_diagonal(a);
    let (mut ab, mut bb) = similarity(a, b, &d);
    let s = fro(&ab);
    if s > 0.0 {
        ab /= s;
    }
    for mut col in bb.column_iter_mut() {
        let nrm = col.norm();
        if nrm > 0.0 {
            col /= nrm;
        }
    }
    rank(&controllability_matrix(&ab, &bb), rel_tol)
}

pub fn observable_rank(a: &DMatrix<f64>, c: &DMatrix<f64>, rel_tol: f64) -> usize {
    controllable_rank(&a.transpose(), &c.transpose(), rel_tol)
}

// D⁻¹AD and D⁻¹B.
fn similarity(a: &DMatrix<f64>, b: &DMatrix<f64>, d: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut ab = a.clone();
    for i in 0..n {
        for j in 0..n {
            ab[(i, j)] *= d[j] / d[i];
        }
    }
    let mut bb = b.clone();
    for i in 0..n {
        for j in 0..b.ncols() {
            bb[(i, j)] /= d[i];
        }
    }
    (ab, bb)
}

/// Frobenius norm.
pub fn fro(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Block-diagonal assembly.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let r: usize = blocks.iter().map(|b| b.nrows()).sum();
    let c: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(r, c);
    let (mut i, mut j) = (0, 0);
    for b in blocks {
        out.view_mut((i, j), (b.nrows(), b.ncols())).copy_from(b);
        i += b.nrows();
        j += b.ncols();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balancing_equalizes_oscillator() {
        let w2 = 1e11;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, w2, -4000.0]);
        let d = balance_diagonal(&a);
        let r = d[1] / d[0];
        // Balanced off-diagonals within a factor of 2 of each other.
        let upper = 1.0 * r;
        let lower = w2 / r;
        assert!(upper / lower < 4.0 && lower / upper < 4.0);
    }

    #[test]
    fn expm_of_oscillator() {
        let w: f64 = 2.0 * core::f64::consts::PI * 50e3;
        let t = 3.2e-8;
        let a = DMatrix::from_row_slice(2, 2, &[0.0, t, -w * w * t, 0.0]);
        let e = expm(&a);
        let (c, s) = ((w * t).cos(), (w * t).sin());
        let exact = DMatrix::from_row_slice(2, 2, &[c, s / w, -w * s, c]);
        for i in 0..2 {
            for j in 0..2 {
                assert!((e[(i, j)] - exact[(i, j)]).abs() <= 1e-13 * exact[(i, j)].abs().max(1e-300));
            }
        }
    }

    #[test]
    fn lyapunov_solutions() {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.0, 0.0, -3.0, 1.0, 0.5, 0.0, -2.0]);
        let q = DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.0, 0.0, 0.0, 3.0]);
        let x = lyap_continuous(&a, &q).unwrap();
        let res = a.transpose() * &x + &x * &a + &q;
        assert!(fro(&res) < 1e-12);
        let ad = &a * 0.2 + DMatrix::identity(3, 3) * 0.5;
        let y = lyap_discrete(&ad, &q).unwrap();
        let res = &ad * &y * ad.transpose() + &q - &y;
        assert!(fro(&res) < 1e-12);
    }

    #[test]
    fn ranks() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert_eq!(controllable_rank(&a, &b, 1e-10), 2);
        let b2 = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        assert_eq!(controllable_rank(&a, &b2, 1e-10), 1);
        let c = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert_eq!(observable_rank(&a, &c, 1e-10), 1);
    }
}
