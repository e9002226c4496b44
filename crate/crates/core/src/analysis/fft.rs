//! Complex FFT: iterative radix-2 for powers of two, Bluestein otherwise.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::Complex;
#[allow(unused_imports)]
use num_traits::Float;

type C64 = Complex<f64>;

/// In-place forward DFT `X_k = Σ x_n e^{-2πi kn/N}`.
pub fn fft(x: &mut [C64]) {
    let n = x.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(x, false);
    } else {
        bluestein(x);
    }
}

/// Forward DFT of a real sequence.
pub fn fft_real(x: &[f64]) -> Vec<C64> {
    let mut buf: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
    fft(&mut buf);
    buf
}

fn radix2(x: &mut [C64], inverse: bool) {
    let n = x.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            x.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        let half = len / 2;
        // Twiddles computed directly keep rounding independent of n.
        let tw: Vec<C64> = (0..half).map(|k| C64::new((ang * k as f64).cos(), (ang * k as f64).sin())).collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = x[start + k];
                let b = x[start + k + half] * tw[k];
                x[start + k] = a + b;
                x[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

fn bluestein(x: &mut [C64]) {
    let n = x.len();
    let m = (2 * n - 1).next_power_of_two();
    // Chirp w_k = e^{-iπk²/n}; k² taken mod 2n to keep the angle small.
    let chirp: Vec<C64> = (0..n)
        .map(|k| {
            let k2 = ((k as u128 * k as u128) % (2 * n as u128)) as f64;
            let a = -PI * k2 / n as f64;
            C64::new(a.cos(), a.sin())
        })
        .collect();
    let mut a = vec![C64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = x[k] * chirp[k];
    }
    let mut b = vec![C64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        b[k] = chirp[k].conj();
        b[m - k] = chirp[k].conj();
    }
    radix2(&mut a, false);
    radix2(&mut b, false);
    for (ai, bi) in a.iter_mut().zip(&b) {
        *ai *= bi;
    }
    radix2(&mut a, true);
    let scale = 1.0 / m as f64;
    for k in 0..n {
        x[k] = a[k] * scale * chirp[k];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(x: &[C64]) -> Vec<C64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, v)| {
                        let a = -2.0 * PI * ((k * j) % n) as f64 / n as f64;
                        v * C64::new(a.cos(), a.sin())
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1usize, 2, 3, 5, 8, 12, 17, 64, 100, 127, 256, 1000] {
            let x: Vec<C64> = (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let mut y = x.clone();
            fft(&mut y);
            let z = naive(&x);
            let scale = (n as f64).sqrt();
            for (a, b) in y.iter().zip(&z) {
                assert!((a - b).norm_sqr().sqrt() < 1e-11 * scale, "n={n}");
            }
        }
    }

    #[test]
    fn pure_tone_lands_in_its_bin() {
        let n = 96;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 7.0 * i as f64 / n as f64).cos()).collect();
        let y = fft_real(&x);
        let mags: Vec<f64> = y.iter().map(|c| c.norm_sqr().sqrt()).collect();
        assert!((mags[7] - n as f64 / 2.0).abs() < 1e-9);
        assert!((mags[n - 7] - n as f64 / 2.0).abs() < 1e-9);
        assert!(mags.iter().enumerate().all(|(k, m)| k == 7 || k == n - 7 || *m < 1e-9));
    }
}
