//! Phase-noise layers: the quasi-static (piecewise-constant) approximation
//! used for compensation, and the Wiener random walk used for simulation.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::augmented::AugmentedVector;

/// Block index of sample `i` when `n` samples split into `k` blocks of
/// `floor(n/k)`, the last block absorbing any remainder.
#[inline]
pub(super) fn block_of(i: usize, n: usize, k: usize) -> usize {
    (i / (n / k)).min(k - 1)
}

pub(super) fn apply(phases: &[f64], v: &AugmentedVector) -> AugmentedVector {
    let z = v.to_complex();
    let n = z.len();
    let k = phases.len();
    let out: Vec<Complex64> = z
        .iter()
        .enumerate()
        .map(|(i, &s)| s * Complex64::from_polar(1.0, phases[block_of(i, n, k)]))
        .collect();
    AugmentedVector::from_complex(&out)
}

/// Column k is `j e^{j phi_k} y_in` restricted to block k, zero elsewhere.
pub(super) fn local_jacobian(phases: &[f64], y_in: &AugmentedVector) -> DMatrix<f64> {
    let z = y_in.to_complex();
    let n = z.len();
    let k = phases.len();
    let mut l = DMatrix::zeros(2 * n, k);
    for (i, &s) in z.iter().enumerate() {
        let b = block_of(i, n, k);
        let q = Complex64::i() * Complex64::from_polar(1.0, phases[b]) * s;
        l[(i, b)] = q.re;
        l[(n + i, b)] = q.im;
    }
    l
}

pub(super) fn complex_matrix(phases: &[f64], n: usize) -> DMatrix<Complex64> {
    let k = phases.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            Complex64::from_polar(1.0, phases[block_of(i, n, k)])
        } else {
            Complex64::ZERO
        }
    })
}

/// Rotate sample i by `phases[i]` (used to replay pinned noise realizations).
pub(super) fn rotate_per_sample(phases: &[f64], v: &AugmentedVector) -> AugmentedVector {
    let z = v.to_complex();
    let out: Vec<Complex64> = z
        .iter()
        .zip(phases)
        .map(|(&s, &p)| s * Complex64::from_polar(1.0, p))
        .collect();
    AugmentedVector::from_complex(&out)
}

/// Draw a Wiener phase trajectory: `phi[n] = phi[n-1] + b[n]` with
/// `b[n] ~ N(0, increment_var)` and `phi` starting at zero before the first
/// increment.
pub fn draw_wiener_phases<R: Rng>(
    n: usize,
    increment_var: f64,
    rng: &mut R,
) -> Vec<f64> {
    let std = increment_var.sqrt();
    let mut phi = 0.0;
    (0..n)
        .map(|_| {
            let b: f64 = StandardNormal.sample(rng);
            phi += std * b;
            phi
        })
        .collect()
}
