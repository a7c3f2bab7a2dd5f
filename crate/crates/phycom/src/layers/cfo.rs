//! Carrier frequency offset: `y[n] = x[n] e^{j omega n}`, a strictly linear
//! diagonal rotation whose angle grows with the sample index.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::augmented::AugmentedVector;

pub(super) fn apply(omega: f64, v: &AugmentedVector) -> AugmentedVector {
    let z = v.to_complex();
    let out: Vec<Complex64> = z
        .iter()
        .enumerate()
        .map(|(n, &s)| s * Complex64::from_polar(1.0, omega * n as f64))
        .collect();
    AugmentedVector::from_complex(&out)
}

/// Single column `q[n] = j n e^{j omega n} y_in[n]` in augmented form.
pub(super) fn local_jacobian(omega: f64, y_in: &AugmentedVector) -> DMatrix<f64> {
    let z = y_in.to_complex();
    let n = z.len();
    let mut l = DMatrix::zeros(2 * n, 1);
    for (i, &s) in z.iter().enumerate() {
        let q = Complex64::i() * i as f64 * Complex64::from_polar(1.0, omega * i as f64) * s;
        l[(i, 0)] = q.re;
        l[(n + i, 0)] = q.im;
    }
    l
}

pub(super) fn complex_matrix(omega: f64, n: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            Complex64::from_polar(1.0, omega * i as f64)
        } else {
            Complex64::ZERO
        }
    })
}
