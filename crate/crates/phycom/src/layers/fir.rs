//! FIR channel: causal convolution `y[n] = sum_d h_d x[n-d]` with zero
//! initial state, i.e. a lower-triangular Toeplitz transfer with `h_0` on
//! the diagonal. The layer is strictly linear but not isomorphic: its
//! compensation is the inverse transfer, computed as an O(N*D) forward
//! substitution instead of a dense inversion.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::EPS_INV;
use crate::augmented::AugmentedVector;
use crate::error::{Error, Result};

pub(super) fn forward(h: &[Complex64], v: &AugmentedVector) -> AugmentedVector {
    let x = v.to_complex();
    let n = x.len();
    let mut y = vec![Complex64::ZERO; n];
    for (i, yi) in y.iter_mut().enumerate() {
        let mut acc = Complex64::ZERO;
        for (d, &hd) in h.iter().enumerate().take(i + 1) {
            acc += hd * x[i - d];
        }
        *yi = acc;
    }
    AugmentedVector::from_complex(&y)
}

fn check_invertible(h: &[Complex64]) -> Result<()> {
    if h[0].norm() <= EPS_INV {
        return Err(Error::SingularLayer { kind: "fir", magnitude: h[0].norm() });
    }
    Ok(())
}

/// Solve `M z = y` by forward substitution on the triangular Toeplitz system.
pub(super) fn solve(h: &[Complex64], v: &AugmentedVector) -> Result<AugmentedVector> {
    check_invertible(h)?;
    let y = v.to_complex();
    Ok(AugmentedVector::from_complex(&solve_complex(h, &y)))
}

pub(super) fn solve_complex(h: &[Complex64], y: &[Complex64]) -> Vec<Complex64> {
    let n = y.len();
    let mut z = vec![Complex64::ZERO; n];
    for i in 0..n {
        let mut acc = y[i];
        for d in 1..h.len().min(i + 1) {
            acc -= h[d] * z[i - d];
        }
        z[i] = acc / h[0];
    }
    z
}

/// Solve `M^H z = y` (back substitution); this applies the transpose of the
/// augmented compensation operator, since `underline(M)^T = underline(M^H)`.
pub(super) fn solve_adjoint(h: &[Complex64], v: &AugmentedVector) -> Result<AugmentedVector> {
    check_invertible(h)?;
    let y = v.to_complex();
    let n = y.len();
    let hc: Vec<Complex64> = h.iter().map(|c| c.conj()).collect();
    let mut z = vec![Complex64::ZERO; n];
    for i in (0..n).rev() {
        let mut acc = y[i];
        for (d, &hd) in hc.iter().enumerate().take((n - i).min(hc.len())).skip(1) {
            acc -= hd * z[i + d];
        }
        z[i] = acc / hc[0];
    }
    Ok(AugmentedVector::from_complex(&z))
}

/// Local Jacobian of the *compensation* output `z = M(h)^{-1} y_in`.
///
/// With `T_d` the shift-by-d Toeplitz matrix, the derivative along
/// `Re(h_d)` is `-M^{-1} T_d z` — the shifted copies are taken from the
/// compensated output, not the input — and the derivative along `Im(h_d)`
/// is `j` times that. Columns are ordered `[Re(h_0..h_{D-1}); Im(...)]` to
/// match the parameter layout.
pub(super) fn local_jacobian(h: &[Complex64], y_in: &AugmentedVector) -> Result<DMatrix<f64>> {
    check_invertible(h)?;
    let y = y_in.to_complex();
    let n = y.len();
    let d = h.len();
    let z = solve_complex(h, &y);
    let mut l = DMatrix::zeros(2 * n, 2 * d);
    let mut shifted = vec![Complex64::ZERO; n];
    for di in 0..d {
        shifted.iter_mut().for_each(|s| *s = Complex64::ZERO);
        shifted[di..n].copy_from_slice(&z[..n - di]);
        let col = solve_complex(h, &shifted);
        for i in 0..n {
            let c = -col[i];
            l[(i, di)] = c.re;
            l[(n + i, di)] = c.im;
            // d/d Im(h_d) = j * d/d Re(h_d)
            l[(i, d + di)] = -c.im;
            l[(n + i, d + di)] = c.re;
        }
    }
    Ok(l)
}

pub(super) fn complex_matrix(h: &[Complex64], n: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i >= j && i - j < h.len() {
            h[i - j]
        } else {
            Complex64::ZERO
        }
    })
}
