//! IQ imbalance: the widely-linear single-tap mix `y = a1 x + a2 conj(x)`.
//!
//! On the augmented representation this is the coordinate mix
//! `[[p1, p2], [p3, p4]] (x) I_N` with `p1 = Re(a1 + a2)`,
//! `p2 = Im(-a1 + a2)`, `p3 = Im(a1 + a2)`, `p4 = Re(a1 - a2)`. It is the
//! one catalogue kind whose transfer is *not* strictly linear: the mix acts
//! on the conjugate, so the augmented matrix lacks the underline block
//! structure.

use nalgebra::DMatrix;

use crate::augmented::AugmentedVector;

pub(super) fn apply(p: &[f64], v: &AugmentedVector) -> AugmentedVector {
    let n = v.half_len();
    let (re, im) = (v.re(), v.im());
    let mut data = Vec::with_capacity(2 * n);
    data.extend((0..n).map(|i| p[0] * re[i] + p[1] * im[i]));
    data.extend((0..n).map(|i| p[2] * re[i] + p[3] * im[i]));
    AugmentedVector::from_raw(data).expect("even length")
}

pub(super) fn apply_transpose(p: &[f64], v: &AugmentedVector) -> AugmentedVector {
    apply(&[p[0], p[2], p[1], p[3]], v)
}

/// `I_2 (x) [Re(y_in)  Im(y_in)]`: column j is the derivative of the output
/// with respect to the j-th mix entry.
pub(super) fn local_jacobian(y_in: &AugmentedVector) -> DMatrix<f64> {
    let n = y_in.half_len();
    let (re, im) = (y_in.re(), y_in.im());
    let mut l = DMatrix::zeros(2 * n, 4);
    for i in 0..n {
        l[(i, 0)] = re[i];
        l[(i, 1)] = im[i];
        l[(n + i, 2)] = re[i];
        l[(n + i, 3)] = im[i];
    }
    l
}
