//! The catalogue of widely-linear layers.
//!
//! Each trainable kind provides four views of the same physics:
//!
//! - the forward **transfer** `F(alpha) v`, applied matrix-free,
//! - the **compensation** `H(theta) v`, which is `F(theta) v` for isomorphic
//!   kinds (the inverse lives in parameter space via the reverse map `g`)
//!   and `F(theta)^{-1} v` for FIR channels (a triangular Toeplitz solve),
//! - the **reverse map** `g` with `F(g(alpha)) F(alpha) = I` where it exists,
//! - the **local Jacobian**, the derivative of the compensation output with
//!   respect to the layer's own parameters at a fixed input.
//!
//! Two additional kinds exist only on the simulation side: additive white
//! Gaussian noise and Wiener phase noise, both drawing from an explicit RNG.

mod cfo;
mod fir;
mod iq;
mod phase;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::augmented::{AugmentedMatrix, AugmentedVector};
use crate::error::{Error, Result};

pub use phase::draw_wiener_phases;

/// Pivot guard for layer inversion: FIR needs `|h0|` above this, IQ needs
/// `|det|` above it for the reverse map. Parameters are unit-scale.
pub const EPS_INV: f64 = 1e-9;

/// The supported layer families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerKind {
    /// Widely-linear single-tap mix of a signal and its conjugate
    /// (4 real parameters).
    Iq,
    /// Progressive per-sample phase ramp `e^{j omega n}` (1 parameter).
    Cfo,
    /// Causal FIR channel with `taps` complex coefficients
    /// (2 * taps real parameters, laid out `[Re h; Im h]`).
    Fir { taps: usize },
    /// Piecewise-constant phase over `blocks` equal blocks; when the length
    /// does not divide evenly the last block absorbs the remainder
    /// (`blocks` parameters, radians).
    QsPhaseNoise { blocks: usize },
    /// Random-walk phase with per-sample increment variance `increment_var`.
    /// Simulation only: no compensation form, no parameters.
    WienerPhaseNoise { increment_var: f64 },
    /// Additive white Gaussian noise of total complex variance `variance`
    /// (each real coordinate gets `variance / 2`). Simulation only.
    Awgn { variance: f64 },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Iq => "iq",
            LayerKind::Cfo => "cfo",
            LayerKind::Fir { .. } => "fir",
            LayerKind::QsPhaseNoise { .. } => "qspn",
            LayerKind::WienerPhaseNoise { .. } => "wiener",
            LayerKind::Awgn { .. } => "awgn",
        }
    }

    /// Number of real parameters for this kind.
    pub fn param_count(&self) -> usize {
        match self {
            LayerKind::Iq => 4,
            LayerKind::Cfo => 1,
            LayerKind::Fir { taps } => 2 * taps,
            LayerKind::QsPhaseNoise { blocks } => *blocks,
            LayerKind::WienerPhaseNoise { .. } | LayerKind::Awgn { .. } => 0,
        }
    }

    /// Whether the kind can appear in a compensation network.
    pub fn is_trainable(&self) -> bool {
        matches!(
            self,
            LayerKind::Iq | LayerKind::Cfo | LayerKind::Fir { .. } | LayerKind::QsPhaseNoise { .. }
        )
    }

    /// Whether the family is closed under inversion (the inverse transfer is
    /// the transfer at reverse-mapped parameters).
    pub fn is_isomorphic(&self) -> bool {
        matches!(self, LayerKind::Iq | LayerKind::Cfo | LayerKind::QsPhaseNoise { .. })
    }

    /// Whether applying the layer consumes randomness.
    pub fn is_stochastic(&self) -> bool {
        matches!(self, LayerKind::WienerPhaseNoise { .. } | LayerKind::Awgn { .. })
    }

    /// Parameters at which the layer transfer is the identity.
    pub fn identity_params(&self) -> Vec<f64> {
        match self {
            LayerKind::Iq => vec![1.0, 0.0, 0.0, 1.0],
            LayerKind::Cfo => vec![0.0],
            LayerKind::Fir { taps } => {
                let mut p = vec![0.0; 2 * taps];
                p[0] = 1.0;
                p
            }
            LayerKind::QsPhaseNoise { blocks } => vec![0.0; *blocks],
            LayerKind::WienerPhaseNoise { .. } | LayerKind::Awgn { .. } => Vec::new(),
        }
    }
}

/// A layer kind together with its parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    kind: LayerKind,
    params: Vec<f64>,
}

impl Layer {
    /// Build a layer after checking the parameter length against the kind.
    pub fn new(kind: LayerKind, params: Vec<f64>) -> Result<Self> {
        if params.len() != kind.param_count() {
            return Err(Error::Shape(format!(
                "{} layer expects {} parameters, got {}",
                kind.name(),
                kind.param_count(),
                params.len()
            )));
        }
        if let LayerKind::Fir { taps } = kind {
            if taps == 0 {
                return Err(Error::Config("fir layer needs at least one tap".into()));
            }
        }
        if let LayerKind::QsPhaseNoise { blocks } = kind {
            if blocks == 0 {
                return Err(Error::Config("qspn layer needs at least one block".into()));
            }
        }
        Ok(Self { kind, params })
    }

    /// IQ mix from the 4 real parameters `[p1, p2, p3, p4]`, the entries of
    /// the 2x2 coordinate mix `[[p1, p2], [p3, p4]]`.
    pub fn iq(params: [f64; 4]) -> Self {
        Self { kind: LayerKind::Iq, params: params.to_vec() }
    }

    /// IQ mix from the complex model `y = a1 x + a2 conj(x)`.
    pub fn iq_complex(a1: Complex64, a2: Complex64) -> Self {
        Self::iq([
            (a1 + a2).re,
            (-a1 + a2).im,
            (a1 + a2).im,
            (a1 - a2).re,
        ])
    }

    /// Carrier frequency offset, `omega` in rad/sample.
    pub fn cfo(omega: f64) -> Self {
        Self { kind: LayerKind::Cfo, params: vec![omega] }
    }

    /// FIR channel from complex taps (at least one).
    pub fn fir(taps: &[Complex64]) -> Self {
        assert!(!taps.is_empty(), "fir layer needs at least one tap");
        let mut params = Vec::with_capacity(2 * taps.len());
        params.extend(taps.iter().map(|h| h.re));
        params.extend(taps.iter().map(|h| h.im));
        Self { kind: LayerKind::Fir { taps: taps.len() }, params }
    }

    /// Quasi-static phase noise from per-block phases (radians).
    pub fn qs_phase_noise(phases: Vec<f64>) -> Self {
        assert!(!phases.is_empty(), "qspn layer needs at least one block");
        Self {
            kind: LayerKind::QsPhaseNoise { blocks: phases.len() },
            params: phases,
        }
    }

    /// Wiener phase-noise layer (simulation only).
    pub fn wiener_phase_noise(increment_var: f64) -> Self {
        Self { kind: LayerKind::WienerPhaseNoise { increment_var }, params: Vec::new() }
    }

    /// Additive white Gaussian noise layer (simulation only).
    pub fn awgn(variance: f64) -> Self {
        Self { kind: LayerKind::Awgn { variance }, params: Vec::new() }
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.kind.param_count() {
            return Err(Error::Shape(format!(
                "{} layer expects {} parameters, got {}",
                self.kind.name(),
                self.kind.param_count(),
                params.len()
            )));
        }
        self.params.clear();
        self.params.extend_from_slice(params);
        Ok(())
    }

    /// FIR taps as complex values.
    pub fn fir_taps(&self) -> Vec<Complex64> {
        let d = self.params.len() / 2;
        (0..d)
            .map(|i| Complex64::new(self.params[i], self.params[d + i]))
            .collect()
    }

    fn check_input(&self, v: &AugmentedVector) -> Result<usize> {
        let n = v.half_len();
        if n == 0 {
            return Err(Error::Shape("layer input is empty".into()));
        }
        if let LayerKind::QsPhaseNoise { blocks } = self.kind {
            if blocks > n {
                return Err(Error::Shape(format!(
                    "qspn with {blocks} blocks cannot act on {n} samples"
                )));
            }
        }
        Ok(n)
    }

    /// Apply the forward transfer `F(params) v`.
    pub fn apply_transfer(&self, v: &AugmentedVector) -> Result<AugmentedVector> {
        let _n = self.check_input(v)?;
        match self.kind {
            LayerKind::Iq => Ok(iq::apply(&self.params, v)),
            LayerKind::Cfo => Ok(cfo::apply(self.params[0], v)),
            LayerKind::Fir { .. } => Ok(fir::forward(&self.fir_taps(), v)),
            LayerKind::QsPhaseNoise { .. } => Ok(phase::apply(&self.params, v)),
            LayerKind::WienerPhaseNoise { .. } | LayerKind::Awgn { .. } => Err(Error::Config(
                format!("{} layer is stochastic and has no deterministic transfer", self.kind.name()),
            )),
        }
    }

    /// The reverse-mapped parameters `g(params)`, satisfying
    /// `F(g(params)) F(params) = I`. Only isomorphic kinds have one.
    pub fn reverse_params(&self) -> Result<Layer> {
        match self.kind {
            LayerKind::Iq => {
                let p = &self.params;
                let det = p[0] * p[3] - p[1] * p[2];
                if det.abs() <= EPS_INV {
                    return Err(Error::SingularLayer { kind: "iq", magnitude: det.abs() });
                }
                Ok(Layer::iq([p[3] / det, -p[1] / det, -p[2] / det, p[0] / det]))
            }
            LayerKind::Cfo => Ok(Layer::cfo(-self.params[0])),
            LayerKind::QsPhaseNoise { .. } => {
                Ok(Layer::qs_phase_noise(self.params.iter().map(|p| -p).collect()))
            }
            _ => Err(Error::NotIsomorphic(self.kind.name())),
        }
    }

    /// Apply the compensation `H(params) v`: the transfer itself for
    /// isomorphic kinds, the inverse transfer (forward substitution on the
    /// triangular Toeplitz system) for FIR.
    pub fn apply_compensation(&self, v: &AugmentedVector) -> Result<AugmentedVector> {
        match self.kind {
            LayerKind::Fir { .. } => {
                self.check_input(v)?;
                fir::solve(&self.fir_taps(), v)
            }
            _ => self.apply_transfer(v),
        }
    }

    /// Apply the transpose of the compensation operator, `H(params)^T v`.
    /// This is what Jacobian backpropagation multiplies row vectors by.
    pub fn apply_compensation_transpose(&self, v: &AugmentedVector) -> Result<AugmentedVector> {
        let _n = self.check_input(v)?;
        match self.kind {
            LayerKind::Iq => Ok(iq::apply_transpose(&self.params, v)),
            // underline(M)^T = underline(M^H); for diagonal phase operators
            // the adjoint is the opposite rotation.
            LayerKind::Cfo => Ok(cfo::apply(-self.params[0], v)),
            LayerKind::QsPhaseNoise { .. } => {
                let neg: Vec<f64> = self.params.iter().map(|p| -p).collect();
                Ok(phase::apply(&neg, v))
            }
            LayerKind::Fir { .. } => fir::solve_adjoint(&self.fir_taps(), v),
            LayerKind::WienerPhaseNoise { .. } | LayerKind::Awgn { .. } => Err(Error::Config(
                format!("{} layer has no compensation operator", self.kind.name()),
            )),
        }
    }

    /// The local Jacobian of the compensation output with respect to this
    /// layer's parameters, at input `y_in`: a `2N x K_l` real matrix whose
    /// column j is `d(H(params) y_in) / d params[j]`.
    pub fn local_jacobian(&self, y_in: &AugmentedVector) -> Result<DMatrix<f64>> {
        let _n = self.check_input(y_in)?;
        match self.kind {
            LayerKind::Iq => Ok(iq::local_jacobian(y_in)),
            LayerKind::Cfo => Ok(cfo::local_jacobian(self.params[0], y_in)),
            LayerKind::QsPhaseNoise { .. } => Ok(phase::local_jacobian(&self.params, y_in)),
            LayerKind::Fir { .. } => fir::local_jacobian(&self.fir_taps(), y_in),
            LayerKind::WienerPhaseNoise { .. } | LayerKind::Awgn { .. } => Err(Error::Config(
                format!("{} layer is not trainable", self.kind.name()),
            )),
        }
    }

    /// Materialize the `2n x 2n` transfer matrix. Used as the reference for
    /// the matrix-free paths and by the dense compensation mode.
    pub fn dense_transfer(&self, n: usize) -> Result<AugmentedMatrix> {
        match self.kind {
            LayerKind::Iq => {
                let p = &self.params;
                let mut m = DMatrix::zeros(2 * n, 2 * n);
                for i in 0..n {
                    m[(i, i)] = p[0];
                    m[(i, i + n)] = p[1];
                    m[(i + n, i)] = p[2];
                    m[(i + n, i + n)] = p[3];
                }
                AugmentedMatrix::from_dense(m)
            }
            LayerKind::Cfo => AugmentedMatrix::underline(&cfo::complex_matrix(self.params[0], n)),
            LayerKind::Fir { .. } => {
                AugmentedMatrix::underline(&fir::complex_matrix(&self.fir_taps(), n))
            }
            LayerKind::QsPhaseNoise { .. } => {
                if let LayerKind::QsPhaseNoise { blocks } = self.kind {
                    if blocks > n {
                        return Err(Error::Shape(format!(
                            "qspn with {blocks} blocks cannot act on {n} samples"
                        )));
                    }
                }
                AugmentedMatrix::underline(&phase::complex_matrix(&self.params, n))
            }
            LayerKind::WienerPhaseNoise { .. } | LayerKind::Awgn { .. } => Err(Error::Config(
                format!("{} layer has no deterministic transfer matrix", self.kind.name()),
            )),
        }
    }

    /// Materialize the `2n x 2n` compensation matrix `H(params)`:
    /// the transfer for isomorphic kinds, its explicit inverse for FIR.
    pub fn dense_compensation(&self, n: usize) -> Result<AugmentedMatrix> {
        match self.kind {
            LayerKind::Fir { .. } => {
                let h0 = self.fir_taps()[0];
                if h0.norm() <= EPS_INV {
                    return Err(Error::SingularLayer { kind: "fir", magnitude: h0.norm() });
                }
                let f = self.dense_transfer(n)?.into_inner();
                let inv = f.try_inverse().ok_or(Error::SingularLayer {
                    kind: "fir",
                    magnitude: h0.norm(),
                })?;
                AugmentedMatrix::from_dense(inv)
            }
            _ => self.dense_transfer(n),
        }
    }
}

/// Add white Gaussian noise: each of the 2N real coordinates receives an
/// independent N(0, variance/2) sample.
pub fn apply_awgn<R: Rng>(
    variance: f64,
    v: &AugmentedVector,
    rng: &mut R,
) -> AugmentedVector {
    if variance == 0.0 {
        return v.clone();
    }
    let std = (variance / 2.0).sqrt();
    let mut data = v.as_slice().to_vec();
    for x in &mut data {
        let n: f64 = StandardNormal.sample(rng);
        *x += std * n;
    }
    AugmentedVector::from_raw(data).expect("same length as input")
}

/// Rotate sample n by the running sum of N(0, increment_var) phase steps.
/// The phase starts at zero before the first increment.
pub fn apply_wiener_pn<R: Rng>(
    increment_var: f64,
    v: &AugmentedVector,
    rng: &mut R,
) -> AugmentedVector {
    let phases = draw_wiener_phases(v.half_len(), increment_var, rng);
    phase::rotate_per_sample(&phases, v)
}

#[cfg(test)]
mod tests;
