//! Complex <-> augmented-real algebra and pilot allocation.
//!
//! A complex vector of length N is carried as a real vector of length 2N with
//! all real parts first and all imaginary parts second. A complex matrix M
//! maps to the real block matrix `[[Re M, -Im M], [Im M, Re M]]`; this
//! "underline" operator is a ring homomorphism, so complex-arithmetic
//! identities survive the move to real arithmetic. Widely-linear maps (which
//! also act on the conjugate) are exactly the real-linear maps on the
//! augmented representation that do *not* have this block structure.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Real-valued view of a complex vector: `[Re(v); Im(v)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedVector {
    data: Vec<f64>,
}

impl AugmentedVector {
    /// Augment a complex vector.
    pub fn from_complex(v: &[Complex64]) -> Self {
        let mut data = Vec::with_capacity(2 * v.len());
        data.extend(v.iter().map(|z| z.re));
        data.extend(v.iter().map(|z| z.im));
        Self { data }
    }

    /// Wrap a raw `[Re; Im]` buffer. Fails on odd length.
    pub fn from_raw(data: Vec<f64>) -> Result<Self> {
        if data.len() % 2 != 0 {
            return Err(Error::Shape(format!(
                "augmented vector needs even length, got {}",
                data.len()
            )));
        }
        Ok(Self { data })
    }

    /// All-zero vector representing `n` complex samples.
    pub fn zeros(n: usize) -> Self {
        Self { data: vec![0.0; 2 * n] }
    }

    /// Reconstruct the complex vector.
    pub fn to_complex(&self) -> Vec<Complex64> {
        let n = self.half_len();
        (0..n)
            .map(|i| Complex64::new(self.data[i], self.data[n + i]))
            .collect()
    }

    /// Number of complex samples (half the real length).
    pub fn half_len(&self) -> usize {
        self.data.len() / 2
    }

    /// Real length (2N).
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn re(&self) -> &[f64] {
        &self.data[..self.half_len()]
    }

    pub fn im(&self) -> &[f64] {
        &self.data[self.half_len()..]
    }

    /// The first `n` complex samples as a new augmented vector.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        let half = self.half_len();
        if n > half {
            return Err(Error::Shape(format!(
                "cannot truncate {half} samples to {n}"
            )));
        }
        let mut data = Vec::with_capacity(2 * n);
        data.extend_from_slice(&self.data[..n]);
        data.extend_from_slice(&self.data[half..half + n]);
        Ok(Self { data })
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Largest absolute difference to another vector of the same shape.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Real 2N x 2N (or 2Np x 2N) matrix acting on augmented vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedMatrix {
    data: DMatrix<f64>,
}

impl AugmentedMatrix {
    /// The underline operator: `[[Re M, -Im M], [Im M, Re M]]`.
    /// Requires a square complex input.
    pub fn underline(m: &DMatrix<Complex64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Shape(format!(
                "underline needs a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows();
        let mut data = DMatrix::zeros(2 * n, 2 * n);
        for j in 0..n {
            for i in 0..n {
                let z = m[(i, j)];
                data[(i, j)] = z.re;
                data[(i, j + n)] = -z.im;
                data[(i + n, j)] = z.im;
                data[(i + n, j + n)] = z.re;
            }
        }
        Ok(Self { data })
    }

    /// Wrap an already-augmented real matrix (even dimensions).
    pub fn from_dense(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() % 2 != 0 || data.ncols() % 2 != 0 {
            return Err(Error::Shape(format!(
                "augmented matrix needs even dimensions, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }

    /// Check the strictly-linear block structure
    /// (top-left == bottom-right, top-right == -bottom-left) within `tol`.
    pub fn is_strictly_linear(&self, tol: f64) -> bool {
        let n = self.data.nrows() / 2;
        if self.data.ncols() != 2 * n {
            return false;
        }
        for j in 0..n {
            for i in 0..n {
                if (self.data[(i, j)] - self.data[(i + n, j + n)]).abs() > tol
                    || (self.data[(i, j + n)] + self.data[(i + n, j)]).abs() > tol
                {
                    return false;
                }
            }
        }
        true
    }

    /// Matrix-vector product on the augmented representation.
    pub fn apply(&self, v: &AugmentedVector) -> Result<AugmentedVector> {
        if self.data.ncols() != v.len() {
            return Err(Error::Shape(format!(
                "matrix is {}x{} but vector has length {}",
                self.data.nrows(),
                self.data.ncols(),
                v.len()
            )));
        }
        let x = nalgebra::DVector::from_column_slice(v.as_slice());
        let y = &self.data * x;
        AugmentedVector::from_raw(y.as_slice().to_vec())
    }
}

/// How pilot symbols are placed within a transmitted block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationStrategy {
    /// A run of consecutive pilots at the start of the block.
    Preamble,
    /// Pilots repeated at a fixed period across the block.
    Periodic,
    /// A short preamble followed by periodic pilots over the data region.
    Mixed,
}

impl AllocationStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            AllocationStrategy::Preamble => "preamble",
            AllocationStrategy::Periodic => "periodic",
            AllocationStrategy::Mixed => "mixed",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "preamble" => Ok(AllocationStrategy::Preamble),
            "periodic" | "pilot" | "pilots" => Ok(AllocationStrategy::Periodic),
            "mixed" => Ok(AllocationStrategy::Mixed),
            other => Err(Error::Config(format!("unknown allocation strategy '{other}'"))),
        }
    }
}

/// Binary selection of Np pilot positions out of N, kept as a sorted index
/// list rather than a dense matrix. Extraction gathers by index and agrees
/// with the dense `(I2 (x) P)` product.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationMatrix {
    pilot_indices: Vec<usize>,
    n: usize,
}

impl AllocationMatrix {
    /// Build an allocation of `n_p` pilots in a block of `n` symbols.
    pub fn new(strategy: AllocationStrategy, n: usize, n_p: usize) -> Result<Self> {
        match strategy {
            AllocationStrategy::Preamble => Self::preamble(n, n_p),
            AllocationStrategy::Periodic => Self::periodic(n, n_p),
            AllocationStrategy::Mixed => Self::mixed(n, n_p, n_p.div_ceil(2)),
        }
    }

    /// `n_p` consecutive pilots at the head of the block.
    pub fn preamble(n: usize, n_p: usize) -> Result<Self> {
        Self::from_indices((0..n_p).collect(), n)
    }

    /// Pilots at indices `round(k*n/n_p)`; exact multiples of `n/n_p` when
    /// `n_p` divides `n`. Fails if rounding collides.
    pub fn periodic(n: usize, n_p: usize) -> Result<Self> {
        check_counts(n, n_p)?;
        let indices: Vec<usize> = (0..n_p)
            .map(|k| ((k as f64 * n as f64 / n_p as f64).round() as usize).min(n - 1))
            .collect();
        let mut dedup = indices.clone();
        dedup.dedup();
        if dedup.len() != indices.len() {
            return Err(Error::Config(format!(
                "periodic allocation of {n_p} pilots in {n} symbols collides"
            )));
        }
        Self::from_indices(indices, n)
    }

    /// `preamble_len` consecutive pilots, then the remaining pilots placed
    /// periodically over the data region.
    pub fn mixed(n: usize, n_p: usize, preamble_len: usize) -> Result<Self> {
        check_counts(n, n_p)?;
        if preamble_len > n_p {
            return Err(Error::Config(format!(
                "mixed preamble length {preamble_len} exceeds pilot count {n_p}"
            )));
        }
        let mut indices: Vec<usize> = (0..preamble_len).collect();
        let rest = n_p - preamble_len;
        if rest > 0 {
            let region = n - preamble_len;
            for k in 0..rest {
                let idx = preamble_len
                    + ((k as f64 * region as f64 / rest as f64).round() as usize).min(region - 1);
                indices.push(idx);
            }
            indices.sort_unstable();
            let before = indices.len();
            indices.dedup();
            if indices.len() != before {
                return Err(Error::Config(format!(
                    "mixed allocation of {n_p} pilots in {n} symbols collides"
                )));
            }
        }
        Self::from_indices(indices, n)
    }

    /// Every position is a pilot (the identity allocation).
    pub fn full(n: usize) -> Self {
        Self {
            pilot_indices: (0..n).collect(),
            n,
        }
    }

    /// Explicit sorted distinct indices in `[0, n)`.
    pub fn from_indices(pilot_indices: Vec<usize>, n: usize) -> Result<Self> {
        check_counts(n, pilot_indices.len())?;
        for w in pilot_indices.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config("pilot indices must be strictly increasing".into()));
            }
        }
        if let Some(&last) = pilot_indices.last() {
            if last >= n {
                return Err(Error::Config(format!("pilot index {last} out of range 0..{n}")));
            }
        }
        Ok(Self { pilot_indices, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_pilots(&self) -> usize {
        self.pilot_indices.len()
    }

    pub fn pilot_indices(&self) -> &[usize] {
        &self.pilot_indices
    }

    /// Indices not selected as pilots (the data region).
    pub fn complement_indices(&self) -> Vec<usize> {
        let mut is_pilot = vec![false; self.n];
        for &i in &self.pilot_indices {
            is_pilot[i] = true;
        }
        (0..self.n).filter(|&i| !is_pilot[i]).collect()
    }

    /// Restrict to the first `n_t` symbols. All pilots must fall inside.
    pub fn truncated(&self, n_t: usize) -> Result<Self> {
        if n_t > self.n {
            return Err(Error::Shape(format!("cannot truncate {} to {n_t}", self.n)));
        }
        if let Some(&last) = self.pilot_indices.last() {
            if last >= n_t {
                return Err(Error::Config(format!(
                    "pilot index {last} outside truncated block of {n_t} samples"
                )));
            }
        }
        Ok(Self {
            pilot_indices: self.pilot_indices.clone(),
            n: n_t,
        })
    }

    /// Apply `(I2 (x) P)`: gather pilot real parts, then pilot imaginary parts.
    pub fn extract(&self, v: &AugmentedVector) -> Result<AugmentedVector> {
        self.gather(v, &self.pilot_indices)
    }

    /// Apply the complement selection `(I2 (x) P_perp)`.
    pub fn extract_complement(&self, v: &AugmentedVector) -> Result<AugmentedVector> {
        self.gather(v, &self.complement_indices())
    }

    fn gather(&self, v: &AugmentedVector, indices: &[usize]) -> Result<AugmentedVector> {
        if v.len() != 2 * self.n {
            return Err(Error::Shape(format!(
                "expected augmented length {}, got {}",
                2 * self.n,
                v.len()
            )));
        }
        let n = self.n;
        let mut data = Vec::with_capacity(2 * indices.len());
        data.extend(indices.iter().map(|&i| v.as_slice()[i]));
        data.extend(indices.iter().map(|&i| v.as_slice()[n + i]));
        AugmentedVector::from_raw(data)
    }
}

fn check_counts(n: usize, n_p: usize) -> Result<()> {
    if n_p == 0 || n_p > n {
        return Err(Error::Config(format!(
            "pilot count {n_p} must satisfy 1 <= n_p <= n = {n}"
        )));
    }
    Ok(())
}
