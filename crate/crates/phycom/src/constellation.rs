//! Finite-alphabet symbol sources and nearest-point projection.
//!
//! A [`Constellation`] is normalized to unit average power at construction,
//! so signal-to-noise ratios defined against the transmit symbols stay
//! consistent across alphabets. Square QAM alphabets carry the sorted list of
//! per-coordinate levels, which makes joint nearest-point detection separable
//! into independent per-coordinate projections.

use num_complex::Complex64;
use rand::{Rng, RngExt};

use crate::error::{Error, Result};

/// A finite complex alphabet with unit average power.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<Complex64>,
    /// Sorted distinct coordinate values. Empty for non-square alphabets,
    /// in which case projection falls back to a planar nearest-point search.
    levels: Vec<f64>,
    label: String,
}

impl Constellation {
    /// Unit-power square QAM of the given order (4, 16, 64 or 256).
    pub fn square_qam(order: usize) -> Result<Self> {
        let side = match order {
            4 => 2,
            16 => 4,
            64 => 8,
            256 => 16,
            _ => {
                return Err(Error::Config(format!(
                    "unsupported QAM order {order}; expected 4, 16, 64 or 256"
                )))
            }
        };
        // Odd-integer grid ±1, ±3, ... scaled to unit mean power.
        let raw: Vec<f64> = (0..side).map(|i| (2 * i as i64 - (side as i64 - 1)) as f64).collect();
        let mean_sq = raw.iter().map(|l| l * l).sum::<f64>() / side as f64;
        let scale = 1.0 / (2.0 * mean_sq).sqrt();
        let levels: Vec<f64> = raw.iter().map(|l| l * scale).collect();
        let mut points = Vec::with_capacity(order);
        for &re in &levels {
            for &im in &levels {
                points.push(Complex64::new(re, im));
            }
        }
        Ok(Self {
            points,
            levels,
            label: format!("qam{order}"),
        })
    }

    /// Alphabet from explicit points, normalized to unit average power.
    /// Projection for these alphabets is planar (joint over both
    /// coordinates), not per-coordinate.
    pub fn from_points(label: impl Into<String>, points: Vec<Complex64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("constellation needs at least one point".into()));
        }
        let power = points.iter().map(|p| p.norm_sqr()).sum::<f64>() / points.len() as f64;
        if power <= 0.0 {
            return Err(Error::Config("constellation has zero average power".into()));
        }
        let scale = 1.0 / power.sqrt();
        Ok(Self {
            points: points.into_iter().map(|p| p * scale).collect(),
            levels: Vec::new(),
            label: label.into(),
        })
    }

    /// Look up a named alphabet ("qam4", "qam16", "qam64", "qam256").
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "qam4" | "qpsk" => Self::square_qam(4),
            "qam16" => Self::square_qam(16),
            "qam64" => Self::square_qam(64),
            "qam256" => Self::square_qam(256),
            other => Err(Error::Config(format!("unknown constellation '{other}'"))),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// Per-coordinate levels; empty for non-square alphabets.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Whether the alphabet is the Cartesian product of its levels, so that
    /// per-coordinate projection equals planar nearest-point projection.
    pub fn is_square(&self) -> bool {
        !self.levels.is_empty()
    }

    /// Nearest level to `value`. Ties at midpoints resolve to the smaller
    /// level so detection stays deterministic.
    ///
    /// Only meaningful for square alphabets; falls back to the real parts of
    /// the points otherwise (callers should use [`Self::project_point`] for
    /// non-square alphabets).
    pub fn project_coordinate(&self, value: f64) -> f64 {
        debug_assert!(self.is_square(), "per-coordinate projection needs levels");
        let mut best = self.levels[0];
        let mut best_d = (value - best).abs();
        for &level in &self.levels[1..] {
            let d = (value - level).abs();
            if d < best_d {
                best = level;
                best_d = d;
            }
        }
        best
    }

    /// Nearest constellation point in the plane.
    pub fn project_point(&self, z: Complex64) -> Complex64 {
        if self.is_square() {
            return Complex64::new(self.project_coordinate(z.re), self.project_coordinate(z.im));
        }
        let mut best = self.points[0];
        let mut best_d = (z - best).norm_sqr();
        for &p in &self.points[1..] {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best = p;
                best_d = d;
            }
        }
        best
    }

    /// `n` i.i.d. uniform draws from the alphabet.
    pub fn draw_symbols<R: Rng>(&self, n: usize, rng: &mut R) -> SymbolVector {
        let symbols = (0..n)
            .map(|_| self.points[rng.random_range(0..self.points.len())])
            .collect();
        SymbolVector { symbols }
    }
}

/// A block of transmitted symbols, each an element of some alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolVector {
    symbols: Vec<Complex64>,
}

impl SymbolVector {
    /// Wrap symbols after checking exact alphabet membership.
    pub fn new(symbols: Vec<Complex64>, constellation: &Constellation) -> Result<Self> {
        for (i, s) in symbols.iter().enumerate() {
            if !constellation.points().contains(s) {
                return Err(Error::Config(format!(
                    "symbol {i} ({s}) is not a member of {}",
                    constellation.label()
                )));
            }
        }
        Ok(Self { symbols })
    }

    /// Wrap already-projected values (detector output).
    pub(crate) fn from_detected(symbols: Vec<Complex64>) -> Self {
        Self { symbols }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[Complex64] {
        &self.symbols
    }

    /// The sub-vector at the given indices (pilot extraction).
    pub fn select(&self, indices: &[usize]) -> SymbolVector {
        SymbolVector {
            symbols: indices.iter().map(|&i| self.symbols[i]).collect(),
        }
    }
}
