//! Pre-detection MSE and symbol error rate, computed separately on the
//! pilot (training) and data (testing) splits of a block.

use crate::augmented::{AllocationMatrix, AugmentedVector};
use crate::constellation::SymbolVector;
use crate::error::{Error, Result};

/// Which part of the block a metric is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    /// The pilot positions.
    Train,
    /// Everything else.
    Test,
}

fn split_indices(alloc: &AllocationMatrix, split: Split) -> Result<Vec<usize>> {
    let idx = match split {
        Split::Train => alloc.pilot_indices().to_vec(),
        Split::Test => alloc.complement_indices(),
    };
    if idx.is_empty() {
        return Err(Error::Config(format!(
            "{} split is empty for this allocation",
            match split {
                Split::Train => "train",
                Split::Test => "test",
            }
        )));
    }
    Ok(idx)
}

/// Mean squared pre-detection error over the selected split:
/// the squared norm of the selected entries of `x0 - y_out`, divided by the
/// number of symbols in the split.
pub fn compute_mse(
    x0: &AugmentedVector,
    y_out: &AugmentedVector,
    alloc: &AllocationMatrix,
    split: Split,
) -> Result<f64> {
    if x0.len() != y_out.len() || x0.len() != 2 * alloc.n() {
        return Err(Error::Shape(format!(
            "mse inputs disagree: x0 has {} entries, output {}, allocation expects {}",
            x0.len(),
            y_out.len(),
            2 * alloc.n()
        )));
    }
    let idx = split_indices(alloc, split)?;
    let n = alloc.n();
    let mut acc = 0.0;
    for &i in &idx {
        let dr = x0.as_slice()[i] - y_out.as_slice()[i];
        let di = x0.as_slice()[n + i] - y_out.as_slice()[n + i];
        acc += dr * dr + di * di;
    }
    Ok(acc / idx.len() as f64)
}

/// Fraction of detected symbols that differ from the transmitted ones on the
/// selected split. Both vectors hold exact alphabet members, so equality is
/// exact.
pub fn compute_ser(
    s: &SymbolVector,
    s_hat: &SymbolVector,
    alloc: &AllocationMatrix,
    split: Split,
) -> Result<f64> {
    if s.len() != s_hat.len() || s.len() != alloc.n() {
        return Err(Error::Shape(format!(
            "ser inputs disagree: {} vs {} symbols, allocation expects {}",
            s.len(),
            s_hat.len(),
            alloc.n()
        )));
    }
    let idx = split_indices(alloc, split)?;
    let errors = idx
        .iter()
        .filter(|&&i| s.symbols()[i] != s_hat.symbols()[i])
        .count();
    Ok(errors as f64 / idx.len() as f64)
}
