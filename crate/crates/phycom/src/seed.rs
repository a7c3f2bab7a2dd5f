//! Deterministic seed derivation for Monte-Carlo trials.
//!
//! A root seed is mixed with integer labels (grid index, trial index) through
//! splitmix64 so that every trial gets an independent, reproducible stream
//! and all methods evaluated at a given trial share the same channel and
//! noise realizations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One round of splitmix64.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a root seed with a list of labels. Each label perturbs the state
/// before a splitmix round, so distinct label tuples give unrelated seeds.
pub fn derive_seed(root: u64, labels: &[u64]) -> u64 {
    let mut s = splitmix64(root);
    for &l in labels {
        s = splitmix64(s ^ l.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    s
}

/// The crate-wide reproducible generator.
pub fn make_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
