//! Simulation and compensation of widely-linear impairments in
//! single-carrier communication chains.
//!
//! The crate models a transmission as an ordered stack of parametric
//! widely-linear layers (IQ imbalance, carrier frequency offset, FIR
//! channels, phase noise) followed by additive Gaussian noise, and undoes it
//! with a mirrored compensation network ending in a nearest-point detector.
//! The compensation parameters are estimated from a handful of pilot symbols
//! by a Levenberg-Marquardt optimizer whose Jacobian is assembled by
//! backpropagation through the layer stack, optionally followed by a
//! self-labeled refinement pass over the whole block.
//!
//! Modules follow the signal path:
//!
//! - [`constellation`]: symbol alphabets and nearest-point projection
//! - [`augmented`]: complex <-> augmented-real algebra and pilot allocation
//! - [`layers`]: the layer catalogue (transfer, compensation, reverse map,
//!   local Jacobian)
//! - [`channel`]: forward simulation and the clairvoyant reference
//! - [`network`]: the mirrored compensation network and its Jacobian
//! - [`trainer`]: Levenberg-Marquardt training, supervised and
//!   semi-supervised
//! - [`metrics`]: MSE / SER on pilot and data splits
//! - [`scenario`]: declarative experiment descriptions and builtins
//! - [`bench`]: seeded Monte-Carlo harness with CSV output
//! - [`acceptance`]: the self-check suite behind `phycom check`
//!
//! See the crate examples for runnable walkthroughs of each capability.

pub mod acceptance;
pub mod augmented;
pub mod bench;
pub mod channel;
pub mod constellation;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod scenario;
pub mod seed;
pub mod trainer;

pub use augmented::{AllocationMatrix, AllocationStrategy, AugmentedMatrix, AugmentedVector};
pub use channel::ChannelModel;
pub use constellation::{Constellation, SymbolVector};
pub use error::{Error, Result};
pub use layers::{Layer, LayerKind};
pub use network::{ForwardTrace, NetworkJacobian, PhycomNetwork};
pub use trainer::{LmConfig, TrainOptions, TrainReport};
