//! Learns coordinate transformations that make nonlinear dynamics linear.
//!
//! The model is an autoencoder whose latent variables evolve under a
//! block-diagonal linear propagator. The propagator's eigenvalues are not
//! fixed: small auxiliary networks map each latent pair's squared radius
//! (or each real coordinate) to a growth rate and frequency, so systems
//! whose oscillation frequency drifts with amplitude still admit a
//! two-dimensional latent description.
//!
//! The crate is `no_std` (with `alloc`) and performs no IO; datasets,
//! model files, and the command line live in the companion `koopman-cli`
//! crate. Everything here is deterministic given its seeds, and all
//! arithmetic is `f64`.
//!
//! Modules:
//! - [`nnet`]: dense networks, hand-derived reverse-mode gradients, Adam.
//! - [`dynamics`]: the three benchmark ODE systems and dataset generation.
//! - [`koopman`]: the encoder/decoder/auxiliary-network model and rollouts.
//! - [`training`]: the composite loss, its gradients, and the training loop.
//! - [`analysis`]: split errors, prediction horizons, and grid exports.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod koopman;
pub mod mat;
mod math;
pub mod nnet;
pub mod rng;
pub mod training;

pub use error::Error;
pub use mat::Mat;
