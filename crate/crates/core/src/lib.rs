//! Warp-U stochastic transport for multimodal densities.
//!
//! A Gaussian mixture `phi_mix` approximating the target defines a random map
//! that standardizes a point with one component and maps it back with another.
//! This crate builds samplers, normalizing-constant estimators and coupled-chain
//! unbiased estimators on top of that map.

pub mod coupling;
pub mod density;
pub mod error;
pub mod estimators;
pub mod fit;
pub mod linalg;
pub mod math;
pub mod quadrature;
pub mod samplers;
pub mod stats;

pub use density::{GaussianMixture, LogDensity, SimplexVector, Target};
pub use error::{Error, Result};

/// Seeded generator used everywhere in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Generator for replicate `index` of a run seeded with `seed`: an independent
/// ChaCha stream of the same key.
pub fn replicate_rng(seed: u64, index: u64) -> Rng {
    use rand::SeedableRng;
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Seed for replicate `index`, for APIs that take a `u64` seed.
pub fn replicate_seed(seed: u64, index: u64) -> u64 {
    use rand::Rng as _;
    replicate_rng(seed, index).random()
}
