//! Density primitives: counted targets, Gaussian mixtures, the Warp-U maps and
//! the transformed densities they induce, plus divergences.

mod divergence;
mod mixture;
mod target;
mod warp;

pub use divergence::{harmonic_divergence, pearson_chi2, DivergenceEstimate, Integration, LogDensityFn};
pub use mixture::{GaussianMixture, MixtureDocument, Scaled, SimplexVector};
pub use target::{LogDensity, Target};
pub use warp::{
    component_warped_density, inverse_index_distribution, mass_transport_decomposition, transported_from,
    warped_unnormalized_density, BackMap,
};
