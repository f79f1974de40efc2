//! Normalizing-constant estimators and their asymptotic-variance diagnostics.

mod bridge;
mod diagnostics;
mod warp_bridge;

pub use bridge::{batch_means_log_se, iterative_bridge, BridgeInput, BridgeOptions, BridgeResult, ComponentEstimate};
pub use diagnostics::{asymptotic_variance_diagnostics, VarianceDiagnostics};
pub use warp_bridge::{
    bridge_estimate, merge_components, stochastic_warpu_bridge, stochastic_warpu_bridge_from_caches,
    warpu_bridge_estimate, warpu_bridge_from_caches, SmallComponentPolicy, SwbOptions,
};
