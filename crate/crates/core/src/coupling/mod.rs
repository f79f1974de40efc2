//! Coupled Warp-U chains for unbiased estimation of expectations: proposal
//! couplings, exact discrete optimal transport for the index draws, meeting
//! detection, and the lag-one estimators with Rao-Blackwellized summands.

mod chains;
mod ot;
mod proposals;

pub use chains::{
    combined_outcomes, coupled_warpu_step, coupled_warpu_step_combined, rao_blackwell_h, run_coupled,
    single_warpu_step, unbiased_h, unbiased_h_lm, unbiased_h_lm_values, unbiased_h_values, ChainStepInfo,
    CoupledChainState, CoupledConfig, CoupledRun, CoupledStep, IndexCoupling, LocalCoupling, ProposalCoupling,
    RbContext, RbLevel, RbValues, TestFn, MAX_COMBINED_K,
};
pub use ot::{discrete_ot_coupling, CouplingMatrix};
pub use proposals::{maximal_coupling_draw, reflection_coupling_draw};
