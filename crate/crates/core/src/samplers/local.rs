//! Local Metropolis kernels used as the first stage of a Warp-U step.

use rand::Rng;

use crate::density::Target;
use crate::math::std_normal_vec;
use crate::samplers::ChainState;

/// Outcome of one local move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LocalOutcome {
    pub accepted: bool,
    /// Set when the move was rejected for numerical reasons (non-finite gradient).
    pub flagged: bool,
}

/// A Markov kernel that leaves `q` invariant and updates `state` in place.
pub trait LocalKernel: Send + Sync {
    fn step(&self, state: &mut ChainState, target: &Target) -> LocalOutcome;
}

/// Metropolis acceptance test on the log scale; NaN ratios reject.
pub fn mh_accept(log_ratio: f64, u: f64) -> bool {
    u.ln() < log_ratio
}

/// Random-walk Metropolis with `N(theta, sigma^2 I)` proposals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomWalk {
    pub sigma: f64,
}

impl LocalKernel for RandomWalk {
    fn step(&self, state: &mut ChainState, target: &Target) -> LocalOutcome {
        rwm_step(state, target, self.sigma)
    }
}

/// One random-walk Metropolis step; exactly one target evaluation.
pub fn rwm_step(state: &mut ChainState, target: &Target, sigma: f64) -> LocalOutcome {
    let z = std_normal_vec(&mut state.rng, state.theta.len());
    let proposal: Vec<f64> = state.theta.iter().zip(&z).map(|(t, e)| t + sigma * e).collect();
    let lq = target.log_q(&proposal);
    let u: f64 = state.rng.random();
    state.proposed += 1;
    if mh_accept(lq - state.log_q, u) {
        state.theta = proposal;
        state.log_q = lq;
        state.accepted += 1;
        LocalOutcome {
            accepted: true,
            flagged: false,
        }
    } else {
        LocalOutcome::default()
    }
}

/// Leapfrog HMC with identity mass matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hmc {
    pub step_size: f64,
    pub n_leapfrog: usize,
}

impl LocalKernel for Hmc {
    fn step(&self, state: &mut ChainState, target: &Target) -> LocalOutcome {
        hmc_step(state, target, self.step_size, self.n_leapfrog)
    }
}

/// Run `n` leapfrog steps from `(x, p)`. `None` if a gradient is unavailable or not finite.
pub fn leapfrog(target: &Target, x: &[f64], p: &[f64], eps: f64, n: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut x = x.to_vec();
    let mut p = p.to_vec();
    let mut g = finite_grad(target, &x)?;
    for _ in 0..n {
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += 0.5 * eps * gi;
        }
        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += eps * pi;
        }
        g = finite_grad(target, &x)?;
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += 0.5 * eps * gi;
        }
    }
    Some((x, p))
}

fn finite_grad(target: &Target, x: &[f64]) -> Option<Vec<f64>> {
    let g = target.grad_log_q(x)?;
    g.iter().all(|v| v.is_finite()).then_some(g)
}

/// One HMC step with momentum from `N(0, I)`; one target evaluation.
pub fn hmc_step(state: &mut ChainState, target: &Target, step_size: f64, n_leapfrog: usize) -> LocalOutcome {
    let p0 = std_normal_vec(&mut state.rng, state.theta.len());
    let u: f64 = state.rng.random();
    hmc_step_with(state, target, step_size, n_leapfrog, &p0, u)
}

/// HMC step with caller-supplied momentum and acceptance uniform (used for coupling).
pub fn hmc_step_with(
    state: &mut ChainState,
    target: &Target,
    step_size: f64,
    n_leapfrog: usize,
    p0: &[f64],
    u: f64,
) -> LocalOutcome {
    state.proposed += 1;
    let Some((x1, p1)) = leapfrog(target, &state.theta, p0, step_size, n_leapfrog) else {
        state.flags += 1;
        return LocalOutcome {
            accepted: false,
            flagged: true,
        };
    };
    let lq1 = target.log_q(&x1);
    let k0: f64 = 0.5 * p0.iter().map(|v| v * v).sum::<f64>();
    let k1: f64 = 0.5 * p1.iter().map(|v| v * v).sum::<f64>();
    let log_ratio = (lq1 - k1) - (state.log_q - k0);
    if mh_accept(log_ratio, u) {
        state.theta = x1;
        state.log_q = lq1;
        state.accepted += 1;
        LocalOutcome {
            accepted: true,
            flagged: false,
        }
    } else {
        LocalOutcome::default()
    }
}

/// Hamiltonian `-log q(x) + |p|^2 / 2`; counts one target evaluation.
pub fn hamiltonian(target: &Target, x: &[f64], p: &[f64]) -> f64 {
    -target.log_q(x) + 0.5 * p.iter().map(|v| v * v).sum::<f64>()
}
