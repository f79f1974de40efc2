//! MCMC kernels and drivers: local moves, the Warp-U step, the adaptive driver,
//! annealing, and the parallel tempering and independence baselines.

mod adaptive;
mod augmented;
mod independence;
mod local;
mod tempering;
mod warp_step;

use std::io::{self, Write};

use rand::SeedableRng;

pub use adaptive::{
    run_adaptive_warpu, AdaptiveConfig, AdaptiveTrace, Annealing, InitialDensity, RefitPolicy, RefitSchedule,
};
pub use augmented::{scale_mixture_ln_pdf, variance_augmented_warp, AugmentedConfig, AugmentedTrace, VariancePrior};
pub use independence::mixture_proposal_mh;
pub use local::{
    hamiltonian, hmc_step, hmc_step_with, leapfrog, mh_accept, rwm_step, Hmc, LocalKernel, LocalOutcome, RandomWalk,
};
pub use tempering::{run_parallel_tempering, Ladder, TemperingConfig, TemperingTrace};
pub use warp_step::{
    annealed_inverse_index, run_basic_warpu, run_warpu, warpu_step, warpu_step_annealed, BasicConfig, WarpRecord,
};

use crate::density::Target;
use crate::error::{check_dim, Result};

/// State of a single chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub theta: Vec<f64>,
    /// `log q(theta)`, refreshed on every move.
    pub log_q: f64,
    pub stage: usize,
    pub rng: crate::Rng,
    pub accepted: u64,
    pub proposed: u64,
    /// Warp moves that changed the component index.
    pub mode_jumps: u64,
    /// Warp moves skipped because every back-mapped point had zero density.
    pub warp_skips: u64,
    /// Local moves rejected for numerical reasons.
    pub flags: u64,
}

impl ChainState {
    /// Start at `theta`, evaluating the target once.
    pub fn new(target: &Target, theta: Vec<f64>, seed: u64) -> Result<Self> {
        check_dim(target.dim(), theta.len())?;
        let log_q = target.log_q(&theta);
        Ok(Self::with_log_q(theta, log_q, crate::Rng::seed_from_u64(seed)))
    }

    pub fn with_log_q(theta: Vec<f64>, log_q: f64, rng: crate::Rng) -> Self {
        Self {
            theta,
            log_q,
            stage: 0,
            rng,
            accepted: 0,
            proposed: 0,
            mode_jumps: 0,
            warp_skips: 0,
            flags: 0,
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Per-step metadata of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepMeta {
    pub accepted: bool,
    pub psi: Option<usize>,
    pub psi_prime: Option<usize>,
    pub warp_skipped: bool,
    /// Target evaluations consumed by this step.
    pub evals: u64,
}

/// Values from a Warp-U step that the bridge estimators can reuse without calling
/// the target again.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpCache {
    /// Index drawn from the responsibilities at the post-MH point.
    pub psi: usize,
    /// `F_psi(theta_MH)`.
    pub theta_star: Vec<f64>,
    /// `log q~(theta_star)` from the K cached evaluations.
    pub log_warped: f64,
    /// `log q~_psi(theta_star)`, from the cached `log q(theta_MH)`.
    pub log_component: f64,
}

/// Output of a sampler run.
#[derive(Debug, Clone, Default)]
pub struct SamplerTrace {
    pub samples: Vec<Vec<f64>>,
    pub meta: Vec<StepMeta>,
    pub caches: Vec<WarpCache>,
    /// Target evaluations consumed by the iterations (excludes the initial point).
    pub target_evals: u64,
}

impl SamplerTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.meta.is_empty() {
            return 0.0;
        }
        self.meta.iter().filter(|m| m.accepted).count() as f64 / self.meta.len() as f64
    }

    /// Column `j` of the samples.
    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[j]).collect()
    }

    /// CSV with header `step,accepted,psi,psi_prime,theta_1..theta_d`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.samples.first().map_or(0, Vec::len);
        write!(w, "step,accepted,psi,psi_prime")?;
        for j in 1..=d {
            write!(w, ",theta_{j}")?;
        }
        writeln!(w)?;
        for (t, (x, m)) in self.samples.iter().zip(&self.meta).enumerate() {
            let opt = |v: Option<usize>| v.map(|i| i.to_string()).unwrap_or_default();
            write!(
                w,
                "{},{},{},{}",
                t + 1,
                u8::from(m.accepted),
                opt(m.psi),
                opt(m.psi_prime)
            )?;
            for v in x {
                write!(w, ",{v:?}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}
