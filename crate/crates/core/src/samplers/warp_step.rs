use serde::{Deserialize, Serialize};

use crate::density::{BackMap, GaussianMixture, SimplexVector, Target};
use crate::error::{check_dim, Result};
use crate::math::log_std_normal;
use crate::samplers::{ChainState, LocalKernel, LocalOutcome, RandomWalk, SamplerTrace, StepMeta, WarpCache};

/// Everything a Warp-U step produced, including the K cached back-mapped states.
#[derive(Debug, Clone)]
pub struct WarpRecord {
    pub local: LocalOutcome,
    /// Post-MH point `theta_MH`.
    pub theta_mh: Vec<f64>,
    pub psi: usize,
    pub psi_prime: usize,
    pub warp_skipped: bool,
    pub back: BackMap,
    /// `nu(. | theta*)`; `None` when the state was degenerate.
    pub nu: Option<SimplexVector>,
    pub cache: WarpCache,
}

/// One Warp-U iteration: local move, `psi ~ varpi`, standardize, `psi' ~ nu`, map back.
///
/// Consumes one evaluation for the local kernel and K for `nu`.
pub fn warpu_step(
    state: &mut ChainState,
    target: &Target,
    mix: &GaussianMixture,
    kernel: &dyn LocalKernel,
) -> WarpRecord {
    warpu_step_annealed(state, target, mix, kernel, 1.0)
}

/// Warp-U iteration with `nu` tempered by `C >= 1`. `C = 1` is the plain step.
pub fn warpu_step_annealed(
    state: &mut ChainState,
    target: &Target,
    mix: &GaussianMixture,
    kernel: &dyn LocalKernel,
    c: f64,
) -> WarpRecord {
    let local = kernel.step(state, target);
    let theta_mh = state.theta.clone();
    let resp = mix.responsibilities_unchecked(&theta_mh);
    let psi = resp.sample(&mut state.rng);
    let theta_star = mix.forward_warp_unchecked(&theta_mh, psi);
    let back = BackMap::compute_unchecked(mix, target, &theta_star);
    let log_component = log_std_normal(&theta_star) + state.log_q - mix.ln_pdf(&theta_mh);
    let cache = WarpCache {
        psi,
        theta_star,
        log_warped: back.log_warped(),
        log_component,
    };
    let nu = back.nu().ok();
    let Some(nu_probs) = nu.as_ref() else {
        state.warp_skips += 1;
        return WarpRecord {
            local,
            theta_mh,
            psi,
            psi_prime: psi,
            warp_skipped: true,
            back,
            nu,
            cache,
        };
    };
    let psi_prime = if c == 1.0 {
        nu_probs.sample(&mut state.rng)
    } else {
        annealed_inverse_index(nu_probs, c).sample(&mut state.rng)
    };
    state.theta = back.points[psi_prime].clone();
    state.log_q = back.log_q[psi_prime];
    if psi_prime != psi {
        state.mode_jumps += 1;
    }
    WarpRecord {
        local,
        theta_mh,
        psi,
        psi_prime,
        warp_skipped: false,
        back,
        nu,
        cache,
    }
}

/// `nu~ ∝ nu^{1/C}`; zero entries stay zero.
pub fn annealed_inverse_index(nu: &SimplexVector, c: f64) -> SimplexVector {
    assert!(c >= 1.0, "annealing constant must be at least 1");
    if c == 1.0 {
        return nu.clone();
    }
    let logs: Vec<f64> = nu.probs().iter().map(|p| p.ln() / c).collect();
    SimplexVector::from_log_weights(&logs).expect("a probability vector has positive mass")
}

/// Settings for [`run_basic_warpu`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasicConfig {
    pub sigma: f64,
    pub iterations: usize,
    pub theta0: Vec<f64>,
    pub seed: u64,
    /// Keep per-step values reusable by the bridge estimators.
    #[serde(default)]
    pub keep_caches: bool,
}

/// Basic Warp-U sampler with a random-walk local kernel.
pub fn run_basic_warpu(target: &Target, mix: &GaussianMixture, config: &BasicConfig) -> Result<SamplerTrace> {
    check_dim(mix.dim(), target.dim())?;
    let mut state = ChainState::new(target, config.theta0.clone(), config.seed)?;
    let kernel = RandomWalk { sigma: config.sigma };
    Ok(run_warpu(
        target,
        mix,
        &kernel,
        &mut state,
        config.iterations,
        config.keep_caches,
        1.0,
    ))
}

/// Run `iterations` Warp-U steps from `state` with any local kernel and annealing constant.
pub fn run_warpu(
    target: &Target,
    mix: &GaussianMixture,
    kernel: &dyn LocalKernel,
    state: &mut ChainState,
    iterations: usize,
    keep_caches: bool,
    c: f64,
) -> SamplerTrace {
    let mut trace = SamplerTrace {
        samples: Vec::with_capacity(iterations),
        meta: Vec::with_capacity(iterations),
        caches: Vec::new(),
        target_evals: 0,
    };
    for _ in 0..iterations {
        let before = target.evals();
        let rec = warpu_step_annealed(state, target, mix, kernel, c);
        let evals = target.evals() - before;
        trace.target_evals += evals;
        trace.samples.push(state.theta.clone());
        trace.meta.push(StepMeta {
            accepted: rec.local.accepted,
            psi: Some(rec.psi),
            psi_prime: Some(rec.psi_prime),
            warp_skipped: rec.warp_skipped,
            evals,
        });
        if keep_caches {
            trace.caches.push(rec.cache);
        }
    }
    trace
}
