use rand::{Rng, SeedableRng};

use crate::density::{GaussianMixture, Target};
use crate::error::{check_dim, Result};
use crate::samplers::{mh_accept, SamplerTrace, StepMeta};

/// Independence Metropolis-Hastings with `phi_mix` as the proposal.
///
/// The chain starts from a draw of `phi_mix` (one evaluation outside the
/// iteration count); every iteration costs one evaluation.
pub fn mixture_proposal_mh(
    target: &Target,
    mix: &GaussianMixture,
    iterations: usize,
    seed: u64,
) -> Result<SamplerTrace> {
    check_dim(mix.dim(), target.dim())?;
    let mut rng = crate::Rng::seed_from_u64(seed);
    let (mut x, _) = mix.sample(&mut rng);
    let mut log_w = target.log_q(&x) - mix.ln_pdf(&x);
    let mut trace = SamplerTrace {
        samples: Vec::with_capacity(iterations),
        meta: Vec::with_capacity(iterations),
        caches: Vec::new(),
        target_evals: 0,
    };
    for _ in 0..iterations {
        let (y, k) = mix.sample(&mut rng);
        let log_w_new = target.log_q(&y) - mix.ln_pdf(&y);
        let u: f64 = rng.random();
        // A current state with zero weight is left whenever the proposal has positive weight.
        let accepted = if log_w == f64::NEG_INFINITY {
            log_w_new > f64::NEG_INFINITY
        } else {
            mh_accept(log_w_new - log_w, u)
        };
        if accepted {
            x = y;
            log_w = log_w_new;
        }
        trace.target_evals += 1;
        trace.samples.push(x.clone());
        trace.meta.push(StepMeta {
            accepted,
            psi: Some(k),
            psi_prime: None,
            warp_skipped: false,
            evals: 1,
        });
    }
    Ok(trace)
}
