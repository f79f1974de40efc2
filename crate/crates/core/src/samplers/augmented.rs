//! Warp-U sampling with a scale-mixture `phi_mix`: each component is
//! `N(mu_k, s2 * S_k S_k^T)` with `s2 ~ Inv-Gamma(a, b)`, and the index is the
//! pair `(k, s2)`.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::density::{GaussianMixture, Target};
use crate::error::{check_dim, Error, Result};
use crate::math::{log_sum_exp, sample_index};
use crate::samplers::{mh_accept, run_warpu, ChainState, LocalKernel, RandomWalk, SamplerTrace, StepMeta};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VariancePrior {
    InverseGamma {
        a: f64,
        b: f64,
    },
    /// Point mass at 1: plain Gaussian components.
    Fixed,
}

impl Default for VariancePrior {
    fn default() -> Self {
        Self::InverseGamma { a: 2.25, b: 1.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentedConfig {
    pub sigma: f64,
    pub iterations: usize,
    pub theta0: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub prior: VariancePrior,
    /// Inner Metropolis steps for the inverse transform, one evaluation each.
    #[serde(default = "default_inner_steps")]
    pub inner_steps: usize,
    /// Proposal scale on `log s2` for the inner sampler.
    #[serde(default = "default_inner_scale")]
    pub inner_scale: f64,
}

fn default_inner_steps() -> usize {
    10
}

fn default_inner_scale() -> f64 {
    0.5
}

/// Output of [`variance_augmented_warp`], with the scale of the index after every step.
#[derive(Debug, Clone)]
pub struct AugmentedTrace {
    pub trace: SamplerTrace,
    /// `s2` attached to the state after each iteration (all 1 for a fixed prior).
    pub variances: Vec<f64>,
}

/// `log` of the scale-mixture density: a mixture of multivariate t components with
/// `2a` degrees of freedom and scale matrix `(b/a) S_k S_k^T`.
pub fn scale_mixture_ln_pdf(mix: &GaussianMixture, a: f64, b: f64, theta: &[f64]) -> f64 {
    let terms: Vec<f64> = (0..mix.k()).map(|k| log_weighted_t(mix, a, b, k, theta)).collect();
    log_sum_exp(&terms)
}

fn log_weighted_t(mix: &GaussianMixture, a: f64, b: f64, k: usize, theta: &[f64]) -> f64 {
    if mix.weights()[k] == 0.0 {
        return f64::NEG_INFINITY;
    }
    let d = theta.len() as f64;
    let r2 = mahalanobis_sq(mix, k, theta);
    mix.log_weight(k) + ln_gamma(a + d / 2.0) - ln_gamma(a) + a * b.ln()
        - 0.5 * d * crate::math::LN_2PI
        - mix.log_det(k)
        - (a + d / 2.0) * (b + 0.5 * r2).ln()
}

fn mahalanobis_sq(mix: &GaussianMixture, k: usize, theta: &[f64]) -> f64 {
    mix.forward_warp_unchecked(theta, k).iter().map(|z| z * z).sum()
}

fn ln_inv_gamma(x: f64, a: f64, b: f64) -> f64 {
    a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x
}

/// Warp-U sampler over the augmented index `(k, s2)`.
///
/// The forward index is drawn exactly: `k` from the t-mixture responsibilities,
/// then `s2 | k, theta ~ Inv-Gamma(a + d/2, b + r^2/2)`. The inverse index is
/// updated by a short Metropolis chain on `(k', log s2')` started at the forward
/// index, which already has the right conditional law given `theta*`.
pub fn variance_augmented_warp(
    target: &Target,
    mix: &GaussianMixture,
    config: &AugmentedConfig,
) -> Result<AugmentedTrace> {
    check_dim(mix.dim(), target.dim())?;
    if !(config.sigma > 0.0 && config.inner_scale > 0.0) {
        return Err(Error::InvalidInput("proposal scales must be positive".into()));
    }
    let mut state = ChainState::new(target, config.theta0.clone(), config.seed)?;
    let kernel = RandomWalk { sigma: config.sigma };
    let (a, b) = match config.prior {
        VariancePrior::Fixed => {
            let trace = run_warpu(target, mix, &kernel, &mut state, config.iterations, false, 1.0);
            let variances = vec![1.0; trace.len()];
            return Ok(AugmentedTrace { trace, variances });
        }
        VariancePrior::InverseGamma { a, b } => {
            if !(a > 0.0 && b > 0.0) {
                return Err(Error::InvalidInput("inverse gamma parameters must be positive".into()));
            }
            (a, b)
        }
    };
    let d = mix.dim() as f64;
    let k_count = mix.k();
    let mut trace = SamplerTrace {
        samples: Vec::with_capacity(config.iterations),
        meta: Vec::with_capacity(config.iterations),
        caches: Vec::new(),
        target_evals: 0,
    };
    let mut variances = Vec::with_capacity(config.iterations);
    // log nu(k, u | theta*) up to a constant, with u = log s2 (Jacobian included).
    let log_nu = |k: usize, u: f64, lq: f64, theta: &[f64]| -> f64 {
        if lq == f64::NEG_INFINITY || mix.weights()[k] == 0.0 {
            return f64::NEG_INFINITY;
        }
        let s2 = u.exp();
        mix.log_weight(k) + ln_inv_gamma(s2, a, b) + u + lq - scale_mixture_ln_pdf(mix, a, b, theta)
    };
    for _ in 0..config.iterations {
        let before = target.evals();
        let local = kernel.step(&mut state, target);

        let logs: Vec<f64> = (0..k_count)
            .map(|k| log_weighted_t(mix, a, b, k, &state.theta))
            .collect();
        let lse = log_sum_exp(&logs);
        let probs: Vec<f64> = logs.iter().map(|l| (l - lse).exp()).collect();
        let psi = sample_index(&probs, &mut state.rng);
        let r2 = mahalanobis_sq(mix, psi, &state.theta);
        let shape = a + d / 2.0;
        let rate = b + 0.5 * r2;
        let g: f64 = Gamma::new(shape, 1.0 / rate)
            .expect("positive gamma parameters")
            .sample(&mut state.rng);
        let s2 = 1.0 / g;
        let theta_star: Vec<f64> = mix
            .forward_warp_unchecked(&state.theta, psi)
            .into_iter()
            .map(|z| z / s2.sqrt())
            .collect();

        let mut cur_k = psi;
        let mut cur_u = s2.ln();
        let mut cur_theta = state.theta.clone();
        let mut cur_lq = state.log_q;
        let mut cur_log_nu = log_nu(cur_k, cur_u, cur_lq, &cur_theta);
        for _ in 0..config.inner_steps {
            let (prop_k, prop_u) = if k_count > 1 && state.rng.random::<f64>() < 0.5 {
                (state.rng.random_range(0..k_count), cur_u)
            } else {
                let z: f64 = rand_distr::StandardNormal.sample(&mut state.rng);
                (cur_k, cur_u + config.inner_scale * z)
            };
            let sd = (0.5 * prop_u).exp();
            let star_scaled: Vec<f64> = theta_star.iter().map(|z| sd * z).collect();
            let prop_theta = mix.inverse_warp_unchecked(&star_scaled, prop_k);
            let prop_lq = target.log_q(&prop_theta);
            let prop_log_nu = log_nu(prop_k, prop_u, prop_lq, &prop_theta);
            let u: f64 = state.rng.random();
            if mh_accept(prop_log_nu - cur_log_nu, u) {
                cur_k = prop_k;
                cur_u = prop_u;
                cur_theta = prop_theta;
                cur_lq = prop_lq;
                cur_log_nu = prop_log_nu;
            }
        }
        if cur_k != psi {
            state.mode_jumps += 1;
        }
        state.theta = cur_theta;
        state.log_q = cur_lq;
        let evals = target.evals() - before;
        trace.target_evals += evals;
        trace.samples.push(state.theta.clone());
        trace.meta.push(StepMeta {
            accepted: local.accepted,
            psi: Some(psi),
            psi_prime: Some(cur_k),
            warp_skipped: false,
            evals,
        });
        variances.push(cur_u.exp());
    }
    Ok(AugmentedTrace { trace, variances })
}
