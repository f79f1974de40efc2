//! Bridge estimators of a normalizing constant: the classical bridge against a
//! fitted mixture, the Warp-U bridge, and the stochastic (stratified) Warp-U bridge.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::{BackMap, GaussianMixture, Target};
use crate::error::{check_dim, Error, Result};
use crate::estimators::{iterative_bridge, BridgeInput, BridgeOptions, BridgeResult, ComponentEstimate};
use crate::linalg::LowerTriangular;
use crate::math::{log_std_normal, sq_dist, std_normal_vec};
use crate::samplers::WarpCache;

/// Classical bridge between `q` and a normalized auxiliary mixture, with draws from
/// each. Costs `n1 + n2` evaluations.
pub fn bridge_estimate(
    target: &Target,
    aux: &GaussianMixture,
    pi_samples: &[Vec<f64>],
    aux_samples: &[Vec<f64>],
    options: BridgeOptions,
) -> Result<BridgeResult> {
    check_dim(aux.dim(), target.dim())?;
    check_nonempty(pi_samples, aux_samples)?;
    let before = target.evals();
    let eval = |xs: &[Vec<f64>]| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut lq = Vec::with_capacity(xs.len());
        let mut la = Vec::with_capacity(xs.len());
        for x in xs {
            check_dim(aux.dim(), x.len())?;
            lq.push(target.log_q(x));
            la.push(aux.ln_pdf(x));
        }
        Ok((lq, la))
    };
    let (q_s1, a_s1) = eval(pi_samples)?;
    let (q_s2, a_s2) = eval(aux_samples)?;
    let mut r = iterative_bridge(
        BridgeInput {
            log_q1_on_s1: &q_s1,
            log_q2_on_s1: &a_s1,
            log_q1_on_s2: &q_s2,
            log_q2_on_s2: &a_s2,
        },
        options,
    )?;
    r.target_evals = target.evals() - before;
    Ok(r)
}

fn check_nonempty(s1: &[Vec<f64>], s2: &[Vec<f64>]) -> Result<()> {
    if s1.is_empty() || s2.is_empty() {
        return Err(Error::InvalidInput("both sample sets must be nonempty".into()));
    }
    Ok(())
}

/// Warp-U bridge: warp each target draw with a random component, then bridge
/// `q~` against `phi`. Costs `K (n1 + n2)` evaluations.
pub fn warpu_bridge_estimate<R: Rng + ?Sized>(
    target: &Target,
    mix: &GaussianMixture,
    pi_samples: &[Vec<f64>],
    phi_samples: &[Vec<f64>],
    rng: &mut R,
    options: BridgeOptions,
) -> Result<BridgeResult> {
    check_dim(mix.dim(), target.dim())?;
    check_nonempty(pi_samples, phi_samples)?;
    let before = target.evals();
    let mut warped = Vec::with_capacity(pi_samples.len());
    for x in pi_samples {
        check_dim(mix.dim(), x.len())?;
        let psi = mix.responsibilities_unchecked(x).sample(rng);
        let star = mix.forward_warp_unchecked(x, psi);
        let lw = BackMap::compute_unchecked(mix, target, &star).log_warped();
        warped.push((log_std_normal(&star), lw));
    }
    let mut r = wb_on_warped(target, mix, &warped, phi_samples, options)?;
    r.target_evals = target.evals() - before;
    Ok(r)
}

/// Warp-U bridge reusing the per-step values of a Warp-U sampler run, so only the
/// `phi` draws cost evaluations (`K n2`).
pub fn warpu_bridge_from_caches(
    target: &Target,
    mix: &GaussianMixture,
    caches: &[WarpCache],
    phi_samples: &[Vec<f64>],
    options: BridgeOptions,
) -> Result<BridgeResult> {
    check_dim(mix.dim(), target.dim())?;
    if caches.is_empty() || phi_samples.is_empty() {
        return Err(Error::InvalidInput("both sample sets must be nonempty".into()));
    }
    let before = target.evals();
    let warped: Vec<(f64, f64)> = caches
        .iter()
        .map(|c| (log_std_normal(&c.theta_star), c.log_warped))
        .collect();
    let mut r = wb_on_warped(target, mix, &warped, phi_samples, options)?;
    r.target_evals = target.evals() - before;
    Ok(r)
}

/// `warped[i] = (log phi(theta*_i), log q~(theta*_i))`.
fn wb_on_warped(
    target: &Target,
    mix: &GaussianMixture,
    warped: &[(f64, f64)],
    phi_samples: &[Vec<f64>],
    options: BridgeOptions,
) -> Result<BridgeResult> {
    let (phi_s1, warp_s1): (Vec<f64>, Vec<f64>) = warped.iter().copied().unzip();
    let mut warp_s2 = Vec::with_capacity(phi_samples.len());
    let mut phi_s2 = Vec::with_capacity(phi_samples.len());
    for z in phi_samples {
        check_dim(mix.dim(), z.len())?;
        warp_s2.push(BackMap::compute_unchecked(mix, target, z).log_warped());
        phi_s2.push(log_std_normal(z));
    }
    iterative_bridge(
        BridgeInput {
            log_q1_on_s1: &warp_s1,
            log_q2_on_s1: &phi_s1,
            log_q1_on_s2: &warp_s2,
            log_q2_on_s2: &phi_s2,
        },
        options,
    )
}

/// What to do with a component that receives too few warped samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallComponentPolicy {
    #[default]
    Error,
    /// Moment-match the component into the one with the nearest mean and redraw
    /// the assignments. The result lists the merged components.
    Merge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwbOptions {
    #[serde(default)]
    pub policy: SmallComponentPolicy,
    #[serde(default = "default_min_count")]
    pub min_component_count: usize,
    #[serde(default)]
    pub bridge: BridgeOptions,
}

fn default_min_count() -> usize {
    2
}

impl Default for SwbOptions {
    fn default() -> Self {
        Self {
            policy: SmallComponentPolicy::Error,
            min_component_count: default_min_count(),
            bridge: BridgeOptions::default(),
        }
    }
}

/// Stochastic Warp-U bridge: each target draw is warped by its own component only,
/// each component gets its own bridge against `n2` fresh `phi` draws, and
/// `c_hat = sum_k w_k c_hat_k`. Costs `n1 + K n2` evaluations.
pub fn stochastic_warpu_bridge<R: Rng + ?Sized>(
    target: &Target,
    mix: &GaussianMixture,
    pi_samples: &[Vec<f64>],
    n2: usize,
    options: SwbOptions,
    rng: &mut R,
) -> Result<BridgeResult> {
    check_dim(mix.dim(), target.dim())?;
    if pi_samples.is_empty() {
        return Err(Error::InvalidInput("no target samples".into()));
    }
    let before = target.evals();
    let mut points = Vec::with_capacity(pi_samples.len());
    for x in pi_samples {
        check_dim(mix.dim(), x.len())?;
        points.push((x.clone(), target.log_q(x)));
    }
    let mut r = swb_core(target, mix, &points, None, n2, options, rng)?;
    r.target_evals = target.evals() - before;
    Ok(r)
}

/// Stochastic Warp-U bridge on the sampler's cached `(psi, theta*, log q~_psi)`;
/// only the `K n2` `phi` evaluations are new.
pub fn stochastic_warpu_bridge_from_caches<R: Rng + ?Sized>(
    target: &Target,
    mix: &GaussianMixture,
    caches: &[WarpCache],
    n2: usize,
    options: SwbOptions,
    rng: &mut R,
) -> Result<BridgeResult> {
    check_dim(mix.dim(), target.dim())?;
    if caches.is_empty() {
        return Err(Error::InvalidInput("no cached steps".into()));
    }
    let before = target.evals();
    // theta_MH = H_psi(theta*) and log q(theta_MH) are recoverable from the cache.
    let mut points = Vec::with_capacity(caches.len());
    let mut psis = Vec::with_capacity(caches.len());
    for c in caches {
        if c.psi >= mix.k() {
            return Err(Error::InvalidInput(
                "cache refers to a component outside the mixture".into(),
            ));
        }
        let x = mix.inverse_warp_unchecked(&c.theta_star, c.psi);
        let lq = c.log_component - log_std_normal(&c.theta_star) + mix.ln_pdf(&x);
        points.push((x, lq));
        psis.push(c.psi);
    }
    let mut r = swb_core(target, mix, &points, Some(psis), n2, options, rng)?;
    r.target_evals = target.evals() - before;
    Ok(r)
}

fn swb_core<R: Rng + ?Sized>(
    target: &Target,
    mix: &GaussianMixture,
    points: &[(Vec<f64>, f64)],
    cached_psi: Option<Vec<usize>>,
    n2: usize,
    options: SwbOptions,
    rng: &mut R,
) -> Result<BridgeResult> {
    if n2 == 0 {
        return Err(Error::InvalidInput("n2 must be at least 1".into()));
    }
    let mut current = mix.clone();
    let mut original: Vec<usize> = (0..mix.k()).collect();
    let mut merged = Vec::new();
    let mut assign = cached_psi;
    let psis = loop {
        let psis = match assign.take() {
            Some(p) => p,
            None => points
                .iter()
                .map(|(x, _)| current.responsibilities_unchecked(x).sample(rng))
                .collect(),
        };
        let mut counts = vec![0usize; current.k()];
        for &p in &psis {
            counts[p] += 1;
        }
        let small = (0..current.k())
            .filter(|&k| current.weights()[k] > 0.0 && counts[k] < options.min_component_count)
            .min_by_key(|&k| counts[k]);
        let Some(k) = small else { break psis };
        if options.policy == SmallComponentPolicy::Error || current.k() == 1 {
            return Err(Error::SmallComponent {
                component: original[k],
                count: counts[k],
                min: options.min_component_count,
            });
        }
        let into = nearest_component(&current, k);
        current = merge_components(&current, k, into)?;
        merged.push(original.remove(k));
    };

    let mut per = Vec::with_capacity(current.k());
    let mut c_hat = 0.0;
    let mut var_c = 0.0;
    let mut iterations = 0;
    for k in 0..current.k() {
        let w = current.weights()[k];
        let count = psis.iter().filter(|&&p| p == k).count();
        if w == 0.0 {
            per.push(ComponentEstimate {
                weight: 0.0,
                c_hat: 0.0,
                count,
                iterations: 0,
                se_hat: None,
            });
            continue;
        }
        let mut q_s1 = Vec::with_capacity(count);
        let mut phi_s1 = Vec::with_capacity(count);
        for ((x, lq), _) in points.iter().zip(&psis).filter(|(_, &p)| p == k) {
            let star = current.forward_warp_unchecked(x, k);
            let lphi = log_std_normal(&star);
            q_s1.push(if *lq == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                lphi + lq - current.ln_pdf(x)
            });
            phi_s1.push(lphi);
        }
        let mut q_s2 = Vec::with_capacity(n2);
        let mut phi_s2 = Vec::with_capacity(n2);
        for _ in 0..n2 {
            let z = std_normal_vec(rng, current.dim());
            let x = current.inverse_warp_unchecked(&z, k);
            let lq = target.log_q(&x);
            let lphi = log_std_normal(&z);
            q_s2.push(if lq == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                lphi + lq - current.ln_pdf(&x)
            });
            phi_s2.push(lphi);
        }
        let r = iterative_bridge(
            BridgeInput {
                log_q1_on_s1: &q_s1,
                log_q2_on_s1: &phi_s1,
                log_q1_on_s2: &q_s2,
                log_q2_on_s2: &phi_s2,
            },
            options.bridge,
        )?;
        c_hat += w * r.c_hat;
        if let Some(se) = r.se_hat {
            var_c += (w * r.c_hat * se).powi(2);
        }
        iterations = iterations.max(r.iterations);
        per.push(ComponentEstimate {
            weight: w,
            c_hat: r.c_hat,
            count,
            iterations: r.iterations,
            se_hat: r.se_hat,
        });
    }
    Ok(BridgeResult {
        c_hat,
        lambda_hat: c_hat.ln(),
        iterations,
        per_component: Some(per),
        target_evals: 0,
        se_hat: Some(var_c.sqrt() / c_hat),
        merged,
    })
}

fn nearest_component(mix: &GaussianMixture, k: usize) -> usize {
    (0..mix.k())
        .filter(|&j| j != k)
        .min_by(|&a, &b| {
            sq_dist(&mix.means()[a], &mix.means()[k]).total_cmp(&sq_dist(&mix.means()[b], &mix.means()[k]))
        })
        .expect("at least two components")
}

/// Replace components `a` and `b` by one with matching weight, mean and covariance.
pub fn merge_components(mix: &GaussianMixture, a: usize, b: usize) -> Result<GaussianMixture> {
    let d = mix.dim();
    let (wa, wb) = (mix.weights()[a], mix.weights()[b]);
    let w = wa + wb;
    let (ma, mb) = (&mix.means()[a], &mix.means()[b]);
    let mean: Vec<f64> = (0..d).map(|i| (wa * ma[i] + wb * mb[i]) / w).collect();
    let (ca, cb) = (mix.scales()[a].covariance(), mix.scales()[b].covariance());
    let mut cov = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let second = wa * (ca[i * d + j] + ma[i] * ma[j]) + wb * (cb[i * d + j] + mb[i] * mb[j]);
            cov[i * d + j] = second / w - mean[i] * mean[j];
        }
    }
    let scale = LowerTriangular::cholesky(d, &cov)?;
    let mut weights = Vec::with_capacity(mix.k() - 1);
    let mut means = Vec::with_capacity(mix.k() - 1);
    let mut scales = Vec::with_capacity(mix.k() - 1);
    for k in 0..mix.k() {
        if k == a {
            continue;
        }
        if k == b {
            weights.push(w);
            means.push(mean.clone());
            scales.push(scale.clone());
        } else {
            weights.push(mix.weights()[k]);
            means.push(mix.means()[k].clone());
            scales.push(mix.scales()[k].clone());
        }
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-13 {
        weights.iter_mut().for_each(|v| *v /= total);
    }
    GaussianMixture::new(weights, means, scales)
}
