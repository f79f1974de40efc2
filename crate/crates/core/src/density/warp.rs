//! The Warp-U transformed densities and the inverse index distribution.

use crate::density::{GaussianMixture, SimplexVector, Target};
use crate::error::{check_dim, Error, Result};
use crate::math::{log_std_normal, log_sum_exp};

/// Everything computed while back-mapping a standardized point through all K components.
///
/// `log_terms[k] = log(w_k q~_k(x*))`, so `nu` is their normalization and
/// `q~(x*)` their sum. Samplers and estimators reuse these instead of calling the
/// target again.
#[derive(Debug, Clone, PartialEq)]
pub struct BackMap {
    pub x_star: Vec<f64>,
    /// `H_k(x*)` for each k.
    pub points: Vec<Vec<f64>>,
    /// `log q(H_k(x*))` for each k.
    pub log_q: Vec<f64>,
    /// `log(w_k q~_k(x*))` for each k.
    pub log_terms: Vec<f64>,
}

impl BackMap {
    /// Evaluate the target at all K back-mapped points (exactly K evaluations).
    pub fn compute(mix: &GaussianMixture, target: &Target, x_star: &[f64]) -> Result<Self> {
        check_dim(mix.dim(), x_star.len())?;
        check_dim(mix.dim(), target.dim())?;
        Ok(Self::compute_unchecked(mix, target, x_star))
    }

    pub(crate) fn compute_unchecked(mix: &GaussianMixture, target: &Target, x_star: &[f64]) -> Self {
        let k = mix.k();
        let log_phi = log_std_normal(x_star);
        let mut points = Vec::with_capacity(k);
        let mut log_q = Vec::with_capacity(k);
        let mut log_terms = Vec::with_capacity(k);
        for j in 0..k {
            let x = mix.inverse_warp_unchecked(x_star, j);
            let lq = target.log_q(&x);
            let term = if lq == f64::NEG_INFINITY || mix.weights()[j] == 0.0 {
                f64::NEG_INFINITY
            } else {
                mix.log_weight(j) + log_phi + lq - mix.ln_pdf(&x)
            };
            points.push(x);
            log_q.push(lq);
            log_terms.push(term);
        }
        Self {
            x_star: x_star.to_vec(),
            points,
            log_q,
            log_terms,
        }
    }

    /// `nu(. | x*)`; degenerate-state error when every term is `-inf`.
    pub fn nu(&self) -> Result<SimplexVector> {
        SimplexVector::from_log_weights(&self.log_terms).ok_or(Error::DegenerateState)
    }

    /// `log q~(x*)`.
    pub fn log_warped(&self) -> f64 {
        log_sum_exp(&self.log_terms)
    }
}

/// `nu(psi | x*)` together with the cached back-mapped states and their `log q` values.
pub fn inverse_index_distribution(
    mix: &GaussianMixture,
    target: &Target,
    x_star: &[f64],
) -> Result<(SimplexVector, BackMap)> {
    let back = BackMap::compute(mix, target, x_star)?;
    let nu = back.nu()?;
    Ok((nu, back))
}

/// `log q~(x*)`, using K target evaluations.
pub fn warped_unnormalized_density(mix: &GaussianMixture, target: &Target, x_star: &[f64]) -> Result<f64> {
    Ok(BackMap::compute(mix, target, x_star)?.log_warped())
}

/// `log q~_k(x*) = log phi(x*) + log q(H_k x*) - log phi_mix(H_k x*)`, one target evaluation.
pub fn component_warped_density(mix: &GaussianMixture, target: &Target, x_star: &[f64], k: usize) -> Result<f64> {
    let x = mix.inverse_warp(x_star, k)?;
    check_dim(mix.dim(), target.dim())?;
    let lq = target.log_q(&x);
    if lq == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(log_std_normal(x_star) + lq - mix.ln_pdf(&x))
}

/// Matrix of `pi_{psi', psi}(theta)` (scaled by c, so built from q), indexed `[psi'][psi]`.
///
/// Entry `(psi', psi)` is the mass arriving at `theta` from the transition that used
/// `psi` forward and `psi'` backward. All entries sum to `q(theta)`; summing over
/// `psi'` gives `f^{(psi)}(theta)`. Uses K^2 target evaluations.
pub fn mass_transport_decomposition(mix: &GaussianMixture, target: &Target, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_dim(mix.dim(), theta.len())?;
    let k = mix.k();
    let mut out = vec![vec![0.0; k]; k];
    for (psi_b, row) in out.iter_mut().enumerate() {
        // theta = H_{psi'}(x*) pins down x*; the K sources are xi_psi = H_psi(x*).
        let x_star = mix.forward_warp_unchecked(theta, psi_b);
        let back = BackMap::compute_unchecked(mix, target, &x_star);
        let log_z = log_sum_exp(&back.log_terms);
        if !log_z.is_finite() {
            continue;
        }
        let log_nu = back.log_terms[psi_b] - log_z;
        for (psi_f, cell) in row.iter_mut().enumerate() {
            let lq = back.log_q[psi_f];
            if lq == f64::NEG_INFINITY {
                continue;
            }
            let xi = &back.points[psi_f];
            let log_resp = mix.log_weighted_component(psi_f, xi) - mix.ln_pdf(xi);
            let log_jac = mix.log_det(psi_f) - mix.log_det(psi_b);
            *cell = (lq + log_jac + log_resp + log_nu).exp();
        }
    }
    Ok(out)
}

/// `f^{(psi)}(theta)`: the part of `q(theta)` transported from component `psi`.
pub fn transported_from(matrix: &[Vec<f64>]) -> Vec<f64> {
    let k = matrix.len();
    (0..k).map(|psi| matrix.iter().map(|row| row[psi]).sum()).collect()
}
