//! Predicted asymptotic variances of the Warp-U bridge estimators.
//!
//! Every quantity is a `phi`-expectation of the component ratios
//! `r_k(z) = q(H_k z) / phi_mix(H_k z) = q~_k(z) / phi(z)`: `c_k = E r_k`,
//! `p~_k / phi = r_k / c_k`, and `pi~ / phi = sum_k w_k r_k / c`.

use serde::{Deserialize, Serialize};

use crate::density::{GaussianMixture, Integration, Target};
use crate::error::{check_dim, Error, Result};
use crate::math::log_std_normal;
use crate::quadrature::{integrate, integrate_2d};
use crate::stats::mean_se as mean_se_pair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceDiagnostics {
    /// `c = sum_k w_k c_k`.
    pub c: f64,
    pub c_k: Vec<f64>,
    /// `w~_k = w_k c_k / c`.
    pub w_tilde: Vec<f64>,
    /// `chi^2_P(phi, p~_k)`.
    pub chi2_components: Vec<f64>,
    /// Predicted `(n1 + n2) Var(lambda_WB) = chi^2_P(phi, pi~)`.
    pub var_wb_pred: f64,
    /// Predicted `(n1 + n2) Var(lambda_SWB) = sum_k w~_k^2 (1 + beta) / (w~_k + beta) chi^2_P(phi, p~_k)`.
    pub var_swb_pred: f64,
    /// Part of `sum_k w~_k^2 chi^2_P(phi, p~_k)` along the all-ones direction.
    pub term_i: f64,
    /// The orthogonal remainder.
    pub term_ii: f64,
    /// `(beta + 1) / (beta (K - 1) - 1)`; `None` when the denominator is not positive.
    pub beta_1k: Option<f64>,
    /// Whether `term_i >= beta_1k * term_ii`, the condition under which the
    /// stratified estimator has the smaller asymptotic variance.
    pub condition_holds: Option<bool>,
    /// Monte Carlo standard error of `var_wb_pred` (draw-based evaluation only).
    pub var_wb_se: Option<f64>,
    /// Quadrature short of tolerance, or a Monte Carlo SE above 10% of a value.
    pub low_confidence: bool,
}

/// Ratios `r_k(z)` for every component, K evaluations.
fn ratios(mix: &GaussianMixture, target: &Target, z: &[f64]) -> Vec<f64> {
    (0..mix.k())
        .map(|k| {
            let x = mix.inverse_warp_unchecked(z, k);
            let lq = target.log_q(&x);
            if lq == f64::NEG_INFINITY {
                0.0
            } else {
                (lq - mix.ln_pdf(&x)).exp()
            }
        })
        .collect()
}

struct Expectation {
    value: f64,
    se: Option<f64>,
    low_confidence: bool,
}

/// `E_phi f(r(z))` for an integrand built from the ratio vector.
fn phi_expectation(
    mix: &GaussianMixture,
    target: &Target,
    integration: Integration,
    draws_ratios: Option<&[Vec<f64>]>,
    f: &dyn Fn(&[f64]) -> f64,
) -> Result<Expectation> {
    let weighted = |z: &[f64]| {
        let lphi = log_std_normal(z);
        let v = f(&ratios(mix, target, z));
        if v == 0.0 || lphi == f64::NEG_INFINITY && v.is_finite() {
            0.0
        } else {
            v * lphi.exp()
        }
    };
    let (value, se, converged) = match integration {
        Integration::Line(lo, hi) => {
            let r = integrate(|z| weighted(&[z]), lo, hi, 1e-12, 1e-10);
            (r.value, None, r.converged)
        }
        Integration::Plane(xr, yr) => {
            let r = integrate_2d(|x, y| weighted(&[x, y]), xr, yr, 1e-10, 1e-8);
            (r.value, None, r.converged)
        }
        Integration::Draws(_) => {
            let rs = draws_ratios.expect("ratios precomputed for draws");
            let vals: Vec<f64> = rs.iter().map(|r| f(r)).collect();
            let (m, se) = mean_se_pair(&vals);
            (m, Some(se), true)
        }
    };
    if !value.is_finite() {
        return Err(Error::Divergent("phi-expectation is not finite".into()));
    }
    let low_confidence = !converged || se.is_some_and(|s| s > 0.1 * value.abs() && value != 0.0);
    Ok(Expectation {
        value,
        se,
        low_confidence,
    })
}

/// Predicted asymptotic variances of the Warp-U and stochastic Warp-U bridge
/// estimators with `beta = n2 / n1`, and the decomposition of the stratified
/// discrepancy into its all-ones part and remainder.
///
/// `Integration::Draws` must hold standard normal draws; quadrature is meant for
/// one and two dimensions. Infinite divergences come back as [`Error::Divergent`].
pub fn asymptotic_variance_diagnostics(
    mix: &GaussianMixture,
    target: &Target,
    beta: f64,
    integration: Integration,
) -> Result<VarianceDiagnostics> {
    check_dim(mix.dim(), target.dim())?;
    if !(beta > 0.0) {
        return Err(Error::InvalidInput("beta must be positive".into()));
    }
    let k = mix.k();
    let d = mix.dim();
    match integration {
        Integration::Line(..) if d != 1 => return Err(Error::InvalidInput("line quadrature needs d = 1".into())),
        Integration::Plane(..) if d != 2 => return Err(Error::InvalidInput("plane quadrature needs d = 2".into())),
        Integration::Draws(ds) if ds.len() < 2 => return Err(Error::InvalidInput("need at least two draws".into())),
        _ => {}
    }
    let draw_ratios: Option<Vec<Vec<f64>>> = match integration {
        Integration::Draws(ds) => Some(
            ds.iter()
                .map(|z| {
                    check_dim(d, z.len())?;
                    Ok(ratios(mix, target, z))
                })
                .collect::<Result<_>>()?,
        ),
        _ => None,
    };
    let dr = draw_ratios.as_deref();
    let mut low = false;
    let mut expect = |f: &dyn Fn(&[f64]) -> f64| -> Result<Expectation> {
        let e = phi_expectation(mix, target, integration, dr, f)?;
        low |= e.low_confidence;
        Ok(e)
    };

    let mut c_k = Vec::with_capacity(k);
    for j in 0..k {
        c_k.push(expect(&|r: &[f64]| r[j])?.value);
    }
    let w = mix.weights();
    let c: f64 = w.iter().zip(&c_k).map(|(a, b)| a * b).sum();
    if !(c > 0.0) {
        return Err(Error::Numeric("estimated normalizing constant is not positive".into()));
    }
    let w_tilde: Vec<f64> = w.iter().zip(&c_k).map(|(a, b)| a * b / c).collect();

    let mut chi2_components = Vec::with_capacity(k);
    for j in 0..k {
        if c_k[j] == 0.0 {
            chi2_components.push(0.0);
            continue;
        }
        let cj = c_k[j];
        chi2_components.push(expect(&|r: &[f64]| (r[j] / cj - 1.0).powi(2))?.value);
    }
    // d_k = w~_k (r_k / c_k - 1); sum_k d_k = pi~/phi - 1.
    let disc = |r: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|j| {
                if c_k[j] == 0.0 {
                    0.0
                } else {
                    w_tilde[j] * (r[j] / c_k[j] - 1.0)
                }
            })
            .collect()
    };
    let wb = expect(&|r: &[f64]| disc(r).iter().sum::<f64>().powi(2))?;
    let var_wb_pred = wb.value;
    let term_i = var_wb_pred / k as f64;
    let term_ii = expect(&|r: &[f64]| {
        let dv = disc(r);
        let m = dv.iter().sum::<f64>() / k as f64;
        dv.iter().map(|v| (v - m).powi(2)).sum()
    })?
    .value;
    let var_swb_pred = w_tilde
        .iter()
        .zip(&chi2_components)
        .map(|(wt, chi)| wt * wt * (1.0 + beta) / (wt + beta) * chi)
        .sum();
    let denom = beta * (k as f64 - 1.0) - 1.0;
    let beta_1k = (denom > 0.0).then(|| (beta + 1.0) / denom);
    Ok(VarianceDiagnostics {
        c,
        c_k,
        w_tilde,
        chi2_components,
        var_wb_pred,
        var_swb_pred,
        term_i,
        term_ii,
        beta_1k,
        condition_holds: beta_1k.map(|b| term_i >= b * term_ii),
        var_wb_se: wb.se,
        low_confidence: low,
    })
}
