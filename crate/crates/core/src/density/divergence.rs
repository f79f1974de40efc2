//! Harmonic and Pearson chi-square divergences between normalized densities.
//!
//! Densities are passed as log-density closures. One- and two-dimensional
//! problems are integrated by quadrature; anything else needs draws from the
//! integrating density and gets a Monte Carlo estimate with its standard error.

use crate::error::{Error, Result};
use crate::math::log_add_exp;
use crate::quadrature::{integrate, integrate_2d};

pub type LogDensityFn<'a> = &'a dyn Fn(&[f64]) -> f64;

/// How an integral against a density is evaluated.
#[derive(Debug, Clone, Copy)]
pub enum Integration<'a> {
    /// One-dimensional quadrature over `(lo, hi)`; bounds may be infinite.
    Line(f64, f64),
    /// Two-dimensional iterated quadrature over a rectangle.
    Plane((f64, f64), (f64, f64)),
    /// Monte Carlo over draws from the first (integrating) density.
    Draws(&'a [Vec<f64>]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceEstimate {
    pub value: f64,
    /// Present for Monte Carlo estimates.
    pub std_error: Option<f64>,
    /// Quadrature did not reach tolerance, or MC standard error above 10% of the value.
    pub low_confidence: bool,
}

const QUAD_ABS: f64 = 1e-12;
const QUAD_REL: f64 = 1e-10;

/// Expectation under `p1` of `exp(log_g(log p1, log p2))`.
fn expectation(
    log_p1: LogDensityFn,
    log_p2: LogDensityFn,
    integration: Integration,
    log_g: &dyn Fn(f64, f64) -> f64,
) -> Result<DivergenceEstimate> {
    match integration {
        Integration::Line(lo, hi) => {
            let r = integrate(
                |x| {
                    let l1 = log_p1(&[x]);
                    let l2 = log_p2(&[x]);
                    weighted(l1, l2, log_g)
                },
                lo,
                hi,
                QUAD_ABS,
                QUAD_REL,
            );
            finish_quadrature(r.value, r.converged)
        }
        Integration::Plane(xr, yr) => {
            let r = integrate_2d(
                |x, y| {
                    let l1 = log_p1(&[x, y]);
                    let l2 = log_p2(&[x, y]);
                    weighted(l1, l2, log_g)
                },
                xr,
                yr,
                QUAD_ABS,
                QUAD_REL,
            );
            finish_quadrature(r.value, r.converged)
        }
        Integration::Draws(draws) => {
            if draws.len() < 2 {
                return Err(Error::InvalidInput("Monte Carlo needs at least two draws".into()));
            }
            let vals: Vec<f64> = draws.iter().map(|x| log_g(log_p1(x), log_p2(x)).exp()).collect();
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergent("non-finite Monte Carlo term".into()));
            }
            let n = vals.len() as f64;
            let sum: f64 = vals.iter().sum();
            let max = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            // Tail-stability check: a single draw carrying half the total mass means the
            // second moment is not being captured.
            if sum.abs() > 0.0 && max > 0.5 * sum.abs() && vals.len() > 20 {
                return Err(Error::Divergent(format!(
                    "one draw contributes {:.3} of the Monte Carlo sum",
                    max / sum.abs()
                )));
            }
            let mean = sum / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            Ok(DivergenceEstimate {
                value: mean,
                std_error: Some(se),
                low_confidence: mean.abs() > 0.0 && se > 0.1 * mean.abs(),
            })
        }
    }
}

fn weighted(l1: f64, l2: f64, log_g: &dyn Fn(f64, f64) -> f64) -> f64 {
    let lg = log_g(l1, l2);
    if l1 == f64::NEG_INFINITY {
        return if lg == f64::INFINITY { f64::INFINITY } else { 0.0 };
    }
    (l1 + lg).exp()
}

fn finish_quadrature(value: f64, converged: bool) -> Result<DivergenceEstimate> {
    if !value.is_finite() {
        return Err(Error::Divergent("quadrature produced a non-finite value".into()));
    }
    Ok(DivergenceEstimate {
        value,
        std_error: None,
        low_confidence: !converged,
    })
}

/// `chi^2_P(p1, p2) = int (p2/p1 - 1)^2 p1`, with `p1` the integrating density.
pub fn pearson_chi2(
    log_p1: LogDensityFn,
    log_p2: LogDensityFn,
    integration: Integration,
) -> Result<DivergenceEstimate> {
    expectation(log_p1, log_p2, integration, &|l1, l2| {
        if l2 == f64::NEG_INFINITY {
            return 0.0;
        }
        if l1 == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        let d = l2 - l1;
        if d > 30.0 {
            2.0 * d
        } else {
            2.0 * d.exp_m1().abs().ln()
        }
    })
}

/// Sample-size adjusted harmonic divergence
/// `H_A = 1 - int [eta1/p1 + eta2/p2]^{-1}` with `eta_i ∝ 1/s_i` and `eta1 + eta2 = 1`,
/// i.e. `eta1 = s2`, `eta2 = s1`. Equal densities give 0, disjoint supports give 1.
pub fn harmonic_divergence(
    log_p1: LogDensityFn,
    log_p2: LogDensityFn,
    s1: f64,
    s2: f64,
    integration: Integration,
) -> Result<DivergenceEstimate> {
    if !(s1 > 0.0 && s2 > 0.0) || (s1 + s2 - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput(
            "sample fractions must be positive and sum to 1".into(),
        ));
    }
    let (eta1, eta2) = (s2, s1);
    // [eta1/p1 + eta2/p2]^{-1} / p1 = 1 / (eta1 + eta2 p1/p2)
    let overlap = expectation(log_p1, log_p2, integration, &|l1, l2| {
        if l2 == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        -log_add_exp(eta1.ln(), eta2.ln() + l1 - l2)
    })?;
    Ok(DivergenceEstimate {
        value: 1.0 - overlap.value,
        ..overlap
    })
}
