use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{log_add_exp, log_sum_exp};

/// Log-density values for a two-sample bridge estimate of `r = c1 / c2`.
///
/// Sample set 1 is drawn from `q1 / c1`, set 2 from `q2 / c2`.
#[derive(Debug, Clone, Copy)]
pub struct BridgeInput<'a> {
    pub log_q1_on_s1: &'a [f64],
    pub log_q2_on_s1: &'a [f64],
    pub log_q1_on_s2: &'a [f64],
    pub log_q2_on_s2: &'a [f64],
}

/// Iteration controls for [`iterative_bridge`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

/// One stratum of a stochastic Warp-U estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentEstimate {
    pub weight: f64,
    pub c_hat: f64,
    /// Warped target samples assigned to this component (`n_1k`).
    pub count: usize,
    pub iterations: usize,
    pub se_hat: Option<f64>,
}

/// Estimate of a normalizing constant (or ratio) with its bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeResult {
    pub c_hat: f64,
    /// `log c_hat`, computed directly in log space.
    pub lambda_hat: f64,
    pub iterations: usize,
    pub per_component: Option<Vec<ComponentEstimate>>,
    pub target_evals: u64,
    /// Standard error of `lambda_hat`.
    pub se_hat: Option<f64>,
    /// Components merged away under the merge policy, by original index.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merged: Vec<usize>,
}

impl BridgeResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bridge result serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidInput(e.to_string()))
    }
}

fn log_ratios(lq1: &[f64], lq2: &[f64]) -> Result<Vec<f64>> {
    if lq1.len() != lq2.len() {
        return Err(Error::InvalidInput(
            "density tables of one sample set differ in length".into(),
        ));
    }
    lq1.iter()
        .zip(lq2)
        .map(|(&a, &b)| {
            if a.is_nan() || b.is_nan() || a == f64::INFINITY || b == f64::INFINITY {
                return Err(Error::InvalidInput("log-density values must be finite or -inf".into()));
            }
            if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
                return Err(Error::InvalidInput(
                    "a sample has zero density under both q1 and q2".into(),
                ));
            }
            Ok(a - b)
        })
        .collect()
}

/// `log(s1 e^l + s2 r)`, tolerating infinite `l`.
fn log_mix(l: f64, ln_s1: f64, ln_s2: f64, log_r: f64) -> f64 {
    if l == f64::INFINITY {
        f64::INFINITY
    } else {
        log_add_exp(ln_s1 + l, ln_s2 + log_r)
    }
}

/// `log(e^l / (s1 e^l + s2 r))`.
fn log_num(l: f64, ln_s1: f64, ln_s2: f64, log_r: f64) -> f64 {
    if l == f64::INFINITY {
        -ln_s1
    } else if l == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        l - log_mix(l, ln_s1, ln_s2, log_r)
    }
}

struct Terms {
    num: Vec<f64>,
    den: Vec<f64>,
}

fn terms(l1: &[f64], l2: &[f64], ln_s1: f64, ln_s2: f64, log_r: f64) -> Terms {
    Terms {
        num: l2.iter().map(|&l| log_num(l, ln_s1, ln_s2, log_r)).collect(),
        den: l1.iter().map(|&l| -log_mix(l, ln_s1, ln_s2, log_r)).collect(),
    }
}

/// Relative variance `Var(x) / E(x)^2` of values given on the log scale.
fn rel_var(logs: &[f64]) -> f64 {
    let n = logs.len() as f64;
    if logs.len() < 2 {
        return 0.0;
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let xs: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    var / (mean * mean)
}

/// Optimal-bridge fixed point for `r = c1 / c2`.
///
/// Works on supplied log-density tables only; no target calls. The returned
/// `se_hat` is the delta-method standard error of `log r` for independent draws.
pub fn iterative_bridge(input: BridgeInput, options: BridgeOptions) -> Result<BridgeResult> {
    let l1 = log_ratios(input.log_q1_on_s1, input.log_q2_on_s1)?;
    let l2 = log_ratios(input.log_q1_on_s2, input.log_q2_on_s2)?;
    let (n1, n2) = (l1.len(), l2.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidInput("both sample sets must be nonempty".into()));
    }
    if !(options.tol > 0.0) || options.max_iter == 0 {
        return Err(Error::InvalidInput("tol and max_iter must be positive".into()));
    }
    let ln_n1 = (n1 as f64).ln();
    let ln_n2 = (n2 as f64).ln();
    let ln_s1 = ln_n1 - ((n1 + n2) as f64).ln();
    let ln_s2 = ln_n2 - ((n1 + n2) as f64).ln();

    let finite: Vec<f64> = l1.iter().chain(&l2).copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::NoOverlap);
    }
    let mut log_r = finite.iter().sum::<f64>() / finite.len() as f64;
    for iteration in 1..=options.max_iter {
        let t = terms(&l1, &l2, ln_s1, ln_s2, log_r);
        let num = log_sum_exp(&t.num) - ln_n2;
        let den = log_sum_exp(&t.den) - ln_n1;
        if num == f64::NEG_INFINITY || den == f64::NEG_INFINITY || !num.is_finite() || !den.is_finite() {
            return Err(Error::NoOverlap);
        }
        let next = num - den;
        let delta = (next - log_r).abs();
        log_r = next;
        if delta < options.tol {
            let t = terms(&l1, &l2, ln_s1, ln_s2, log_r);
            let var = rel_var(&t.num) / n2 as f64 + rel_var(&t.den) / n1 as f64;
            return Ok(BridgeResult {
                c_hat: log_r.exp(),
                lambda_hat: log_r,
                iterations: iteration,
                per_component: None,
                target_evals: 0,
                se_hat: Some(var.sqrt()),
                merged: Vec::new(),
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: options.max_iter,
        last_log_r: log_r,
    })
}

/// Batch-means standard error of `log r`: split both sets into `batches`
/// contiguous blocks, estimate on each, and use the spread of the block estimates.
/// Suited to correlated (MCMC) draws.
pub fn batch_means_log_se(input: BridgeInput, batches: usize, options: BridgeOptions) -> Result<f64> {
    let n1 = input.log_q1_on_s1.len();
    let n2 = input.log_q1_on_s2.len();
    if batches < 2 || n1 < batches || n2 < batches {
        return Err(Error::InvalidInput(
            "need at least two batches with one draw each".into(),
        ));
    }
    let block = |n: usize, b: usize| (b * n / batches, (b + 1) * n / batches);
    let mut logs = Vec::with_capacity(batches);
    for b in 0..batches {
        let (a1, e1) = block(n1, b);
        let (a2, e2) = block(n2, b);
        let r = iterative_bridge(
            BridgeInput {
                log_q1_on_s1: &input.log_q1_on_s1[a1..e1],
                log_q2_on_s1: &input.log_q2_on_s1[a1..e1],
                log_q1_on_s2: &input.log_q1_on_s2[a2..e2],
                log_q2_on_s2: &input.log_q2_on_s2[a2..e2],
            },
            options,
        )?;
        logs.push(r.lambda_hat);
    }
    Ok((crate::math::variance(&logs) / batches as f64).sqrt())
}
