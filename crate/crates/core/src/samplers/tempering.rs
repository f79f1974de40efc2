use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::density::Target;
use crate::error::{check_dim, Error, Result};
use crate::math::std_normal_vec;
use crate::samplers::{mh_accept, SamplerTrace, StepMeta};

/// Inverse-temperature ladder, coldest level first (`beta_0 = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Ladder {
    /// `beta_i = 1 - i / n`.
    EquallySpaced,
    /// Explicit values, used as given.
    Fixed { betas: Vec<f64> },
    /// Start equally spaced, then adapt the log-spacings by stochastic
    /// approximation so each adjacent pair swaps at `target_rate`.
    Adaptive {
        #[serde(default = "default_swap_rate")]
        target_rate: f64,
    },
}

fn default_swap_rate() -> f64 {
    0.234
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperingConfig {
    pub n_levels: usize,
    pub ladder: Ladder,
    pub iterations: usize,
    /// Random-walk scale of the cold chain; level i uses `sigma / sqrt(beta_i)`
    /// unless `sigma_per_level` is given.
    pub sigma: f64,
    #[serde(default)]
    pub sigma_per_level: Option<Vec<f64>>,
    pub theta0: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TemperingTrace {
    /// The `beta = 1` chain.
    pub cold: SamplerTrace,
    /// Ladder at the end of the run.
    pub betas: Vec<f64>,
    /// Per adjacent pair `(i, i + 1)`.
    pub swap_attempts: Vec<u64>,
    pub swap_accepts: Vec<u64>,
    pub target_evals: u64,
}

impl TemperingTrace {
    pub fn swap_rates(&self) -> Vec<f64> {
        self.swap_attempts
            .iter()
            .zip(&self.swap_accepts)
            .map(|(&n, &a)| if n == 0 { 0.0 } else { a as f64 / n as f64 })
            .collect()
    }
}

fn betas_from_log_spacings(rho: &[f64]) -> Vec<f64> {
    let mut betas = Vec::with_capacity(rho.len() + 1);
    betas.push(1.0);
    for r in rho {
        let last = *betas.last().expect("non-empty");
        betas.push(last * (-r.exp()).exp());
    }
    betas
}

/// Parallel tempering with random-walk moves at every level and deterministic
/// even/odd sweeps of adjacent swaps. Each iteration costs `n_levels` evaluations.
pub fn run_parallel_tempering(target: &Target, config: &TemperingConfig) -> Result<TemperingTrace> {
    check_dim(target.dim(), config.theta0.len())?;
    let n = config.n_levels;
    if n < 2 {
        return Err(Error::InvalidInput(
            "parallel tempering needs at least two levels".into(),
        ));
    }
    if !(config.sigma > 0.0) {
        return Err(Error::InvalidInput("sigma must be positive".into()));
    }
    let mut betas: Vec<f64> = match &config.ladder {
        Ladder::Fixed { betas } => {
            if betas.len() != n || betas.iter().any(|b| !(*b > 0.0 && *b <= 1.0)) {
                return Err(Error::InvalidInput(
                    "fixed ladder needs n_levels values in (0, 1]".into(),
                ));
            }
            betas.clone()
        }
        Ladder::EquallySpaced | Ladder::Adaptive { .. } => (0..n).map(|i| 1.0 - i as f64 / n as f64).collect(),
    };
    if let Some(s) = &config.sigma_per_level {
        if s.len() != n || s.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidInput(
                "sigma_per_level needs n_levels positive values".into(),
            ));
        }
    }
    let adaptive_rate = match config.ladder {
        Ladder::Adaptive { target_rate } => Some(target_rate),
        _ => None,
    };
    // log of the log-ratio between neighbouring betas
    let mut rho: Vec<f64> = betas.windows(2).map(|w| (w[0].ln() - w[1].ln()).ln()).collect();

    let mut rng = crate::Rng::seed_from_u64(config.seed);
    let mut thetas = vec![config.theta0.clone(); n];
    let lq0 = target.log_q(&config.theta0);
    let mut log_qs = vec![lq0; n];
    let mut trace = TemperingTrace {
        cold: SamplerTrace {
            samples: Vec::with_capacity(config.iterations),
            meta: Vec::with_capacity(config.iterations),
            caches: Vec::new(),
            target_evals: 0,
        },
        betas: Vec::new(),
        swap_attempts: vec![0; n - 1],
        swap_accepts: vec![0; n - 1],
        target_evals: 0,
    };
    let d = config.theta0.len();
    for t in 0..config.iterations {
        let mut cold_accepted = false;
        for i in 0..n {
            let sigma = match &config.sigma_per_level {
                Some(s) => s[i],
                None => config.sigma / betas[i].sqrt(),
            };
            let z = std_normal_vec(&mut rng, d);
            let prop: Vec<f64> = thetas[i].iter().zip(&z).map(|(x, e)| x + sigma * e).collect();
            let lq = target.log_q(&prop);
            let u: f64 = rng.random();
            if mh_accept(betas[i] * (lq - log_qs[i]), u) {
                thetas[i] = prop;
                log_qs[i] = lq;
                if i == 0 {
                    cold_accepted = true;
                }
            }
        }
        trace.target_evals += n as u64;
        for i in (t % 2..n - 1).step_by(2) {
            let log_ratio = (betas[i] - betas[i + 1]) * (log_qs[i + 1] - log_qs[i]);
            let u: f64 = rng.random();
            trace.swap_attempts[i] += 1;
            if mh_accept(log_ratio, u) {
                thetas.swap(i, i + 1);
                log_qs.swap(i, i + 1);
                trace.swap_accepts[i] += 1;
            }
            if let Some(target_rate) = adaptive_rate {
                let a = if log_ratio.is_nan() {
                    0.0
                } else {
                    log_ratio.min(0.0).exp()
                };
                let gain = 1.0 / (1.0 + t as f64).powf(0.6);
                // A pair that swaps too often is spaced too closely.
                rho[i] += gain * (a - target_rate);
            }
        }
        if adaptive_rate.is_some() {
            betas = betas_from_log_spacings(&rho);
        }
        trace.cold.samples.push(thetas[0].clone());
        trace.cold.meta.push(StepMeta {
            accepted: cold_accepted,
            psi: None,
            psi_prime: None,
            warp_skipped: false,
            evals: n as u64,
        });
    }
    trace.cold.target_evals = trace.target_evals;
    trace.betas = betas;
    Ok(trace)
}
