//! Fitting `phi_mix` by EM, keeping it inside the admissible parameter set, and the
//! refit schedule of the adaptive sampler.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::density::GaussianMixture;
use crate::error::{Error, Result};
use crate::linalg::LowerTriangular;
use crate::math::{log_sum_exp, LN_2PI};

/// Bounds that keep the mixture in a compact parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConstraints {
    /// Fits must use strictly fewer components than this.
    pub k_max: usize,
    /// Lower bound on `|S_k|`.
    pub det_min: f64,
    /// Upper bound on `|S_k|`.
    pub det_max: f64,
    /// Bound on `||mu_k||_2`.
    pub mean_bound: f64,
    /// Floor on the number of samples a component must receive in the stochastic
    /// bridge estimator.
    pub min_component_count: usize,
}

impl Default for FitConstraints {
    fn default() -> Self {
        Self {
            k_max: 256,
            det_min: 1e-12,
            det_max: 1e12,
            mean_bound: 1e6,
            min_component_count: 2,
        }
    }
}

impl FitConstraints {
    pub fn validate(&self) -> Result<()> {
        if self.k_max <= 1 {
            return Err(Error::InvalidInput("k_max must exceed 1".into()));
        }
        if !(self.det_min > 0.0 && self.det_min < self.det_max) {
            return Err(Error::InvalidInput("need 0 < det_min < det_max".into()));
        }
        if !(self.mean_bound > 0.0) {
            return Err(Error::InvalidInput("mean_bound must be positive".into()));
        }
        Ok(())
    }
}

/// Starting point for EM.
#[derive(Debug, Clone, Copy)]
pub enum EmInit<'a> {
    /// k-means++ seeding under this seed.
    Seed(u64),
    /// Start from an existing mixture (reseeding of empty components uses seed 0).
    Warm(&'a GaussianMixture),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub mixture: GaussianMixture,
    /// Observed-data log-likelihood of the parameters entering each iteration.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of times an empty component was re-seeded.
    pub reseeded: usize,
}

/// Fit a K-component full-covariance mixture and project it onto the constraints.
pub fn em_fit(samples: &[Vec<f64>], k: usize, constraints: &FitConstraints, init: EmInit) -> Result<GaussianMixture> {
    em_fit_detailed(samples, k, constraints, init, EmOptions::default()).map(|f| f.mixture)
}

pub fn em_fit_detailed(
    samples: &[Vec<f64>],
    k: usize,
    constraints: &FitConstraints,
    init: EmInit,
    options: EmOptions,
) -> Result<EmFit> {
    constraints.validate()?;
    let n = samples.len();
    if k == 0 {
        return Err(Error::InvalidInput("K must be positive".into()));
    }
    if k >= constraints.k_max {
        return Err(Error::InvalidInput(format!(
            "K={k} must be below k_max={}",
            constraints.k_max
        )));
    }
    let d = samples.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::InvalidInput("no samples".into()));
    }
    if n < k * (d + 1) {
        return Err(Error::InvalidInput(format!(
            "need at least K(d+1)={} samples, got {n}",
            k * (d + 1)
        )));
    }
    if samples.iter().any(|s| s.len() != d || s.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput(
            "samples must be finite with a common dimension".into(),
        ));
    }
    let (_, global_cov) = moments(samples, None);
    let reg: Vec<f64> = (0..d).map(|j| 1e-6 * global_cov[j * d + j].max(1e-12)).collect();

    let (mut params, seed) = match init {
        EmInit::Seed(seed) => (kmeans_pp(samples, k, seed, &global_cov)?, seed),
        EmInit::Warm(mix) => {
            if mix.k() != k || mix.dim() != d {
                return Err(Error::InvalidInput("warm start has the wrong shape".into()));
            }
            (Params::from_mixture(mix), 0)
        }
    };
    let mut rng = crate::Rng::seed_from_u64(seed.wrapping_add(0x5eed));

    let mut resp = vec![0.0; n * k];
    let mut lls = Vec::new();
    let mut converged = false;
    let mut reseeded = 0;
    let mut iterations = 0;
    for _ in 0..options.max_iter {
        let ll = params.e_step(samples, &mut resp);
        if !ll.is_finite() {
            return Err(Error::Numeric("EM log-likelihood is not finite".into()));
        }
        iterations += 1;
        if let Some(&prev) = lls.last() {
            let prev: f64 = prev;
            if (ll - prev).abs() <= options.rel_tol * ll.abs() {
                lls.push(ll);
                converged = true;
                break;
            }
        }
        lls.push(ll);
        reseeded += params.m_step(samples, &resp, &reg, &global_cov, &mut rng)?;
    }
    let mixture = enforce_constraints(&params.to_mixture()?, constraints);
    Ok(EmFit {
        mixture,
        log_likelihood: lls,
        iterations,
        converged,
        reseeded,
    })
}

/// Observed-data log-likelihood of a mixture on a sample set.
pub fn log_likelihood(mix: &GaussianMixture, samples: &[Vec<f64>]) -> f64 {
    samples.iter().map(|x| mix.ln_pdf(x)).sum()
}

/// Bayesian information criterion for each K in `ks` (smaller is better).
pub fn bic_sweep(
    samples: &[Vec<f64>],
    ks: &[usize],
    constraints: &FitConstraints,
    seed: u64,
) -> Result<Vec<(usize, f64, GaussianMixture)>> {
    let n = samples.len() as f64;
    let d = samples.first().map_or(0, Vec::len) as f64;
    ks.iter()
        .map(|&k| {
            let mix = em_fit(samples, k, constraints, EmInit::Seed(seed))?;
            let p = (k as f64 - 1.0) + k as f64 * d + k as f64 * d * (d + 1.0) / 2.0;
            let bic = -2.0 * log_likelihood(&mix, samples) + p * n.ln();
            Ok((k, bic, mix))
        })
        .collect()
}

/// Project a mixture onto the determinant, mean-norm and weight constraints.
///
/// Scale factors are rescaled as a whole, so only the volume changes. Idempotent.
pub fn enforce_constraints(mix: &GaussianMixture, c: &FitConstraints) -> GaussianMixture {
    let d = mix.dim() as f64;
    let slack = 1e-12;
    let scales = mix
        .scales()
        .iter()
        .map(|s| {
            let log_det = s.log_det();
            let mut s = s.clone();
            if log_det < c.det_min.ln() - slack {
                s.scale(((c.det_min.ln() - log_det) / d).exp());
            } else if log_det > c.det_max.ln() + slack {
                s.scale(((c.det_max.ln() - log_det) / d).exp());
            }
            s
        })
        .collect();
    let means = mix
        .means()
        .iter()
        .map(|m| {
            let r = crate::math::norm(m);
            if r > c.mean_bound * (1.0 + slack) {
                m.iter().map(|v| v * c.mean_bound / r).collect()
            } else {
                m.clone()
            }
        })
        .collect();
    let mut weights: Vec<f64> = mix.weights().iter().map(|w| w.max(0.0)).collect();
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 4.0 * f64::EPSILON * weights.len() as f64 {
        for w in &mut weights {
            *w /= total;
        }
    }
    GaussianMixture::new(weights, means, scales).expect("constraint projection keeps a valid mixture")
}

/// Refit probability at stage `s >= 1`: `exp(1 - s^{1/8})`.
pub fn update_schedule(s: usize) -> f64 {
    (1.0 - (s as f64).powf(0.125)).exp()
}

struct Params {
    d: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    chol: Vec<LowerTriangular>,
}

impl Params {
    fn from_mixture(mix: &GaussianMixture) -> Self {
        Self {
            d: mix.dim(),
            weights: mix.weights().to_vec(),
            means: mix.means().to_vec(),
            chol: mix.scales().to_vec(),
        }
    }

    fn to_mixture(&self) -> Result<GaussianMixture> {
        let total: f64 = self.weights.iter().sum();
        let w = self.weights.iter().map(|v| v / total).collect();
        GaussianMixture::new(w, self.means.clone(), self.chol.clone())
    }

    /// Fill responsibilities and return the log-likelihood.
    fn e_step(&self, samples: &[Vec<f64>], resp: &mut [f64]) -> f64 {
        let k = self.weights.len();
        let d = self.d;
        let consts: Vec<f64> = (0..k)
            .map(|j| self.weights[j].ln() - self.chol[j].log_det() - 0.5 * d as f64 * LN_2PI)
            .collect();
        let mut centered = vec![0.0; d];
        let mut z = vec![0.0; d];
        let mut ll = 0.0;
        for (i, x) in samples.iter().enumerate() {
            let row = &mut resp[i * k..(i + 1) * k];
            for j in 0..k {
                for t in 0..d {
                    centered[t] = x[t] - self.means[j][t];
                }
                solve_into(&self.chol[j], &centered, &mut z);
                let ss: f64 = z.iter().map(|v| v * v).sum();
                row[j] = consts[j] - 0.5 * ss;
            }
            let lse = log_sum_exp(row);
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
            ll += lse;
        }
        ll
    }

    fn m_step<R: Rng>(
        &mut self,
        samples: &[Vec<f64>],
        resp: &[f64],
        reg: &[f64],
        global_cov: &[f64],
        rng: &mut R,
    ) -> Result<usize> {
        let k = self.weights.len();
        let d = self.d;
        let n = samples.len();
        let mut reseeded = 0;
        for j in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            if nk < 1.0 {
                // Empty component: restart it at a random sample with the global spread.
                let pick = rng.random_range(0..n);
                self.means[j] = samples[pick].clone();
                self.chol[j] = LowerTriangular::cholesky(d, global_cov)
                    .or_else(|_| Ok::<_, Error>(LowerTriangular::diagonal(&vec![1.0; d])))?;
                self.weights[j] = 1.0 / k as f64;
                reseeded += 1;
                continue;
            }
            let mut mean = vec![0.0; d];
            for (i, x) in samples.iter().enumerate() {
                let r = resp[i * k + j];
                for t in 0..d {
                    mean[t] += r * x[t];
                }
            }
            for v in &mut mean {
                *v /= nk;
            }
            let mut cov = vec![0.0; d * d];
            for (i, x) in samples.iter().enumerate() {
                let r = resp[i * k + j];
                if r == 0.0 {
                    continue;
                }
                for a in 0..d {
                    let da = x[a] - mean[a];
                    for b in 0..=a {
                        cov[a * d + b] += r * da * (x[b] - mean[b]);
                    }
                }
            }
            for a in 0..d {
                for b in 0..=a {
                    cov[a * d + b] /= nk;
                    cov[b * d + a] = cov[a * d + b];
                }
                cov[a * d + a] += reg[a];
            }
            self.means[j] = mean;
            self.chol[j] = LowerTriangular::cholesky(d, &cov)?;
            self.weights[j] = nk / n as f64;
        }
        let total: f64 = self.weights.iter().sum();
        for w in &mut self.weights {
            *w /= total;
        }
        Ok(reseeded)
    }
}

fn solve_into(l: &LowerTriangular, b: &[f64], out: &mut [f64]) {
    let d = l.dim();
    let data = l.row_major();
    for i in 0..d {
        let mut s = b[i];
        for t in 0..i {
            s -= data[i * d + t] * out[t];
        }
        out[i] = s / data[i * d + i];
    }
}

/// Sample mean and covariance, optionally restricted to a subset of indices.
fn moments(samples: &[Vec<f64>], subset: Option<&[usize]>) -> (Vec<f64>, Vec<f64>) {
    let d = samples[0].len();
    let idx: Vec<usize> = match subset {
        Some(s) => s.to_vec(),
        None => (0..samples.len()).collect(),
    };
    let n = idx.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in &idx {
        for t in 0..d {
            mean[t] += samples[i][t];
        }
    }
    for v in &mut mean {
        *v /= n;
    }
    let mut cov = vec![0.0; d * d];
    for &i in &idx {
        for a in 0..d {
            for b in 0..d {
                cov[a * d + b] += (samples[i][a] - mean[a]) * (samples[i][b] - mean[b]);
            }
        }
    }
    for v in &mut cov {
        *v /= n.max(1.0);
    }
    (mean, cov)
}

fn kmeans_pp(samples: &[Vec<f64>], k: usize, seed: u64, global_cov: &[f64]) -> Result<Params> {
    let mut rng = crate::Rng::seed_from_u64(seed);
    let n = samples.len();
    let d = samples[0].len();
    let mut centers: Vec<usize> = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = samples
        .iter()
        .map(|x| crate::math::sq_dist(x, &samples[centers[0]]))
        .collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            crate::math::sample_index(&dist, &mut rng)
        } else {
            rng.random_range(0..n)
        };
        centers.push(next);
        for (i, x) in samples.iter().enumerate() {
            dist[i] = dist[i].min(crate::math::sq_dist(x, &samples[next]));
        }
    }
    // One hard assignment pass gives per-cluster weights and spreads.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, x) in samples.iter().enumerate() {
        let best = (0..k)
            .min_by(|&a, &b| {
                crate::math::sq_dist(x, &samples[centers[a]]).total_cmp(&crate::math::sq_dist(x, &samples[centers[b]]))
            })
            .expect("k > 0");
        members[best].push(i);
    }
    let global_chol = LowerTriangular::cholesky(d, &regularized(global_cov, d))?;
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut chol = Vec::with_capacity(k);
    for (j, m) in members.iter().enumerate() {
        weights.push((m.len().max(1)) as f64);
        means.push(samples[centers[j]].clone());
        let c = if m.len() > d {
            let (_, cov) = moments(samples, Some(m));
            LowerTriangular::cholesky(d, &regularized(&cov, d)).unwrap_or_else(|_| global_chol.clone())
        } else {
            global_chol.clone()
        };
        chol.push(c);
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(Params {
        d,
        weights,
        means,
        chol,
    })
}

fn regularized(cov: &[f64], d: usize) -> Vec<f64> {
    let mut c = cov.to_vec();
    for a in 0..d {
        c[a * d + a] = c[a * d + a].max(1e-12) * (1.0 + 1e-6);
    }
    c
}
