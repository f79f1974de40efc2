use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::LogDensity;
use crate::error::{check_dim, Error, Result};
use crate::linalg::LowerTriangular;
use crate::math::{log_std_normal, log_sum_exp, normalize_log_weights, std_normal_vec};

/// A probability vector over component indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    /// Validate that `probs` is nonnegative and sums to one within 1e-10.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty probability vector".into()));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidInput(
                "probabilities must be finite and nonnegative".into(),
            ));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput(format!("probabilities sum to {s}, not 1")));
        }
        Ok(Self(probs))
    }

    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    /// Normalize log-weights; `None` if all are `-inf`.
    pub fn from_log_weights(logs: &[f64]) -> Option<Self> {
        normalize_log_weights(logs).map(Self)
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        crate::math::sample_index(&self.0, rng)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for SimplexVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Gaussian mixture `phi_mix(x) = sum_k w_k |S_k|^{-1} phi(S_k^{-1}(x - mu_k))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    scales: Vec<LowerTriangular>,
    log_weights: Vec<f64>,
    log_dets: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, scales: Vec<LowerTriangular>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidInput("mixture needs at least one component".into()));
        }
        if means.len() != k || scales.len() != k {
            return Err(Error::InvalidInput(format!(
                "{} weights, {} means and {} scales",
                k,
                means.len(),
                scales.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        for (i, (m, s)) in means.iter().zip(&scales).enumerate() {
            check_dim(dim, m.len())?;
            check_dim(dim, s.dim())?;
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("mean {i} is not finite")));
            }
            if !s.has_positive_diagonal() {
                return Err(Error::SingularScale(i));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("weights sum to {total}, not 1")));
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        let log_dets = scales.iter().map(LowerTriangular::log_det).collect();
        Ok(Self {
            dim,
            weights,
            means,
            scales,
            log_weights,
            log_dets,
        })
    }

    /// Mixture with isotropic components `N(mu_k, sd_k^2 I)`.
    pub fn isotropic(weights: Vec<f64>, means: Vec<Vec<f64>>, sds: &[f64]) -> Result<Self> {
        let dim = means.first().map_or(0, Vec::len);
        let scales = sds.iter().map(|&s| LowerTriangular::scaled_identity(dim, s)).collect();
        Self::new(weights, means, scales)
    }

    pub fn standard_normal(dim: usize) -> Self {
        Self::isotropic(vec![1.0], vec![vec![0.0; dim]], &[1.0]).expect("valid standard normal")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn scales(&self) -> &[LowerTriangular] {
        &self.scales
    }

    pub fn log_weight(&self, k: usize) -> f64 {
        self.log_weights[k]
    }

    /// `log |S_k|`.
    pub fn log_det(&self, k: usize) -> f64 {
        self.log_dets[k]
    }

    /// `log(w_k phi^{(k)}(x))`.
    pub fn log_weighted_component(&self, k: usize, x: &[f64]) -> f64 {
        let z = self.standardize(k, x);
        self.log_weights[k] - self.log_dets[k] + log_std_normal(&z)
    }

    fn standardize(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.means[k]).map(|(a, b)| a - b).collect();
        self.scales[k].solve(&centered)
    }

    /// Per-component `log(w_k phi^{(k)}(x))` for all k.
    pub fn log_weighted_components(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k()).map(|k| self.log_weighted_component(k, x)).collect()
    }

    /// `log phi_mix(x)` without the dimension check.
    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.log_weighted_components(x))
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.ln_pdf(x))
    }

    pub fn responsibilities(&self, x: &[f64]) -> Result<SimplexVector> {
        check_dim(self.dim, x.len())?;
        Ok(self.responsibilities_unchecked(x))
    }

    pub(crate) fn responsibilities_unchecked(&self, x: &[f64]) -> SimplexVector {
        let logs = self.log_weighted_components(x);
        match SimplexVector::from_log_weights(&logs) {
            Some(s) => s,
            None => nearest_component_fallback(self, x),
        }
    }

    /// `F_psi(x) = S_psi^{-1}(x - mu_psi)`.
    pub fn forward_warp(&self, x: &[f64], psi: usize) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        self.check_index(psi)?;
        Ok(self.standardize(psi, x))
    }

    /// `H_psi(x*) = S_psi x* + mu_psi`.
    pub fn inverse_warp(&self, x_star: &[f64], psi: usize) -> Result<Vec<f64>> {
        check_dim(self.dim, x_star.len())?;
        self.check_index(psi)?;
        Ok(self.inverse_warp_unchecked(x_star, psi))
    }

    pub(crate) fn forward_warp_unchecked(&self, x: &[f64], psi: usize) -> Vec<f64> {
        self.standardize(psi, x)
    }

    pub(crate) fn inverse_warp_unchecked(&self, x_star: &[f64], psi: usize) -> Vec<f64> {
        let mut y = self.scales[psi].mul_vec(x_star);
        for (v, m) in y.iter_mut().zip(&self.means[psi]) {
            *v += m;
        }
        y
    }

    fn check_index(&self, psi: usize) -> Result<()> {
        if psi < self.k() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "component index {psi} out of range for K={}",
                self.k()
            )))
        }
    }

    /// Draw `(x, k)` with `k ~ w` and `x ~ N(mu_k, S_k S_k^T)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, usize) {
        let k = crate::math::sample_index(&self.weights, rng);
        let z = std_normal_vec(rng, self.dim);
        (self.inverse_warp_unchecked(&z, k), k)
    }

    /// Gradient of `log phi_mix` at `x`.
    pub fn grad_ln_pdf(&self, x: &[f64]) -> Vec<f64> {
        let resp = self.responsibilities_unchecked(x);
        let mut g = vec![0.0; self.dim];
        for k in 0..self.k() {
            if resp[k] == 0.0 {
                continue;
            }
            let z = self.standardize(k, x);
            let v = self.scales[k].solve_transpose(&z);
            for (gi, vi) in g.iter_mut().zip(&v) {
                *gi -= resp[k] * vi;
            }
        }
        g
    }

    pub fn to_document(&self) -> MixtureDocument {
        MixtureDocument {
            k: self.k(),
            dim: self.dim,
            weights: self.weights.clone(),
            means: self.means.clone(),
            scales: self.scales.iter().map(|s| s.row_major().to_vec()).collect(),
        }
    }

    pub fn from_document(doc: MixtureDocument) -> Result<Self> {
        if doc.weights.len() != doc.k {
            return Err(Error::InvalidInput("K does not match the number of weights".into()));
        }
        let scales = doc
            .scales
            .into_iter()
            .map(|s| LowerTriangular::from_row_major(doc.dim, s))
            .collect::<Result<Vec<_>>>()?;
        if doc.means.iter().any(|m| m.len() != doc.dim) {
            return Err(Error::InvalidInput("mean length does not match dim".into()));
        }
        Self::new(doc.weights, doc.means, scales)
    }

    /// Serialize as JSON with round-trip float precision.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("mixture serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: MixtureDocument = serde_json::from_str(s).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::from_document(doc)
    }
}

// Far from every component all log terms underflow; fall back to the closest
// component in standardized distance so the index is still well defined.
fn nearest_component_fallback(mix: &GaussianMixture, x: &[f64]) -> SimplexVector {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for k in 0..mix.k() {
        if mix.weights[k] == 0.0 {
            continue;
        }
        let z = mix.standardize(k, x);
        let d: f64 = z.iter().map(|v| v * v).sum();
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    let mut p = vec![0.0; mix.k()];
    p[best] = 1.0;
    SimplexVector::from_normalized(p)
}

/// Text form of a mixture: Cholesky factors are row-major `dim x dim`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureDocument {
    pub k: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub scales: Vec<Vec<f64>>,
}

impl LogDensity for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        self.ln_pdf(x)
    }
    fn grad_log_density(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.grad_ln_pdf(x))
    }
}

/// `a * p(x)` for a log density `p`, i.e. `log a + log p(x)`.
pub struct Scaled<D> {
    pub inner: D,
    pub log_scale: f64,
}

impl<D: LogDensity> LogDensity for Scaled<D> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_scale + self.inner.log_density(x)
    }
    fn grad_log_density(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.inner.grad_log_density(x)
    }
}
