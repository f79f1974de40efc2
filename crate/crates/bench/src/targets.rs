//! Benchmark targets with known normalizing constants, mode centers and exact
//! samplers for ground-truth draws.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use statrs::function::gamma::ln_gamma;
use warpu::density::{LogDensity, Scaled};
use warpu::linalg::LowerTriangular;
use warpu::{Error, GaussianMixture, Result, Target};

fn one() -> f64 {
    1.0
}

fn default_var1() -> f64 {
    0.8
}

fn default_var2() -> f64 {
    0.2
}

fn default_dof() -> f64 {
    5.0
}

/// Named target families. `scale` multiplies a normalized density, so it is the
/// true normalizing constant unless stated otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// `0.3 N(-4, 0.8^2) + 0.45 N(0.5, 1) + 0.25 N(4.5, 0.6^2)`.
    ThreeMode {
        #[serde(default = "one")]
        scale: f64,
    },
    /// 4-d mixture with weights `k/15` and means `m_k 1` for `m = (-11, 12, -8, 7, -2)`.
    FiveMode4d {
        #[serde(default = "one")]
        scale: f64,
    },
    /// Two equal-weight components `N(-1, var1 I)` and `N(1, var2 I)` written
    /// without the `(2 pi)^{d/2}` factor, so `c = (2 pi)^{d/2}`.
    Setting1 {
        dim: usize,
        #[serde(default = "default_var1")]
        var1: f64,
        #[serde(default = "default_var2")]
        var2: f64,
    },
    /// Two components with block-diagonal variances and means drawn uniformly from
    /// `(-2.5, -1.5)` and `(1.5, 2.5)`; `dim` must be a multiple of 5. As in
    /// `Setting1`, `c = (2 pi)^{d/2}`.
    Setting2 { dim: usize, seed: u64 },
    /// `0.4 N((-1.5, -1.5), 0.6 I) + 0.6 N((1.5, 1.5), 0.8 I)`.
    Bimodal2d {
        #[serde(default = "one")]
        scale: f64,
    },
    /// 5-d, weights `(0.3, 0.3, 0.4)`, means `-3 1, 0, 3 1`, sds `(1, 0.7, 0.8)`.
    ThreeMode5d {
        #[serde(default = "one")]
        scale: f64,
    },
    /// Isotropic Gaussian mixture given explicitly.
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        sds: Vec<f64>,
        #[serde(default = "one")]
        scale: f64,
    },
    /// 2-d mixture of five skew-t components with 12 degrees of freedom.
    SkewT2d {
        #[serde(default = "one")]
        scale: f64,
    },
    /// Skew-t mixture given explicitly.
    SkewTMixture {
        weights: Vec<f64>,
        components: Vec<SkewT>,
        #[serde(default = "one")]
        scale: f64,
    },
    /// 1-d `0.5 t_nu(-3, 1) + 0.5 t_nu(3, 1)`.
    TMixture1d {
        #[serde(default = "default_dof")]
        dof: f64,
    },
}

/// Multivariate skew-t with diagonal scale: density
/// `2 t_d(x; xi, Omega, nu) T_{nu+d}(alpha . z sqrt((nu+d)/(Q+nu)))`, with
/// `z = (x - xi) / omega` and `Q = |z|^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkewT {
    pub location: Vec<f64>,
    pub scale: Vec<f64>,
    pub alpha: Vec<f64>,
    pub dof: f64,
}

impl SkewT {
    fn validate(&self) -> Result<()> {
        let d = self.location.len();
        if d == 0 || self.scale.len() != d || self.alpha.len() != d {
            return Err(Error::InvalidInput(
                "skew-t location, scale and alpha lengths differ".into(),
            ));
        }
        if self.scale.iter().any(|s| !(*s > 0.0)) || !(self.dof > 0.0) {
            return Err(Error::InvalidInput("skew-t scales and dof must be positive".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.location.len()
    }

    /// `log t_d(x; xi, Omega, nu)`, the symmetric part.
    pub fn ln_t_pdf(&self, x: &[f64]) -> f64 {
        let d = self.dim() as f64;
        let nu = self.dof;
        let q: f64 = x
            .iter()
            .zip(&self.location)
            .zip(&self.scale)
            .map(|((xi, m), s)| ((xi - m) / s).powi(2))
            .sum();
        ln_gamma(0.5 * (nu + d))
            - ln_gamma(0.5 * nu)
            - 0.5 * d * (nu * std::f64::consts::PI).ln()
            - self.scale.iter().map(|s| s.ln()).sum::<f64>()
            - 0.5 * (nu + d) * (q / nu).ln_1p()
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        let d = self.dim() as f64;
        let nu = self.dof;
        let z: Vec<f64> = x
            .iter()
            .zip(&self.location)
            .zip(&self.scale)
            .map(|((xi, m), s)| (xi - m) / s)
            .collect();
        let q: f64 = z.iter().map(|v| v * v).sum();
        let a: f64 = self.alpha.iter().zip(&z).map(|(a, v)| a * v).sum();
        let arg = a * ((nu + d) / (q + nu)).sqrt();
        std::f64::consts::LN_2 + self.ln_t_pdf(x) + ln_t_cdf(arg, nu + d)
    }

    /// Scale-mixture draw: a skew-normal `delta |U0| + U1` divided by `sqrt(W / nu)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let a2: f64 = self.alpha.iter().map(|a| a * a).sum();
        let delta: Vec<f64> = self.alpha.iter().map(|a| a / (1.0 + a2).sqrt()).collect();
        let d2: f64 = delta.iter().map(|v| v * v).sum();
        let u0: f64 = rng.sample::<f64, _>(StandardNormal).abs();
        let u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        // (I - delta delta^T)^{1/2} = I - c delta delta^T.
        let c = if d2 > 0.0 { (1.0 - (1.0 - d2).sqrt()) / d2 } else { 0.0 };
        let du: f64 = delta.iter().zip(&u).map(|(a, b)| a * b).sum();
        let w: f64 = ChiSquared::new(self.dof).expect("positive dof").sample(rng);
        let mix = (w / self.dof).sqrt();
        (0..d)
            .map(|i| {
                let zi = delta[i] * u0 + u[i] - c * delta[i] * du;
                self.location[i] + self.scale[i] * zi / mix
            })
            .collect()
    }
}

/// `log T_nu(t)` that stays finite far into the lower tail.
pub fn ln_t_cdf(t: f64, nu: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, nu).expect("positive dof");
    if t > -5.0 {
        return dist.cdf(t).ln();
    }
    let p = dist.cdf(t);
    if p > 1e-300 {
        return p.ln();
    }
    // F(t) ~ f(t) (nu + t^2) / ((nu - 1) |t|) as t -> -inf.
    let ln_f = ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (nu * std::f64::consts::PI).ln()
        - 0.5 * (nu + 1.0) * (t * t / nu).ln_1p();
    ln_f + ((nu + t * t) / ((nu - 1.0) * t.abs())).ln()
}

#[derive(Debug, Clone)]
pub struct SkewTMixtureDensity {
    pub weights: Vec<f64>,
    pub components: Vec<SkewT>,
}

impl LogDensity for SkewTMixtureDensity {
    fn dim(&self) -> usize {
        self.components[0].dim()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w.ln() + c.ln_pdf(x))
            .collect();
        warpu::math::log_sum_exp(&terms)
    }
}

impl SkewTMixtureDensity {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let k = warpu::math::sample_index(&self.weights, rng);
        self.components[k].sample(rng)
    }
}

/// The normalized density behind a benchmark target, for exact draws and moments.
#[derive(Debug, Clone)]
pub enum Truth {
    Gaussian(GaussianMixture),
    SkewT(SkewTMixtureDensity),
}

/// A constructed target with its ground truth.
#[derive(Debug)]
pub struct BenchTarget {
    pub spec: TargetSpec,
    pub target: Target,
    /// Exact `log c`.
    pub log_c: f64,
    pub mode_centers: Vec<Vec<f64>>,
    pub truth: Truth,
}

impl BenchTarget {
    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn c(&self) -> f64 {
        self.log_c.exp()
    }

    /// One exact draw from `pi`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.truth {
            Truth::Gaussian(m) => m.sample(rng).0,
            Truth::SkewT(s) => s.sample(rng),
        }
    }

    pub fn samples<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// Normalized log density `log pi`.
    pub fn ln_pi(&self, x: &[f64]) -> f64 {
        match &self.truth {
            Truth::Gaussian(m) => m.ln_pdf(x),
            Truth::SkewT(s) => s.log_density(x),
        }
    }

    /// Per-coordinate first and second raw moments, when known in closed form.
    pub fn moments(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let Truth::Gaussian(m) = &self.truth else {
            return None;
        };
        let d = m.dim();
        let mut m1 = vec![0.0; d];
        let mut m2 = vec![0.0; d];
        for k in 0..m.k() {
            let w = m.weights()[k];
            let cov = m.scales()[k].covariance();
            for j in 0..d {
                let mu = m.means()[k][j];
                m1[j] += w * mu;
                m2[j] += w * (mu * mu + cov[j * d + j]);
            }
        }
        Some((m1, m2))
    }

    /// CDF of coordinate `j` under a Gaussian-mixture truth.
    pub fn marginal_cdf(&self, j: usize, x: f64) -> Option<f64> {
        let Truth::Gaussian(mix) = &self.truth else { return None };
        let mut f = 0.0;
        for k in 0..mix.k() {
            let sd = mix.scales()[k].covariance()[j * mix.dim() + j].sqrt();
            f += mix.weights()[k] * Normal::new(mix.means()[k][j], sd).ok()?.cdf(x);
        }
        Some(f)
    }

    /// Index of the nearest mode center for each sample.
    pub fn nearest_mode(&self, x: &[f64]) -> usize {
        nearest(&self.mode_centers, x)
    }
}

pub(crate) fn nearest(centers: &[Vec<f64>], x: &[f64]) -> usize {
    centers
        .iter()
        .enumerate()
        .min_by(|a, b| warpu::math::sq_dist(a.1, x).total_cmp(&warpu::math::sq_dist(b.1, x)))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn gaussian_target(mix: GaussianMixture, log_c: f64, spec: TargetSpec) -> BenchTarget {
    let centers = mix.means().to_vec();
    let density = Scaled {
        inner: mix.clone(),
        log_scale: log_c,
    };
    BenchTarget {
        spec,
        target: Target::new(Arc::new(density)),
        log_c,
        mode_centers: centers,
        truth: Truth::Gaussian(mix),
    }
}

fn check_scale(scale: f64) -> Result<f64> {
    if scale > 0.0 && scale.is_finite() {
        Ok(scale.ln())
    } else {
        Err(Error::InvalidInput(format!(
            "scale must be positive and finite, got {scale}"
        )))
    }
}

/// The fixed five-component 2-d skew-t mixture used by the estimator benchmark.
pub fn skew_t_2d_components() -> (Vec<f64>, Vec<SkewT>) {
    let rows = [
        ([-7.0, -5.0], [1.2, 0.8], [2.0, -1.0]),
        ([-3.0, 6.0], [0.9, 1.1], [-3.0, 1.0]),
        ([4.0, -6.0], [1.0, 1.3], [1.0, 4.0]),
        ([7.0, 4.0], [1.4, 0.7], [0.0, -2.0]),
        ([0.0, 0.0], [0.8, 0.9], [-1.0, -1.0]),
    ];
    let comps = rows
        .iter()
        .map(|(l, s, a)| SkewT {
            location: l.to_vec(),
            scale: s.to_vec(),
            alpha: a.to_vec(),
            dof: 12.0,
        })
        .collect();
    (vec![0.2; 5], comps)
}

/// Build a target from its spec.
pub fn make_target(spec: &TargetSpec) -> Result<BenchTarget> {
    let s = spec.clone();
    match spec {
        TargetSpec::ThreeMode { scale } => {
            let mix = GaussianMixture::isotropic(
                vec![0.3, 0.45, 0.25],
                vec![vec![-4.0], vec![0.5], vec![4.5]],
                &[0.8, 1.0, 0.6],
            )?;
            Ok(gaussian_target(mix, check_scale(*scale)?, s))
        }
        TargetSpec::FiveMode4d { scale } => Ok(gaussian_target(five_mode_4d(), check_scale(*scale)?, s)),
        TargetSpec::Setting1 { dim, var1, var2 } => {
            if *dim == 0 || !(*var1 > 0.0 && *var2 > 0.0) {
                return Err(Error::InvalidInput(
                    "setting1 needs dim > 0 and positive variances".into(),
                ));
            }
            let mix = GaussianMixture::isotropic(
                vec![0.5, 0.5],
                vec![vec![-1.0; *dim], vec![1.0; *dim]],
                &[var1.sqrt(), var2.sqrt()],
            )?;
            Ok(gaussian_target(mix, 0.5 * *dim as f64 * warpu::math::LN_2PI, s))
        }
        TargetSpec::Setting2 { dim, seed } => {
            if *dim == 0 || dim % 5 != 0 {
                return Err(Error::InvalidInput(
                    "setting2 dimension must be a positive multiple of 5".into(),
                ));
            }
            let mix = setting2_mixture(*dim, *seed)?;
            Ok(gaussian_target(mix, 0.5 * *dim as f64 * warpu::math::LN_2PI, s))
        }
        TargetSpec::Bimodal2d { scale } => {
            let mix = GaussianMixture::isotropic(
                vec![0.4, 0.6],
                vec![vec![-1.5, -1.5], vec![1.5, 1.5]],
                &[0.6f64.sqrt(), 0.8f64.sqrt()],
            )?;
            Ok(gaussian_target(mix, check_scale(*scale)?, s))
        }
        TargetSpec::ThreeMode5d { scale } => {
            let mix = GaussianMixture::isotropic(
                vec![0.3, 0.3, 0.4],
                vec![vec![-3.0; 5], vec![0.0; 5], vec![3.0; 5]],
                &[1.0, 0.7, 0.8],
            )?;
            Ok(gaussian_target(mix, check_scale(*scale)?, s))
        }
        TargetSpec::GaussianMixture {
            weights,
            means,
            sds,
            scale,
        } => {
            let mix = GaussianMixture::isotropic(weights.clone(), means.clone(), sds)?;
            Ok(gaussian_target(mix, check_scale(*scale)?, s))
        }
        TargetSpec::SkewT2d { scale } => {
            let (w, c) = skew_t_2d_components();
            skew_target(w, c, *scale, s)
        }
        TargetSpec::SkewTMixture {
            weights,
            components,
            scale,
        } => skew_target(weights.clone(), components.clone(), *scale, s),
        TargetSpec::TMixture1d { dof } => {
            let comps = [-3.0, 3.0]
                .iter()
                .map(|&m| SkewT {
                    location: vec![m],
                    scale: vec![1.0],
                    alpha: vec![0.0],
                    dof: *dof,
                })
                .collect();
            skew_target(vec![0.5, 0.5], comps, 1.0, s)
        }
    }
}

fn skew_target(weights: Vec<f64>, components: Vec<SkewT>, scale: f64, spec: TargetSpec) -> Result<BenchTarget> {
    if components.is_empty() || weights.len() != components.len() {
        return Err(Error::InvalidInput(
            "skew-t mixture needs one weight per component".into(),
        ));
    }
    warpu::SimplexVector::new(weights.clone())?;
    let d = components[0].dim();
    for c in &components {
        c.validate()?;
        if c.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: c.dim(),
            });
        }
    }
    let log_c = check_scale(scale)?;
    let density = SkewTMixtureDensity { weights, components };
    let centers = density.components.iter().map(|c| c.location.clone()).collect();
    Ok(BenchTarget {
        spec,
        target: Target::new(Arc::new(Scaled {
            inner: density.clone(),
            log_scale: log_c,
        })),
        log_c,
        mode_centers: centers,
        truth: Truth::SkewT(density),
    })
}

pub fn five_mode_4d() -> GaussianMixture {
    let ms = [-11.0, 12.0, -8.0, 7.0, -2.0];
    GaussianMixture::isotropic(
        (1..=5).map(|k| k as f64 / 15.0).collect(),
        ms.iter().map(|&m| vec![m; 4]).collect(),
        &[1.0; 5],
    )
    .expect("valid mixture")
}

fn setting2_mixture(dim: usize, seed: u64) -> Result<GaussianMixture> {
    let mut rng = warpu::Rng::seed_from_u64(seed);
    let mu1: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.5..-1.5)).collect();
    let mu2: Vec<f64> = (0..dim).map(|_| rng.random_range(1.5..2.5)).collect();
    let v1 = [0.25, 0.3, 0.35, 0.4, 0.45];
    let v2 = [1.0, 0.95, 0.9, 0.85, 0.8];
    let block = dim / 5;
    let diag = |v: &[f64; 5]| -> Vec<f64> { (0..dim).map(|i| v[i / block].sqrt()).collect() };
    GaussianMixture::new(
        vec![0.5, 0.5],
        vec![mu1, mu2],
        vec![
            LowerTriangular::diagonal(&diag(&v1)),
            LowerTriangular::diagonal(&diag(&v2)),
        ],
    )
}

/// The simplistic auxiliary `0.5 N(mu_1, I) + 0.5 N(mu_2, I)` of the high-dimensional
/// settings, built from the target's mode centers.
pub fn unit_variance_auxiliary(t: &BenchTarget) -> Result<GaussianMixture> {
    let k = t.mode_centers.len();
    GaussianMixture::isotropic(vec![1.0 / k as f64; k], t.mode_centers.clone(), &vec![1.0; k])
}
