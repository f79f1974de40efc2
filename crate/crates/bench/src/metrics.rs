//! Sample-quality and efficiency metrics.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use warpu::coupling::discrete_ot_coupling;
use warpu::quadrature::integrate;
use warpu::{Error, Result};

/// Exact `W_1` between two empirical measures on the line, `int |F_a - F_b|`.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "wasserstein_1d needs nonempty sets");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut x = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - x);
        x = next;
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
    }
    total
}

/// `W_1` between an empirical measure and a continuous distribution given by its
/// CDF, `int |F_n - F|`. Between order statistics `F_n` is flat and `F` monotone,
/// so `F_n - F` changes sign at most once; that root is bracketed and each side
/// integrated by Gauss-Legendre. The tails use adaptive quadrature.
pub fn wasserstein_1d_to_cdf(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    assert!(!samples.is_empty(), "wasserstein_1d_to_cdf needs samples");
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut total = integrate(&cdf, f64::NEG_INFINITY, x[0], 1e-12, 1e-10).value;
    for (i, w) in x.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let level = (i + 1) as f64 / n;
        let g = |t: f64| level - cdf(t);
        let (ga, gb) = (g(a), g(b));
        if ga >= 0.0 && gb >= 0.0 || ga <= 0.0 && gb <= 0.0 {
            total += gauss_legendre(&g, a, b).abs();
        } else {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if (g(mid) > 0.0) == (ga > 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let root = 0.5 * (lo + hi);
            total += gauss_legendre(&g, a, root).abs() + gauss_legendre(&g, root, b).abs();
        }
    }
    total + integrate(|t| 1.0 - cdf(t), x[x.len() - 1], f64::INFINITY, 1e-12, 1e-10).value
}

fn gauss_legendre(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const X: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683,
        0.538_469_310_105_683,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const W: [f64; 5] = [
        0.568_888_888_888_889,
        0.478_628_670_499_366,
        0.478_628_670_499_366,
        0.236_926_885_056_189,
        0.236_926_885_056_189,
    ];
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    h * X.iter().zip(&W).map(|(x, w)| w * f(c + h * x)).sum::<f64>()
}

/// Euclidean `W_1` between two point sets in any dimension by exact transport on
/// at most `max_points` subsampled points per set.
pub fn wasserstein_ot<R: Rng + ?Sized>(a: &[Vec<f64>], b: &[Vec<f64>], max_points: usize, rng: &mut R) -> Result<f64> {
    if a.is_empty() || b.is_empty() || max_points == 0 {
        return Err(Error::InvalidInput("wasserstein_ot needs nonempty sets".into()));
    }
    let pick = |s: &[Vec<f64>], rng: &mut R| -> Vec<Vec<f64>> {
        if s.len() <= max_points {
            s.to_vec()
        } else {
            sample_indices(rng, s.len(), max_points)
                .into_iter()
                .map(|i| s[i].clone())
                .collect()
        }
    };
    let a = pick(a, rng);
    let b = pick(b, rng);
    let p = vec![1.0 / a.len() as f64; a.len()];
    let q = vec![1.0 / b.len() as f64; b.len()];
    let cost: Vec<Vec<f64>> = a
        .iter()
        .map(|x| b.iter().map(|y| warpu::math::sq_dist(x, y).sqrt()).collect())
        .collect();
    Ok(discrete_ot_coupling(&p, &q, &cost)?.objective)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssResult {
    pub ess: f64,
    /// Autocorrelations from lag 0 up to the truncation point.
    pub acf: Vec<f64>,
    /// The trace is constant; `ess` is then 1 by convention.
    pub degenerate: bool,
}

/// Effective sample size with Geyer's initial monotone positive sequence.
pub fn ess_autocorrelation(trace: &[f64]) -> EssResult {
    let n = trace.len();
    assert!(n >= 10, "ESS needs at least 10 values");
    let mean = trace.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = trace.iter().map(|x| x - mean).collect();
    let gamma0 = c.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if gamma0 <= 1e-28 * mean * mean || gamma0 < f64::MIN_POSITIVE {
        return EssResult {
            ess: 1.0,
            acf: vec![1.0],
            degenerate: true,
        };
    }
    let rho = |k: usize| -> f64 { c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64 / gamma0 };
    let mut acf = vec![1.0];
    let mut sum_pairs = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let r0 = if m == 0 { 1.0 } else { rho(2 * m) };
        let r1 = rho(2 * m + 1);
        if m > 0 {
            acf.push(r0);
        }
        acf.push(r1);
        let pair = r0 + r1;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum_pairs += pair;
        prev = pair;
        m += 1;
    }
    let tau = (2.0 * sum_pairs - 1.0).max(1.0);
    EssResult {
        ess: (n as f64 / tau).min(n as f64),
        acf,
        degenerate: false,
    }
}

/// Fraction of samples nearest to each center.
pub fn mode_occupancy(samples: &[Vec<f64>], centers: &[Vec<f64>]) -> Vec<f64> {
    let mut counts = vec![0usize; centers.len()];
    for x in samples {
        counts[crate::targets::nearest(centers, x)] += 1;
    }
    let n = samples.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// RMSE of replicate estimates against the truth, and its delta-method standard error.
pub fn rmse(estimates: &[f64], truth: f64) -> (f64, f64) {
    let n = estimates.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let sq: Vec<f64> = estimates.iter().map(|e| (e - truth).powi(2)).collect();
    let mse = sq.iter().sum::<f64>() / n as f64;
    let r = mse.sqrt();
    if n < 2 || r == 0.0 {
        return (r, 0.0);
    }
    let var = sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / (n - 1) as f64;
    (r, (var / n as f64).sqrt() / (2.0 * r))
}

/// Precision per second, both wall-clock and per target evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pps {
    /// `1 / (RMSE * seconds)`.
    pub wall: f64,
    /// `1 / (RMSE * target evaluations)`.
    pub evals: f64,
}

pub fn pps(rmse: f64, target_evals: u64, wall_ms: f64) -> Pps {
    Pps {
        wall: 1.0 / (rmse * wall_ms / 1000.0),
        evals: 1.0 / (rmse * target_evals as f64),
    }
}

/// Lower bound `(1 + beta) K / (1 + beta K)` on the PpS ratio of the stochastic to
/// the plain Warp-U bridge, for `beta = n2 / n1`.
pub fn pps_ratio_lower_bound(beta: f64, k: usize) -> f64 {
    (1.0 + beta) * k as f64 / (1.0 + beta * k as f64)
}

/// Per-run summary written by the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricsRecord {
    pub rmse: Option<f64>,
    pub se_of_rmse: Option<f64>,
    /// ESS of each coordinate.
    pub ess: Vec<f64>,
    /// Autocorrelations of the first coordinate at lags 1..=10.
    pub acf: Vec<f64>,
    pub wasserstein_1d: Vec<f64>,
    pub mode_occupancy: Vec<f64>,
    pub target_evals: u64,
    pub wall_ms: f64,
}

impl MetricsRecord {
    /// Trace metrics: per-coordinate ESS, lag autocorrelations, marginal `W_1`
    /// against reference draws, and mode occupancy.
    pub fn for_trace(samples: &[Vec<f64>], reference: &[Vec<f64>], centers: &[Vec<f64>], target_evals: u64) -> Self {
        let d = samples.first().map_or(0, Vec::len);
        let col = |s: &[Vec<f64>], j: usize| -> Vec<f64> { s.iter().map(|x| x[j]).collect() };
        let mut ess = Vec::with_capacity(d);
        let mut acf = Vec::new();
        for j in 0..d {
            if samples.len() >= 10 {
                let e = ess_autocorrelation(&col(samples, j));
                if j == 0 {
                    acf = lag_autocorrelations(&col(samples, 0), 10);
                }
                ess.push(e.ess);
            }
        }
        let wasserstein_1d = if reference.is_empty() || samples.is_empty() {
            Vec::new()
        } else {
            (0..d)
                .map(|j| wasserstein_1d(&col(samples, j), &col(reference, j)))
                .collect()
        };
        Self {
            rmse: None,
            se_of_rmse: None,
            ess,
            acf,
            wasserstein_1d,
            mode_occupancy: mode_occupancy(samples, centers),
            target_evals,
            wall_ms: 0.0,
        }
    }
}

/// Sample autocorrelations at lags `1..=max_lag`.
pub fn lag_autocorrelations(trace: &[f64], max_lag: usize) -> Vec<f64> {
    let n = trace.len();
    let mean = trace.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = trace.iter().map(|x| x - mean).collect();
    let g0 = c.iter().map(|v| v * v).sum::<f64>();
    (1..=max_lag.min(n.saturating_sub(1)))
        .map(|k| {
            if g0 == 0.0 {
                0.0
            } else {
                c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() / g0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn w1_point_masses() {
        assert_eq!(wasserstein_1d(&[0.0], &[1.0]), 1.0);
        assert_eq!(wasserstein_1d(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]), 0.0);
        // {0, 1} vs {0.5}: half the mass moves 0.5 either way.
        assert!((wasserstein_1d(&[0.0, 1.0], &[0.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pps_arithmetic() {
        assert_eq!(pps(1.0, 1, 1000.0).wall, 1.0);
        assert_eq!(pps(0.5, 1, 1000.0).wall, 2.0);
        assert!((pps_ratio_lower_bound(1.0, 5) - 10.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn constant_trace_is_degenerate() {
        let r = ess_autocorrelation(&[2.5; 50]);
        assert!(r.degenerate);
        assert_eq!(r.ess, 1.0);
    }
}
