//! Couplings of two Gaussian random-walk proposals with a common scale.

use rand::Rng;

use crate::math::std_normal_vec;

fn log_kernel(x: &[f64], mean: &[f64], sigma: f64) -> f64 {
    -0.5 * x.iter().zip(mean).map(|(a, b)| ((a - b) / sigma).powi(2)).sum::<f64>()
}

/// Maximal coupling of `N(mean1, sigma^2 I)` and `N(mean2, sigma^2 I)` by the
/// rejection construction. `same` is true exactly when the draws coincide.
pub fn maximal_coupling_draw<R: Rng + ?Sized>(
    rng: &mut R,
    mean1: &[f64],
    mean2: &[f64],
    sigma: f64,
) -> (Vec<f64>, Vec<f64>, bool) {
    let d = mean1.len();
    let x: Vec<f64> = mean1
        .iter()
        .zip(std_normal_vec(rng, d))
        .map(|(m, z)| m + sigma * z)
        .collect();
    let u: f64 = rng.random();
    // Normalizing constants cancel: both kernels share sigma.
    if u.ln() + log_kernel(&x, mean1, sigma) <= log_kernel(&x, mean2, sigma) {
        return (x.clone(), x, true);
    }
    loop {
        let y: Vec<f64> = mean2
            .iter()
            .zip(std_normal_vec(rng, d))
            .map(|(m, z)| m + sigma * z)
            .collect();
        let u: f64 = rng.random();
        if u.ln() + log_kernel(&y, mean2, sigma) > log_kernel(&y, mean1, sigma) {
            return (x, y, false);
        }
    }
}

/// Reflection-maximal coupling: the second noise is the first mirrored across the
/// hyperplane orthogonal to `mean1 - mean2`, except that the draws coincide with
/// the largest probability compatible with that construction.
pub fn reflection_coupling_draw<R: Rng + ?Sized>(
    rng: &mut R,
    mean1: &[f64],
    mean2: &[f64],
    sigma: f64,
) -> (Vec<f64>, Vec<f64>, bool) {
    let d = mean1.len();
    let z: Vec<f64> = mean1.iter().zip(mean2).map(|(a, b)| (a - b) / sigma).collect();
    let x_noise = std_normal_vec(rng, d);
    let x: Vec<f64> = mean1.iter().zip(&x_noise).map(|(m, e)| m + sigma * e).collect();
    let norm2: f64 = z.iter().map(|v| v * v).sum();
    if norm2 == 0.0 {
        return (x.clone(), x, true);
    }
    let u: f64 = rng.random();
    // Accept a meeting with probability phi(xi + z) / phi(xi).
    let shifted: f64 = x_noise.iter().zip(&z).map(|(a, b)| (a + b) * (a + b)).sum();
    let plain: f64 = x_noise.iter().map(|a| a * a).sum();
    if u.ln() <= -0.5 * (shifted - plain) {
        return (x.clone(), x, true);
    }
    let dot: f64 = x_noise.iter().zip(&z).map(|(a, b)| a * b).sum();
    let y: Vec<f64> = mean2
        .iter()
        .zip(&x_noise)
        .zip(&z)
        .map(|((m, e), zz)| m + sigma * (e - 2.0 * dot / norm2 * zz))
        .collect();
    (x, y, false)
}
