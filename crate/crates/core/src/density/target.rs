use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// An unnormalized log density `log q`.
pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;

    /// `log q(x)`; `-inf` outside the support, never NaN for finite `x`.
    fn log_density(&self, x: &[f64]) -> f64;

    fn grad_log_density(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

struct FnDensity<F> {
    dim: usize,
    f: F,
}

impl<F> LogDensity for FnDensity<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// A target density with an evaluation counter.
///
/// Every call to [`Target::log_q`] increments the counter by one; gradient calls are
/// not counted.
pub struct Target {
    density: Arc<dyn LogDensity>,
    evals: AtomicU64,
}

impl Target {
    pub fn new(density: Arc<dyn LogDensity>) -> Self {
        Self {
            density,
            evals: AtomicU64::new(0),
        }
    }

    pub fn from_density<D: LogDensity + 'static>(density: D) -> Self {
        Self::new(Arc::new(density))
    }

    pub fn from_fn<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(Arc::new(FnDensity { dim, f }))
    }

    /// Another counted handle on the same density, with its own fresh counter.
    pub fn fresh(&self) -> Self {
        Self::new(Arc::clone(&self.density))
    }

    pub fn dim(&self) -> usize {
        self.density.dim()
    }

    pub fn log_q(&self, x: &[f64]) -> f64 {
        self.evals.fetch_add(1, Ordering::Relaxed);
        let v = self.density.log_density(x);
        debug_assert!(!v.is_nan(), "log density returned NaN");
        v
    }

    pub fn grad_log_q(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.density.grad_log_density(x)
    }

    pub fn has_gradient(&self) -> bool {
        let x = vec![0.0; self.dim()];
        self.density.grad_log_density(&x).is_some()
    }

    pub fn evals(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn reset_evals(&self) {
        self.evals.store(0, Ordering::Relaxed);
    }

    pub fn density(&self) -> &Arc<dyn LogDensity> {
        &self.density
    }
}

impl fmt::Debug for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Target")
            .field("dim", &self.dim())
            .field("evals", &self.evals())
            .finish()
    }
}
