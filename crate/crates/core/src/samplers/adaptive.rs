use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::density::{GaussianMixture, Target};
use crate::error::{check_dim, Error, Result};
use crate::fit::{em_fit, update_schedule, EmInit, FitConstraints};
use crate::samplers::{run_warpu, ChainState, RandomWalk, SamplerTrace};

/// Over-dispersed density used for the initial sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDensity {
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
}

impl InitialDensity {
    pub fn dim(&self) -> usize {
        match self {
            Self::UniformBox { lower, .. } => lower.len(),
            Self::Gaussian { mean, .. } => mean.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::UniformBox { lower, upper } => {
                if lower.len() != upper.len() || lower.iter().zip(upper).any(|(l, u)| !(l < u)) {
                    return Err(Error::InvalidInput(
                        "uniform box needs lower < upper per coordinate".into(),
                    ));
                }
            }
            Self::Gaussian { mean, sd } => {
                if mean.len() != sd.len() || sd.iter().any(|s| !(*s > 0.0)) {
                    return Err(Error::InvalidInput(
                        "Gaussian initial density needs positive sds".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Self::UniformBox { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| l + (u - l) * rng.random::<f64>())
                .collect(),
            Self::Gaussian { mean, sd } => mean
                .iter()
                .zip(sd)
                .map(|(m, s)| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + s * z
                })
                .collect(),
        }
    }
}

/// Which samples a refit uses and when refits stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefitPolicy {
    /// Refit on T samples drawn without replacement from the accumulated set.
    #[serde(default)]
    pub subsample: bool,
    /// No refits after this stage.
    #[serde(default)]
    pub last_refit_stage: Option<usize>,
}

impl RefitPolicy {
    /// The four variants: (i) all samples, (ii) all samples and no refit after
    /// stage 10, (iii) subsample, (iv) subsample and no refit after stage 10.
    pub fn version(v: u8) -> Self {
        match v {
            1 => Self {
                subsample: false,
                last_refit_stage: None,
            },
            2 => Self {
                subsample: false,
                last_refit_stage: Some(10),
            },
            3 => Self {
                subsample: true,
                last_refit_stage: None,
            },
            4 => Self {
                subsample: true,
                last_refit_stage: Some(10),
            },
            _ => panic!("refit policy versions are 1 to 4"),
        }
    }
}

/// Probability of refitting after each stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefitSchedule {
    /// `p_s = exp(1 - s^{1/8})`.
    #[default]
    Diminishing,
    Never,
    Always,
}

/// Geometric annealing schedule `C_s = max(1, c0 * rate^s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annealing {
    pub c0: f64,
    pub rate: f64,
}

impl Default for Annealing {
    fn default() -> Self {
        Self { c0: 8.0, rate: 0.5 }
    }
}

impl Annealing {
    pub fn constant(&self, stage: usize) -> f64 {
        (self.c0 * self.rate.powi(stage as i32)).max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveConfig {
    /// Samples per stage (also the size of the initial set).
    pub t: usize,
    /// Number of stages M.
    pub stages: usize,
    pub k: usize,
    pub seed: u64,
    pub sigma: f64,
    pub initial: InitialDensity,
    /// Starting point of the chain; defaults to the first initial sample.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub policy: RefitPolicy,
    #[serde(default)]
    pub schedule: RefitSchedule,
    #[serde(default)]
    pub constraints: FitConstraints,
    #[serde(default)]
    pub annealing: Option<Annealing>,
    #[serde(default)]
    pub keep_caches: bool,
}

#[derive(Debug, Clone)]
pub struct AdaptiveTrace {
    pub initial_samples: Vec<Vec<f64>>,
    /// Samples of stages 1..=M.
    pub stages: Vec<SamplerTrace>,
    /// `mixtures[s]` is the fit after stage s; stage s sampled with `mixtures[s - 1]`.
    pub mixtures: Vec<GaussianMixture>,
    /// Whether a refit happened after each stage.
    pub refits: Vec<bool>,
    /// Target evaluations consumed by all stage iterations.
    pub target_evals: u64,
}

/// Multi-stage Warp-U sampler that refits `phi_mix` with diminishing probability.
///
/// The chain continues from its last state between stages.
pub fn run_adaptive_warpu(target: &Target, config: &AdaptiveConfig) -> Result<AdaptiveTrace> {
    config.initial.validate()?;
    check_dim(target.dim(), config.initial.dim())?;
    if config.t == 0 || config.k == 0 || !(config.sigma > 0.0) {
        return Err(Error::InvalidInput("t, k and sigma must be positive".into()));
    }
    let mut aux = crate::Rng::seed_from_u64(config.seed);
    aux.set_stream(1);
    let initial: Vec<Vec<f64>> = (0..config.t).map(|_| config.initial.sample(&mut aux)).collect();
    let mix0 = em_fit(&initial, config.k, &config.constraints, EmInit::Seed(config.seed))?;
    let mut trace = AdaptiveTrace {
        initial_samples: initial,
        stages: Vec::with_capacity(config.stages),
        mixtures: vec![mix0],
        refits: Vec::with_capacity(config.stages),
        target_evals: 0,
    };
    if config.stages == 0 {
        return Ok(trace);
    }
    let theta0 = config
        .theta0
        .clone()
        .unwrap_or_else(|| trace.initial_samples[0].clone());
    let mut state = ChainState::new(target, theta0, config.seed)?;
    let kernel = RandomWalk { sigma: config.sigma };
    for s in 1..=config.stages {
        state.stage = s;
        let current = trace.mixtures.last().expect("at least phi^(0)").clone();
        let c = config.annealing.map_or(1.0, |a| a.constant(s));
        let stage = run_warpu(target, &current, &kernel, &mut state, config.t, config.keep_caches, c);
        trace.target_evals += stage.target_evals;
        trace.stages.push(stage);

        let allowed = config.policy.last_refit_stage.is_none_or(|last| s <= last);
        let refit = allowed
            && match config.schedule {
                RefitSchedule::Never => false,
                RefitSchedule::Always => true,
                RefitSchedule::Diminishing => aux.random::<f64>() < update_schedule(s),
            };
        let next = if refit {
            let pool: Vec<&Vec<f64>> = trace
                .initial_samples
                .iter()
                .chain(trace.stages.iter().flat_map(|st| st.samples.iter()))
                .collect();
            let data: Vec<Vec<f64>> = if config.policy.subsample && pool.len() > config.t {
                sample_indices(&mut aux, pool.len(), config.t)
                    .into_iter()
                    .map(|i| pool[i].clone())
                    .collect()
            } else {
                pool.into_iter().cloned().collect()
            };
            em_fit(&data, config.k, &config.constraints, EmInit::Warm(&current)).unwrap_or(current)
        } else {
            current
        };
        trace.refits.push(refit);
        trace.mixtures.push(next);
    }
    Ok(trace)
}
