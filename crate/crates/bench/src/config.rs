//! Experiment configuration: one JSON document, unknown keys rejected, and
//! validation that reports every violated field at once.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use warpu::coupling::{IndexCoupling, LocalCoupling, RbLevel};
use warpu::fit::FitConstraints;
use warpu::samplers::{Annealing, InitialDensity, Ladder, VariancePrior};

use crate::error::BenchError;
use crate::targets::TargetSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Run a sampler and record traces and trace metrics.
    Sample,
    /// Estimate the normalizing constant with the bridge family.
    Estimate,
    /// Coupled chains and the unbiased estimators.
    Unbiased,
}

/// How competing estimators are given comparable work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Sample sizes chosen per estimator so that target evaluations match each budget.
    EvaluationMatched,
    /// Every estimator uses the configured `n1` and `n2`.
    IterationMatched,
}

/// Where `phi_mix` comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum MixtureSource {
    /// The target's own normalized Gaussian mixture.
    Truth,
    /// Equal weights, unit covariance, at the target's mode centers.
    UnitVariance,
    /// EM with `k` components on `pilot` exact draws.
    Fit { pilot: usize, seed: u64 },
    /// A mixture JSON document.
    File { path: PathBuf },
    Explicit {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        sds: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerSpec {
    /// Exact draws from the target.
    Iid,
    /// Random-walk Metropolis.
    Rwm,
    /// Basic Warp-U with a fixed mixture.
    Warpu {
        mixture: MixtureSource,
    },
    /// Warp-U with a scale-mixture auxiliary.
    Augmented {
        mixture: MixtureSource,
        #[serde(default)]
        prior: VariancePrior,
    },
    /// Adaptive Warp-U; `t` samples per stage, `m` stages, `k` components.
    Adaptive {
        initial: InitialDensity,
        #[serde(default = "default_policy_version")]
        policy_version: u8,
        #[serde(default)]
        annealing: Option<Annealing>,
    },
    ParallelTempering {
        n_levels: usize,
        ladder: Ladder,
    },
    /// Independence Metropolis-Hastings with `phi_mix` as the proposal.
    MixtureMh {
        mixture: MixtureSource,
    },
}

fn default_policy_version() -> u8 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Classical bridge sampling with `phi_mix` as the auxiliary.
    Bs,
    /// Warp-U bridge.
    Wb,
    /// Stochastic Warp-U bridge.
    Swb,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Bs => "bs",
            Self::Wb => "wb",
            Self::Swb => "swb",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub estimators: Vec<EstimatorKind>,
    pub mixture: MixtureSource,
    /// Evaluation budgets, for evaluation-matched runs.
    #[serde(default)]
    pub budgets: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    Sum,
    SumSquares,
    Coordinate { index: usize },
}

impl TestFunction {
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            Self::Sum => x.iter().sum(),
            Self::SumSquares => x.iter().map(|v| v * v).sum(),
            Self::Coordinate { index } => x[index],
        }
    }

    pub fn label(self) -> String {
        match self {
            Self::Sum => "sum".into(),
            Self::SumSquares => "sum_squares".into(),
            Self::Coordinate { index } => format!("coord_{index}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    pub local: LocalCoupling,
    #[serde(default)]
    pub index: IndexCoupling,
    pub levels: Vec<RbLevel>,
    pub l: usize,
    pub m: usize,
    pub max_iterations: usize,
    pub mixture: MixtureSource,
    /// Both chains start from independent draws of this density.
    pub initial: InitialDensity,
    pub functions: Vec<TestFunction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub target: TargetSpec,
    #[serde(default)]
    pub sampler: Option<SamplerSpec>,
    #[serde(default)]
    pub estimator: Option<EstimatorSpec>,
    #[serde(default)]
    pub coupling: Option<CouplingSpec>,
    /// Target sample size for the estimators.
    #[serde(default)]
    pub n1: Option<usize>,
    /// Auxiliary sample size (per component for the stochastic bridge).
    #[serde(default)]
    pub n2: Option<usize>,
    /// Sampler iterations (per stage when adaptive).
    #[serde(default)]
    pub t: Option<usize>,
    /// Adaptive stages.
    #[serde(default)]
    pub m: Option<usize>,
    /// Mixture components.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub constraints: Option<FitConstraints>,
    pub seeds: Vec<u64>,
    pub replicates: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub budget_mode: Option<BudgetMode>,
    /// Reference draws for marginal Wasserstein distances in sample runs.
    #[serde(default)]
    pub reference_draws: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self, BenchError> {
        let c: Self = serde_json::from_str(s).map_err(|e| BenchError::Config(vec![e.to_string()]))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_path(path: &Path) -> Result<Self, BenchError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Check every field and report all violations together.
    pub fn validate(&self) -> Result<(), BenchError> {
        let mut errs = Vec::new();
        let positive = |name: &str, v: Option<usize>, required: bool, errs: &mut Vec<String>| match v {
            Some(0) => errs.push(format!("{name} must be positive")),
            None if required => errs.push(format!("{name} is required for this experiment")),
            _ => {}
        };
        if self.replicates == 0 {
            errs.push("replicates must be positive".into());
        }
        if self.seeds.is_empty() {
            errs.push("seeds must not be empty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            errs.push("seeds must be distinct".into());
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                errs.push("sigma must be positive".into());
            }
        }
        for (name, v) in [
            ("n1", self.n1),
            ("n2", self.n2),
            ("t", self.t),
            ("m", self.m),
            ("k", self.k),
        ] {
            positive(name, v, false, &mut errs);
        }
        if let Some(c) = &self.constraints {
            if let Err(e) = c.validate() {
                errs.push(format!("constraints: {e}"));
            }
        }
        let needs_sampler_fields = |s: &SamplerSpec, errs: &mut Vec<String>| {
            if !matches!(s, SamplerSpec::Iid) {
                positive("t", self.t, true, errs);
            }
            if matches!(
                s,
                SamplerSpec::Rwm | SamplerSpec::Warpu { .. } | SamplerSpec::Augmented { .. }
            ) || matches!(s, SamplerSpec::Adaptive { .. } | SamplerSpec::ParallelTempering { .. })
            {
                if self.sigma.is_none() {
                    errs.push("sigma is required for this sampler".into());
                }
            }
            match s {
                SamplerSpec::Adaptive { policy_version, .. } => {
                    positive("m", self.m, true, errs);
                    positive("k", self.k, true, errs);
                    if !(1..=4).contains(policy_version) {
                        errs.push("sampler.policy_version must be 1, 2, 3 or 4".into());
                    }
                }
                SamplerSpec::ParallelTempering { n_levels, .. } if *n_levels == 0 => {
                    errs.push("sampler.n_levels must be positive".into());
                }
                _ => {}
            }
            if let Some(m) = mixture_of(s) {
                self.check_mixture(m, "sampler.mixture", errs);
            }
        };
        match self.experiment {
            ExperimentKind::Sample => match &self.sampler {
                None => errs.push("sampler is required for sample experiments".into()),
                Some(SamplerSpec::Iid) => errs.push("sample experiments need an MCMC sampler".into()),
                Some(s) => needs_sampler_fields(s, &mut errs),
            },
            ExperimentKind::Estimate => {
                match &self.estimator {
                    None => errs.push("estimator is required for estimate experiments".into()),
                    Some(e) => {
                        if e.estimators.is_empty() {
                            errs.push("estimator.estimators must not be empty".into());
                        }
                        self.check_mixture(&e.mixture, "estimator.mixture", &mut errs);
                        match self.budget_mode {
                            None if e.estimators.len() > 1 => {
                                errs.push("budget_mode must be set when comparing estimators".into())
                            }
                            Some(BudgetMode::EvaluationMatched) => {
                                if e.budgets.is_empty() || e.budgets.contains(&0) {
                                    errs.push("estimator.budgets must be nonempty and positive".into());
                                }
                            }
                            _ => {
                                positive("n1", self.n1, true, &mut errs);
                                positive("n2", self.n2, true, &mut errs);
                            }
                        }
                    }
                }
                match &self.sampler {
                    None | Some(SamplerSpec::Iid) => {}
                    Some(SamplerSpec::Warpu { .. }) => {
                        if self.budget_mode == Some(BudgetMode::EvaluationMatched) {
                            errs.push("evaluation-matched budgets need i.i.d. target draws".into());
                        }
                        needs_sampler_fields(self.sampler.as_ref().expect("checked"), &mut errs);
                    }
                    Some(_) => errs.push("estimate experiments support the iid and warpu samplers".into()),
                }
            }
            ExperimentKind::Unbiased => match &self.coupling {
                None => errs.push("coupling is required for unbiased experiments".into()),
                Some(c) => {
                    if c.l > c.m {
                        errs.push("coupling.l must not exceed coupling.m".into());
                    }
                    if c.max_iterations <= c.m {
                        errs.push("coupling.max_iterations must exceed coupling.m".into());
                    }
                    if c.levels.is_empty() {
                        errs.push("coupling.levels must not be empty".into());
                    }
                    if c.functions.is_empty() {
                        errs.push("coupling.functions must not be empty".into());
                    }
                    self.check_mixture(&c.mixture, "coupling.mixture", &mut errs);
                }
            },
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(BenchError::Config(errs))
        }
    }

    fn check_mixture(&self, m: &MixtureSource, field: &str, errs: &mut Vec<String>) {
        match m {
            MixtureSource::Fit { pilot, .. } => {
                if *pilot == 0 {
                    errs.push(format!("{field}.pilot must be positive"));
                }
                if self.k.is_none() {
                    errs.push(format!("k is required by {field}"));
                }
            }
            MixtureSource::Explicit { weights, means, sds } => {
                if weights.len() != means.len() || weights.len() != sds.len() || weights.is_empty() {
                    errs.push(format!("{field} needs one weight, mean and sd per component"));
                }
            }
            _ => {}
        }
    }

    /// `(seed, replicate)` pairs in output order.
    pub fn replicate_ids(&self) -> Vec<(u64, usize)> {
        self.seeds
            .iter()
            .flat_map(|&s| (0..self.replicates).map(move |r| (s, r)))
            .collect()
    }
}

fn mixture_of(s: &SamplerSpec) -> Option<&MixtureSource> {
    match s {
        SamplerSpec::Warpu { mixture }
        | SamplerSpec::Augmented { mixture, .. }
        | SamplerSpec::MixtureMh { mixture } => Some(mixture),
        _ => None,
    }
}
