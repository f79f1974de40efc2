//! The `warpu` command line: thin wrappers that read a JSON config, run, and
//! write JSON/CSV results.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use warpu::density::{harmonic_divergence, pearson_chi2, warped_unnormalized_density, Integration};
use warpu::estimators::{
    asymptotic_variance_diagnostics, bridge_estimate, stochastic_warpu_bridge, warpu_bridge_estimate, BridgeOptions,
    SmallComponentPolicy, SwbOptions,
};
use warpu::fit::{em_fit, EmInit, FitConstraints};
use warpu::math::{log_std_normal, std_normal_vec};

use crate::config::{EstimatorKind, ExperimentConfig, ExperimentKind, MixtureSource};
use crate::error::BenchError;
use crate::experiment::{resolve_mixture, run_experiment, write_report};
use crate::targets::{make_target, TargetSpec};

#[derive(Debug, Parser)]
#[command(
    name = "warpu",
    version,
    about = "Warp-U sampling, bridge estimation and coupled chains"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a Gaussian mixture by EM to a sample file.
    Fit(CommonArgs),
    /// Run a sampler experiment.
    Sample(CommonArgs),
    /// Bridge-family estimates of the normalizing constant from a sample file.
    Estimate(CommonArgs),
    /// Coupled chains and unbiased estimates.
    Unbiased(CommonArgs),
    /// Any experiment config.
    Bench(CommonArgs),
    /// Divergences and predicted bridge variances for a target and mixture.
    Diag(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Replaces the configured seed (or seed list).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// CSV with a header; `theta_*` columns are used when present, else every column.
    pub samples: PathBuf,
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub constraints: Option<FitConstraints>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub target: TargetSpec,
    pub mixture: MixtureSource,
    pub samples: PathBuf,
    pub n2: usize,
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagConfig {
    pub target: TargetSpec,
    pub mixture: MixtureSource,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "one")]
    pub beta: f64,
    /// Monte Carlo draws; required above two dimensions.
    #[serde(default)]
    pub draws: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, BenchError> {
    let s = fs::read_to_string(path)
        .map_err(|e| BenchError::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
    serde_json::from_str(&s).map_err(|e| BenchError::Config(vec![format!("{}: {e}", path.display())]))
}

/// Numeric rows of a CSV file with a header line.
pub fn read_samples_csv(path: &Path) -> Result<Vec<Vec<f64>>, BenchError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| BenchError::Config(vec![format!("{} is empty", path.display())]))?
        .split(',')
        .map(str::trim)
        .collect();
    let theta: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with("theta_")).collect();
    let cols: Vec<usize> = if theta.is_empty() {
        (0..header.len()).collect()
    } else {
        theta
    };
    lines
        .enumerate()
        .map(|(n, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            cols.iter()
                .map(|&c| {
                    fields.get(c).and_then(|f| f.trim().parse::<f64>().ok()).ok_or_else(|| {
                        BenchError::Config(vec![format!(
                            "{}: bad value in row {} column {}",
                            path.display(),
                            n + 2,
                            c + 1
                        )])
                    })
                })
                .collect()
        })
        .collect()
}

fn write_json(dir: &Path, name: &str, v: &serde_json::Value) -> Result<(), BenchError> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join(name),
        serde_json::to_string_pretty(v).expect("json serializes"),
    )?;
    Ok(())
}

fn out_dir(args: &CommonArgs, configured: Option<&Path>) -> PathBuf {
    args.out
        .clone()
        .or_else(|| configured.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("warpu-out"))
}

pub fn run(cli: Cli) -> Result<(), BenchError> {
    let args = match &cli.command {
        Command::Fit(a)
        | Command::Sample(a)
        | Command::Estimate(a)
        | Command::Unbiased(a)
        | Command::Bench(a)
        | Command::Diag(a) => a,
    };
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(BenchError::Config(vec!["--threads must be positive".into()]));
        }
        // Fails only if a pool already exists, in which case that pool is used.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Fit(a) => fit(a),
        Command::Estimate(a) => estimate(a),
        Command::Diag(a) => diag(a),
        Command::Sample(a) => experiment(a, Some(ExperimentKind::Sample)),
        Command::Unbiased(a) => experiment(a, Some(ExperimentKind::Unbiased)),
        Command::Bench(a) => experiment(a, None),
    }
}

fn experiment(args: &CommonArgs, kind: Option<ExperimentKind>) -> Result<(), BenchError> {
    let s = fs::read_to_string(&args.config)
        .map_err(|e| BenchError::Config(vec![format!("cannot read {}: {e}", args.config.display())]))?;
    let mut config: ExperimentConfig = serde_json::from_str(&s).map_err(|e| BenchError::Config(vec![e.to_string()]))?;
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    if let Some(k) = kind {
        if config.experiment != k {
            return Err(BenchError::Config(vec![format!(
                "this subcommand runs {k:?} experiments, the config describes {:?}",
                config.experiment
            )]));
        }
    }
    let dir = out_dir(args, config.output.as_deref());
    config.output = Some(dir.clone());
    let report = run_experiment(&config)?;
    write_report(&report, &dir)
}

fn fit(args: &CommonArgs) -> Result<(), BenchError> {
    let c: FitConfig = read_config(&args.config)?;
    let samples = read_samples_csv(&c.samples)?;
    let seed = args.seed.unwrap_or(c.seed);
    let mix = em_fit(&samples, c.k, &c.constraints.unwrap_or_default(), EmInit::Seed(seed))?;
    let dir = out_dir(args, None);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("mixture.json"), mix.to_json())?;
    Ok(())
}

fn estimate(args: &CommonArgs) -> Result<(), BenchError> {
    let c: EstimateConfig = read_config(&args.config)?;
    if c.n2 == 0 || c.estimators.is_empty() {
        return Err(BenchError::Config(vec!["n2 and estimators must be nonempty".into()]));
    }
    let bt = make_target(&c.target)?;
    let mix = resolve_mixture(&c.mixture, &bt, c.k, &FitConstraints::default())?;
    let pi = read_samples_csv(&c.samples)?;
    let mut rng = warpu::Rng::seed_from_u64(args.seed.unwrap_or(c.seed));
    let mut out = Vec::new();
    for &e in &c.estimators {
        let target = bt.target.fresh();
        let r = match e {
            EstimatorKind::Bs => {
                let aux: Vec<Vec<f64>> = (0..c.n2).map(|_| mix.sample(&mut rng).0).collect();
                bridge_estimate(&target, &mix, &pi, &aux, BridgeOptions::default())?
            }
            EstimatorKind::Wb => {
                let phi: Vec<Vec<f64>> = (0..c.n2).map(|_| std_normal_vec(&mut rng, bt.dim())).collect();
                warpu_bridge_estimate(&target, &mix, &pi, &phi, &mut rng, BridgeOptions::default())?
            }
            EstimatorKind::Swb => stochastic_warpu_bridge(
                &target,
                &mix,
                &pi,
                c.n2,
                SwbOptions {
                    policy: SmallComponentPolicy::Merge,
                    ..SwbOptions::default()
                },
                &mut rng,
            )?,
        };
        out.push(json!({
            "estimator": e,
            "c_hat": r.c_hat,
            "log_c_hat": r.lambda_hat,
            "se_hat": r.se_hat,
            "iterations": r.iterations,
            "target_evals": target.evals(),
            "merged": r.merged,
        }));
    }
    write_json(&out_dir(args, None), "estimates.json", &json!(out))
}

fn diag(args: &CommonArgs) -> Result<(), BenchError> {
    let c: DiagConfig = read_config(&args.config)?;
    let bt = make_target(&c.target)?;
    let mix = resolve_mixture(&c.mixture, &bt, c.k, &FitConstraints::default())?;
    let d = bt.dim();
    let mut rng = warpu::Rng::seed_from_u64(args.seed.unwrap_or(c.seed));
    let draws: Vec<Vec<f64>> = match (d, c.draws) {
        (_, Some(n)) => (0..n).map(|_| std_normal_vec(&mut rng, d)).collect(),
        (1 | 2, None) => Vec::new(),
        _ => {
            return Err(BenchError::Config(
                vec!["draws is required above two dimensions".into()],
            ))
        }
    };
    let inf = f64::INFINITY;
    let integration = if !draws.is_empty() {
        Integration::Draws(&draws)
    } else if d == 1 {
        Integration::Line(-inf, inf)
    } else {
        Integration::Plane((-inf, inf), (-inf, inf))
    };
    let target = bt.target.fresh();
    let log_c = bt.log_c;
    let ln_warped = |z: &[f64]| warped_unnormalized_density(&mix, &target, z).unwrap_or(f64::NEG_INFINITY) - log_c;
    let as_json = |r: warpu::Result<warpu::density::DivergenceEstimate>| match r {
        Ok(v) => json!({ "value": v.value, "std_error": v.std_error, "low_confidence": v.low_confidence }),
        Err(e) => json!({ "error": e.to_string() }),
    };
    let chi2 = as_json(pearson_chi2(&log_std_normal, &ln_warped, integration));
    let harmonic = as_json(harmonic_divergence(&ln_warped, &log_std_normal, 0.5, 0.5, integration));
    let variance = match asymptotic_variance_diagnostics(&mix, &target, c.beta, integration) {
        Ok(v) => serde_json::to_value(v).expect("diagnostics serialize"),
        Err(e) => json!({ "error": e.to_string() }),
    };
    write_json(
        &out_dir(args, None),
        "diagnostics.json",
        &json!({ "chi2_phi_warped": chi2, "harmonic_warped_phi": harmonic, "variance": variance }),
    )
}
