//! Experiment orchestration: replicates run in parallel on independent streams,
//! results are collected in replicate order and written by a single writer.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use warpu::coupling::{run_coupled, CoupledConfig, RbLevel, TestFn};
use warpu::estimators::{
    bridge_estimate, stochastic_warpu_bridge, stochastic_warpu_bridge_from_caches, warpu_bridge_estimate,
    warpu_bridge_from_caches, BridgeOptions, SmallComponentPolicy, SwbOptions,
};
use warpu::fit::{em_fit, EmInit, FitConstraints};
use warpu::samplers::{
    mixture_proposal_mh, run_adaptive_warpu, run_basic_warpu, run_parallel_tempering, rwm_step,
    variance_augmented_warp, AdaptiveConfig, AugmentedConfig, BasicConfig, ChainState, RefitPolicy, RefitSchedule,
    SamplerTrace, StepMeta, TemperingConfig,
};
use warpu::stats::mean_se;
use warpu::{replicate_rng, replicate_seed, Error, GaussianMixture};

use crate::config::{BudgetMode, EstimatorKind, ExperimentConfig, ExperimentKind, MixtureSource, SamplerSpec};
use crate::error::BenchError;
use crate::metrics::{pps, rmse, MetricsRecord};
use crate::targets::{make_target, unit_variance_auxiliary, BenchTarget, Truth};

/// Resolve a mixture source against a target.
pub fn resolve_mixture(
    source: &MixtureSource,
    bt: &BenchTarget,
    k: Option<usize>,
    constraints: &FitConstraints,
) -> Result<GaussianMixture, BenchError> {
    Ok(match source {
        MixtureSource::Truth => match &bt.truth {
            Truth::Gaussian(m) => m.clone(),
            Truth::SkewT(_) => {
                return Err(BenchError::Config(vec![
                    "mixture source `truth` needs a Gaussian-mixture target".into(),
                ]))
            }
        },
        MixtureSource::UnitVariance => unit_variance_auxiliary(bt)?,
        MixtureSource::Fit { pilot, seed } => {
            let mut rng = warpu::Rng::seed_from_u64(*seed);
            let draws = bt.samples(&mut rng, *pilot);
            em_fit(&draws, k.unwrap_or(1), constraints, EmInit::Seed(*seed))?
        }
        MixtureSource::File { path } => GaussianMixture::from_json(&fs::read_to_string(path)?)?,
        MixtureSource::Explicit { weights, means, sds } => {
            GaussianMixture::isotropic(weights.clone(), means.clone(), sds)?
        }
    })
}

/// One replicate's estimate from one estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub seed: u64,
    pub replicate: usize,
    pub budget: Option<u64>,
    pub estimator: EstimatorKind,
    pub n1: usize,
    pub n2: usize,
    pub c_hat: f64,
    pub target_evals: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRow {
    pub seed: u64,
    pub replicate: usize,
    pub metrics: MetricsRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnbiasedRow {
    pub seed: u64,
    pub replicate: usize,
    pub tau: Option<usize>,
    pub faithful: bool,
    pub function: String,
    pub level: RbLevel,
    pub h_lm: Option<f64>,
    pub target_evals: u64,
}

#[derive(Debug, Clone)]
pub enum Rows {
    Estimate(Vec<EstimateRow>),
    Sample {
        rows: Vec<SampleRow>,
        traces: Vec<SamplerTrace>,
    },
    Unbiased(Vec<UnbiasedRow>),
}

/// Everything a run produced. `summary` and the rows are a pure function of the
/// configuration; `timings` holds wall-clock times and is kept apart.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Rows,
    pub summary: Value,
    /// `(seed, replicate, label, wall_ms)`.
    pub timings: Vec<(u64, usize, String, f64)>,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, BenchError> {
    config.validate()?;
    let bt = make_target(&config.target)?;
    let constraints = config.constraints.clone().unwrap_or_default();
    match config.experiment {
        ExperimentKind::Estimate => run_estimate(config, &bt, &constraints),
        ExperimentKind::Sample => run_sample(config, &bt, &constraints),
        ExperimentKind::Unbiased => run_unbiased(config, &bt, &constraints),
    }
}

/// `(n1, n2)` such that the estimator uses `budget` evaluations with `n1 = n2`
/// (`n2` per component for the stochastic bridge).
pub fn matched_sizes(kind: EstimatorKind, budget: u64, k: usize) -> (usize, usize) {
    let b = budget as usize;
    let n = match kind {
        EstimatorKind::Bs => b / 2,
        EstimatorKind::Wb => b / (2 * k),
        EstimatorKind::Swb => b / (1 + k),
    };
    (n, n)
}

fn swb_options() -> SwbOptions {
    SwbOptions {
        policy: SmallComponentPolicy::Merge,
        ..SwbOptions::default()
    }
}

type Timed<T> = (T, Vec<(String, f64)>);

fn run_estimate(
    config: &ExperimentConfig,
    bt: &BenchTarget,
    constraints: &FitConstraints,
) -> Result<ExperimentReport, BenchError> {
    let spec = config.estimator.as_ref().expect("validated");
    let mix = resolve_mixture(&spec.mixture, bt, config.k, constraints)?;
    let k = mix.k();
    let plans: Vec<(Option<u64>, EstimatorKind, usize, usize)> = match config.budget_mode {
        Some(BudgetMode::EvaluationMatched) => spec
            .budgets
            .iter()
            .flat_map(|&b| {
                spec.estimators.iter().map(move |&e| {
                    let (n1, n2) = matched_sizes(e, b, k);
                    (Some(b), e, n1, n2)
                })
            })
            .collect(),
        _ => spec
            .estimators
            .iter()
            .map(|&e| (None, e, config.n1.expect("validated"), config.n2.expect("validated")))
            .collect(),
    };
    for &(b, e, n1, n2) in &plans {
        if n1 == 0 || n2 == 0 {
            return Err(BenchError::Config(vec![format!(
                "budget {} is too small for estimator {} with K = {k}",
                b.unwrap_or(0),
                e.label()
            )]));
        }
    }
    let use_sampler = matches!(config.sampler, Some(SamplerSpec::Warpu { .. }));
    let sampler_mix = match &config.sampler {
        Some(SamplerSpec::Warpu { mixture }) => Some(resolve_mixture(mixture, bt, config.k, constraints)?),
        _ => None,
    };
    let ids = config.replicate_ids();
    let results: Vec<Result<Timed<Vec<EstimateRow>>, BenchError>> = ids
        .par_iter()
        .map(|&(seed, rep)| {
            let mut rng = replicate_rng(seed, rep as u64);
            let mut rows = Vec::with_capacity(plans.len());
            let mut times = Vec::new();
            for &(budget, kind, n1, n2) in &plans {
                let target = bt.target.fresh();
                let (pi, caches) = if use_sampler {
                    let sm = sampler_mix.as_ref().expect("resolved");
                    let tr = run_basic_warpu(
                        &target,
                        sm,
                        &BasicConfig {
                            sigma: config.sigma.expect("validated"),
                            iterations: n1,
                            theta0: config.theta0.clone().unwrap_or_else(|| vec![0.0; bt.dim()]),
                            seed: replicate_seed(seed, rep as u64),
                            keep_caches: sm == &mix,
                        },
                    )?;
                    (tr.samples, tr.caches)
                } else {
                    (bt.samples(&mut rng, n1), Vec::new())
                };
                let start = Instant::now();
                let before = target.evals();
                let opts = BridgeOptions::default();
                let r = match kind {
                    EstimatorKind::Bs => {
                        let aux: Vec<Vec<f64>> = (0..n2).map(|_| mix.sample(&mut rng).0).collect();
                        bridge_estimate(&target, &mix, &pi, &aux, opts)?
                    }
                    EstimatorKind::Wb => {
                        let phi: Vec<Vec<f64>> = (0..n2)
                            .map(|_| warpu::math::std_normal_vec(&mut rng, bt.dim()))
                            .collect();
                        if caches.is_empty() {
                            warpu_bridge_estimate(&target, &mix, &pi, &phi, &mut rng, opts)?
                        } else {
                            warpu_bridge_from_caches(&target, &mix, &caches, &phi, opts)?
                        }
                    }
                    EstimatorKind::Swb => {
                        if caches.is_empty() {
                            stochastic_warpu_bridge(&target, &mix, &pi, n2, swb_options(), &mut rng)?
                        } else {
                            stochastic_warpu_bridge_from_caches(&target, &mix, &caches, n2, swb_options(), &mut rng)?
                        }
                    }
                };
                times.push((kind.label().to_string(), start.elapsed().as_secs_f64() * 1000.0));
                rows.push(EstimateRow {
                    seed,
                    replicate: rep,
                    budget,
                    estimator: kind,
                    n1,
                    n2,
                    c_hat: r.c_hat,
                    target_evals: target.evals() - before,
                });
            }
            Ok((rows, times))
        })
        .collect();
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for (r, &(seed, rep)) in results.into_iter().zip(&ids) {
        let (rs, ts) = r?;
        rows.extend(rs);
        timings.extend(ts.into_iter().map(|(l, t)| (seed, rep, l, t)));
    }
    let summary = summarize_estimates(&rows, bt.c(), config.budget_mode);
    Ok(ExperimentReport {
        config: config.clone(),
        rows: Rows::Estimate(rows),
        summary,
        timings,
    })
}

/// Aggregate per `(budget, estimator)`; recomputable from the rows alone.
pub fn summarize_estimates(rows: &[EstimateRow], truth: f64, mode: Option<BudgetMode>) -> Value {
    let mut keys: Vec<(Option<u64>, EstimatorKind)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.budget, r.estimator)) {
            keys.push((r.budget, r.estimator));
        }
    }
    let mut groups = Vec::new();
    for &(budget, est) in &keys {
        let sel: Vec<&EstimateRow> = rows
            .iter()
            .filter(|r| r.budget == budget && r.estimator == est)
            .collect();
        let vals: Vec<f64> = sel.iter().map(|r| r.c_hat).collect();
        let (mean, se) = mean_se(&vals);
        let (rm, se_rm) = rmse(&vals, truth);
        let evals = sel.iter().map(|r| r.target_evals as f64).sum::<f64>() / sel.len() as f64;
        groups.push(json!({
            "budget": budget,
            "estimator": est,
            "replicates": sel.len(),
            "mean": mean,
            "se": se,
            "rmse": rm,
            "se_of_rmse": se_rm,
            "mean_target_evals": evals,
            "pps_evals": pps(rm, evals.round() as u64, 1.0).evals,
        }));
    }
    let mut budget_ok = true;
    if mode == Some(BudgetMode::EvaluationMatched) {
        for r in rows {
            let b = r.budget.expect("matched rows carry a budget") as f64;
            if (r.target_evals as f64 - b).abs() >= 0.01 * b {
                budget_ok = false;
            }
        }
    }
    json!({ "truth": truth, "groups": groups, "budget_ok": budget_ok })
}

fn trace_from_samples(samples: Vec<Vec<f64>>, meta: Vec<StepMeta>, evals: u64) -> SamplerTrace {
    SamplerTrace {
        samples,
        meta,
        caches: Vec::new(),
        target_evals: evals,
    }
}

/// Run the configured sampler once.
pub fn run_sampler(
    config: &ExperimentConfig,
    spec: &SamplerSpec,
    bt: &BenchTarget,
    mix: Option<&GaussianMixture>,
    constraints: &FitConstraints,
    seed: u64,
) -> Result<SamplerTrace, BenchError> {
    let target = bt.target.fresh();
    let t = config.t.unwrap_or(0);
    let sigma = config.sigma.unwrap_or(1.0);
    let theta0 = config.theta0.clone().unwrap_or_else(|| vec![0.0; bt.dim()]);
    Ok(match spec {
        SamplerSpec::Iid => {
            let mut rng = warpu::Rng::seed_from_u64(seed);
            trace_from_samples(bt.samples(&mut rng, t), vec![StepMeta::default(); t], 0)
        }
        SamplerSpec::Rwm => {
            let mut state = ChainState::new(&target, theta0, seed)?;
            let before = target.evals();
            let mut samples = Vec::with_capacity(t);
            let mut meta = Vec::with_capacity(t);
            for _ in 0..t {
                let o = rwm_step(&mut state, &target, sigma);
                samples.push(state.theta.clone());
                meta.push(StepMeta {
                    accepted: o.accepted,
                    evals: 1,
                    ..StepMeta::default()
                });
            }
            trace_from_samples(samples, meta, target.evals() - before)
        }
        SamplerSpec::Warpu { .. } => run_basic_warpu(
            &target,
            mix.expect("resolved"),
            &BasicConfig {
                sigma,
                iterations: t,
                theta0,
                seed,
                keep_caches: false,
            },
        )?,
        SamplerSpec::Augmented { prior, .. } => {
            variance_augmented_warp(
                &target,
                mix.expect("resolved"),
                &AugmentedConfig {
                    sigma,
                    iterations: t,
                    theta0,
                    seed,
                    prior: *prior,
                    inner_steps: 10,
                    inner_scale: 0.5,
                },
            )?
            .trace
        }
        SamplerSpec::Adaptive {
            initial,
            policy_version,
            annealing,
        } => {
            let a = run_adaptive_warpu(
                &target,
                &AdaptiveConfig {
                    t,
                    stages: config.m.expect("validated"),
                    k: config.k.expect("validated"),
                    seed,
                    sigma,
                    initial: initial.clone(),
                    theta0: config.theta0.clone(),
                    policy: RefitPolicy::version(*policy_version),
                    schedule: RefitSchedule::Diminishing,
                    constraints: constraints.clone(),
                    annealing: *annealing,
                    keep_caches: false,
                },
            )?;
            let evals = a.target_evals;
            let mut samples = Vec::new();
            let mut meta = Vec::new();
            for s in a.stages {
                samples.extend(s.samples);
                meta.extend(s.meta);
            }
            trace_from_samples(samples, meta, evals)
        }
        SamplerSpec::ParallelTempering { n_levels, ladder } => {
            let mut pt = run_parallel_tempering(
                &target,
                &TemperingConfig {
                    n_levels: *n_levels,
                    ladder: ladder.clone(),
                    iterations: t,
                    sigma,
                    sigma_per_level: None,
                    theta0,
                    seed,
                },
            )?;
            pt.cold.target_evals = pt.target_evals;
            pt.cold
        }
        SamplerSpec::MixtureMh { .. } => mixture_proposal_mh(&target, mix.expect("resolved"), t, seed)?,
    })
}

fn run_sample(
    config: &ExperimentConfig,
    bt: &BenchTarget,
    constraints: &FitConstraints,
) -> Result<ExperimentReport, BenchError> {
    let spec = config.sampler.as_ref().expect("validated");
    let mix = match spec {
        SamplerSpec::Warpu { mixture }
        | SamplerSpec::Augmented { mixture, .. }
        | SamplerSpec::MixtureMh { mixture } => Some(resolve_mixture(mixture, bt, config.k, constraints)?),
        _ => None,
    };
    let n_ref = config.reference_draws.unwrap_or(5000);
    let ids = config.replicate_ids();
    let results: Vec<Result<(SampleRow, SamplerTrace, f64), BenchError>> = ids
        .par_iter()
        .map(|&(seed, rep)| {
            let start = Instant::now();
            let trace = run_sampler(
                config,
                spec,
                bt,
                mix.as_ref(),
                constraints,
                replicate_seed(seed, rep as u64),
            )?;
            let wall = start.elapsed().as_secs_f64() * 1000.0;
            // Reference draws come from a stream no replicate uses.
            let mut rng = replicate_rng(seed, u64::MAX - rep as u64);
            let reference = bt.samples(&mut rng, n_ref);
            let metrics = MetricsRecord::for_trace(&trace.samples, &reference, &bt.mode_centers, trace.target_evals);
            Ok((
                SampleRow {
                    seed,
                    replicate: rep,
                    metrics,
                },
                trace,
                wall,
            ))
        })
        .collect();
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let mut timings = Vec::new();
    for r in results {
        let (row, trace, wall) = r?;
        timings.push((row.seed, row.replicate, "sampler".to_string(), wall));
        rows.push(row);
        traces.push(trace);
    }
    let d = bt.dim();
    let n = rows.len() as f64;
    let mean_vec = |f: &dyn Fn(&MetricsRecord) -> &Vec<f64>| -> Vec<f64> {
        let len = rows.first().map_or(0, |r| f(&r.metrics).len());
        (0..len)
            .map(|j| rows.iter().map(|r| f(&r.metrics)[j]).sum::<f64>() / n)
            .collect()
    };
    let summary = json!({
        "dim": d,
        "replicates": rows.len(),
        "mean_ess": mean_vec(&|m| &m.ess),
        "mean_wasserstein_1d": mean_vec(&|m| &m.wasserstein_1d),
        "mean_occupancy": mean_vec(&|m| &m.mode_occupancy),
        "mean_target_evals": rows.iter().map(|r| r.metrics.target_evals as f64).sum::<f64>() / n,
    });
    Ok(ExperimentReport {
        config: config.clone(),
        rows: Rows::Sample { rows, traces },
        summary,
        timings,
    })
}

fn run_unbiased(
    config: &ExperimentConfig,
    bt: &BenchTarget,
    constraints: &FitConstraints,
) -> Result<ExperimentReport, BenchError> {
    let spec = config.coupling.as_ref().expect("validated");
    let mix = resolve_mixture(&spec.mixture, bt, config.k, constraints)?;
    let cc = CoupledConfig {
        local: spec.local,
        index: spec.index,
        levels: spec.levels.clone(),
        m: spec.m,
        max_iterations: spec.max_iterations,
    };
    let fns = spec.functions.clone();
    let ids = config.replicate_ids();
    let results: Vec<Result<(Vec<UnbiasedRow>, f64), BenchError>> = ids
        .par_iter()
        .map(|&(seed, rep)| {
            let start = Instant::now();
            let target = bt.target.fresh();
            let mut rng = replicate_rng(seed, rep as u64);
            let x1 = spec.initial.sample(&mut rng);
            let x2 = spec.initial.sample(&mut rng);
            let hs: Vec<Box<dyn Fn(&[f64]) -> f64 + Sync>> =
                fns.iter().map(|&f| Box::new(move |x: &[f64]| f.eval(x)) as _).collect();
            let refs: Vec<TestFn> = hs.iter().map(|b| b.as_ref() as TestFn).collect();
            let run = run_coupled(&target, &mix, &cc, &x1, &x2, replicate_seed(seed, rep as u64), &refs)?;
            let faithful = run.is_faithful();
            let mut rows = Vec::new();
            for (hi, f) in fns.iter().enumerate() {
                for &level in &spec.levels {
                    let h_lm = match run.h_lm(hi, level, spec.l, spec.m) {
                        Ok(v) => Some(v),
                        Err(Error::InvalidInput(_)) if run.tau.is_none() => None,
                        Err(e) => return Err(e.into()),
                    };
                    rows.push(UnbiasedRow {
                        seed,
                        replicate: rep,
                        tau: run.tau,
                        faithful,
                        function: f.label(),
                        level,
                        h_lm,
                        target_evals: run.target_evals,
                    });
                }
            }
            Ok((rows, start.elapsed().as_secs_f64() * 1000.0))
        })
        .collect();
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for (r, &(seed, rep)) in results.into_iter().zip(&ids) {
        let (rs, wall) = r?;
        rows.extend(rs);
        timings.push((seed, rep, "coupled".to_string(), wall));
    }
    let mut groups = Vec::new();
    for f in &fns {
        for &level in &spec.levels {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.function == f.label() && r.level == level)
                .filter_map(|r| r.h_lm)
                .collect();
            let (mean, se) = if vals.len() >= 2 {
                mean_se(&vals)
            } else {
                (f64::NAN, f64::NAN)
            };
            groups.push(json!({ "function": f.label(), "level": level, "mean": mean, "se": se, "count": vals.len() }));
        }
    }
    let mut taus: Vec<usize> = rows
        .iter()
        .step_by(fns.len() * spec.levels.len())
        .filter_map(|r| r.tau)
        .collect();
    taus.sort_unstable();
    let summary = json!({
        "groups": groups,
        "met": taus.len(),
        "replicates": ids.len(),
        "median_tau": taus.get(taus.len() / 2),
        "all_faithful": rows.iter().all(|r| r.faithful),
    });
    Ok(ExperimentReport {
        config: config.clone(),
        rows: Rows::Unbiased(rows),
        summary,
        timings,
    })
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn f64s(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(";")
}

/// CSV of the per-replicate rows, floats in round-trip precision.
pub fn rows_csv(rows: &Rows) -> String {
    let mut s = String::new();
    match rows {
        Rows::Estimate(rs) => {
            s.push_str("seed,replicate,budget,estimator,n1,n2,c_hat,target_evals\n");
            for r in rs {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{:?},{}",
                    r.seed,
                    r.replicate,
                    opt(r.budget),
                    r.estimator.label(),
                    r.n1,
                    r.n2,
                    r.c_hat,
                    r.target_evals
                );
            }
        }
        Rows::Sample { rows, .. } => {
            s.push_str("seed,replicate,ess,acf,wasserstein_1d,mode_occupancy,target_evals\n");
            for r in rows {
                let m = &r.metrics;
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    r.seed,
                    r.replicate,
                    f64s(&m.ess),
                    f64s(&m.acf),
                    f64s(&m.wasserstein_1d),
                    f64s(&m.mode_occupancy),
                    m.target_evals
                );
            }
        }
        Rows::Unbiased(rs) => {
            s.push_str("seed,replicate,tau,faithful,function,level,h_lm,target_evals\n");
            for r in rs {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{:?},{},{}",
                    r.seed,
                    r.replicate,
                    opt(r.tau),
                    r.faithful,
                    r.function,
                    r.level,
                    r.h_lm.map(|v| format!("{v:?}")).unwrap_or_default(),
                    r.target_evals
                );
            }
        }
    }
    s
}

/// Write `config.json`, `replicates.csv`, `summary.json`, per-replicate traces for
/// sample runs, and `timing.csv` (the only file that differs between identical runs).
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<(), BenchError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), report.config.to_json())?;
    fs::write(dir.join("replicates.csv"), rows_csv(&report.rows))?;
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&report.summary).expect("summary serializes"),
    )?;
    if let Rows::Sample { rows, traces } = &report.rows {
        let tdir = dir.join("traces");
        fs::create_dir_all(&tdir)?;
        for (r, t) in rows.iter().zip(traces) {
            let mut buf = Vec::new();
            t.write_csv(&mut buf)?;
            fs::write(tdir.join(format!("trace_s{}_r{}.csv", r.seed, r.replicate)), buf)?;
        }
    }
    let mut timing = String::from("seed,replicate,label,wall_ms\n");
    for (s, r, l, w) in &report.timings {
        let _ = writeln!(timing, "{s},{r},{l},{w:?}");
    }
    fs::write(dir.join("timing.csv"), timing)?;
    Ok(())
}
