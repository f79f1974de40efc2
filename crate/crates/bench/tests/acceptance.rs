//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails. Pass criterion numbers as arguments to run a subset.

use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use warpu::coupling::{
    discrete_ot_coupling, run_coupled, CoupledConfig, IndexCoupling, LocalCoupling, ProposalCoupling, RbLevel, TestFn,
};
use warpu::density::{inverse_index_distribution, mass_transport_decomposition, Integration};
use warpu::estimators::{
    asymptotic_variance_diagnostics, bridge_estimate, stochastic_warpu_bridge, stochastic_warpu_bridge_from_caches,
    warpu_bridge_estimate, warpu_bridge_from_caches, BridgeOptions, SwbOptions,
};
use warpu::math::std_normal_vec;
use warpu::quadrature::integrate_2d;
use warpu::samplers::{
    run_adaptive_warpu, run_parallel_tempering, run_warpu, AdaptiveConfig, ChainState, Hmc, InitialDensity, Ladder,
    RandomWalk, RefitPolicy, RefitSchedule, TemperingConfig,
};
use warpu::stats::{ks_critical_two_sample, ks_two_sample, mean_se};
use warpu::{replicate_rng, replicate_seed, GaussianMixture, Target};
use warpu_bench::config::ExperimentConfig;
use warpu_bench::experiment::run_experiment;
use warpu_bench::metrics::{mode_occupancy, wasserstein_1d_to_cdf};
use warpu_bench::targets::{five_mode_4d, make_target, unit_variance_auxiliary, BenchTarget, TargetSpec};

type Outcome = (bool, String);

fn mixture(weights: &[f64], means: &[f64], sds: &[f64]) -> GaussianMixture {
    GaussianMixture::isotropic(weights.to_vec(), means.iter().map(|&m| vec![m]).collect(), sds).unwrap()
}

/// A deliberately poor two-component approximation of the three-mode target.
fn mismatched_three_mode_aux() -> GaussianMixture {
    mixture(&[0.5, 0.5], &[-3.0, 3.0], &[1.5, 1.5])
}

/// Warp-U transformation `G` applied to one point.
fn apply_g<R: Rng>(mix: &GaussianMixture, target: &Target, x: &[f64], rng: &mut R) -> Vec<f64> {
    let psi = mix.responsibilities(x).unwrap().sample(rng);
    let star = mix.forward_warp(x, psi).unwrap();
    let (nu, back) = inverse_index_distribution(mix, target, &star).unwrap();
    back.points[nu.sample(rng)].clone()
}

fn criterion_1() -> Outcome {
    let bt = make_target(&TargetSpec::ThreeMode { scale: 1.0 }).unwrap();
    let warpu_bench::targets::Truth::Gaussian(truth) = &bt.truth else {
        unreachable!()
    };
    let n = 50_000;
    let reps = 40;
    let crit = ks_critical_two_sample(n, n, 0.01);
    let mut detail = Vec::new();
    let mut ok = true;
    for (label, mix) in [("matched", truth.clone()), ("mismatched", mismatched_three_mode_aux())] {
        let mut below = 0;
        for r in 0..reps {
            let mut rng = replicate_rng(1, r);
            let moved: Vec<f64> = (0..n)
                .map(|_| apply_g(&mix, &bt.target, &bt.sample(&mut rng), &mut rng)[0])
                .collect();
            let fresh: Vec<f64> = (0..n).map(|_| bt.sample(&mut rng)[0]).collect();
            if ks_two_sample(&moved, &fresh) < crit {
                below += 1;
            }
        }
        ok &= below * 100 >= 95 * reps as usize;
        detail.push(format!("{label} {below}/{reps} below D_crit={crit:.5}"));
    }
    (ok, detail.join(", "))
}

fn criterion_2() -> Outcome {
    let bt = make_target(&TargetSpec::ThreeMode { scale: 1.0 }).unwrap();
    let mix = mismatched_three_mode_aux();
    let mut rng = replicate_rng(2, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let x = [rng.random_range(-8.0..8.0)];
        let m = mass_transport_decomposition(&mix, &bt.target, &x).unwrap();
        let total: f64 = m.iter().flatten().sum();
        let q = bt.target.log_q(&x).exp();
        worst = worst.max((total - q).abs() / q);
    }
    (
        worst <= 1e-8,
        format!("max relative error {worst:.3e} over 200 points (tol 1e-8)"),
    )
}

/// Moves means by 0.3 sd, inflates sds by 20% and pulls weights halfway to uniform.
fn perturbed(mix: &GaussianMixture) -> GaussianMixture {
    let k = mix.k();
    let sds: Vec<f64> = mix.scales().iter().map(|s| s.get(0, 0)).collect();
    GaussianMixture::isotropic(
        mix.weights().iter().map(|w| 0.5 * w + 0.5 / k as f64).collect(),
        mix.means()
            .iter()
            .zip(&sds)
            .map(|(m, s)| m.iter().map(|v| v + 0.3 * s).collect())
            .collect(),
        &sds.iter().map(|s| 1.2 * s).collect::<Vec<_>>(),
    )
    .unwrap()
}

fn gaussian_truth(bt: &BenchTarget) -> &GaussianMixture {
    match &bt.truth {
        warpu_bench::targets::Truth::Gaussian(m) => m,
        _ => panic!("Gaussian target expected"),
    }
}

fn criterion_3() -> Outcome {
    let n = 20_000;
    let reps = 100;
    let mut ok = true;
    let mut detail = Vec::new();
    for spec in [
        TargetSpec::ThreeMode { scale: 10.0 },
        TargetSpec::FiveMode4d { scale: 10.0 },
    ] {
        let bt = make_target(&spec).unwrap();
        let d = bt.dim();
        let mix = perturbed(gaussian_truth(&bt));
        let mut est: [Vec<f64>; 3] = Default::default();
        for r in 0..reps {
            let mut rng = replicate_rng(3, r as u64);
            let pi = bt.samples(&mut rng, n);
            let aux: Vec<Vec<f64>> = (0..n).map(|_| mix.sample(&mut rng).0).collect();
            let phi: Vec<Vec<f64>> = (0..n).map(|_| std_normal_vec(&mut rng, d)).collect();
            est[0].push(
                bridge_estimate(&bt.target, &mix, &pi, &aux, BridgeOptions::default())
                    .unwrap()
                    .c_hat,
            );
            est[1].push(
                warpu_bridge_estimate(&bt.target, &mix, &pi, &phi, &mut rng, BridgeOptions::default())
                    .unwrap()
                    .c_hat,
            );
            est[2].push(
                stochastic_warpu_bridge(&bt.target, &mix, &pi, n, SwbOptions::default(), &mut rng)
                    .unwrap()
                    .c_hat,
            );
        }
        for (label, e) in ["BS", "WB", "SWB"].iter().zip(&est) {
            let (m, se) = mean_se(e);
            let good = (m - 10.0).abs() <= 3.0 * se;
            ok &= good;
            detail.push(format!("d={d} {label} {m:.5}±{se:.5}"));
        }
    }
    // With the target exactly c * phi_mix, the warped density is c * phi and WB is exact.
    let mix = five_mode_4d();
    let exact = {
        let m = mix.clone();
        Target::from_fn(4, move |x| 10f64.ln() + m.ln_pdf(x))
    };
    let mut degenerate = Vec::new();
    for r in 0..20 {
        let mut rng = replicate_rng(33, r);
        let pi: Vec<Vec<f64>> = (0..2000).map(|_| mix.sample(&mut rng).0).collect();
        let phi: Vec<Vec<f64>> = (0..2000).map(|_| std_normal_vec(&mut rng, 4)).collect();
        degenerate.push(
            warpu_bridge_estimate(&exact, &mix, &pi, &phi, &mut rng, BridgeOptions::default())
                .unwrap()
                .c_hat,
        );
    }
    let (m, se) = mean_se(&degenerate);
    let var = se * se * degenerate.len() as f64;
    ok &= var < 1e-6;
    detail.push(format!("exact-warp WB mean {m:.12} var {var:.2e}"));
    (ok, detail.join(", "))
}

fn criterion_10() -> Outcome {
    let bt = make_target(&TargetSpec::ThreeMode { scale: 1.0 }).unwrap();
    let mix = perturbed(gaussian_truth(&bt));
    let k = mix.k() as u64;
    let (n1, n2, stages) = (1000u64, 700u64, 3u64);
    let mut checks: Vec<(String, u64, u64)> = Vec::new();

    let theta0 = vec![0.0];
    let lq0 = bt.target.fresh().log_q(&theta0);
    let mut state = ChainState::with_log_q(theta0, lq0, replicate_rng(10, 0));
    let kernel = RandomWalk { sigma: 1.0 };
    let before = bt.target.evals();
    let mut caches = Vec::new();
    for _ in 0..stages {
        let tr = run_warpu(&bt.target, &mix, &kernel, &mut state, n1 as usize, true, 1.0);
        caches = tr.caches;
    }
    checks.push((
        "Warp-U sampling (K+1)n1M".into(),
        bt.target.evals() - before,
        (k + 1) * n1 * stages,
    ));

    let adaptive = run_adaptive_warpu(
        &bt.target,
        &AdaptiveConfig {
            t: n1 as usize,
            stages: stages as usize,
            k: k as usize,
            seed: 10,
            sigma: 1.0,
            initial: InitialDensity::UniformBox {
                lower: vec![-8.0],
                upper: vec![8.0],
            },
            theta0: None,
            policy: RefitPolicy::version(3),
            schedule: RefitSchedule::Always,
            constraints: Default::default(),
            annealing: None,
            keep_caches: false,
        },
    )
    .unwrap();
    checks.push((
        "adaptive Warp-U (K+1)n1M".into(),
        adaptive.target_evals,
        (k + 1) * n1 * stages,
    ));

    let mut rng = replicate_rng(10, 1);
    let before = bt.target.evals();
    stochastic_warpu_bridge_from_caches(&bt.target, &mix, &caches, n2 as usize, SwbOptions::default(), &mut rng)
        .unwrap();
    checks.push(("SWB with caches Kn2".into(), bt.target.evals() - before, k * n2));

    let pi = bt.samples(&mut rng, n1 as usize);
    let before = bt.target.evals();
    stochastic_warpu_bridge(&bt.target, &mix, &pi, n2 as usize, SwbOptions::default(), &mut rng).unwrap();
    checks.push((
        "SWB without caches n1+Kn2".into(),
        bt.target.evals() - before,
        n1 + k * n2,
    ));

    let phi: Vec<Vec<f64>> = (0..n2).map(|_| std_normal_vec(&mut rng, 1)).collect();
    let before = bt.target.evals();
    warpu_bridge_from_caches(&bt.target, &mix, &caches, &phi, BridgeOptions::default()).unwrap();
    checks.push(("WB with caches Kn2".into(), bt.target.evals() - before, k * n2));
    let before = bt.target.evals();
    warpu_bridge_estimate(&bt.target, &mix, &pi, &phi, &mut rng, BridgeOptions::default()).unwrap();
    checks.push((
        "WB without caches K(n1+n2)".into(),
        bt.target.evals() - before,
        k * (n1 + n2),
    ));

    let ok = checks.iter().all(|(_, got, want)| got == want);
    let detail = checks
        .iter()
        .map(|(l, got, want)| format!("{l}: {got}/{want}"))
        .collect::<Vec<_>>()
        .join(", ");
    (ok, detail)
}

/// Minimum of a 4x4 transportation problem by enumerating every 7-cell basis.
fn exhaustive_transport(p: &[f64; 4], q: &[f64; 4], cost: &[[f64; 4]; 4]) -> f64 {
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << 16) {
        if mask.count_ones() != 7 {
            continue;
        }
        let cells: Vec<usize> = (0..16).filter(|c| mask & (1 << c) != 0).collect();
        // Rows: 4 row-sum and the first 3 column-sum constraints; the last column is implied.
        let mut a = [[0.0f64; 8]; 7];
        for (j, &c) in cells.iter().enumerate() {
            let (r, col) = (c / 4, c % 4);
            a[r][j] = 1.0;
            if col < 3 {
                a[4 + col][j] = 1.0;
            }
        }
        for i in 0..4 {
            a[i][7] = p[i];
        }
        for i in 0..3 {
            a[4 + i][7] = q[i];
        }
        let Some(x) = solve7(a) else { continue };
        if x.iter().any(|&v| v < -1e-12) {
            continue;
        }
        let obj: f64 = cells.iter().zip(&x).map(|(&c, v)| v * cost[c / 4][c % 4]).sum();
        best = best.min(obj);
    }
    best
}

fn solve7(mut a: [[f64; 8]; 7]) -> Option<[f64; 7]> {
    for col in 0..7 {
        let piv = (col..7).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-9 {
            return None;
        }
        a.swap(col, piv);
        for r in 0..7 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..8 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let mut x = [0.0; 7];
    for i in 0..7 {
        x[i] = a[i][7] / a[i][i];
    }
    Some(x)
}

fn criterion_11() -> Outcome {
    let mut rng = replicate_rng(11, 0);
    let simplex = |rng: &mut warpu::Rng| {
        let v: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>() + 1e-3);
        let s: f64 = v.iter().sum();
        v.map(|x| x / s)
    };
    let (mut obj_err, mut marg_err) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let p = simplex(&mut rng);
        let q = simplex(&mut rng);
        let cost: [[f64; 4]; 4] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random::<f64>()));
        let cost_rows: Vec<Vec<f64>> = cost.iter().map(|r| r.to_vec()).collect();
        let m = discrete_ot_coupling(&p, &q, &cost_rows).unwrap();
        obj_err = obj_err.max((m.objective - exhaustive_transport(&p, &q, &cost)).abs());
        for (a, b) in m.row_sums().iter().zip(&p).chain(m.col_sums().iter().zip(&q)) {
            marg_err = marg_err.max((a - b).abs());
        }
    }
    (
        obj_err <= 1e-9 && marg_err <= 1e-10,
        format!("max objective gap {obj_err:.2e} (tol 1e-9), max marginal error {marg_err:.2e} (tol 1e-10)"),
    )
}

fn criterion_4() -> Outcome {
    let config = ExperimentConfig::from_json(
        r#"{
            "experiment": "estimate",
            "target": {"name": "skew_t2d"},
            "estimator": {
                "estimators": ["bs", "wb", "swb"],
                "mixture": {"source": "fit", "pilot": 5000, "seed": 4},
                "budgets": [3000, 12000, 48000]
            },
            "k": 5,
            "seeds": [4],
            "replicates": 100,
            "budget_mode": "evaluation_matched"
        }"#,
    )
    .unwrap();
    let report = run_experiment(&config).unwrap();
    let groups = report.summary["groups"].as_array().unwrap();
    let rmse_of = |budget: u64, est: &str| {
        groups
            .iter()
            .find(|g| g["budget"].as_u64() == Some(budget) && g["estimator"].as_str() == Some(est))
            .and_then(|g| g["rmse"].as_f64())
            .unwrap()
    };
    let mut ok = report.summary["budget_ok"].as_bool() == Some(true);
    let mut detail = Vec::new();
    for b in [3000, 12000, 48000] {
        let (bs, wb, swb) = (rmse_of(b, "bs"), rmse_of(b, "wb"), rmse_of(b, "swb"));
        if b > 3000 {
            ok &= swb <= wb;
        }
        detail.push(format!("B={b} rmse bs {bs:.4} wb {wb:.4} swb {swb:.4}"));
    }
    detail.push(format!("budgets matched: {}", report.summary["budget_ok"]));
    (ok, detail.join(", "))
}

/// Empirical `(n1 + n2) Var(log c_hat)` of WB and SWB against their predictions,
/// with i.i.d. target draws and `n1 = n2 = n` (`n2` per component for SWB).
fn variance_law(bt: &BenchTarget, mix: &GaussianMixture, seed: u64, n: usize, reps: usize) -> (String, bool) {
    let mut wb = Vec::with_capacity(reps);
    let mut swb = Vec::with_capacity(reps);
    for r in 0..reps {
        let mut rng = replicate_rng(seed, r as u64);
        let pi = bt.samples(&mut rng, n);
        let phi: Vec<Vec<f64>> = (0..n).map(|_| std_normal_vec(&mut rng, 1)).collect();
        wb.push(
            warpu_bridge_estimate(&bt.target, mix, &pi, &phi, &mut rng, BridgeOptions::default())
                .unwrap()
                .lambda_hat,
        );
        swb.push(
            stochastic_warpu_bridge(&bt.target, mix, &pi, n, SwbOptions::default(), &mut rng)
                .unwrap()
                .lambda_hat,
        );
    }
    let scaled_var = |v: &[f64], total: usize| {
        let (_, se) = mean_se(v);
        se * se * v.len() as f64 * total as f64
    };
    let emp_wb = scaled_var(&wb, 2 * n);
    let emp_swb = scaled_var(&swb, 2 * n);
    let inf = f64::INFINITY;
    match asymptotic_variance_diagnostics(mix, &bt.target.fresh(), 1.0, Integration::Line(-inf, inf)) {
        Ok(d) => {
            let rel_wb = (emp_wb - d.var_wb_pred).abs() / d.var_wb_pred;
            let rel_swb = (emp_swb - d.var_swb_pred).abs() / d.var_swb_pred;
            (
                format!(
                    "WB empirical {emp_wb:.4} vs chi2 {:.4} (rel {rel_wb:.3}), SWB empirical {emp_swb:.4} vs predicted {:.4} (rel {rel_swb:.3})",
                    d.var_wb_pred, d.var_swb_pred
                ),
                rel_wb <= 0.2 && rel_swb <= 0.2,
            )
        }
        Err(e) => (
            format!("WB empirical {emp_wb:.4}, SWB empirical {emp_swb:.4}, predictions unavailable: {e}"),
            false,
        ),
    }
}

fn criterion_5() -> Outcome {
    let bt = make_target(&TargetSpec::TMixture1d { dof: 5.0 }).unwrap();
    let sd = (5.0f64 / 3.0).sqrt();
    let mix = mixture(&[0.5, 0.5], &[-3.0, 3.0], &[sd, sd]);
    let (detail, ok) = variance_law(&bt, &mix, 5, 2000, 500);
    (ok, detail)
}

/// The same law where the divergence is small and finite: a light-tailed target and a
/// slightly mis-specified Gaussian mixture.
fn criterion_5_light_tails() -> Outcome {
    let bt = make_target(&TargetSpec::ThreeMode { scale: 1.0 }).unwrap();
    let truth = gaussian_truth(&bt);
    let sds: Vec<f64> = truth.scales().iter().map(|s| 1.1 * s.get(0, 0)).collect();
    let means: Vec<f64> = truth.means().iter().zip(&sds).map(|(m, s)| m[0] + 0.1 * s).collect();
    let mix = mixture(truth.weights(), &means, &sds);
    let (detail, ok) = variance_law(&bt, &mix, 55, 2000, 500);
    (ok, detail)
}

fn sum_fn(x: &[f64]) -> f64 {
    x.iter().sum()
}

fn sum_sq_fn(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Independent starting points for both chains, overdispersed around the origin.
fn start_pair(d: usize, seed: u64, rep: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = replicate_rng(seed, rep as u64);
    let a = std_normal_vec(&mut rng, d).iter().map(|v| 3.0 * v).collect();
    let b = std_normal_vec(&mut rng, d).iter().map(|v| 3.0 * v).collect();
    (a, b)
}

fn coupled_config(
    index: IndexCoupling,
    levels: Vec<RbLevel>,
    m: usize,
    sigma: f64,
    proposal: ProposalCoupling,
) -> CoupledConfig {
    CoupledConfig {
        local: LocalCoupling::RandomWalk { sigma, proposal },
        index,
        levels,
        m,
        max_iterations: 20_000,
    }
}

fn criterion_6() -> Outcome {
    let bt = make_target(&TargetSpec::Bimodal2d { scale: 1.0 }).unwrap();
    let mix = perturbed(gaussian_truth(&bt));
    let (l, m, reps) = (50, 200, 200);
    let hs: [TestFn; 2] = [&sum_fn, &sum_sq_fn];
    let truth: Vec<f64> = hs
        .iter()
        .map(|h| {
            integrate_2d(
                |x, y| h(&[x, y]) * bt.ln_pi(&[x, y]).exp(),
                (-15.0, 15.0),
                (-15.0, 15.0),
                1e-11,
                1e-11,
            )
            .value
        })
        .collect();
    let levels = vec![RbLevel::L0, RbLevel::L1, RbLevel::L2];
    let mut ok = true;
    let mut detail = Vec::new();
    for (label, index) in [
        ("separate", IndexCoupling::Separate),
        ("combined", IndexCoupling::Combined),
    ] {
        let config = coupled_config(index, levels.clone(), m, 1.0, ProposalCoupling::Maximal);
        let mut est = vec![Vec::with_capacity(reps); hs.len() * levels.len()];
        let mut faithful = 0;
        for r in 0..reps {
            let (a, b) = start_pair(2, 6, r);
            let run = run_coupled(&bt.target, &mix, &config, &a, &b, replicate_seed(6, r as u64), &hs).unwrap();
            if run.tau.is_some() && run.is_faithful() {
                faithful += 1;
            }
            for (hi, _) in hs.iter().enumerate() {
                for (li, &level) in levels.iter().enumerate() {
                    est[hi * levels.len() + li].push(run.h_lm(hi, level, l, m).unwrap());
                }
            }
        }
        ok &= faithful == reps;
        let mut worst: f64 = 0.0;
        for (hi, t) in truth.iter().enumerate() {
            for li in 0..levels.len() {
                let (mean, se) = mean_se(&est[hi * levels.len() + li]);
                worst = worst.max((mean - t).abs() / se);
            }
        }
        ok &= worst <= 3.0;
        detail.push(format!(
            "{label}: faithful {faithful}/{reps}, max |mean-truth|/se {worst:.2}"
        ));
    }
    detail.push(format!("truth E[sum] {:.6} E[sum sq] {:.6}", truth[0], truth[1]));
    (ok, detail.join(", "))
}

/// Slope of `log P(tau > t)` fitted over the times where the survival is at least 2%.
fn log_survival_slope(taus: &[usize]) -> f64 {
    let n = taus.len() as f64;
    let max = *taus.iter().max().unwrap();
    let pts: Vec<(f64, f64)> = (0..=max)
        .map(|t| (t as f64, taus.iter().filter(|&&x| x > t).count() as f64 / n))
        .take_while(|&(_, s)| s >= 0.02)
        .map(|(t, s)| (t, s.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let ms = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let cov: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ms)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    cov / var
}

fn median(v: &[usize]) -> f64 {
    let mut s = v.to_vec();
    s.sort_unstable();
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2] as f64
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2]) as f64
    }
}

fn criterion_7() -> Outcome {
    let reps = 1000;
    let mut ok = true;
    let mut detail = Vec::new();
    for (spec, sigma) in [
        (TargetSpec::Bimodal2d { scale: 1.0 }, 1.0),
        (TargetSpec::ThreeMode5d { scale: 1.0 }, 0.7),
    ] {
        let bt = make_target(&spec).unwrap();
        let d = bt.dim();
        let mix = perturbed(gaussian_truth(&bt));
        let mut medians = Vec::new();
        for (label, index) in [
            ("separate", IndexCoupling::Separate),
            ("combined", IndexCoupling::Combined),
        ] {
            let config = coupled_config(index, vec![RbLevel::L0], 0, sigma, ProposalCoupling::Reflection);
            let taus: Vec<usize> = (0..reps)
                .map(|r| {
                    let (a, b) = start_pair(d, 7, r);
                    run_coupled(
                        &bt.target,
                        &mix,
                        &config,
                        &a,
                        &b,
                        replicate_seed(7, r as u64),
                        &[&sum_fn],
                    )
                    .unwrap()
                    .tau
                    .unwrap_or(usize::MAX)
                })
                .collect();
            let met = taus.iter().all(|&t| t != usize::MAX);
            let slope = log_survival_slope(&taus);
            let med = median(&taus);
            ok &= met && slope < 0.0;
            medians.push(med);
            detail.push(format!(
                "d={d} {label}: median tau {med}, log-survival slope {slope:.4}"
            ));
        }
        ok &= medians[1] <= medians[0];
    }
    (ok, detail.join(", "))
}

/// Fraction of retained samples nearest the small-variance mode at `+1`.
fn small_mode_share(bt: &BenchTarget, samples: &[Vec<f64>]) -> f64 {
    mode_occupancy(samples, &bt.mode_centers)[1]
}

fn criterion_8() -> Outcome {
    let d = 30;
    let bt = make_target(&TargetSpec::Setting1 {
        dim: d,
        var1: 0.8,
        var2: 0.2,
    })
    .unwrap();
    let mix = unit_variance_auxiliary(&bt).unwrap();
    let (burn, keep, runs) = (1000, 4000, 20);
    let mut warp = Vec::with_capacity(runs);
    let mut pt = Vec::with_capacity(runs);
    for r in 0..runs {
        let mut rng = replicate_rng(8, r as u64);
        let theta0 = std_normal_vec(&mut rng, d);
        let lq0 = bt.target.fresh().log_q(&theta0);
        let mut state = ChainState::with_log_q(theta0.clone(), lq0, replicate_rng(80, r as u64));
        // Random-walk moves decorrelate the radius too slowly in 30 dimensions for the
        // warp to find the crossing region; HMC local moves fix that.
        let kernel = Hmc {
            step_size: 0.1,
            n_leapfrog: 10,
        };
        let tr = run_warpu(&bt.target, &mix, &kernel, &mut state, burn + keep, false, 1.0);
        warp.push(small_mode_share(&bt, &tr.samples[burn..]));
        let tr = run_parallel_tempering(
            &bt.target,
            &TemperingConfig {
                n_levels: 20,
                ladder: Ladder::EquallySpaced,
                iterations: burn + keep,
                sigma: 0.25,
                sigma_per_level: None,
                theta0,
                seed: replicate_seed(81, r as u64),
            },
        )
        .unwrap();
        pt.push(small_mode_share(&bt, &tr.cold.samples[burn..]));
    }
    let warp_ok = warp.iter().filter(|&&o| (0.2..=0.8).contains(&o)).count();
    let pt_ok = pt.iter().filter(|&&o| o < 0.05).count();
    let fmt = |v: &[f64]| v.iter().map(|o| format!("{o:.2}")).collect::<Vec<_>>().join(" ");
    (
        warp_ok * 5 >= runs * 4 && pt_ok * 5 >= runs * 4,
        format!(
            "Warp-U in [0.2, 0.8] {warp_ok}/{runs} ({}), PT below 0.05 {pt_ok}/{runs} ({})",
            fmt(&warp),
            fmt(&pt)
        ),
    )
}

fn criterion_9() -> Outcome {
    let bt = make_target(&TargetSpec::FiveMode4d { scale: 1.0 }).unwrap();
    let (t, stages, reps) = (4000, 11, 10);
    let mut dist = vec![Vec::with_capacity(reps); stages + 1];
    for r in 0..reps {
        let trace = run_adaptive_warpu(
            &bt.target,
            &AdaptiveConfig {
                t,
                stages,
                k: 10,
                seed: replicate_seed(9, r as u64),
                sigma: 1.0,
                initial: InitialDensity::UniformBox {
                    lower: vec![-15.0; 4],
                    upper: vec![15.0; 4],
                },
                theta0: None,
                policy: RefitPolicy::version(1),
                schedule: RefitSchedule::Diminishing,
                constraints: Default::default(),
                annealing: None,
                keep_caches: false,
            },
        )
        .unwrap();
        let w1 = |xs: &[Vec<f64>]| {
            let first: Vec<f64> = xs.iter().map(|x| x[0]).collect();
            wasserstein_1d_to_cdf(&first, |v| bt.marginal_cdf(0, v).unwrap())
        };
        dist[0].push(w1(&trace.initial_samples));
        for (s, st) in trace.stages.iter().enumerate() {
            dist[s + 1].push(w1(&st.samples));
        }
    }
    let med: Vec<f64> = dist
        .iter()
        .map(|v| {
            let mut s = v.clone();
            s.sort_by(f64::total_cmp);
            0.5 * (s[(reps - 1) / 2] + s[reps / 2])
        })
        .collect();
    let nonincreasing = med.windows(2).take(10).filter(|w| w[1] <= w[0]).count();
    let ok = med[8] < 0.25 * med[0] && nonincreasing >= 7;
    let curve = med.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>().join(" ");
    (
        ok,
        format!(
            "median W1 by stage [{curve}], stage 8 / stage 0 = {:.3}, nonincreasing {nonincreasing}/10",
            med[8] / med[0]
        ),
    )
}

fn main() -> ExitCode {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: Vec<(&str, &str, fn() -> Outcome)> = vec![
        ("1", "distribution preservation", criterion_1),
        ("2", "transport decomposition", criterion_2),
        ("3", "normalizing-constant recovery", criterion_3),
        ("4", "estimator ordering", criterion_4),
        ("5", "variance law, t-mixture target", criterion_5),
        ("5s", "variance law, light-tailed supplement", criterion_5_light_tails),
        ("6", "unbiasedness", criterion_6),
        ("7", "meeting times", criterion_7),
        ("8", "high-dimensional mode escape", criterion_8),
        ("9", "adaptive convergence", criterion_9),
        ("10", "evaluation accounting", criterion_10),
        ("11", "OT coupling correctness", criterion_11),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = f();
        if !ok {
            failed += 1;
        }
        println!(
            "{} criterion {id} ({name}): {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
