use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use warpu::coupling::{
    combined_outcomes, coupled_warpu_step, coupled_warpu_step_combined, discrete_ot_coupling, maximal_coupling_draw,
    rao_blackwell_h, reflection_coupling_draw, run_coupled, single_warpu_step, unbiased_h, unbiased_h_lm,
    unbiased_h_values, CoupledChainState, CoupledConfig, IndexCoupling, LocalCoupling, ProposalCoupling, RbContext,
    RbLevel, TestFn,
};
use warpu::density::{inverse_index_distribution, BackMap};
use warpu::math::{sq_dist, std_normal_cdf};
use warpu::stats::{ks_critical_one_sample, ks_one_sample, mean_se};
use warpu::{GaussianMixture, Target};

fn rng(seed: u64) -> warpu::Rng {
    warpu::Rng::seed_from_u64(seed)
}

fn mix1(w: &[f64], mu: &[f64], sd: &[f64]) -> GaussianMixture {
    GaussianMixture::isotropic(w.to_vec(), mu.iter().map(|&m| vec![m]).collect(), sd).unwrap()
}

/// `0.4 N(-3, 1) + 0.6 N(3, 0.8^2)` and a mismatched two-component approximation.
fn bimodal() -> (Target, GaussianMixture) {
    let truth = mix1(&[0.4, 0.6], &[-3.0, 3.0], &[1.0, 0.8]);
    (
        Target::from_density(truth),
        mix1(&[0.5, 0.5], &[-2.7, 3.2], &[1.2, 0.9]),
    )
}

const RWM: LocalCoupling = LocalCoupling::RandomWalk {
    sigma: 1.0,
    proposal: ProposalCoupling::Maximal,
};

#[test]
fn maximal_coupling_examples() {
    let mut r = rng(1);
    for _ in 0..1000 {
        let (x, y, same) = maximal_coupling_draw(&mut r, &[0.3, -1.0], &[0.3, -1.0], 0.7);
        assert!(same && x == y);
        let (x, y, same) = maximal_coupling_draw(&mut r, &[0.0], &[100.0], 1.0);
        assert!(!same && x != y);
    }
    let n = 100_000;
    let (mut xs, mut ys, mut hits) = (Vec::with_capacity(n), Vec::with_capacity(n), 0usize);
    for _ in 0..n {
        let (x, y, same) = maximal_coupling_draw(&mut r, &[0.0], &[1.0], 1.0);
        assert_eq!(same, x == y);
        hits += usize::from(same);
        xs.push(x[0]);
        ys.push(y[0]);
    }
    let p = hits as f64 / n as f64;
    let want = 2.0 * std_normal_cdf(-0.5);
    assert!((want - 0.6171).abs() < 1e-4);
    assert!((p - want).abs() < 3.0 * (want * (1.0 - want) / n as f64).sqrt(), "{p}");
    let crit = ks_critical_one_sample(n, 0.01);
    assert!(ks_one_sample(&xs, std_normal_cdf) < crit);
    assert!(ks_one_sample(&ys, |v| std_normal_cdf(v - 1.0)) < crit);
}

#[test]
fn reflection_coupling_examples() {
    let mut r = rng(2);
    let (x, y, same) = reflection_coupling_draw(&mut r, &[1.0, 2.0], &[1.0, 2.0], 0.5);
    assert!(same && x == y);
    let n = 100_000;
    let (mut xs, mut ys) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let m = 0.8;
    for _ in 0..n {
        let (x, y, same) = reflection_coupling_draw(&mut r, &[m], &[-m], 1.3);
        if !same {
            assert!(((x[0] - m) + (y[0] + m)).abs() < 1e-12);
        }
        xs.push(x[0]);
        ys.push(y[0]);
    }
    let crit = ks_critical_one_sample(n, 0.01);
    assert!(ks_one_sample(&xs, |v| std_normal_cdf((v - m) / 1.3)) < crit);
    assert!(ks_one_sample(&ys, |v| std_normal_cdf((v + m) / 1.3)) < crit);
}

#[test]
fn reflection_marginals_in_several_dimensions() {
    let mut r = rng(3);
    let (a, b) = ([0.5, -1.0, 2.0], [-0.5, 0.0, 1.0]);
    let n = 50_000;
    let mut proj = Vec::with_capacity(n);
    for _ in 0..n {
        let (_, y, _) = reflection_coupling_draw(&mut r, &a, &b, 1.0);
        proj.push(y[0] - b[0] + y[2] - b[2]);
    }
    let s = 2f64.sqrt();
    assert!(ks_one_sample(&proj, |v| std_normal_cdf(v / s)) < ks_critical_one_sample(n, 0.01));
}

#[test]
fn ot_examples() {
    let pts = [0.0, 1.0, 3.0];
    let cost: Vec<Vec<f64>> = pts
        .iter()
        .map(|a| pts.iter().map(|b| (a - b) * (a - b)).collect())
        .collect();
    let p = [0.2, 0.5, 0.3];
    let plan = discrete_ot_coupling(&p, &p, &cost).unwrap();
    assert!(plan.objective.abs() < 1e-15);
    for i in 0..3 {
        for j in 0..3 {
            assert!((plan.joint[i][j] - if i == j { p[i] } else { 0.0 }).abs() < 1e-15);
        }
    }
    let plan = discrete_ot_coupling(&[1.0, 0.0], &[0.5, 0.5], &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    assert_eq!(plan.joint[0], vec![0.5, 0.5]);
    assert_eq!(plan.joint[1], vec![0.0, 0.0]);
    assert!((plan.objective - 0.5).abs() < 1e-15);
    assert!(discrete_ot_coupling(
        &[0.5, 0.6],
        &[0.5, 0.5],
        &cost[..2].iter().map(|r| r[..2].to_vec()).collect::<Vec<_>>()
    )
    .is_err());
    assert!(discrete_ot_coupling(&[0.5, 0.5], &[0.5, 0.5], &[vec![0.0, -1.0], vec![1.0, 0.0]]).is_err());
}

/// For two-point marginals the plan has one free entry on an interval; the
/// objective is linear in it, so the optimum sits at an endpoint.
fn two_by_two_optimum(p: [f64; 2], q: [f64; 2], c: [[f64; 2]; 2]) -> f64 {
    let value = |t: f64| c[0][0] * t + c[0][1] * (p[0] - t) + c[1][0] * (q[0] - t) + c[1][1] * (p[1] - q[0] + t);
    let lo = (p[0] - q[1]).max(0.0);
    let hi = p[0].min(q[0]);
    value(lo).min(value(hi))
}

fn simplex(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

proptest! {
    #[test]
    fn ot_two_by_two_matches_endpoint_oracle(a in 0.01f64..1.0, b in 0.01f64..1.0, c in proptest::array::uniform4(0.0f64..5.0)) {
        let p = [a, 1.0 - a];
        let q = [b, 1.0 - b];
        let cost = [[c[0], c[1]], [c[2], c[3]]];
        let plan = discrete_ot_coupling(&p, &q, &[cost[0].to_vec(), cost[1].to_vec()]).unwrap();
        prop_assert!((plan.objective - two_by_two_optimum(p, q, cost)).abs() < 1e-12);
    }

    #[test]
    fn ot_plans_are_feasible_and_beat_independence(
        raw_p in proptest::collection::vec(0.0f64..1.0, 1..9),
        raw_q in proptest::collection::vec(0.0f64..1.0, 1..9),
        seed in any::<u64>(),
    ) {
        prop_assume!(raw_p.iter().sum::<f64>() > 0.01 && raw_q.iter().sum::<f64>() > 0.01);
        let (p, q) = (simplex(&raw_p), simplex(&raw_q));
        let mut r = rng(seed);
        let cost: Vec<Vec<f64>> = p.iter().map(|_| q.iter().map(|_| r.random_range(0.0..10.0)).collect()).collect();
        let plan = discrete_ot_coupling(&p, &q, &cost).unwrap();
        for (a, b) in plan.row_sums().iter().zip(&p) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in plan.col_sums().iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        prop_assert!(plan.joint.iter().flatten().all(|v| *v >= 0.0));
        let direct: f64 = plan.joint.iter().flatten().zip(cost.iter().flatten()).map(|(a, b)| a * b).sum();
        prop_assert!((direct - plan.objective).abs() < 1e-9);
        let independent: f64 = (0..p.len()).flat_map(|i| (0..q.len()).map(move |j| (i, j))).map(|(i, j)| p[i] * q[j] * cost[i][j]).sum();
        prop_assert!(plan.objective <= independent + 1e-12);
    }
}

#[test]
fn identical_starts_meet_at_once_and_stay_together() {
    let (t, mix) = bimodal();
    let mut s = CoupledChainState::from_pair(&t, vec![0.4], vec![0.4], 4).unwrap();
    assert!(s.met);
    assert_eq!(s.tau, Some(1));
    for _ in 0..200 {
        let step = coupled_warpu_step(&mut s, &t, &mix, &RWM).unwrap();
        assert!(step.chain2.is_none());
        assert_eq!(s.theta1, s.theta2);
        assert_eq!(s.log_q1, s.log_q2);
    }
    assert_eq!(s.tau, Some(1));
}

#[test]
fn lead_chain_keeps_the_uncoupled_law() {
    let (t, mix) = bimodal();
    let (n, steps) = (4000, 4);
    let (mut coupled, mut alone) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n as u64 {
        let mut s = CoupledChainState::from_pair(&t, vec![-1.0], vec![2.0], i).unwrap();
        for _ in 0..steps {
            coupled_warpu_step(&mut s, &t, &mix, &RWM).unwrap();
        }
        coupled.push(s.theta1[0]);
        let mut r = rng(1_000_000 + i);
        let mut theta = vec![-1.0];
        let mut lq = t.log_q(&theta);
        for _ in 0..steps {
            let (info, l) = single_warpu_step(&mut r, &t, &mix, &theta, lq, &RWM, IndexCoupling::Separate);
            theta = info.theta;
            lq = l;
        }
        alone.push(theta[0]);
    }
    let ks = warpu::stats::ks_two_sample(&coupled, &alone);
    assert!(ks < warpu::stats::ks_critical_two_sample(n, n, 0.01), "{ks}");
}

fn chi2_stat(counts: &[usize], probs: &[f64]) -> (f64, usize) {
    let n: usize = counts.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0;
    for (c, p) in counts.iter().zip(probs) {
        if *p > 0.0 {
            let e = p * n as f64;
            stat += (*c as f64 - e).powi(2) / e;
            cells += 1;
        } else {
            assert_eq!(*c, 0);
        }
    }
    (stat, cells)
}

#[test]
fn coupled_index_draws_have_the_right_marginals() {
    let (t, mix) = bimodal();
    let frozen = LocalCoupling::RandomWalk {
        sigma: 1e-200,
        proposal: ProposalCoupling::Maximal,
    };
    let (a, b) = (0.3, 1.1);
    let resp = mix.responsibilities(&[a]).unwrap();
    let n = 20_000;
    let mut counts = vec![0usize; 4];
    for i in 0..n as u64 {
        let mut s = CoupledChainState::from_pair(&t, vec![a], vec![b], i).unwrap();
        let step = coupled_warpu_step(&mut s, &t, &mix, &frozen).unwrap();
        let c = &step.chain1;
        assert_eq!(c.theta_mh, vec![a]);
        counts[c.psi * 2 + c.psi_prime] += 1;
    }
    let mut probs = vec![0.0; 4];
    for psi in 0..2 {
        let star = mix.forward_warp(&[a], psi).unwrap();
        let (nu, _) = inverse_index_distribution(&mix, &t, &star).unwrap();
        for pp in 0..2 {
            probs[psi * 2 + pp] = resp[psi] * nu[pp];
        }
    }
    let (stat, cells) = chi2_stat(&counts, &probs);
    let crit = ChiSquared::new((cells - 1) as f64).unwrap().inverse_cdf(0.99);
    assert!(stat < crit, "{stat} vs {crit}: {counts:?} {probs:?}");
}

#[test]
fn combined_outcomes_match_enumeration() {
    let (t, mix) = bimodal();
    for theta in [-2.0, 0.1, 2.5] {
        let (resp, _, probs, finals) = combined_outcomes(&mix, &t, &[theta]);
        for psi in 0..2 {
            let star = mix.forward_warp(&[theta], psi).unwrap();
            let (nu, back) = inverse_index_distribution(&mix, &t, &star).unwrap();
            for pp in 0..2 {
                assert!((probs[psi * 2 + pp] - resp[psi] * nu[pp]).abs() < 1e-10);
                assert_eq!(finals[psi * 2 + pp], back.points[pp]);
                assert_eq!(finals[psi * 2 + pp], mix.inverse_warp(&star, pp).unwrap());
            }
        }
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let (_, _, other, other_finals) = combined_outcomes(&mix, &t, &[theta + 0.7]);
        let cost: Vec<Vec<f64>> = finals
            .iter()
            .map(|x| other_finals.iter().map(|y| sq_dist(x, y)).collect())
            .collect();
        let plan = discrete_ot_coupling(&probs, &other, &cost).unwrap();
        for (a, b) in plan.row_sums().iter().zip(&probs) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in plan.col_sums().iter().zip(&other) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn combined_coupling_draws_have_the_right_marginals() {
    let (t, mix) = bimodal();
    let frozen = LocalCoupling::RandomWalk {
        sigma: 1e-200,
        proposal: ProposalCoupling::Maximal,
    };
    let (_, _, probs, _) = combined_outcomes(&mix, &t, &[-0.4]);
    let n = 20_000;
    let mut counts = vec![0usize; 4];
    for i in 0..n as u64 {
        let mut s = CoupledChainState::from_pair(&t, vec![1.9], vec![-0.4], i).unwrap();
        let step = coupled_warpu_step_combined(&mut s, &t, &mix, &frozen).unwrap();
        let c = step.chain2.unwrap();
        counts[c.psi * 2 + c.psi_prime] += 1;
    }
    let (stat, cells) = chi2_stat(&counts, &probs);
    assert!(
        stat < ChiSquared::new((cells - 1) as f64).unwrap().inverse_cdf(0.99),
        "{stat}"
    );
}

#[test]
fn single_component_combined_coupling_stays_met() {
    let (t, _) = bimodal();
    let mix = mix1(&[1.0], &[0.5], &[2.0]);
    let mut s = CoupledChainState::from_pair(&t, vec![-2.0], vec![3.0], 5).unwrap();
    for _ in 0..2000 {
        coupled_warpu_step_combined(&mut s, &t, &mix, &RWM).unwrap();
        if s.met {
            assert_eq!(s.theta1, s.theta2);
        }
    }
    assert!(s.met, "no meeting in 2000 steps");
}

#[test]
fn unbiased_h_examples() {
    let g1 = [1.0, 4.0, 2.0, 5.0, 5.0, 5.0];
    let g2 = [0.0, 3.0, 5.0, 5.0, 5.0];
    // tau = 3: the chains agree from lead time 3 on, so g1[3] = g2[2].
    assert_eq!(unbiased_h_values(&g1, &g2, 3, 2).unwrap(), 2.0);
    assert_eq!(unbiased_h_values(&g1, &g2, 3, 4).unwrap(), 5.0);
    assert_eq!(
        unbiased_h_values(&g1, &g2, 3, 0).unwrap(),
        1.0 + (4.0 - 0.0) + (2.0 - 3.0)
    );
    assert!(unbiased_h_values(&g1, &g2, 9, 0).is_err());

    let x1: Vec<Vec<f64>> = g1.iter().map(|v| vec![*v]).collect();
    let x2: Vec<Vec<f64>> = g2.iter().map(|v| vec![*v]).collect();
    let h = |x: &[f64]| x[0];
    assert_eq!(
        unbiased_h_lm(&x1, &x2, 3, 2, 2, &h).unwrap(),
        unbiased_h(&x1, &x2, 3, 2, &h).unwrap()
    );
    let avg = (1..=4).map(|j| unbiased_h(&x1, &x2, 3, j, &h).unwrap()).sum::<f64>() / 4.0;
    assert!((unbiased_h_lm(&x1, &x2, 3, 1, 4, &h).unwrap() - avg).abs() < 1e-15);
    let kappa = |_: &[f64]| 2.5;
    for j in 0..5 {
        assert_eq!(unbiased_h(&x1, &x2, 3, j, &kappa).unwrap(), 2.5);
    }
    assert_eq!(unbiased_h_lm(&x1, &x2, 3, 0, 4, &kappa).unwrap(), 2.5);
    assert!(unbiased_h_lm(&x1, &x2, 3, 3, 2, &h).is_err());
}

/// Lazy walk on five states with maximal coupling of transition rows.
struct FiveState {
    p: [[f64; 5]; 5],
}

impl FiveState {
    fn new() -> Self {
        let mut p = [[0.0; 5]; 5];
        for (i, row) in p.iter_mut().enumerate() {
            let up = if i < 4 { 0.35 } else { 0.0 };
            let down = if i > 0 { 0.2 } else { 0.0 };
            row[i] = 1.0 - up - down;
            if i < 4 {
                row[i + 1] = up;
            }
            if i > 0 {
                row[i - 1] = down;
            }
        }
        Self { p }
    }

    fn stationary(&self) -> [f64; 5] {
        let mut pi = [0.2; 5];
        for _ in 0..10_000 {
            let mut next = [0.0; 5];
            for i in 0..5 {
                for j in 0..5 {
                    next[j] += pi[i] * self.p[i][j];
                }
            }
            pi = next;
        }
        pi
    }

    /// Joint law of the next pair under the maximal coupling of rows `x` and `y`.
    fn coupled_row(&self, x: usize, y: usize) -> [[f64; 5]; 5] {
        let (a, b) = (self.p[x], self.p[y]);
        let overlap: [f64; 5] = std::array::from_fn(|j| a[j].min(b[j]));
        let mass: f64 = overlap.iter().sum();
        let mut joint = [[0.0; 5]; 5];
        for j in 0..5 {
            joint[j][j] += overlap[j];
        }
        if mass < 1.0 {
            for i in 0..5 {
                for j in 0..5 {
                    joint[i][j] += (a[i] - overlap[i]) * (b[j] - overlap[j]) / (1.0 - mass);
                }
            }
        }
        joint
    }

    fn step(&self, row: &[f64], r: &mut warpu::Rng) -> usize {
        warpu::math::index_from_uniform(row, r.random())
    }
}

#[test]
fn unbiased_estimator_on_an_enumerable_chain() {
    let chain = FiveState::new();
    let pi = chain.stationary();
    let h = [0.0, 1.0, 4.0, 9.0, 16.0];
    let truth: f64 = pi.iter().zip(&h).map(|(a, b)| a * b).sum();
    let j = 1;

    // Exhaustive expectation: push the law of (X_t, Y_{t-1}) forward and add
    // E[h(X_t) - h(Y_{t-1}); not yet met] term by term. X_0 = Y_0 = 0, X_1 ~ P(0, .).
    let mut law = [[0.0; 5]; 5];
    for x1 in 0..5 {
        law[x1][0] = chain.p[0][x1];
    }
    let mut expect = if j == 0 { h[0] } else { 0.0 };
    for t in 1..400 {
        if t == j {
            expect += (0..5)
                .map(|x| (0..5).map(|y| law[x][y]).sum::<f64>() * h[x])
                .sum::<f64>();
        }
        if t > j {
            for x in 0..5 {
                for y in 0..5 {
                    if x != y {
                        expect += law[x][y] * (h[x] - h[y]);
                    }
                }
            }
        }
        let mut next = [[0.0; 5]; 5];
        for x in 0..5 {
            for y in 0..5 {
                if law[x][y] == 0.0 {
                    continue;
                }
                if x == y {
                    for z in 0..5 {
                        next[z][z] += law[x][y] * chain.p[x][z];
                    }
                } else {
                    let joint = chain.coupled_row(x, y);
                    for a in 0..5 {
                        for b in 0..5 {
                            next[a][b] += law[x][y] * joint[a][b];
                        }
                    }
                }
            }
        }
        law = next;
    }
    assert!((expect - truth).abs() < 1e-10, "{expect} vs {truth}");

    // Simulation through the crate's estimator.
    let mut r = rng(6);
    let reps = 20_000;
    let mut hs = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut g1 = vec![h[0]];
        let mut g2 = vec![h[0]];
        let mut x = chain.step(&chain.p[0], &mut r);
        g1.push(h[x]);
        let mut y = 0;
        let mut t = 1;
        let mut tau = if x == y { Some(1) } else { None };
        while tau.is_none() || t < j + 1 {
            let joint = chain.coupled_row(x, y);
            let flat: Vec<f64> = joint.iter().flatten().copied().collect();
            let cell = if x == y {
                chain.step(&chain.p[x], &mut r) * 6
            } else {
                chain.step(&flat, &mut r)
            };
            let (nx, ny) = (cell / 5, cell % 5);
            g2.push(h[ny]);
            x = nx;
            y = ny;
            t += 1;
            g1.push(h[x]);
            if tau.is_none() && x == y {
                tau = Some(t);
            }
        }
        hs.push(unbiased_h_values(&g1, &g2, tau.unwrap(), j).unwrap());
    }
    let (m, se) = mean_se(&hs);
    assert!((m - truth).abs() < 3.0 * se, "{m} +- {se} vs {truth}");
}

#[test]
fn single_component_levels_agree() {
    let (t, _) = bimodal();
    let mix = mix1(&[1.0], &[0.0], &[1.0]);
    let theta = [0.7];
    let (nu, back) = inverse_index_distribution(&mix, &t, &theta).unwrap();
    let resp = mix.responsibilities(&theta).unwrap();
    let all = [back.clone()];
    let ctx = RbContext {
        theta: &theta,
        theta_mh: &theta,
        back: Some(&back),
        nu: Some(&nu),
        resp: Some(&resp),
        all_backs: Some(&all),
    };
    let h = |x: &[f64]| x[0] * x[0] + 1.0;
    for level in [RbLevel::L0, RbLevel::L1, RbLevel::L2] {
        assert!((rao_blackwell_h(level, &ctx, &h).unwrap() - h(&theta)).abs() < 1e-15);
    }
    let bare = RbContext {
        back: None,
        all_backs: None,
        ..ctx
    };
    assert!(rao_blackwell_h(RbLevel::L1, &bare, &h).is_err());
    assert!(rao_blackwell_h(RbLevel::L2, &bare, &h).is_err());
}

#[test]
fn rao_blackwell_levels_are_conditional_means() {
    let (t, mix) = bimodal();
    let h = |x: &[f64]| (x[0] - 0.5).powi(3);
    let theta_mh = [1.4];
    let resp = mix.responsibilities(&theta_mh).unwrap();
    let backs: Vec<BackMap> = (0..2)
        .map(|k| BackMap::compute(&mix, &t, &mix.forward_warp(&theta_mh, k).unwrap()).unwrap())
        .collect();
    let nus: Vec<_> = backs.iter().map(|b| b.nu().unwrap()).collect();
    let psi = 1;
    let ctx = RbContext {
        theta: &theta_mh,
        theta_mh: &theta_mh,
        back: Some(&backs[psi]),
        nu: Some(&nus[psi]),
        resp: Some(&resp),
        all_backs: Some(&backs),
    };
    let l1 = rao_blackwell_h(RbLevel::L1, &ctx, &h).unwrap();
    let l2 = rao_blackwell_h(RbLevel::L2, &ctx, &h).unwrap();

    let mut r = rng(7);
    let n = 1_000_000;
    let star = &backs[psi].x_star;
    let v1: Vec<f64> = (0..n)
        .map(|_| h(&mix.inverse_warp(star, nus[psi].sample(&mut r)).unwrap()))
        .collect();
    let (m1, s1) = mean_se(&v1);
    assert!((m1 - l1).abs() < 3.0 * s1, "{m1} +- {s1} vs {l1}");
    let v2: Vec<f64> = (0..n)
        .map(|_| {
            let k = resp.sample(&mut r);
            let x_star = mix.forward_warp(&theta_mh, k).unwrap();
            h(&mix.inverse_warp(&x_star, nus[k].sample(&mut r)).unwrap())
        })
        .collect();
    let (m2, s2) = mean_se(&v2);
    assert!((m2 - l2).abs() < 3.0 * s2, "{m2} +- {s2} vs {l2}");
}

#[test]
fn coupled_runs_are_faithful_and_unbiased() {
    let (t, mix) = bimodal();
    let h: TestFn = &|x: &[f64]| x[0];
    let truth = 0.6 * 3.0 - 0.4 * 3.0;
    for index in [IndexCoupling::Separate, IndexCoupling::Combined] {
        let config = CoupledConfig {
            local: RWM,
            index,
            levels: vec![RbLevel::L0, RbLevel::L1, RbLevel::L2],
            m: 30,
            max_iterations: 10_000,
        };
        let mut est = vec![Vec::new(); 3];
        for rep in 0..300u64 {
            let mut r = rng(100 + rep);
            let a = [3.0 * warpu::math::std_normal_vec(&mut r, 1)[0]];
            let b = [3.0 * warpu::math::std_normal_vec(&mut r, 1)[0]];
            let run = run_coupled(&t, &mix, &config, &a, &b, rep, &[h]).unwrap();
            assert!(run.is_faithful());
            assert!(run.theta1.len() > 30);
            for (i, level) in [RbLevel::L0, RbLevel::L1, RbLevel::L2].into_iter().enumerate() {
                est[i].push(run.h_lm(0, level, 5, 30).unwrap());
            }
        }
        for (i, e) in est.iter().enumerate() {
            let (m, se) = mean_se(e);
            assert!((m - truth).abs() < 3.0 * se, "{index:?} level {i}: {m} +- {se}");
        }
    }
}
