//! Coupled Warp-U chains with a lag of one, and the unbiased estimators built on them.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::coupling::{discrete_ot_coupling, maximal_coupling_draw, reflection_coupling_draw};
use crate::density::{BackMap, GaussianMixture, SimplexVector, Target};
use crate::error::{check_dim, Error, Result};
use crate::math::{sq_dist, std_normal_vec};
use crate::samplers::{hmc_step, hmc_step_with, mh_accept, rwm_step, ChainState};

/// Largest K for the combined coupling, whose plans are `K^2 x K^2`.
pub const MAX_COMBINED_K: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalCoupling {
    #[default]
    Maximal,
    Reflection,
}

/// How the two local moves are coupled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LocalCoupling {
    RandomWalk {
        sigma: f64,
        #[serde(default)]
        proposal: ProposalCoupling,
    },
    /// HMC with common momentum and acceptance uniform. HMC alone never makes
    /// the chains coincide, so with probability `rwm_prob` the move is instead a
    /// maximally coupled random walk with scale `sigma`.
    Hmc {
        step_size: f64,
        n_leapfrog: usize,
        sigma: f64,
        rwm_prob: f64,
    },
}

/// Whether the forward and inverse index draws are coupled separately or jointly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexCoupling {
    #[default]
    Separate,
    /// One plan over the `K^2` outcomes `(psi, psi')` of each chain. Costs K^2
    /// evaluations per chain and step.
    Combined,
}

/// Rao-Blackwellization level for the per-step values entering `H_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RbLevel {
    /// `h(theta_t)`.
    L0,
    /// Conditional mean given `theta*`; reuses the K evaluations made for `nu`.
    L1,
    /// Conditional mean given `theta_MH`; K^2 evaluations.
    L2,
}

/// Lead chain at time `t` and lagged chain at time `t - 1`.
#[derive(Debug, Clone)]
pub struct CoupledChainState {
    pub theta1: Vec<f64>,
    pub log_q1: f64,
    pub theta2: Vec<f64>,
    pub log_q2: f64,
    pub t: usize,
    pub met: bool,
    pub tau: Option<usize>,
    pub rng: crate::Rng,
}

impl CoupledChainState {
    /// State `(theta_{1,1}, theta_{2,0})` at `t = 1`; two evaluations. Equal inputs
    /// count as a meeting at `tau = 1`.
    pub fn from_pair(target: &Target, theta1: Vec<f64>, theta2: Vec<f64>, seed: u64) -> Result<Self> {
        check_dim(target.dim(), theta1.len())?;
        check_dim(target.dim(), theta2.len())?;
        let log_q1 = target.log_q(&theta1);
        let log_q2 = target.log_q(&theta2);
        let met = theta1 == theta2;
        Ok(Self {
            theta1,
            log_q1,
            theta2,
            log_q2,
            t: 1,
            met,
            tau: met.then_some(1),
            rng: crate::Rng::seed_from_u64(seed),
        })
    }
}

/// What one chain did in one step; enough to evaluate every Rao-Blackwell level.
#[derive(Debug, Clone)]
pub struct ChainStepInfo {
    pub theta_mh: Vec<f64>,
    pub resp: SimplexVector,
    pub psi: usize,
    pub psi_prime: usize,
    /// Back-map from `theta* = F_psi(theta_MH)`.
    pub back: BackMap,
    /// `None` when the warp was skipped.
    pub nu: Option<SimplexVector>,
    /// Back-maps from `F_k(theta_MH)` for every k, when computed.
    pub all_backs: Option<Vec<BackMap>>,
    pub theta: Vec<f64>,
}

impl ChainStepInfo {
    pub fn context(&self) -> RbContext<'_> {
        RbContext {
            theta: &self.theta,
            theta_mh: &self.theta_mh,
            back: Some(&self.back),
            nu: self.nu.as_ref(),
            resp: Some(&self.resp),
            all_backs: self.all_backs.as_deref(),
        }
    }

    /// Fill `all_backs`, reusing the back-map already computed for `psi`.
    pub fn ensure_all_backs(&mut self, mix: &GaussianMixture, target: &Target) {
        if self.all_backs.is_some() {
            return;
        }
        let backs = (0..mix.k())
            .map(|k| {
                if k == self.psi {
                    self.back.clone()
                } else {
                    BackMap::compute_unchecked(mix, target, &mix.forward_warp_unchecked(&self.theta_mh, k))
                }
            })
            .collect();
        self.all_backs = Some(backs);
    }
}

/// Output of one coupled step. `chain2` is `None` once the chains have met: the
/// lagged chain then copies the lead chain.
#[derive(Debug, Clone)]
pub struct CoupledStep {
    pub chain1: ChainStepInfo,
    pub chain2: Option<ChainStepInfo>,
}

/// Step-level quantities a Rao-Blackwell level may condition on.
#[derive(Debug, Clone, Copy)]
pub struct RbContext<'a> {
    pub theta: &'a [f64],
    pub theta_mh: &'a [f64],
    pub back: Option<&'a BackMap>,
    pub nu: Option<&'a SimplexVector>,
    pub resp: Option<&'a SimplexVector>,
    pub all_backs: Option<&'a [BackMap]>,
}

fn conditional_on_star(back: &BackMap, nu: Option<&SimplexVector>, theta_mh: &[f64], h: &dyn Fn(&[f64]) -> f64) -> f64 {
    match nu {
        Some(nu) => nu
            .probs()
            .iter()
            .zip(&back.points)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, x)| p * h(x))
            .sum(),
        None => h(theta_mh),
    }
}

/// Per-step value of `h` at the requested level.
pub fn rao_blackwell_h(level: RbLevel, ctx: &RbContext, h: &dyn Fn(&[f64]) -> f64) -> Result<f64> {
    match level {
        RbLevel::L0 => Ok(h(ctx.theta)),
        RbLevel::L1 => {
            let back = ctx
                .back
                .ok_or_else(|| Error::InvalidInput("L1 needs the back-map at theta*".into()))?;
            Ok(conditional_on_star(back, ctx.nu, ctx.theta_mh, h))
        }
        RbLevel::L2 => {
            let (Some(resp), Some(backs)) = (ctx.resp, ctx.all_backs) else {
                return Err(Error::InvalidInput(
                    "L2 needs the responsibilities and all K back-maps".into(),
                ));
            };
            Ok(resp
                .probs()
                .iter()
                .zip(backs)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, back)| p * conditional_on_star(back, back.nu().ok().as_ref(), ctx.theta_mh, h))
                .sum())
        }
    }
}

struct LocalResult {
    theta: Vec<f64>,
    log_q: f64,
}

fn single_local(
    rng: &mut crate::Rng,
    target: &Target,
    theta: &[f64],
    log_q: f64,
    local: &LocalCoupling,
) -> LocalResult {
    let mut cs = ChainState::with_log_q(theta.to_vec(), log_q, rng.clone());
    match *local {
        LocalCoupling::RandomWalk { sigma, .. } => {
            rwm_step(&mut cs, target, sigma);
        }
        LocalCoupling::Hmc {
            step_size,
            n_leapfrog,
            sigma,
            rwm_prob,
        } => {
            if cs.rng.random::<f64>() < rwm_prob {
                rwm_step(&mut cs, target, sigma);
            } else {
                hmc_step(&mut cs, target, step_size, n_leapfrog);
            }
        }
    }
    *rng = cs.rng;
    LocalResult {
        theta: cs.theta,
        log_q: cs.log_q,
    }
}

fn coupled_rwm(
    rng: &mut crate::Rng,
    target: &Target,
    state: &CoupledChainState,
    sigma: f64,
    proposal: ProposalCoupling,
) -> (LocalResult, LocalResult) {
    let (x1, x2, _) = match proposal {
        ProposalCoupling::Maximal => maximal_coupling_draw(rng, &state.theta1, &state.theta2, sigma),
        ProposalCoupling::Reflection => reflection_coupling_draw(rng, &state.theta1, &state.theta2, sigma),
    };
    let lq1 = target.log_q(&x1);
    let lq2 = if x2 == x1 { lq1 } else { target.log_q(&x2) };
    let u: f64 = rng.random();
    let r1 = if mh_accept(lq1 - state.log_q1, u) {
        LocalResult { theta: x1, log_q: lq1 }
    } else {
        LocalResult {
            theta: state.theta1.clone(),
            log_q: state.log_q1,
        }
    };
    let r2 = if mh_accept(lq2 - state.log_q2, u) {
        LocalResult { theta: x2, log_q: lq2 }
    } else {
        LocalResult {
            theta: state.theta2.clone(),
            log_q: state.log_q2,
        }
    };
    (r1, r2)
}

fn coupled_local(
    rng: &mut crate::Rng,
    target: &Target,
    state: &CoupledChainState,
    local: &LocalCoupling,
) -> (LocalResult, LocalResult) {
    match *local {
        LocalCoupling::RandomWalk { sigma, proposal } => coupled_rwm(rng, target, state, sigma, proposal),
        LocalCoupling::Hmc {
            step_size,
            n_leapfrog,
            sigma,
            rwm_prob,
        } => {
            if rng.random::<f64>() < rwm_prob {
                return coupled_rwm(rng, target, state, sigma, ProposalCoupling::Maximal);
            }
            let p0 = std_normal_vec(rng, state.theta1.len());
            let u: f64 = rng.random();
            let run = |theta: &[f64], log_q: f64| {
                let mut cs = ChainState::with_log_q(theta.to_vec(), log_q, rng.clone());
                hmc_step_with(&mut cs, target, step_size, n_leapfrog, &p0, u);
                LocalResult {
                    theta: cs.theta,
                    log_q: cs.log_q,
                }
            };
            let r1 = run(&state.theta1, state.log_q1);
            let r2 = run(&state.theta2, state.log_q2);
            (r1, r2)
        }
    }
}

/// Forward warp with a given `psi`, then the back-map and `nu`.
fn forward(mix: &GaussianMixture, target: &Target, theta_mh: &[f64], psi: usize) -> (BackMap, Option<SimplexVector>) {
    let star = mix.forward_warp_unchecked(theta_mh, psi);
    let back = BackMap::compute_unchecked(mix, target, &star);
    let nu = back.nu().ok();
    (back, nu)
}

fn finish(
    theta_mh: Vec<f64>,
    log_q_mh: f64,
    resp: SimplexVector,
    psi: usize,
    psi_prime: Option<usize>,
    back: BackMap,
    nu: Option<SimplexVector>,
    all_backs: Option<Vec<BackMap>>,
) -> (ChainStepInfo, f64) {
    let (theta, log_q, psi_prime) = match (psi_prime, nu.as_ref()) {
        (Some(k), Some(_)) => (back.points[k].clone(), back.log_q[k], k),
        _ => (theta_mh.clone(), log_q_mh, psi),
    };
    (
        ChainStepInfo {
            theta_mh,
            resp,
            psi,
            psi_prime,
            back,
            nu,
            all_backs,
            theta,
        },
        log_q,
    )
}

/// Outcome table of the combined coupling for one chain: probabilities over
/// `(psi, psi')` in row-major order and the final state of each outcome. When
/// `nu` is degenerate for some `psi`, that row keeps the post-MH point.
pub fn combined_outcomes(
    mix: &GaussianMixture,
    target: &Target,
    theta_mh: &[f64],
) -> (SimplexVector, Vec<BackMap>, Vec<f64>, Vec<Vec<f64>>) {
    let k = mix.k();
    let resp = mix.responsibilities_unchecked(theta_mh);
    let backs: Vec<BackMap> = (0..k)
        .map(|j| BackMap::compute_unchecked(mix, target, &mix.forward_warp_unchecked(theta_mh, j)))
        .collect();
    let mut probs = vec![0.0; k * k];
    let mut finals = Vec::with_capacity(k * k);
    for (a, back) in backs.iter().enumerate() {
        let nu = back.nu().ok();
        for b in 0..k {
            match &nu {
                Some(nu) => {
                    probs[a * k + b] = resp[a] * nu[b];
                    finals.push(back.points[b].clone());
                }
                None => {
                    probs[a * k + b] = if a == b { resp[a] } else { 0.0 };
                    finals.push(theta_mh.to_vec());
                }
            }
        }
    }
    (resp, backs, probs, finals)
}

fn combined_single(
    rng: &mut crate::Rng,
    mix: &GaussianMixture,
    target: &Target,
    theta_mh: Vec<f64>,
    log_q_mh: f64,
) -> (ChainStepInfo, f64) {
    let (resp, backs, probs, _) = combined_outcomes(mix, target, &theta_mh);
    let idx = crate::math::index_from_uniform(&probs, rng.random());
    combined_finish(mix, theta_mh, log_q_mh, resp, backs, idx)
}

fn combined_finish(
    mix: &GaussianMixture,
    theta_mh: Vec<f64>,
    log_q_mh: f64,
    resp: SimplexVector,
    backs: Vec<BackMap>,
    idx: usize,
) -> (ChainStepInfo, f64) {
    let k = mix.k();
    let (psi, psi_prime) = (idx / k, idx % k);
    let back = backs[psi].clone();
    let nu = back.nu().ok();
    finish(theta_mh, log_q_mh, resp, psi, Some(psi_prime), back, nu, Some(backs))
}

fn separate_single(
    rng: &mut crate::Rng,
    mix: &GaussianMixture,
    target: &Target,
    theta_mh: Vec<f64>,
    log_q_mh: f64,
) -> (ChainStepInfo, f64) {
    let resp = mix.responsibilities_unchecked(&theta_mh);
    let psi = resp.sample(rng);
    let (back, nu) = forward(mix, target, &theta_mh, psi);
    let psi_prime = nu.as_ref().map(|n| n.sample(rng));
    finish(theta_mh, log_q_mh, resp, psi, psi_prime, back, nu, None)
}

/// One uncoupled Warp-U step of the lead chain (used before the coupled phase and
/// after meeting).
pub fn single_warpu_step(
    rng: &mut crate::Rng,
    target: &Target,
    mix: &GaussianMixture,
    theta: &[f64],
    log_q: f64,
    local: &LocalCoupling,
    index: IndexCoupling,
) -> (ChainStepInfo, f64) {
    let l = single_local(rng, target, theta, log_q, local);
    match index {
        IndexCoupling::Separate => separate_single(rng, mix, target, l.theta, l.log_q),
        IndexCoupling::Combined => combined_single(rng, mix, target, l.theta, l.log_q),
    }
}

fn sq_cost(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Vec<Vec<f64>> {
    xs.iter().map(|x| ys.iter().map(|y| sq_dist(x, y)).collect()).collect()
}

/// One coupled step: coupled local move, OT-coupled forward indices, OT-coupled
/// inverse indices. After meeting, one chain is updated and copied.
pub fn coupled_warpu_step(
    state: &mut CoupledChainState,
    target: &Target,
    mix: &GaussianMixture,
    local: &LocalCoupling,
) -> Result<CoupledStep> {
    coupled_step_impl(state, target, mix, local, IndexCoupling::Separate)
}

/// Coupled step with a single OT plan over the `K^2` index outcomes of each chain,
/// costed by squared distance between final states.
pub fn coupled_warpu_step_combined(
    state: &mut CoupledChainState,
    target: &Target,
    mix: &GaussianMixture,
    local: &LocalCoupling,
) -> Result<CoupledStep> {
    coupled_step_impl(state, target, mix, local, IndexCoupling::Combined)
}

fn coupled_step_impl(
    state: &mut CoupledChainState,
    target: &Target,
    mix: &GaussianMixture,
    local: &LocalCoupling,
    index: IndexCoupling,
) -> Result<CoupledStep> {
    check_dim(mix.dim(), target.dim())?;
    if index == IndexCoupling::Combined && mix.k() > MAX_COMBINED_K {
        return Err(Error::InvalidInput(format!(
            "combined coupling supports at most {MAX_COMBINED_K} components"
        )));
    }
    let mut rng = state.rng.clone();
    if state.met {
        let (info, log_q) = single_warpu_step(&mut rng, target, mix, &state.theta1, state.log_q1, local, index);
        state.rng = rng;
        state.theta1 = info.theta.clone();
        state.log_q1 = log_q;
        state.theta2 = info.theta.clone();
        state.log_q2 = log_q;
        state.t += 1;
        return Ok(CoupledStep {
            chain1: info,
            chain2: None,
        });
    }
    let (l1, l2) = coupled_local(&mut rng, target, state, local);
    let ((info1, lq1), (info2, lq2)) = match index {
        IndexCoupling::Separate => coupled_indices_separate(&mut rng, mix, target, l1, l2)?,
        IndexCoupling::Combined => coupled_indices_combined(&mut rng, mix, target, l1, l2)?,
    };
    state.rng = rng;
    state.theta1 = info1.theta.clone();
    state.log_q1 = lq1;
    state.theta2 = info2.theta.clone();
    state.log_q2 = lq2;
    state.t += 1;
    if state.theta1 == state.theta2 {
        state.met = true;
        state.tau = Some(state.t);
    }
    Ok(CoupledStep {
        chain1: info1,
        chain2: Some(info2),
    })
}

type Pair = ((ChainStepInfo, f64), (ChainStepInfo, f64));

fn coupled_indices_separate(
    rng: &mut crate::Rng,
    mix: &GaussianMixture,
    target: &Target,
    l1: LocalResult,
    l2: LocalResult,
) -> Result<Pair> {
    let k = mix.k();
    let resp1 = mix.responsibilities_unchecked(&l1.theta);
    let resp2 = mix.responsibilities_unchecked(&l2.theta);
    let stars1: Vec<Vec<f64>> = (0..k).map(|j| mix.forward_warp_unchecked(&l1.theta, j)).collect();
    let stars2: Vec<Vec<f64>> = (0..k).map(|j| mix.forward_warp_unchecked(&l2.theta, j)).collect();
    let plan = discrete_ot_coupling(resp1.probs(), resp2.probs(), &sq_cost(&stars1, &stars2))?;
    let (psi1, psi2) = plan.cell_from_uniform(rng.random());

    let (back1, nu1) = forward(mix, target, &l1.theta, psi1);
    let (back2, nu2) = if stars1[psi1] == stars2[psi2] {
        (back1.clone(), nu1.clone())
    } else {
        forward(mix, target, &l2.theta, psi2)
    };
    let (pp1, pp2) = match (&nu1, &nu2) {
        (Some(a), Some(b)) => {
            let plan = discrete_ot_coupling(a.probs(), b.probs(), &sq_cost(&back1.points, &back2.points))?;
            let (x, y) = plan.cell_from_uniform(rng.random());
            (Some(x), Some(y))
        }
        (a, b) => (a.as_ref().map(|n| n.sample(rng)), b.as_ref().map(|n| n.sample(rng))),
    };
    Ok((
        finish(l1.theta, l1.log_q, resp1, psi1, pp1, back1, nu1, None),
        finish(l2.theta, l2.log_q, resp2, psi2, pp2, back2, nu2, None),
    ))
}

fn coupled_indices_combined(
    rng: &mut crate::Rng,
    mix: &GaussianMixture,
    target: &Target,
    l1: LocalResult,
    l2: LocalResult,
) -> Result<Pair> {
    let (resp1, backs1, probs1, finals1) = combined_outcomes(mix, target, &l1.theta);
    let (resp2, backs2, probs2, finals2) = if l1.theta == l2.theta {
        (resp1.clone(), backs1.clone(), probs1.clone(), finals1.clone())
    } else {
        combined_outcomes(mix, target, &l2.theta)
    };
    let plan = discrete_ot_coupling(&probs1, &probs2, &sq_cost(&finals1, &finals2))?;
    let (i1, i2) = plan.cell_from_uniform(rng.random());
    Ok((
        combined_finish(mix, l1.theta, l1.log_q, resp1, backs1, i1),
        combined_finish(mix, l2.theta, l2.log_q, resp2, backs2, i2),
    ))
}

/// Test function for the unbiased estimators.
pub type TestFn<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupledConfig {
    pub local: LocalCoupling,
    #[serde(default)]
    pub index: IndexCoupling,
    pub levels: Vec<RbLevel>,
    /// Keep running at least until `t = m` so that `H_{l:m}` is available.
    pub m: usize,
    pub max_iterations: usize,
}

/// Per-step values of one test function at one level: `g1[t]` for the lead chain
/// (`t = 0..=T`) and `g2[t]` for the lagged chain (`t = 0..T`).
#[derive(Debug, Clone, PartialEq)]
pub struct RbValues {
    pub h_index: usize,
    pub level: RbLevel,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CoupledRun {
    pub tau: Option<usize>,
    pub theta1: Vec<Vec<f64>>,
    pub theta2: Vec<Vec<f64>>,
    pub values: Vec<RbValues>,
    pub target_evals: u64,
}

impl CoupledRun {
    /// The chains coincide at every time from `tau` on.
    pub fn is_faithful(&self) -> bool {
        let Some(tau) = self.tau else { return true };
        (tau..self.theta1.len()).all(|t| t >= 1 && t - 1 < self.theta2.len() && self.theta1[t] == self.theta2[t - 1])
    }

    pub fn values_for(&self, h_index: usize, level: RbLevel) -> Option<&RbValues> {
        self.values.iter().find(|v| v.h_index == h_index && v.level == level)
    }

    /// `H_{l:m}` for one test function and level.
    pub fn h_lm(&self, h_index: usize, level: RbLevel, l: usize, m: usize) -> Result<f64> {
        let tau = self
            .tau
            .ok_or_else(|| Error::InvalidInput("chains did not meet".into()))?;
        let v = self
            .values_for(h_index, level)
            .ok_or_else(|| Error::InvalidInput("level or test function was not recorded".into()))?;
        unbiased_h_lm_values(&v.g1, &v.g2, tau, l, m)
    }
}

/// Run Warp-U chains coupled with lag one from `(theta1_0, theta2_0)` until they
/// have met and `t >= m`, recording the per-step values of every test function at
/// every requested level.
pub fn run_coupled(
    target: &Target,
    mix: &GaussianMixture,
    config: &CoupledConfig,
    theta1_0: &[f64],
    theta2_0: &[f64],
    seed: u64,
    hs: &[TestFn],
) -> Result<CoupledRun> {
    check_dim(mix.dim(), target.dim())?;
    check_dim(target.dim(), theta1_0.len())?;
    check_dim(target.dim(), theta2_0.len())?;
    let before = target.evals();
    let mut rng = crate::Rng::seed_from_u64(seed);
    let needs_l2 = config.levels.contains(&RbLevel::L2);
    let mut values: Vec<RbValues> = Vec::new();
    for h_index in 0..hs.len() {
        for &level in &config.levels {
            values.push(RbValues {
                h_index,
                level,
                g1: vec![hs[h_index](theta1_0)],
                g2: vec![hs[h_index](theta2_0)],
            });
        }
    }
    let record = |info: &ChainStepInfo, vals: &mut Vec<RbValues>, lead: bool| -> Result<()> {
        let ctx = info.context();
        for v in vals.iter_mut() {
            let g = rao_blackwell_h(v.level, &ctx, hs[v.h_index])?;
            if lead {
                v.g1.push(g);
            } else {
                v.g2.push(g);
            }
        }
        Ok(())
    };

    let lq0 = target.log_q(theta1_0);
    let (mut info, _) = single_warpu_step(&mut rng, target, mix, theta1_0, lq0, &config.local, config.index);
    if needs_l2 {
        info.ensure_all_backs(mix, target);
    }
    record(&info, &mut values, true)?;
    let mut theta1 = vec![theta1_0.to_vec(), info.theta.clone()];
    let mut theta2 = vec![theta2_0.to_vec()];

    let mut state = CoupledChainState::from_pair(target, info.theta, theta2_0.to_vec(), 0)?;
    state.rng = rng;
    while !(state.met && state.t >= config.m) && state.t < config.max_iterations {
        let mut step = coupled_step_impl(&mut state, target, mix, &config.local, config.index)?;
        if needs_l2 {
            step.chain1.ensure_all_backs(mix, target);
            if let Some(c2) = step.chain2.as_mut() {
                c2.ensure_all_backs(mix, target);
            }
        }
        record(&step.chain1, &mut values, true)?;
        record(step.chain2.as_ref().unwrap_or(&step.chain1), &mut values, false)?;
        theta1.push(state.theta1.clone());
        theta2.push(state.theta2.clone());
    }
    Ok(CoupledRun {
        tau: state.tau,
        theta1,
        theta2,
        values,
        target_evals: target.evals() - before,
    })
}

/// `H_j = g1[j] + sum_{t=j+1}^{tau} (g1[t] - g2[t-1])` on per-step values.
///
/// With plain `h` values the `t = tau` term vanishes because the chains coincide;
/// with conditional-mean values it need not, so it is kept.
pub fn unbiased_h_values(g1: &[f64], g2: &[f64], tau: usize, j: usize) -> Result<f64> {
    if tau == 0 {
        return Err(Error::InvalidInput("meeting time is at least 1".into()));
    }
    if g1.len() <= j.max(tau) || g2.len() < tau {
        return Err(Error::InvalidInput(format!(
            "traces of length {} and {} are too short for tau = {tau}, j = {j}",
            g1.len(),
            g2.len()
        )));
    }
    let correction: f64 = ((j + 1)..=tau).map(|t| g1[t] - g2[t - 1]).sum();
    Ok(g1[j] + correction)
}

/// `H_j` for a test function applied to the two state traces.
pub fn unbiased_h(
    trace1: &[Vec<f64>],
    trace2: &[Vec<f64>],
    tau: usize,
    j: usize,
    h: &dyn Fn(&[f64]) -> f64,
) -> Result<f64> {
    let g1: Vec<f64> = trace1.iter().map(|x| h(x)).collect();
    let g2: Vec<f64> = trace2.iter().map(|x| h(x)).collect();
    unbiased_h_values(&g1, &g2, tau, j)
}

/// Average of `H_j` over `j = l..=m`.
pub fn unbiased_h_lm_values(g1: &[f64], g2: &[f64], tau: usize, l: usize, m: usize) -> Result<f64> {
    if l > m {
        return Err(Error::InvalidInput("need l <= m".into()));
    }
    let mut s = 0.0;
    for j in l..=m {
        s += unbiased_h_values(g1, g2, tau, j)?;
    }
    Ok(s / (m - l + 1) as f64)
}

pub fn unbiased_h_lm(
    trace1: &[Vec<f64>],
    trace2: &[Vec<f64>],
    tau: usize,
    l: usize,
    m: usize,
    h: &dyn Fn(&[f64]) -> f64,
) -> Result<f64> {
    let g1: Vec<f64> = trace1.iter().map(|x| h(x)).collect();
    let g2: Vec<f64> = trace2.iter().map(|x| h(x)).collect();
    unbiased_h_lm_values(&g1, &g2, tau, l, m)
}
