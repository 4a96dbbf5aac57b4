//! Exact oracle computations on finite-state environments.
//!
//! Everything here works by propagating row vectors through the time-indexed
//! kernels, never forming kernel products explicitly, so each quantity costs
//! `O(T · S²)` (times the window size for truncated quantities).
//!
//! Quantities, with `P_θ^t = θ P_1^t + (1-θ) P_0^t` and
//! `r_θ = θ r_1 + (1-θ) r_0`:
//!
//! - policy value `J(θ) = (1/T) Σ_t ρᵀ P_θ^{1→t} r_θ`;
//! - per-step treatment effects `τ_t = ρᵀ P_1^{1→t} r_1 − ρᵀ P_0^{1→t} r_0`
//!   and the GATE `τ = (1/T) Σ_t τ_t = J(1) − J(0)`;
//! - the policy gradient at the uniform randomization policy,
//!   `∇J(1/2) = (1/T) Σ_t (Q^t(1) − Q^t(0))`, where the state-independent
//!   Q-value `Q^t(z)` pins the arm at step `t` and follows the uniform
//!   policy elsewhere;
//! - truncated counterparts `J_k(θ)` (uniform policy up to `t-k`, then
//!   `π_θ` for the last `k` steps) and `∇J_k(1/2)`, the estimand of the
//!   truncated DQ estimator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{
    dobrushin_coefficient, kernel_deviation, simulate, Arm, AssignmentPolicy, NonstationaryMdp,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SALT_TRUTH};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-vector propagation workspace for one environment.
struct Propagator<'e> {
    env: &'e NonstationaryMdp,
    row0: Vec<f64>,
    row1: Vec<f64>,
}

impl<'e> Propagator<'e> {
    fn new(env: &'e NonstationaryMdp) -> Self {
        let s = env.num_states();
        Propagator {
            env,
            row0: vec![0.0; s],
            row1: vec![0.0; s],
        }
    }

    /// `out = d P_θ^t` (distribution pushforward).
    fn push_forward(&mut self, d: &[f64], t: usize, theta: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (x, &mass) in d.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            self.env.fill_row(t, Arm::Control, x, &mut self.row0);
            self.env.fill_row(t, Arm::Treatment, x, &mut self.row1);
            for (i, o) in out.iter_mut().enumerate() {
                *o += mass * (theta * self.row1[i] + (1.0 - theta) * self.row0[i]);
            }
        }
    }

    /// `out = P_θ^t v` (value pullback).
    fn pull_back(&mut self, t: usize, theta: f64, v: &[f64], out: &mut [f64]) {
        for (x, o) in out.iter_mut().enumerate() {
            self.env.fill_row(t, Arm::Control, x, &mut self.row0);
            self.env.fill_row(t, Arm::Treatment, x, &mut self.row1);
            let mut acc = 0.0;
            for i in 0..v.len() {
                acc += (theta * self.row1[i] + (1.0 - theta) * self.row0[i]) * v[i];
            }
            *o = acc;
        }
    }

    /// `d Δ^t v` with `Δ^t = P_1^t − P_0^t`.
    fn delta_form(&mut self, d: &[f64], t: usize, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (x, &mass) in d.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            self.env.fill_row(t, Arm::Control, x, &mut self.row0);
            self.env.fill_row(t, Arm::Treatment, x, &mut self.row1);
            let mut inner = 0.0;
            for i in 0..v.len() {
                inner += (self.row1[i] - self.row0[i]) * v[i];
            }
            acc += mass * inner;
        }
        acc
    }

    /// `(d P_z^t) · v` for one arm.
    fn arm_form(&mut self, d: &[f64], t: usize, arm: Arm, v: &[f64]) -> f64 {
        let row = match arm {
            Arm::Control => &mut self.row0,
            Arm::Treatment => &mut self.row1,
        };
        let mut acc = 0.0;
        for (x, &mass) in d.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            self.env.fill_row(t, arm, x, row);
            acc += mass * dot(row, v);
        }
        acc
    }
}

fn reward_theta(env: &NonstationaryMdp, t: usize, theta: f64) -> Vec<f64> {
    (0..env.num_states())
        .map(|x| {
            theta * env.rewards().mean(t, x, Arm::Treatment)
                + (1.0 - theta) * env.rewards().mean(t, x, Arm::Control)
        })
        .collect()
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Config(format!("theta must lie in [0,1], got {theta}")));
    }
    Ok(())
}

fn check_k(env: &NonstationaryMdp, k: usize) -> Result<()> {
    if k + 1 > env.horizon() {
        return Err(Error::Config(format!(
            "truncation k={k} out of range for horizon {}",
            env.horizon()
        )));
    }
    Ok(())
}

/// Policy value `J(θ)` by forward propagation.
pub fn exact_value(env: &NonstationaryMdp, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    let horizon = env.horizon();
    let mut prop = Propagator::new(env);
    let mut d = env.initial_dist().to_vec();
    let mut next = vec![0.0; env.num_states()];
    let mut acc = 0.0;
    for t in 0..horizon {
        acc += dot(&d, &reward_theta(env, t, theta));
        if t + 1 < horizon {
            prop.push_forward(&d, t, theta, &mut next);
            std::mem::swap(&mut d, &mut next);
        }
    }
    Ok(acc / horizon as f64)
}

/// Exact GATE: returns `(τ, τ_t)` with `τ_t` indexed from step 1.
pub fn exact_gate(env: &NonstationaryMdp) -> (f64, Vec<f64>) {
    let horizon = env.horizon();
    let mut prop = Propagator::new(env);
    let mut p = env.initial_dist().to_vec();
    let mut q = env.initial_dist().to_vec();
    let mut next = vec![0.0; env.num_states()];
    let mut tau_t = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let r1 = env.reward_vec(t, Arm::Treatment);
        let r0 = env.reward_vec(t, Arm::Control);
        tau_t.push(dot(&p, &r1) - dot(&q, &r0));
        if t + 1 < horizon {
            prop.push_forward(&p, t, 1.0, &mut next);
            std::mem::swap(&mut p, &mut next);
            prop.push_forward(&q, t, 0.0, &mut next);
            std::mem::swap(&mut q, &mut next);
        }
    }
    let tau = tau_t.iter().sum::<f64>() / horizon as f64;
    (tau, tau_t)
}

/// Occupancies `d_t = ρᵀ P_{1/2}^{1→t}` for all steps.
fn half_occupancies(env: &NonstationaryMdp) -> Vec<Vec<f64>> {
    let horizon = env.horizon();
    let mut prop = Propagator::new(env);
    let mut ds = Vec::with_capacity(horizon);
    ds.push(env.initial_dist().to_vec());
    for t in 0..horizon - 1 {
        let mut next = vec![0.0; env.num_states()];
        prop.push_forward(&ds[t], t, 0.5, &mut next);
        ds.push(next);
    }
    ds
}

/// Direct (instantaneous reward) part of the gradient:
/// `Σ_t d_t · (r_1 − r_0)`.
fn direct_term(env: &NonstationaryMdp, ds: &[Vec<f64>]) -> f64 {
    let mut acc = 0.0;
    for (t, d) in ds.iter().enumerate() {
        let r1 = env.reward_vec(t, Arm::Treatment);
        let r0 = env.reward_vec(t, Arm::Control);
        for x in 0..d.len() {
            acc += d[x] * (r1[x] - r0[x]);
        }
    }
    acc
}

/// Exact policy gradient `∇J(1/2)`.
///
/// Uses the Q-value difference representation: the instantaneous term is
/// `d_t · (r_1 − r_0)`, and the carryover term sums `d_u Δ^u g_{u+1}` with
/// `g_v = Σ_{t ≥ v} P_{1/2}^{v→t} r_{1/2}` computed by a backward recursion.
pub fn exact_policy_gradient(env: &NonstationaryMdp) -> f64 {
    let horizon = env.horizon();
    let ds = half_occupancies(env);
    let direct = direct_term(env, &ds);
    let mut prop = Propagator::new(env);
    let mut carry = 0.0;
    if horizon >= 2 {
        // g = g_{u+1}, starting at g_{T-1} (0-based last step).
        let mut g = reward_theta(env, horizon - 1, 0.5);
        let mut scratch = vec![0.0; env.num_states()];
        for u in (0..horizon - 1).rev() {
            carry += prop.delta_form(&ds[u], u, &g);
            if u > 0 {
                prop.pull_back(u, 0.5, &g, &mut scratch);
                let r_half = reward_theta(env, u, 0.5);
                for i in 0..g.len() {
                    g[i] = r_half[i] + scratch[i];
                }
            }
        }
    }
    (direct + carry) / horizon as f64
}

/// Truncated policy value `J_k(θ)`: the uniform policy runs up to step
/// `t-k`, then `π_θ` for the remaining `k` steps.
pub fn exact_truncated_value(env: &NonstationaryMdp, theta: f64, k: usize) -> Result<f64> {
    check_theta(theta)?;
    check_k(env, k)?;
    let horizon = env.horizon();
    if k + 1 == horizon {
        // No truncation: J_{T-1} = J, computed by the identical code path so
        // the equality is exact in floating point.
        return exact_value(env, theta);
    }
    let s = env.num_states();
    let mut prop = Propagator::new(env);
    // Ring of θ-propagated occupancies; the oldest entry started its
    // θ-propagation k steps ago (clamped at the horizon start).
    let mut ring: std::collections::VecDeque<Vec<f64>> =
        std::collections::VecDeque::with_capacity(k + 2);
    ring.push_back(env.initial_dist().to_vec());
    let mut d_half = env.initial_dist().to_vec();
    let mut scratch = vec![0.0; s];
    let mut acc = 0.0;
    for t in 0..horizon {
        acc += dot(ring.front().expect("nonempty ring"), &reward_theta(env, t, theta));
        if t + 1 < horizon {
            for v in ring.iter_mut() {
                prop.push_forward(v, t, theta, &mut scratch);
                std::mem::swap(v, &mut scratch);
            }
            prop.push_forward(&d_half, t, 0.5, &mut scratch);
            std::mem::swap(&mut d_half, &mut scratch);
            ring.push_back(d_half.clone());
            if ring.len() > k + 1 {
                ring.pop_front();
            }
        }
    }
    Ok(acc / horizon as f64)
}

/// Exact truncated policy gradient `∇J_k(1/2)`.
///
/// Identical to [`exact_policy_gradient`] except that the backward value
/// window holds at most `k` terms:
/// `h_v = Σ_{t=v}^{min(v+k-1, T-1)} P_{1/2}^{v→t} r_{1/2}`.
pub fn exact_truncated_gradient(env: &NonstationaryMdp, k: usize) -> Result<f64> {
    check_k(env, k)?;
    let horizon = env.horizon();
    if k + 1 == horizon {
        return Ok(exact_policy_gradient(env));
    }
    let ds = half_occupancies(env);
    let direct = direct_term(env, &ds);
    let mut carry = 0.0;
    if k >= 1 && horizon >= 2 {
        let mut prop = Propagator::new(env);
        // ws[j] = P_{1/2}^{v→v+j} r_{1/2}(v+j) for the current v = u+1.
        let mut ws: Vec<Vec<f64>> = vec![reward_theta(env, horizon - 1, 0.5)];
        let mut h = vec![0.0; env.num_states()];
        for u in (0..horizon - 1).rev() {
            h.iter_mut().for_each(|x| *x = 0.0);
            for w in &ws {
                for i in 0..h.len() {
                    h[i] += w[i];
                }
            }
            carry += prop.delta_form(&ds[u], u, &h);
            if u > 0 {
                // Shift the window from v = u+1 to v = u.
                let m = k.min(horizon - u);
                let mut next_ws = Vec::with_capacity(m);
                next_ws.push(reward_theta(env, u, 0.5));
                for w in ws.iter().take(m - 1) {
                    let mut out = vec![0.0; env.num_states()];
                    prop.pull_back(u, 0.5, w, &mut out);
                    next_ws.push(out);
                }
                ws = next_ws;
            }
        }
    }
    Ok((direct + carry) / horizon as f64)
}

/// State-independent Q-values `(Q^t(0), Q^t(1))` under the uniform policy,
/// indexed by step.
pub fn per_step_q(env: &NonstationaryMdp) -> Vec<[f64; 2]> {
    let horizon = env.horizon();
    let ds = half_occupancies(env);
    let mut prop = Propagator::new(env);
    let mut qs = vec![[0.0; 2]; horizon];
    let last = horizon - 1;
    qs[last] = [
        dot(&ds[last], &env.reward_vec(last, Arm::Control)),
        dot(&ds[last], &env.reward_vec(last, Arm::Treatment)),
    ];
    if horizon >= 2 {
        let mut g = reward_theta(env, last, 0.5);
        let mut scratch = vec![0.0; env.num_states()];
        for u in (0..last).rev() {
            let base0 = dot(&ds[u], &env.reward_vec(u, Arm::Control));
            let base1 = dot(&ds[u], &env.reward_vec(u, Arm::Treatment));
            qs[u] = [
                base0 + prop.arm_form(&ds[u], u, Arm::Control, &g),
                base1 + prop.arm_form(&ds[u], u, Arm::Treatment, &g),
            ];
            if u > 0 {
                prop.pull_back(u, 0.5, &g, &mut scratch);
                let r_half = reward_theta(env, u, 0.5);
                for i in 0..g.len() {
                    g[i] = r_half[i] + scratch[i];
                }
            }
        }
    }
    qs
}

/// Truncated Q-values `(Q^{t,k}(0), Q^{t,k}(1))`, summing rewards over the
/// window `t..min(t+k, T)`.
pub fn per_step_q_truncated(env: &NonstationaryMdp, k: usize) -> Result<Vec<[f64; 2]>> {
    check_k(env, k)?;
    let horizon = env.horizon();
    let ds = half_occupancies(env);
    let mut prop = Propagator::new(env);
    let mut qs = vec![[0.0; 2]; horizon];
    let last = horizon - 1;
    qs[last] = [
        dot(&ds[last], &env.reward_vec(last, Arm::Control)),
        dot(&ds[last], &env.reward_vec(last, Arm::Treatment)),
    ];
    if horizon >= 2 && k >= 1 {
        let mut ws: Vec<Vec<f64>> = vec![reward_theta(env, last, 0.5)];
        let mut h = vec![0.0; env.num_states()];
        for u in (0..last).rev() {
            h.iter_mut().for_each(|x| *x = 0.0);
            for w in &ws {
                for i in 0..h.len() {
                    h[i] += w[i];
                }
            }
            let base0 = dot(&ds[u], &env.reward_vec(u, Arm::Control));
            let base1 = dot(&ds[u], &env.reward_vec(u, Arm::Treatment));
            qs[u] = [
                base0 + prop.arm_form(&ds[u], u, Arm::Control, &h),
                base1 + prop.arm_form(&ds[u], u, Arm::Treatment, &h),
            ];
            if u > 0 {
                let m = k.min(horizon - u);
                let mut next_ws = Vec::with_capacity(m);
                next_ws.push(reward_theta(env, u, 0.5));
                for w in ws.iter().take(m - 1) {
                    let mut out = vec![0.0; env.num_states()];
                    prop.pull_back(u, 0.5, w, &mut out);
                    next_ws.push(out);
                }
                ws = next_ws;
            }
        }
    } else if k == 0 {
        for u in 0..last {
            qs[u] = [
                dot(&ds[u], &env.reward_vec(u, Arm::Control)),
                dot(&ds[u], &env.reward_vec(u, Arm::Treatment)),
            ];
        }
    }
    Ok(qs)
}

/// Monte Carlo GATE estimate with standard error.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub standard_error: f64,
    pub reps: u64,
}

/// Anything that can produce the mean outcome of one seeded trajectory under
/// a fixed arm: finite environments, or simulation-only systems like the
/// ride-share marketplace.
pub trait ArmMeanSampler: Sync {
    fn arm_mean(&self, arm: Arm, sim_seed: u64) -> Result<f64>;
}

impl ArmMeanSampler for NonstationaryMdp {
    fn arm_mean(&self, arm: Arm, sim_seed: u64) -> Result<f64> {
        let policy = match arm {
            Arm::Treatment => AssignmentPolicy::AlwaysTreat,
            Arm::Control => AssignmentPolicy::AlwaysControl,
        };
        Ok(simulate(self, &policy, sim_seed)?.mean_reward())
    }
}

/// Monte Carlo GATE: averages always-treat minus always-control trajectory
/// means over replications. With `paired = true` the two arms of each
/// replication share transition and reward noise streams (common random
/// numbers), which cancels most of the variance.
pub fn mc_gate(
    sampler: &dyn ArmMeanSampler,
    reps: u64,
    master_seed: u64,
    paired: bool,
) -> Result<McEstimate> {
    if reps < 2 {
        return Err(Error::Config("mc_gate requires reps >= 2".into()));
    }
    if paired {
        let diffs: Result<Vec<f64>> = (0..reps)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(master_seed, SALT_TRUTH, i);
                Ok(sampler.arm_mean(Arm::Treatment, seed)? - sampler.arm_mean(Arm::Control, seed)?)
            })
            .collect();
        let diffs = diffs?;
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(McEstimate {
            estimate: mean,
            standard_error: (var / n).sqrt(),
            reps,
        })
    } else {
        let pairs: Result<Vec<(f64, f64)>> = (0..reps)
            .into_par_iter()
            .map(|i| {
                let s1 = derive_seed(master_seed, SALT_TRUTH, 2 * i);
                let s0 = derive_seed(master_seed, SALT_TRUTH, 2 * i + 1);
                Ok((
                    sampler.arm_mean(Arm::Treatment, s1)?,
                    sampler.arm_mean(Arm::Control, s0)?,
                ))
            })
            .collect();
        let pairs = pairs?;
        let n = pairs.len() as f64;
        let m1 = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let m0 = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let v1 = pairs.iter().map(|p| (p.0 - m1).powi(2)).sum::<f64>() / (n - 1.0);
        let v0 = pairs.iter().map(|p| (p.1 - m0).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(McEstimate {
            estimate: m1 - m0,
            standard_error: ((v1 + v0) / n).sqrt(),
            reps,
        })
    }
}

/// How a truth bundle was obtained.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum TruthMethod {
    Exact,
    MonteCarlo,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthMetadata {
    pub method: TruthMethod,
    pub reps: Option<u64>,
    pub standard_error: Option<f64>,
    /// Reward bound `M`; approximate when the reward noise is unbounded.
    pub reward_bound: f64,
    pub reward_bound_approximate: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JPoint {
    pub theta: f64,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JkPoint {
    pub k: usize,
    pub theta: f64,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradKPoint {
    pub k: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerStepQ {
    /// `(Q^t(0), Q^t(1))` per step.
    pub full: Vec<[f64; 2]>,
    /// Truncated Q-values per requested `k`.
    pub truncated: Vec<(usize, Vec<[f64; 2]>)>,
}

/// Everything the estimators are checked against for one environment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthBundle {
    pub tau: f64,
    pub tau_t: Option<Vec<f64>>,
    pub j_grid: Vec<JPoint>,
    pub grad_j_half: Option<f64>,
    pub jk_values: Vec<JkPoint>,
    pub grad_jk_half: Vec<GradKPoint>,
    pub delta: Option<f64>,
    pub gamma_hat: Option<f64>,
    pub per_step_q: Option<PerStepQ>,
    pub metadata: TruthMetadata,
}

/// Exact truth bundle for a finite environment.
pub fn exact_truth_bundle(
    env: &NonstationaryMdp,
    theta_grid: &[f64],
    k_grid: &[usize],
    include_per_step_q: bool,
) -> Result<TruthBundle> {
    let (tau, tau_t) = exact_gate(env);
    let mut j_grid = Vec::with_capacity(theta_grid.len());
    for &theta in theta_grid {
        j_grid.push(JPoint {
            theta,
            value: exact_value(env, theta)?,
        });
    }
    let mut jk_values = Vec::new();
    let mut grad_jk_half = Vec::new();
    for &k in k_grid {
        for &theta in theta_grid {
            jk_values.push(JkPoint {
                k,
                theta,
                value: exact_truncated_value(env, theta, k)?,
            });
        }
        grad_jk_half.push(GradKPoint {
            k,
            value: exact_truncated_gradient(env, k)?,
        });
    }
    let per_step = if include_per_step_q {
        let mut truncated = Vec::new();
        for &k in k_grid {
            truncated.push((k, per_step_q_truncated(env, k)?));
        }
        Some(PerStepQ {
            full: per_step_q(env),
            truncated,
        })
    } else {
        None
    };
    let (bound, approx) = env.rewards().bound();
    Ok(TruthBundle {
        tau,
        tau_t: Some(tau_t),
        j_grid,
        grad_j_half: Some(exact_policy_gradient(env)),
        jk_values,
        grad_jk_half,
        delta: Some(kernel_deviation(env)),
        gamma_hat: Some(dobrushin_coefficient(env)),
        per_step_q: per_step,
        metadata: TruthMetadata {
            method: TruthMethod::Exact,
            reps: None,
            standard_error: None,
            reward_bound: bound,
            reward_bound_approximate: approx,
        },
    })
}

/// Monte Carlo truth bundle for simulation-only systems.
pub fn mc_truth_bundle(
    sampler: &dyn ArmMeanSampler,
    reps: u64,
    master_seed: u64,
    paired: bool,
    reward_bound: f64,
) -> Result<TruthBundle> {
    let est = mc_gate(sampler, reps, master_seed, paired)?;
    Ok(TruthBundle {
        tau: est.estimate,
        tau_t: None,
        j_grid: Vec::new(),
        grad_j_half: None,
        jk_values: Vec::new(),
        grad_jk_half: Vec::new(),
        delta: None,
        gamma_hat: None,
        per_step_q: None,
        metadata: TruthMetadata {
            method: TruthMethod::MonteCarlo,
            reps: Some(reps),
            standard_error: Some(est.standard_error),
            reward_bound,
            reward_bound_approximate: false,
        },
    })
}

/// Central finite difference of a value function at `θ = 1/2`.
pub fn central_difference(mut f: impl FnMut(f64) -> Result<f64>, h: f64) -> Result<f64> {
    Ok((f(0.5 + h)? - f(0.5 - h)?) / (2.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{DenseKernels, RewardModel, RewardNoise};

    /// Two-state, T = 2 environment with a hand-expanded value function:
    /// J(θ) = (2.5 + 4.7 θ + 0.2 θ²) / 2, so ∇J(1/2) = 2.45 and τ = 2.45.
    fn hand_env() -> NonstationaryMdp {
        let mut k = DenseKernels::zeros(2, 2);
        for arm in [Arm::Control, Arm::Treatment] {
            // Kernel at the final step is present but unused.
            k.row_mut(1, arm, 0).copy_from_slice(&[1.0, 0.0]);
            k.row_mut(1, arm, 1).copy_from_slice(&[0.0, 1.0]);
        }
        k.row_mut(0, Arm::Control, 0).copy_from_slice(&[0.5, 0.5]);
        k.row_mut(0, Arm::Treatment, 0).copy_from_slice(&[0.3, 0.7]);
        // Rows from state 1 never fire under rho = (1, 0) at T = 2.
        k.row_mut(0, Arm::Control, 1).copy_from_slice(&[0.5, 0.5]);
        k.row_mut(0, Arm::Treatment, 1).copy_from_slice(&[0.5, 0.5]);
        let rewards = RewardModel::table(vec![[1.0, 3.0], [2.0, 5.0]], RewardNoise::None);
        NonstationaryMdp::from_dense(k, rewards, vec![1.0, 0.0]).unwrap()
    }

    #[test]
    fn hand_expanded_value_and_gradient() {
        let env = hand_env();
        for theta in [0.0, 0.25, 0.5, 1.0] {
            let expect = (2.5 + 4.7 * theta + 0.2 * theta * theta) / 2.0;
            assert!((exact_value(&env, theta).unwrap() - expect).abs() < 1e-14);
        }
        assert!((exact_policy_gradient(&env) - 2.45).abs() < 1e-14);
        let (tau, _) = exact_gate(&env);
        assert!((tau - 2.45).abs() < 1e-14);
    }

    #[test]
    fn gate_is_value_difference() {
        let env = hand_env();
        let (tau, tau_t) = exact_gate(&env);
        let diff = exact_value(&env, 1.0).unwrap() - exact_value(&env, 0.0).unwrap();
        assert!((tau - diff).abs() < 1e-12);
        assert_eq!(tau_t.len(), 2);
    }

    #[test]
    fn theta_out_of_range_rejected() {
        let env = hand_env();
        assert!(exact_value(&env, 1.5).is_err());
        assert!(exact_value(&env, -0.1).is_err());
    }

    #[test]
    fn k_out_of_range_rejected() {
        let env = hand_env();
        assert!(exact_truncated_value(&env, 0.5, 2).is_err());
        assert!(exact_truncated_gradient(&env, 5).is_err());
    }

    #[test]
    fn truncation_at_horizon_recovers_full_value() {
        let env = hand_env();
        for theta in [0.0, 0.5, 1.0] {
            let full = exact_value(&env, theta).unwrap();
            let trunc = exact_truncated_value(&env, theta, 1).unwrap();
            assert_eq!(full, trunc);
        }
        assert_eq!(
            exact_policy_gradient(&env),
            exact_truncated_gradient(&env, 1).unwrap()
        );
    }

    #[test]
    fn paired_mc_gate_on_identical_arms_is_exactly_zero() {
        let mut k = DenseKernels::zeros(3, 40);
        for t in 0..40 {
            for arm in [Arm::Control, Arm::Treatment] {
                for x in 0..3 {
                    k.row_mut(t, arm, x).copy_from_slice(&[0.2, 0.5, 0.3]);
                }
            }
        }
        let rewards = RewardModel::table(
            vec![[1.0, 1.0], [0.5, 0.5], [-2.0, -2.0]],
            RewardNoise::Gaussian { std: 0.3 },
        );
        let env = NonstationaryMdp::from_dense(k, rewards, vec![1.0, 0.0, 0.0]).unwrap();
        let est = mc_gate(&env, 50, 9, true).unwrap();
        assert_eq!(est.estimate, 0.0);
        assert_eq!(est.standard_error, 0.0);
    }

    #[test]
    fn q_values_sum_to_gradient() {
        let env = hand_env();
        let qs = per_step_q(&env);
        let grad: f64 = qs.iter().map(|q| q[1] - q[0]).sum::<f64>() / 2.0;
        assert!((grad - exact_policy_gradient(&env)).abs() < 1e-13);
    }
}
