//! Invariant self-check suite: finite-difference gradient checks, estimator
//! unbiasedness, the bias-decomposition identity, window-sum equivalence,
//! and Dobrushin contraction, over a frozen seeded corpus.
//!
//! The whole suite is deterministic, so the pass/fail report is identical
//! across runs. The truncated-DQ implementation under test can be swapped
//! out ([`run_with_dq_impl`]), which is how deliberate mutants are shown to
//! trip the unbiasedness check.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::analysis::decompose_bias;
use crate::env::{
    dobrushin_coefficient, simulate, tv_distance, Arm, AssignmentPolicy, DenseKernels,
    NonstationaryMdp, RewardModel, RewardNoise, ZyView,
};
use crate::envs::{build_two_state, TwoStateConfig};
use crate::error::Result;
use crate::estimators::truncated_dq;
use crate::rng::{derive_seed, stream_rng, StreamTag, SALT_EXPERIMENT};
use crate::truth::{
    central_difference, exact_gate, exact_policy_gradient, exact_truncated_gradient,
    exact_truncated_value, exact_value, per_step_q, per_step_q_truncated,
};

/// Check depth. `Fast` finishes within a minute; `Full` uses replication
/// counts that make the unbiasedness checks sharp enough to catch window
/// off-by-one mutations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Fast,
    Full,
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub details: String,
}

#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "[{}] {} — {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.details
            ));
        }
        out.push_str(&format!(
            "{}/{} checks passed\n",
            self.checks.iter().filter(|c| c.passed).count(),
            self.checks.len()
        ));
        out
    }
}

const CORPUS_SEED: u64 = 0x7455_0001;

/// One random finite environment: random row-stochastic kernels per step
/// with a bounded treatment perturbation, standard-normal mean rewards.
fn random_env(seed: u64, num_states: usize, horizon: usize) -> NonstationaryMdp {
    let mut rng = stream_rng(seed, StreamTag::EnvGen);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut kernels = DenseKernels::zeros(num_states, horizon);
    for t in 0..horizon {
        for x in 0..num_states {
            // Control row: softmax of normals; treatment row: multiplicative
            // perturbation, keeping the deviation moderate so that
            // finite-difference checks stay well-conditioned.
            let mut base: Vec<f64> = (0..num_states)
                .map(|_| {
                    let draw: f64 = normal.sample(&mut rng);
                    draw.exp()
                })
                .collect();
            let sum: f64 = base.iter().sum();
            base.iter_mut().for_each(|v| *v /= sum);
            let mut treated: Vec<f64> = base
                .iter()
                .map(|&p| {
                    let draw: f64 = normal.sample(&mut rng);
                    p * (0.5 * draw).exp()
                })
                .collect();
            let tsum: f64 = treated.iter().sum();
            treated.iter_mut().for_each(|v| *v /= tsum);
            kernels.row_mut(t, Arm::Control, x).copy_from_slice(&base);
            kernels.row_mut(t, Arm::Treatment, x).copy_from_slice(&treated);
        }
    }
    let rewards: Vec<[f64; 2]> = (0..num_states)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    let mut initial: Vec<f64> = (0..num_states)
        .map(|_| normal.sample(&mut rng).exp())
        .collect();
    let isum: f64 = initial.iter().sum();
    initial.iter_mut().for_each(|v| *v /= isum);
    NonstationaryMdp::from_dense(
        kernels,
        RewardModel::table(rewards, RewardNoise::Gaussian { std: 0.2 }),
        initial,
    )
    .expect("random env is valid by construction")
}

/// The frozen corpus of 20 random finite environments (S ≤ 5, T ≤ 50).
pub fn frozen_corpus() -> Vec<NonstationaryMdp> {
    (0..20)
        .map(|i| {
            let s = 2 + (i % 4); // 2..=5 states
            let t = 8 + (i * 7) % 43; // 8..=50 steps
            random_env(derive_seed(CORPUS_SEED, 1, i as u64), s, t)
        })
        .collect()
}

/// Three-state ladder with a strong, slow-mixing carryover effect. The arms
/// share rewards, so the DM expectation is zero while each extra window
/// step adds a well-separated amount to `∇J_k(1/2)` — which is what makes
/// window off-by-one mutations detectable.
fn ladder_env(horizon: usize) -> NonstationaryMdp {
    let s = 3;
    let mut kernels = DenseKernels::zeros(s, horizon);
    for t in 0..horizon {
        for x in 0..s {
            let up = (x + 1).min(s - 1);
            let down = x.saturating_sub(1);
            let mut row1 = vec![0.0; s];
            row1[up] += 0.8;
            row1[x] += 0.2;
            let mut row0 = vec![0.0; s];
            row0[down] += 0.8;
            row0[x] += 0.2;
            kernels.row_mut(t, Arm::Treatment, x).copy_from_slice(&row1);
            kernels.row_mut(t, Arm::Control, x).copy_from_slice(&row0);
        }
    }
    let rewards: Vec<[f64; 2]> = (0..s).map(|x| [2.0 * x as f64; 2]).collect();
    NonstationaryMdp::from_dense(
        kernels,
        RewardModel::table(rewards, RewardNoise::None),
        vec![1.0 / 3.0; 3],
    )
    .expect("ladder env is valid")
}

/// Two-state family for Taylor-error scaling: frozen stationary control
/// kernels with a state-heterogeneous treatment shift scaled by `delta`.
///
/// With the homogeneous shift used by the standard two-state builder, the
/// perturbation direction `(−1, +1)` is a left eigenvector of every 2×2
/// stochastic matrix and the shift annihilates it, so every `J_k(θ)` is
/// exactly quadratic and the Taylor error vanishes identically. Making the
/// shift state-dependent restores the generic `k²δ²` Taylor term that the
/// scaling diagnostics measure.
pub fn taylor_scaling_family(deltas: &[f64], horizon: usize) -> Vec<NonstationaryMdp> {
    let gamma = 0.5;
    let shift_weight = [1.0, 0.4];
    deltas
        .iter()
        .map(|&delta| {
            let mu = [
                [(1.0 + gamma) / 2.0, (1.0 - gamma) / 2.0],
                [(1.0 - gamma) / 2.0, (1.0 + gamma) / 2.0],
            ];
            let mut kernels = DenseKernels::zeros(2, horizon);
            for t in 0..horizon {
                for x in 0..2 {
                    kernels.row_mut(t, Arm::Control, x).copy_from_slice(&mu[x]);
                    let shift = delta * shift_weight[x];
                    let row = [mu[x][0] - shift, mu[x][1] + shift];
                    kernels.row_mut(t, Arm::Treatment, x).copy_from_slice(&row);
                }
            }
            let rewards = vec![[0.6, 1.1], [-0.8, -0.1]];
            NonstationaryMdp::from_dense(
                kernels,
                RewardModel::table(rewards, RewardNoise::None),
                vec![0.5, 0.5],
            )
            .expect("family member is valid")
        })
        .collect()
}

/// Five frozen environments for the estimator-unbiasedness checks: the
/// ladder plus four corpus draws.
pub fn unbiasedness_envs() -> Vec<NonstationaryMdp> {
    let mut envs = vec![ladder_env(60)];
    for i in 0..4 {
        envs.push(random_env(derive_seed(CORPUS_SEED, 2, i), 3, 30 + (i as usize) * 5));
    }
    envs
}

/// Signature of a truncated-DQ implementation under test.
pub type DqImpl = dyn Fn(ZyView<'_>, usize, f64) -> Result<f64> + Sync;

/// Runs the suite against the crate's own estimator implementation.
pub fn run(level: Level) -> ValidationReport {
    run_with_dq_impl(level, &|zy, k, theta| truncated_dq(zy, k, theta))
}

/// Runs the suite with an injected truncated-DQ implementation. Everything
/// except the unbiasedness checks is independent of the injection.
pub fn run_with_dq_impl(level: Level, dq: &DqImpl) -> ValidationReport {
    let mut checks = Vec::new();
    checks.push(check_gradient_fd());
    checks.push(check_identities());
    checks.push(check_decomposition());
    checks.push(check_window_equivalence(dq));
    checks.push(check_dq_unbiasedness(level, dq));
    checks.push(check_iid_unbiasedness(level, dq));
    checks.push(check_contraction());
    checks.push(check_switchback_structure());
    if level == Level::Full {
        checks.push(check_variance_monotone());
    }
    ValidationReport { checks }
}

const FD_STEP: f64 = 1e-4;
const FD_TOL: f64 = 1e-6;

fn check_gradient_fd() -> CheckResult {
    let mut worst: f64 = 0.0;
    for env in frozen_corpus() {
        let horizon = env.horizon();
        let grad = exact_policy_gradient(&env);
        let fd = central_difference(|theta| exact_value(&env, theta), FD_STEP)
            .expect("value evaluates");
        worst = worst.max((grad - fd).abs());
        for k in [0, 1, 3, horizon - 1] {
            let gk = exact_truncated_gradient(&env, k).expect("k in range");
            let fdk = central_difference(|theta| exact_truncated_value(&env, theta, k), FD_STEP)
                .expect("value evaluates");
            worst = worst.max((gk - fdk).abs());
        }
    }
    CheckResult {
        name: "gradient_finite_difference".into(),
        passed: worst <= FD_TOL,
        details: format!("max |gradient - central difference| = {worst:.3e} (tol {FD_TOL:.0e})"),
    }
}

fn check_identities() -> CheckResult {
    let mut worst: f64 = 0.0;
    for env in frozen_corpus() {
        let horizon = env.horizon();
        let (tau, _) = exact_gate(&env);
        let diff = exact_value(&env, 1.0).unwrap() - exact_value(&env, 0.0).unwrap();
        worst = worst.max((tau - diff).abs());
        // No truncation at k = T-1.
        let g_full = exact_policy_gradient(&env);
        let g_trunc = exact_truncated_gradient(&env, horizon - 1).unwrap();
        worst = worst.max((g_full - g_trunc).abs());
        // Per-step Q: the truncated Q at k = T-t equals the full Q.
        let full_q = per_step_q(&env);
        for k in [1usize, 3] {
            if k >= horizon {
                continue;
            }
            let qk = per_step_q_truncated(&env, k).unwrap();
            let t = horizon - k - 1; // 0-based step with window reaching T
            worst = worst.max((qk[t][0] - full_q[t][0]).abs());
            worst = worst.max((qk[t][1] - full_q[t][1]).abs());
        }
    }
    CheckResult {
        name: "definitional_identities".into(),
        passed: worst <= 1e-10,
        details: format!("max identity residual = {worst:.3e} (tol 1e-10)"),
    }
}

fn check_decomposition() -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut mixing_at_full: f64 = 0.0;
    for env in frozen_corpus() {
        let horizon = env.horizon();
        for k in [0, 1, 3, horizon - 1] {
            let d = decompose_bias(&env, k).expect("k in range");
            worst = worst.max((d.total_bias - d.taylor_error - d.mixing_bias).abs());
            if k == horizon - 1 {
                mixing_at_full = mixing_at_full.max(d.mixing_bias.abs());
            }
        }
    }
    CheckResult {
        name: "bias_decomposition_identity".into(),
        passed: worst <= 1e-10 && mixing_at_full == 0.0,
        details: format!(
            "max identity residual = {worst:.3e}; mixing bias at k=T-1 = {mixing_at_full:.1e}"
        ),
    }
}

fn check_window_equivalence(dq: &DqImpl) -> CheckResult {
    // Dyadic rewards keep all sums exact, making bit equality meaningful.
    let mut rng = stream_rng(CORPUS_SEED, StreamTag::Transition);
    let mut failures = 0usize;
    let mut cases = 0usize;
    for _ in 0..25 {
        let len = 5 + (rng.random::<u64>() % 120) as usize;
        let actions: Vec<Arm> = (0..len).map(|_| Arm::from_bit(rng.random())).collect();
        let rewards: Vec<f64> = (0..len)
            .map(|_| ((rng.random::<u64>() % 1024) as f64 - 512.0) / 256.0)
            .collect();
        let zy = ZyView {
            actions: &actions,
            rewards: &rewards,
        };
        for k in [0usize, 1, 2, 3, len / 2, len - 1] {
            let naive = {
                let mut est = 0.0;
                for u in 0..len {
                    let mut window = 0.0;
                    for t in u..=(u + k).min(len - 1) {
                        window += rewards[t];
                    }
                    let w = match actions[u] {
                        Arm::Treatment => 2.0,
                        Arm::Control => -2.0,
                    };
                    est += w * window;
                }
                est / len as f64
            };
            let fast = dq(zy, k, 0.5).expect("valid window");
            cases += 1;
            if fast != naive {
                failures += 1;
            }
        }
    }
    CheckResult {
        name: "window_sum_equivalence".into(),
        passed: failures == 0,
        details: format!("{failures}/{cases} windowed estimates differ from the double loop"),
    }
}

/// Unbiasedness check core: replication mean of the injected estimator
/// against the exact truncated gradient, in standard-error units.
fn unbiasedness_z_scores(level: Level, dq: &DqImpl, env: &NonstationaryMdp, ks: &[usize]) -> Vec<(usize, f64, f64)> {
    let reps: u64 = match level {
        Level::Fast => 6_000,
        Level::Full => 40_000,
    };
    let policy = AssignmentPolicy::Bernoulli { theta: 0.5 };
    let per_rep: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(CORPUS_SEED ^ 0xD00, SALT_EXPERIMENT, rep);
            let traj = simulate(env, &policy, seed).expect("simulation succeeds");
            ks.iter()
                .map(|&k| dq(traj.zy(), k, 0.5).expect("estimate"))
                .collect()
        })
        .collect();
    ks.iter()
        .enumerate()
        .map(|(i, &k)| {
            let vals: Vec<f64> = per_rep.iter().map(|v| v[i]).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            let target = exact_truncated_gradient(env, k).expect("k in range");
            let z = if se > 0.0 { (mean - target) / se } else { 0.0 };
            (k, z, se)
        })
        .collect()
}

const UNBIASEDNESS_Z_LIMIT: f64 = 4.5;

fn check_dq_unbiasedness(level: Level, dq: &DqImpl) -> CheckResult {
    let envs = unbiasedness_envs();
    let envs = match level {
        Level::Fast => &envs[..2],
        Level::Full => &envs[..],
    };
    let mut worst_z: f64 = 0.0;
    let mut worst_desc = String::new();
    for (i, env) in envs.iter().enumerate() {
        let horizon = env.horizon();
        let ks = [1usize, 3, 0, horizon - 1];
        for (k, z, se) in unbiasedness_z_scores(level, dq, env, &ks) {
            if z.abs() > worst_z {
                worst_z = z.abs();
                worst_desc = format!("env {i}, k={k}, z={z:.2}, se={se:.2e}");
            }
        }
    }
    CheckResult {
        name: "dq_unbiasedness_for_truncated_gradient".into(),
        passed: worst_z <= UNBIASEDNESS_Z_LIMIT,
        details: format!("worst |z| = {worst_z:.2} at {worst_desc} (limit {UNBIASEDNESS_Z_LIMIT})"),
    }
}

fn check_iid_unbiasedness(level: Level, dq: &DqImpl) -> CheckResult {
    // Next-state law independent of state and action: every window size is
    // unbiased for the GATE itself.
    let horizon = 40;
    let s = 3;
    let mut kernels = DenseKernels::zeros(s, horizon);
    for t in 0..horizon {
        for arm in [Arm::Control, Arm::Treatment] {
            for x in 0..s {
                kernels
                    .row_mut(t, arm, x)
                    .copy_from_slice(&[0.5, 0.3, 0.2]);
            }
        }
    }
    let rewards = RewardModel::table(
        vec![[0.4, 1.2], [-0.5, 0.1], [2.0, 2.6]],
        RewardNoise::Gaussian { std: 0.3 },
    );
    let env =
        NonstationaryMdp::from_dense(kernels, rewards, vec![0.5, 0.3, 0.2]).expect("valid env");
    let (tau, _) = exact_gate(&env);

    let reps: u64 = match level {
        Level::Fast => 6_000,
        Level::Full => 30_000,
    };
    let policy = AssignmentPolicy::Bernoulli { theta: 0.5 };
    let ks = [0usize, 1, 3];
    let per_rep: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(CORPUS_SEED ^ 0x11D, SALT_EXPERIMENT, rep);
            let traj = simulate(&env, &policy, seed).expect("simulation succeeds");
            ks.iter()
                .map(|&k| dq(traj.zy(), k, 0.5).expect("estimate"))
                .collect()
        })
        .collect();
    let mut worst_z: f64 = 0.0;
    for i in 0..ks.len() {
        let vals: Vec<f64> = per_rep.iter().map(|v| v[i]).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        worst_z = worst_z.max(((mean - tau) / se).abs());
    }
    CheckResult {
        name: "iid_unbiasedness_for_gate".into(),
        passed: worst_z <= UNBIASEDNESS_Z_LIMIT,
        details: format!("worst |z| = {worst_z:.2} against exact GATE {tau:.4}"),
    }
}

fn check_contraction() -> CheckResult {
    let mut rng = stream_rng(CORPUS_SEED ^ 0xC0, StreamTag::Transition);
    let mut worst_violation: f64 = f64::NEG_INFINITY;
    for env in frozen_corpus().iter().take(8) {
        let gamma = dobrushin_coefficient(env);
        let s = env.num_states();
        let mut row = vec![0.0; s];
        for _ in 0..20 {
            let mut f: Vec<f64> = (0..s).map(|_| rng.random::<f64>() + 1e-3).collect();
            let fs: f64 = f.iter().sum();
            f.iter_mut().for_each(|v| *v /= fs);
            let mut g: Vec<f64> = (0..s).map(|_| rng.random::<f64>() + 1e-3).collect();
            let gs: f64 = g.iter().sum();
            g.iter_mut().for_each(|v| *v /= gs);
            let t = (rng.random::<u64>() as usize) % env.horizon();
            let arm = Arm::from_bit(rng.random());
            let mut fp = vec![0.0; s];
            let mut gp = vec![0.0; s];
            for x in 0..s {
                env.fill_row(t, arm, x, &mut row);
                for j in 0..s {
                    fp[j] += f[x] * row[j];
                    gp[j] += g[x] * row[j];
                }
            }
            let violation = tv_distance(&fp, &gp) - gamma * tv_distance(&f, &g);
            worst_violation = worst_violation.max(violation);
        }
    }
    CheckResult {
        name: "dobrushin_contraction".into(),
        passed: worst_violation <= 1e-12,
        details: format!("worst TV(fP,gP) - γ̂·TV(f,g) = {worst_violation:.3e}"),
    }
}

fn check_switchback_structure() -> CheckResult {
    let env = random_env(derive_seed(CORPUS_SEED, 3, 0), 3, 50);
    let mut ok = true;
    let mut details = String::new();
    let policy = AssignmentPolicy::Switchback {
        interval_len: 7,
        theta: 0.5,
    };
    let mut treated_blocks = 0usize;
    let mut total_blocks = 0usize;
    for rep in 0..400u64 {
        let traj = simulate(&env, &policy, derive_seed(CORPUS_SEED, 4, rep)).unwrap();
        let blocks = traj.block_ids.as_ref().expect("switchback records blocks");
        for t in 0..traj.len() {
            if blocks[t] != (t / 7) as u64 {
                ok = false;
                details = format!("rep {rep}: block id wrong at step {t}");
            }
            if t % 7 != 0 && traj.actions[t] != traj.actions[t - 1] {
                ok = false;
                details = format!("rep {rep}: assignment flips inside block at step {t}");
            }
        }
        for t in (0..traj.len()).step_by(7) {
            total_blocks += 1;
            if traj.actions[t] == Arm::Treatment {
                treated_blocks += 1;
            }
        }
    }
    let frac = treated_blocks as f64 / total_blocks as f64;
    if (frac - 0.5).abs() > 0.02 {
        ok = false;
        details = format!("treated block fraction {frac:.3} far from 0.5");
    }
    if ok {
        details = format!("block structure intact; treated block fraction {frac:.3}");
    }
    CheckResult {
        name: "switchback_block_structure".into(),
        passed: ok,
        details,
    }
}

fn check_variance_monotone() -> CheckResult {
    // Var(τ̂_k)·T should be nondecreasing in k.
    let cfg = TwoStateConfig {
        horizon: 2_000,
        seed: 99,
        ..TwoStateConfig::default()
    };
    let env = build_two_state(&cfg).expect("two-state builds");
    let ks = [0usize, 1, 3, 5, 10];
    let reps = 4_000u64;
    let policy = AssignmentPolicy::Bernoulli { theta: 0.5 };
    let per_rep: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(CORPUS_SEED ^ 0x7A2, SALT_EXPERIMENT, rep);
            let traj = simulate(&env, &policy, seed).expect("simulation succeeds");
            ks.iter()
                .map(|&k| truncated_dq(traj.zy(), k, 0.5).expect("estimate"))
                .collect()
        })
        .collect();
    let mut variances = Vec::new();
    for (i, &k) in ks.iter().enumerate() {
        let vals: Vec<f64> = per_rep.iter().map(|v| v[i]).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        variances.push((k, var));
    }
    let monotone = variances.windows(2).all(|w| w[1].1 >= w[0].1);
    CheckResult {
        name: "variance_nondecreasing_in_k".into(),
        passed: monotone,
        details: format!(
            "Var(τ̂_k): {}",
            variances
                .iter()
                .map(|(k, v)| format!("k={k}:{v:.3e}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_frozen() {
        let a = frozen_corpus();
        let b = frozen_corpus();
        assert_eq!(a.len(), 20);
        for (ea, eb) in a.iter().zip(&b) {
            assert_eq!(ea.num_states(), eb.num_states());
            assert_eq!(ea.horizon(), eb.horizon());
            assert!(ea.num_states() <= 5);
            assert!(ea.horizon() <= 50);
            let mut ra = vec![0.0; ea.num_states()];
            let mut rb = vec![0.0; eb.num_states()];
            ea.fill_row(0, Arm::Treatment, 0, &mut ra);
            eb.fill_row(0, Arm::Treatment, 0, &mut rb);
            assert_eq!(ra, rb);
        }
    }

    #[test]
    fn fast_suite_passes_and_is_reproducible() {
        let a = run(Level::Fast);
        assert!(a.passed(), "fast validation failed:\n{}", a.render());
        let b = run(Level::Fast);
        for (ca, cb) in a.checks.iter().zip(&b.checks) {
            assert_eq!(ca.passed, cb.passed);
            assert_eq!(ca.details, cb.details);
        }
    }
}
