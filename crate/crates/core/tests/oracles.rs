//! Independent oracles for the exact kernel-propagation computations:
//! exhaustive path enumeration on tiny environments, central finite
//! differences for gradients, and empirical marginals for the simulator.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use truncdq_core::env::{
    simulate, tv_distance, Arm, AssignmentPolicy, DenseKernels, NonstationaryMdp, RewardModel,
    RewardNoise,
};
use truncdq_core::rng::{derive_seed, stream_rng, StreamTag, SALT_EXPERIMENT};
use truncdq_core::truth::{
    central_difference, exact_gate, exact_policy_gradient, exact_truncated_gradient,
    exact_truncated_value, exact_value, mc_gate,
};

/// Random dense environment small enough for exhaustive path sums.
fn tiny_env(seed: u64, num_states: usize, horizon: usize) -> NonstationaryMdp {
    let mut rng = stream_rng(seed, StreamTag::EnvGen);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut kernels = DenseKernels::zeros(num_states, horizon);
    for t in 0..horizon {
        for arm in [Arm::Control, Arm::Treatment] {
            for x in 0..num_states {
                let row: Vec<f64> = (0..num_states)
                    .map(|_| {
                        let draw: f64 = normal.sample(&mut rng);
                        draw.exp()
                    })
                    .collect();
                let sum: f64 = row.iter().sum();
                let dst = kernels.row_mut(t, arm, x);
                for (d, v) in dst.iter_mut().zip(&row) {
                    *d = v / sum;
                }
            }
        }
    }
    let rewards: Vec<[f64; 2]> = (0..num_states)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    let mut initial: Vec<f64> = (0..num_states)
        .map(|_| {
            let draw: f64 = normal.sample(&mut rng);
            draw.exp()
        })
        .collect();
    let total: f64 = initial.iter().sum();
    initial.iter_mut().for_each(|v| *v /= total);
    NonstationaryMdp::from_dense(
        kernels,
        RewardModel::table(rewards, RewardNoise::None),
        initial,
    )
    .unwrap()
}

/// Exhaustive path sum of `E[Y_t]` at one step under a per-step treatment
/// probability schedule: enumerates every action and state path.
fn enumerated_mean_at(env: &NonstationaryMdp, thetas: &[f64], t_target: usize) -> f64 {
    let s = env.num_states();
    let mut row = vec![0.0; s];
    // Stack of (step, state, prob) expanded depth-first over actions/states.
    fn go(
        env: &NonstationaryMdp,
        thetas: &[f64],
        t_target: usize,
        t: usize,
        x: usize,
        prob: f64,
        row: &mut Vec<f64>,
        acc: &mut f64,
    ) {
        for (z, arm) in [(0usize, Arm::Control), (1, Arm::Treatment)] {
            let pz = if z == 1 { thetas[t] } else { 1.0 - thetas[t] };
            if pz == 0.0 {
                continue;
            }
            let p = prob * pz;
            if t == t_target {
                *acc += p * env.rewards().mean(t, x, arm);
                continue;
            }
            env.fill_row(t, arm, x, row);
            let next_rows: Vec<f64> = row.clone();
            for (x2, &px2) in next_rows.iter().enumerate() {
                if px2 > 0.0 {
                    go(env, thetas, t_target, t + 1, x2, p * px2, row, acc);
                }
            }
        }
    }
    let mut acc = 0.0;
    for x in 0..s {
        let p0 = env.initial_dist()[x];
        if p0 > 0.0 {
            go(env, thetas, t_target, 0, x, p0, &mut row, &mut acc);
        }
    }
    acc
}

fn enumerated_value(env: &NonstationaryMdp, theta: f64) -> f64 {
    let horizon = env.horizon();
    let thetas = vec![theta; horizon];
    (0..horizon)
        .map(|t| enumerated_mean_at(env, &thetas, t))
        .sum::<f64>()
        / horizon as f64
}

fn enumerated_truncated_value(env: &NonstationaryMdp, theta: f64, k: usize) -> f64 {
    let horizon = env.horizon();
    let mut total = 0.0;
    for t in 0..horizon {
        // Transitions strictly before max(t-k, 0) follow the uniform policy;
        // later transitions and the reward action at t follow pi_theta.
        let thetas: Vec<f64> = (0..horizon)
            .map(|u| if u + k < t { 0.5 } else { theta })
            .collect();
        total += enumerated_mean_at(env, &thetas, t);
    }
    total / horizon as f64
}

#[test]
fn value_matches_exhaustive_path_sum() {
    for (seed, s, t) in [(1u64, 2usize, 3usize), (2, 3, 4), (3, 2, 4)] {
        let env = tiny_env(seed, s, t);
        for theta in [0.0, 0.3, 0.5, 1.0] {
            let fast = exact_value(&env, theta).unwrap();
            let slow = enumerated_value(&env, theta);
            assert!(
                (fast - slow).abs() < 1e-12,
                "J({theta}) mismatch on seed {seed}: {fast} vs {slow}"
            );
        }
    }
}

#[test]
fn gate_matches_exhaustive_path_sum() {
    let env = tiny_env(7, 3, 4);
    let (tau, tau_t) = exact_gate(&env);
    let slow = enumerated_value(&env, 1.0) - enumerated_value(&env, 0.0);
    assert!((tau - slow).abs() < 1e-12);
    assert_eq!(tau_t.len(), 4);
}

#[test]
fn truncated_value_matches_mixed_policy_path_sum() {
    let env = tiny_env(11, 2, 4);
    for k in 0..=3usize {
        for theta in [0.0, 0.25, 1.0] {
            let fast = exact_truncated_value(&env, theta, k).unwrap();
            let slow = enumerated_truncated_value(&env, theta, k);
            assert!(
                (fast - slow).abs() < 1e-12,
                "J_{k}({theta}) mismatch: {fast} vs {slow}"
            );
        }
    }
}

#[test]
fn gradients_match_finite_differences_of_enumeration() {
    let env = tiny_env(13, 2, 4);
    let h = 1e-5;
    let grad = exact_policy_gradient(&env);
    let fd = (enumerated_value(&env, 0.5 + h) - enumerated_value(&env, 0.5 - h)) / (2.0 * h);
    assert!((grad - fd).abs() < 1e-7, "gradient {grad} vs enumerated FD {fd}");
    for k in [0usize, 1, 2] {
        let gk = exact_truncated_gradient(&env, k).unwrap();
        let fdk = (enumerated_truncated_value(&env, 0.5 + h, k)
            - enumerated_truncated_value(&env, 0.5 - h, k))
            / (2.0 * h);
        assert!((gk - fdk).abs() < 1e-7, "k={k}: {gk} vs {fdk}");
    }
}

#[test]
fn gradient_matches_central_difference_of_exact_value() {
    let env = tiny_env(17, 3, 4);
    let grad = exact_policy_gradient(&env);
    let fd = central_difference(|th| exact_value(&env, th), 1e-4).unwrap();
    assert!((grad - fd).abs() < 1e-6);
}

#[test]
fn early_marginals_match_kernel_products() {
    // Empirical law of X_t for t <= 4 against the exact product, TV < 0.01
    // over 1e5 seeds, on an always-treat schedule.
    let env = tiny_env(23, 4, 5);
    let reps: u64 = 100_000;
    let counts: Vec<Vec<u64>> = (0..reps)
        .into_par_iter()
        .fold(
            || vec![vec![0u64; 4]; 4],
            |mut acc, rep| {
                let seed = derive_seed(99, SALT_EXPERIMENT, rep);
                let traj = simulate(&env, &AssignmentPolicy::AlwaysTreat, seed).unwrap();
                for t in 0..4 {
                    acc[t][traj.states[t] as usize] += 1;
                }
                acc
            },
        )
        .reduce(
            || vec![vec![0u64; 4]; 4],
            |mut a, b| {
                for t in 0..4 {
                    for x in 0..4 {
                        a[t][x] += b[t][x];
                    }
                }
                a
            },
        );
    // Exact marginals by forward propagation.
    let s = env.num_states();
    let mut d = env.initial_dist().to_vec();
    let mut row = vec![0.0; s];
    for t in 0..4 {
        let empirical: Vec<f64> = counts[t].iter().map(|&c| c as f64 / reps as f64).collect();
        let tv = tv_distance(&empirical, &d);
        assert!(tv < 0.01, "t={t}: TV(empirical, exact) = {tv}");
        let mut next = vec![0.0; s];
        for (x, &mass) in d.iter().enumerate() {
            env.fill_row(t, Arm::Treatment, x, &mut row);
            for j in 0..s {
                next[j] += mass * row[j];
            }
        }
        d = next;
    }
}

#[test]
fn initial_state_follows_rho() {
    // Chi-square against the initial distribution at desk scale.
    let env = tiny_env(29, 3, 2);
    let reps: u64 = 50_000;
    let mut counts = [0u64; 3];
    for rep in 0..reps {
        let seed = derive_seed(3, SALT_EXPERIMENT, rep);
        let traj = simulate(&env, &AssignmentPolicy::AlwaysControl, seed).unwrap();
        counts[traj.states[0] as usize] += 1;
    }
    let mut chi2 = 0.0;
    for x in 0..3 {
        let expected = env.initial_dist()[x] * reps as f64;
        chi2 += (counts[x] as f64 - expected).powi(2) / expected;
    }
    // 2 degrees of freedom; 99.9th percentile is 13.8.
    assert!(chi2 < 13.8, "chi-square {chi2} too large");
}

#[test]
fn mc_gate_brackets_exact_gate() {
    let env = tiny_env(31, 3, 20);
    let (tau, _) = exact_gate(&env);
    for paired in [false, true] {
        let est = mc_gate(&env, 4000, 5, paired).unwrap();
        let z = (est.estimate - tau).abs() / est.standard_error;
        assert!(
            z < 4.0,
            "paired={paired}: mc {} vs exact {tau}, z = {z}",
            est.estimate
        );
    }
}

#[test]
fn bernoulli_assignment_fraction_close_to_half() {
    // Long-horizon smoke: empirical treatment fraction within 0.02 of 1/2.
    let env = {
        let cfg = truncdq_core::envs::TwoStateConfig {
            horizon: 5000,
            seed: 12,
            ..Default::default()
        };
        truncdq_core::envs::build_two_state(&cfg).unwrap()
    };
    let traj = simulate(&env, &AssignmentPolicy::Bernoulli { theta: 0.5 }, 77).unwrap();
    assert_eq!(traj.len(), 5000);
    let frac = traj
        .actions
        .iter()
        .filter(|a| **a == Arm::Treatment)
        .count() as f64
        / traj.len() as f64;
    assert!((frac - 0.5).abs() < 0.02, "treatment fraction {frac}");
}

#[test]
fn reward_noise_streams_are_independent_of_policy() {
    // Same transition/reward streams under different policies with identical
    // arms: the realized rewards coincide when the reward table is
    // arm-independent, even though the assignment sequences differ.
    let mut kernels = DenseKernels::zeros(2, 100);
    for t in 0..100 {
        for arm in [Arm::Control, Arm::Treatment] {
            kernels.row_mut(t, arm, 0).copy_from_slice(&[0.4, 0.6]);
            kernels.row_mut(t, arm, 1).copy_from_slice(&[0.7, 0.3]);
        }
    }
    let env = NonstationaryMdp::from_dense(
        kernels,
        RewardModel::table(vec![[1.0, 1.0], [2.0, 2.0]], RewardNoise::Gaussian { std: 0.5 }),
        vec![0.5, 0.5],
    )
    .unwrap();
    let a = simulate(&env, &AssignmentPolicy::Bernoulli { theta: 0.5 }, 123).unwrap();
    let b = simulate(&env, &AssignmentPolicy::Switchback { interval_len: 10, theta: 0.5 }, 123)
        .unwrap();
    assert_eq!(a.states, b.states);
    assert_eq!(a.rewards, b.rewards);
    assert_ne!(a.actions, b.actions);
}
