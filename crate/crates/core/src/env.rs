//! Nonstationary finite-state environments, assignment policies, and seeded
//! trajectory simulation.
//!
//! An environment is a finite state space together with one transition
//! kernel per time step and arm: `P_z^t(x, ·)` is the law of the next state
//! when arm `z` is applied in state `x` at step `t`. Time is 1-based in all
//! documentation and file formats and 0-based internally; the kernel at the
//! final step is carried for uniformity but never used by a trajectory of
//! matching length.
//!
//! Total variation distance is half the L1 distance between probability
//! vectors; that convention is used everywhere in the crate.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, StreamTag};

/// Tolerance for probability-vector checks (row sums, initial distribution).
pub const PROB_TOL: f64 = 1e-12;

/// Total variation distance between two probability vectors.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Treatment arm. `Control` is `z = 0`, `Treatment` is `z = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Treatment,
}

impl Arm {
    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treatment => 1,
        }
    }

    pub fn from_bit(bit: bool) -> Arm {
        if bit {
            Arm::Treatment
        } else {
            Arm::Control
        }
    }
}

/// Per-time transition kernels for both arms.
///
/// Implementations either store dense matrices or compute rows on demand;
/// both satisfy the same interface and the exact oracle computations are
/// agnostic to the representation.
pub trait KernelSet: Send + Sync {
    fn num_states(&self) -> usize;
    /// Number of time steps `T`; kernels exist for `t = 0..T` (0-based).
    fn horizon(&self) -> usize;
    /// Writes the row `P_z^t(x, ·)` into `out` (length `num_states`).
    fn fill_row(&self, t: usize, arm: Arm, x: usize, out: &mut [f64]);
}

/// Dense kernel storage: `T × 2 × S × S` probabilities.
#[derive(Clone, Debug)]
pub struct DenseKernels {
    num_states: usize,
    horizon: usize,
    data: Vec<f64>,
}

impl DenseKernels {
    /// Allocates zeroed kernels; rows must be filled before use.
    pub fn zeros(num_states: usize, horizon: usize) -> Self {
        DenseKernels {
            num_states,
            horizon,
            data: vec![0.0; horizon * 2 * num_states * num_states],
        }
    }

    fn offset(&self, t: usize, arm: Arm, x: usize) -> usize {
        ((t * 2 + arm.index()) * self.num_states + x) * self.num_states
    }

    pub fn row(&self, t: usize, arm: Arm, x: usize) -> &[f64] {
        let o = self.offset(t, arm, x);
        &self.data[o..o + self.num_states]
    }

    pub fn row_mut(&mut self, t: usize, arm: Arm, x: usize) -> &mut [f64] {
        let o = self.offset(t, arm, x);
        let s = self.num_states;
        &mut self.data[o..o + s]
    }

    /// Checks that every row is a probability vector.
    pub fn validate(&self) -> Result<()> {
        for t in 0..self.horizon {
            for arm in [Arm::Control, Arm::Treatment] {
                for x in 0..self.num_states {
                    let row = self.row(t, arm, x);
                    if row.iter().any(|&p| p < 0.0) {
                        return Err(Error::Config(format!(
                            "kernel row (t={}, z={}, x={x}) has a negative entry",
                            t + 1,
                            arm.index()
                        )));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > PROB_TOL {
                        return Err(Error::Config(format!(
                            "kernel row (t={}, z={}, x={x}) sums to {sum}, not 1",
                            t + 1,
                            arm.index()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

impl KernelSet for DenseKernels {
    fn num_states(&self) -> usize {
        self.num_states
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn fill_row(&self, t: usize, arm: Arm, x: usize, out: &mut [f64]) {
        out.copy_from_slice(self.row(t, arm, x));
    }
}

/// Reward noise family around the mean reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardNoise {
    /// Deterministic rewards equal to the mean.
    None,
    /// Additive Gaussian noise with the given standard deviation. The reward
    /// is then unbounded, so the reported reward bound is approximate.
    Gaussian { std: f64 },
    /// Additive uniform noise on `[-half_width, half_width]`.
    UniformBounded { half_width: f64 },
    /// `Y ~ Bernoulli(mean)` with the mean clamped to `[0, 1]`.
    Bernoulli,
}

/// Mean reward function. The common case is a time-invariant `S × 2` table;
/// simulators whose mean outcome depends on the step (for example an
/// arrival-joined indicator in a queue with time-varying rates) provide a
/// callable instead.
#[derive(Clone)]
pub enum MeanRewards {
    Table(Vec<[f64; 2]>),
    TimeVarying(Arc<dyn RewardMeanFn>),
}

pub trait RewardMeanFn: Send + Sync {
    fn mean(&self, t: usize, x: usize, arm: Arm) -> f64;
    /// Upper bound on `|mean|` over all steps, states, and arms.
    fn bound(&self) -> f64;
}

/// Mean rewards plus a noise family.
#[derive(Clone)]
pub struct RewardModel {
    pub means: MeanRewards,
    pub noise: RewardNoise,
}

impl RewardModel {
    pub fn table(means: Vec<[f64; 2]>, noise: RewardNoise) -> Self {
        RewardModel {
            means: MeanRewards::Table(means),
            noise,
        }
    }

    pub fn mean(&self, t: usize, x: usize, arm: Arm) -> f64 {
        match &self.means {
            MeanRewards::Table(m) => m[x][arm.index()],
            MeanRewards::TimeVarying(f) => f.mean(t, x, arm),
        }
    }

    /// Reward bound `M` and whether it is approximate (true for Gaussian
    /// noise, where the bound covers four standard deviations).
    pub fn bound(&self) -> (f64, bool) {
        let mean_bound = match &self.means {
            MeanRewards::Table(m) => m
                .iter()
                .flat_map(|r| r.iter())
                .fold(0.0f64, |acc, v| acc.max(v.abs())),
            MeanRewards::TimeVarying(f) => f.bound(),
        };
        match self.noise {
            RewardNoise::None => (mean_bound, false),
            RewardNoise::Gaussian { std } => (mean_bound + 4.0 * std, true),
            RewardNoise::UniformBounded { half_width } => (mean_bound + half_width, false),
            RewardNoise::Bernoulli => (1.0, false),
        }
    }

    fn draw(&self, mean: f64, rng: &mut impl Rng) -> f64 {
        match self.noise {
            RewardNoise::None => mean,
            RewardNoise::Gaussian { std } => {
                let n = Normal::new(0.0, std).expect("valid std");
                mean + n.sample(rng)
            }
            RewardNoise::UniformBounded { half_width } => {
                mean + rng.random_range(-half_width..=half_width)
            }
            RewardNoise::Bernoulli => {
                let p = mean.clamp(0.0, 1.0);
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// A nonstationary finite-state environment: per-time kernels for both arms,
/// a reward model, and an initial state distribution.
#[derive(Clone)]
pub struct NonstationaryMdp {
    num_states: usize,
    horizon: usize,
    kernels: Arc<dyn KernelSet>,
    rewards: RewardModel,
    initial_dist: Vec<f64>,
}

impl std::fmt::Debug for NonstationaryMdp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NonstationaryMdp")
            .field("num_states", &self.num_states)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl NonstationaryMdp {
    /// Builds an environment, validating the initial distribution and, for
    /// dense kernels, every row. Generator-backed kernel sets are expected to
    /// be validated by their builders.
    pub fn new(
        kernels: Arc<dyn KernelSet>,
        rewards: RewardModel,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        let num_states = kernels.num_states();
        let horizon = kernels.horizon();
        if horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if initial_dist.len() != num_states {
            return Err(Error::Config(format!(
                "initial distribution has {} entries for {} states",
                initial_dist.len(),
                num_states
            )));
        }
        if initial_dist.iter().any(|&p| p < 0.0) {
            return Err(Error::Config("initial distribution has a negative entry".into()));
        }
        let sum: f64 = initial_dist.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::Config(format!(
                "initial distribution sums to {sum}, not 1"
            )));
        }
        if let MeanRewards::Table(m) = &rewards.means {
            if m.len() != num_states {
                return Err(Error::Config(format!(
                    "reward table has {} rows for {} states",
                    m.len(),
                    num_states
                )));
            }
        }
        Ok(NonstationaryMdp {
            num_states,
            horizon,
            kernels,
            rewards,
            initial_dist,
        })
    }

    pub fn from_dense(
        kernels: DenseKernels,
        rewards: RewardModel,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        kernels.validate()?;
        Self::new(Arc::new(kernels), rewards, initial_dist)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn rewards(&self) -> &RewardModel {
        &self.rewards
    }

    pub fn kernels(&self) -> &Arc<dyn KernelSet> {
        &self.kernels
    }

    pub fn fill_row(&self, t: usize, arm: Arm, x: usize, out: &mut [f64]) {
        self.kernels.fill_row(t, arm, x, out);
    }

    /// Mean reward vector `r_z(t, ·)` for one arm.
    pub fn reward_vec(&self, t: usize, arm: Arm) -> Vec<f64> {
        (0..self.num_states)
            .map(|x| self.rewards.mean(t, x, arm))
            .collect()
    }
}

/// Rule mapping a time step to a treatment probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AssignmentPolicy {
    AlwaysTreat,
    AlwaysControl,
    Bernoulli { theta: f64 },
    /// One Bernoulli(theta) draw per block of `interval_len` consecutive
    /// steps; block boundaries fall at steps 1, 1+L, 1+2L, ...
    Switchback { interval_len: usize, theta: f64 },
}

impl AssignmentPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AssignmentPolicy::AlwaysTreat | AssignmentPolicy::AlwaysControl => Ok(()),
            AssignmentPolicy::Bernoulli { theta } => {
                if theta > 0.0 && theta < 1.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "Bernoulli theta must lie in (0,1), got {theta}"
                    )))
                }
            }
            AssignmentPolicy::Switchback { interval_len, theta } => {
                if interval_len == 0 {
                    return Err(Error::Config("switchback interval must be >= 1".into()));
                }
                if theta > 0.0 && theta < 1.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "switchback theta must lie in (0,1), got {theta}"
                    )))
                }
            }
        }
    }

    /// Draws the full assignment sequence for a horizon, consuming the
    /// policy stream. Returns per-step arms and, for switchback designs,
    /// per-step block ids.
    pub fn draw_schedule(
        &self,
        horizon: usize,
        rng: &mut impl Rng,
    ) -> (Vec<Arm>, Option<Vec<u64>>) {
        match *self {
            AssignmentPolicy::AlwaysTreat => (vec![Arm::Treatment; horizon], None),
            AssignmentPolicy::AlwaysControl => (vec![Arm::Control; horizon], None),
            AssignmentPolicy::Bernoulli { theta } => (
                (0..horizon)
                    .map(|_| Arm::from_bit(rng.random::<f64>() < theta))
                    .collect(),
                None,
            ),
            AssignmentPolicy::Switchback { interval_len, theta } => {
                let mut arms = Vec::with_capacity(horizon);
                let mut blocks = Vec::with_capacity(horizon);
                let mut current = Arm::Control;
                for t in 0..horizon {
                    if t % interval_len == 0 {
                        current = Arm::from_bit(rng.random::<f64>() < theta);
                    }
                    arms.push(current);
                    blocks.push((t / interval_len) as u64);
                }
                (arms, Some(blocks))
            }
        }
    }
}

/// One realized path `(X_t, Z_t, Y_t)`, `t = 1..T`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<u32>,
    pub actions: Vec<Arm>,
    pub rewards: Vec<f64>,
    /// Seed the trajectory was generated from.
    pub seed: u64,
    /// Copy of the policy that produced the assignments; `None` when the
    /// schedule was supplied externally.
    pub policy: Option<AssignmentPolicy>,
    /// Per-step block ids for switchback designs (wall-clock blocks for
    /// event-indexed simulators).
    pub block_ids: Option<Vec<u64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Assignment/outcome view for state-free estimators.
    pub fn zy(&self) -> ZyView<'_> {
        ZyView {
            actions: &self.actions,
            rewards: &self.rewards,
        }
    }

    pub fn mean_reward(&self) -> f64 {
        if self.rewards.is_empty() {
            0.0
        } else {
            self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
        }
    }
}

/// Borrowed `(Z_t, Y_t)` sequences. The DQ estimator family accepts only
/// this view, which keeps it state-free by construction.
#[derive(Clone, Copy, Debug)]
pub struct ZyView<'a> {
    pub actions: &'a [Arm],
    pub rewards: &'a [f64],
}

impl<'a> ZyView<'a> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Samples an index from a probability row using a single uniform draw
/// (inverse CDF), so paired simulations with shared uniforms are coupled.
pub(crate) fn sample_row(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.len() - 1
}

/// Simulates one trajectory under an assignment policy.
///
/// Draws `X_1` from the initial distribution, then for each step assigns
/// `Z_t` per the policy, draws `Y_t` from the reward model at `(X_t, Z_t)`,
/// and advances the state through `P_{Z_t}^t`. The same `(env, policy,
/// seed)` always yields a bit-identical trajectory.
pub fn simulate(env: &NonstationaryMdp, policy: &AssignmentPolicy, seed: u64) -> Result<Trajectory> {
    policy.validate()?;
    let mut policy_rng = stream_rng(seed, StreamTag::Policy);
    let (arms, block_ids) = policy.draw_schedule(env.horizon(), &mut policy_rng);
    let mut traj = simulate_with_schedule(env, &arms, seed)?;
    traj.policy = Some(policy.clone());
    traj.block_ids = block_ids;
    Ok(traj)
}

/// Simulates one trajectory under an externally supplied assignment
/// schedule, which must match the environment horizon.
pub fn simulate_with_schedule(
    env: &NonstationaryMdp,
    schedule: &[Arm],
    seed: u64,
) -> Result<Trajectory> {
    let horizon = env.horizon();
    if schedule.len() != horizon {
        return Err(Error::Config(format!(
            "assignment schedule has {} steps but the environment horizon is {horizon}",
            schedule.len()
        )));
    }
    let mut transition_rng = stream_rng(seed, StreamTag::Transition);
    let mut reward_rng = stream_rng(seed, StreamTag::Reward);

    let s = env.num_states();
    let mut row = vec![0.0; s];
    let mut states = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);

    let mut x = sample_row(env.initial_dist(), transition_rng.random::<f64>());
    for (t, &arm) in schedule.iter().enumerate() {
        states.push(x as u32);
        let mean = env.rewards().mean(t, x, arm);
        rewards.push(env.rewards().draw(mean, &mut reward_rng));
        if t + 1 < horizon {
            env.fill_row(t, arm, x, &mut row);
            x = sample_row(&row, transition_rng.random::<f64>());
        }
    }

    Ok(Trajectory {
        states,
        actions: schedule.to_vec(),
        rewards,
        seed,
        policy: None,
        block_ids: None,
    })
}

/// Kernel deviation `δ`: the maximum total variation distance between the
/// treatment and control rows over all times and states.
pub fn kernel_deviation(env: &NonstationaryMdp) -> f64 {
    use rayon::prelude::*;
    let s = env.num_states();
    (0..env.horizon())
        .into_par_iter()
        .map(|t| {
            let mut r0 = vec![0.0; s];
            let mut r1 = vec![0.0; s];
            let mut worst = 0.0f64;
            for x in 0..s {
                env.fill_row(t, Arm::Control, x, &mut r0);
                env.fill_row(t, Arm::Treatment, x, &mut r1);
                worst = worst.max(tv_distance(&r0, &r1));
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

/// Dobrushin ergodicity coefficient: the maximum over times, arms, and state
/// pairs of the total variation distance between kernel rows. This is the
/// tightest one-step contraction factor for each kernel, maximized across
/// kernels.
pub fn dobrushin_coefficient(env: &NonstationaryMdp) -> f64 {
    use rayon::prelude::*;
    let s = env.num_states();
    (0..env.horizon())
        .into_par_iter()
        .map(|t| {
            let mut rows = vec![0.0; s * s];
            let mut worst = 0.0f64;
            for arm in [Arm::Control, Arm::Treatment] {
                for x in 0..s {
                    env.fill_row(t, arm, x, &mut rows[x * s..(x + 1) * s]);
                }
                for i in 0..s {
                    for j in (i + 1)..s {
                        let tv = tv_distance(&rows[i * s..(i + 1) * s], &rows[j * s..(j + 1) * s]);
                        worst = worst.max(tv);
                        if worst >= 1.0 {
                            return 1.0;
                        }
                    }
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

/// Estimator identification and result for one trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimateReport {
    /// Estimator name plus non-`k` parameters, e.g. `switchback_bc[b=20]`.
    pub estimator_id: String,
    /// Truncation size for the DQ family, if applicable.
    pub param_k: Option<usize>,
    pub point_estimate: f64,
    /// Horizon of the trajectory the estimate was computed from.
    pub horizon: usize,
    pub seed: u64,
    /// Optional counters such as effective sample sizes or fitting fallbacks.
    pub diagnostics: Option<BTreeMap<String, f64>>,
}

impl EstimateReport {
    /// One CSV row: `estimator_id,params,estimate,seed,T`.
    pub fn csv_row(&self) -> String {
        let params = match self.param_k {
            Some(k) => format!("k={k}"),
            None => String::new(),
        };
        format!(
            "{},{},{},{},{}",
            self.estimator_id, params, self.point_estimate, self.seed, self.horizon
        )
    }
}
