//! Discrete-time queueing birth-death chain with nonstationary, state-
//! dependent arrivals.
//!
//! Continuous-time arrivals and services are uniformized into fixed steps of
//! `Δ` minutes. From state `k` at minute `m` (week `w`, day `d`, half-hour
//! bin `b`) the arrival rate per hour is
//!
//! ```text
//! λ = (8 - 4p) / (1 + k/5) · a_w · b_{d,b}
//! ```
//!
//! so the up-transition probability is `λ·Δ/60`, the down-transition
//! probability is `μ·Δ/60` for `k > 0`, and the remainder is a self-loop.
//! The arm selects `p` (treatment damps arrivals when `treatment_p >
//! control_p`). The state is capped at `max_queue_len`, where the arrival
//! probability is forced to zero. Kernels are exposed through the
//! generator-function representation; a four-week horizon at one-minute
//! steps would need gigabytes if stored densely.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{
    Arm, KernelSet, MeanRewards, NonstationaryMdp, RewardMeanFn, RewardModel, RewardNoise,
};
use crate::error::{Error, Result};

use super::rates::RateTable;

const MINUTES_PER_WEEK: usize = 7 * 24 * 60;

/// Outcome definition for the queueing study. The underlying study never
/// pins one down, so it is configurable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueReward {
    /// `Y_t = -X_t`: negative queue length, a congestion cost.
    NegQueueLen,
    /// `Y_t = 1` if an arrival joined at step `t` (Bernoulli with the
    /// current arrival probability).
    ArrivalJoined,
}

#[derive(Clone, Debug)]
pub struct QueueConfig {
    /// State cap `K_max`; the chain lives on `0..=K_max`.
    pub max_queue_len: usize,
    /// Service rate `μ` in completions per hour.
    pub service_rate: f64,
    /// Base arrival rates `b_{d,t}` in arrivals per hour.
    pub rate_table: RateTable,
    /// Weekly multipliers `a_w`; must cover `weeks`.
    pub weekly_multipliers: Vec<f64>,
    /// Arrival-formula scalar `p` under treatment.
    pub treatment_p: f64,
    /// Arrival-formula scalar `p` under control.
    pub control_p: f64,
    /// Uniformization step `Δ` in minutes; must divide a week.
    pub step_minutes: usize,
    pub weeks: usize,
    pub reward: QueueReward,
}

impl QueueConfig {
    /// Paper-calibrated defaults: `μ = 20`, `p = 1.75` vs `0.25`, one-minute
    /// steps, four weeks, the bundled rate table, and the congestion-cost
    /// reward.
    pub fn defaults(rate_table: RateTable) -> Self {
        QueueConfig {
            max_queue_len: 50,
            service_rate: 20.0,
            rate_table,
            weekly_multipliers: vec![0.9, 1.0, 1.1, 1.2],
            treatment_p: 1.75,
            control_p: 0.25,
            step_minutes: 1,
            weeks: 4,
            reward: QueueReward::NegQueueLen,
        }
    }

    pub fn horizon(&self) -> usize {
        self.weeks * MINUTES_PER_WEEK / self.step_minutes
    }
}

#[derive(Clone)]
struct QueueKernels {
    num_states: usize,
    horizon: usize,
    step_minutes: usize,
    service_rate: f64,
    rate_table: RateTable,
    weekly_multipliers: Vec<f64>,
    p_by_arm: [f64; 2],
}

impl QueueKernels {
    fn base_rate(&self, t: usize) -> f64 {
        let minute = t * self.step_minutes;
        let week = minute / MINUTES_PER_WEEK;
        let day = (minute % MINUTES_PER_WEEK) / (24 * 60);
        let bin = (minute % (24 * 60)) / 30;
        self.weekly_multipliers[week] * self.rate_table.rate(day, bin)
    }

    /// Per-step arrival probability from state `k` under arm `z`.
    fn up_prob(&self, t: usize, arm: Arm, k: usize) -> f64 {
        if k >= self.num_states - 1 {
            return 0.0;
        }
        let p = self.p_by_arm[arm.index()];
        let lambda = (8.0 - 4.0 * p) / (1.0 + k as f64 / 5.0) * self.base_rate(t);
        lambda * self.step_minutes as f64 / 60.0
    }

    fn down_prob(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.service_rate * self.step_minutes as f64 / 60.0
        }
    }
}

impl KernelSet for QueueKernels {
    fn num_states(&self) -> usize {
        self.num_states
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn fill_row(&self, t: usize, arm: Arm, x: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let up = self.up_prob(t, arm, x);
        let down = self.down_prob(x);
        if x > 0 {
            out[x - 1] = down;
        }
        if x + 1 < self.num_states {
            out[x + 1] = up;
        }
        out[x] = 1.0 - up - down;
    }
}

struct ArrivalJoinedReward {
    kernels: Arc<QueueKernels>,
}

impl RewardMeanFn for ArrivalJoinedReward {
    fn mean(&self, t: usize, x: usize, arm: Arm) -> f64 {
        // Joining probability this step; the cap at K_max mirrors the
        // kernel, where a full queue admits nobody.
        self.kernels.up_prob(t, arm, x)
    }

    fn bound(&self) -> f64 {
        1.0
    }
}

/// Builds the queueing environment, checking uniformization validity for
/// both arms over the whole horizon. The chain starts empty.
pub fn build_queue(config: &QueueConfig) -> Result<NonstationaryMdp> {
    if config.max_queue_len == 0 {
        return Err(Error::Config("max queue length must be at least 1".into()));
    }
    if config.step_minutes == 0 || MINUTES_PER_WEEK % config.step_minutes != 0 {
        return Err(Error::Config(format!(
            "step of {} minutes must divide a week",
            config.step_minutes
        )));
    }
    if config.weeks == 0 {
        return Err(Error::Config("need at least one week".into()));
    }
    if config.weekly_multipliers.len() < config.weeks {
        return Err(Error::Config(format!(
            "{} weekly multipliers for {} weeks",
            config.weekly_multipliers.len(),
            config.weeks
        )));
    }
    if config.service_rate < 0.0 {
        return Err(Error::Config("service rate must be nonnegative".into()));
    }

    let num_states = config.max_queue_len + 1;
    let kernels = Arc::new(QueueKernels {
        num_states,
        horizon: config.horizon(),
        step_minutes: config.step_minutes,
        service_rate: config.service_rate,
        rate_table: config.rate_table.clone(),
        weekly_multipliers: config.weekly_multipliers.clone(),
        p_by_arm: [config.control_p, config.treatment_p],
    });

    // Uniformization validity: the worst per-step total exit probability is
    // attained either at k = 0 (no service) or k = 1 (service plus the
    // second-largest arrival probability).
    for t in 0..kernels.horizon {
        for arm in [Arm::Control, Arm::Treatment] {
            for k in [0usize, 1] {
                if k >= num_states {
                    continue;
                }
                let prob = kernels.up_prob(t, arm, k) + kernels.down_prob(k);
                if prob > 1.0 {
                    return Err(Error::Uniformization { t: t + 1, state: k, prob });
                }
            }
        }
    }

    let mut initial = vec![0.0; num_states];
    initial[0] = 1.0;

    let rewards = match config.reward {
        QueueReward::NegQueueLen => RewardModel::table(
            (0..num_states).map(|k| [-(k as f64); 2]).collect(),
            RewardNoise::None,
        ),
        QueueReward::ArrivalJoined => RewardModel {
            means: MeanRewards::TimeVarying(Arc::new(ArrivalJoinedReward {
                kernels: kernels.clone(),
            })),
            noise: RewardNoise::Bernoulli,
        },
    };

    NonstationaryMdp::new(kernels, rewards, initial)
}
