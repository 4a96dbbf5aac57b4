//! Event-indexed ride-sharing marketplace: riders arrive by a nonstationary
//! Poisson process, see a price and pickup ETA, and accept or reject via a
//! logistic choice model. Accepted trips dispatch the nearest available
//! driver and pay `price = rate · trip seconds`; rejections pay zero.
//!
//! One trajectory step per rider arrival. There is no finite kernel
//! representation, so ground truth for this system is Monte Carlo only.
//! Travel times are Manhattan grid distance divided by speed, rounded up to
//! whole minutes; prices and ETAs enter the choice model in seconds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Arm, AssignmentPolicy, Trajectory};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, StreamTag};
use crate::truth::ArmMeanSampler;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChoiceWeights {
    pub price: f64,
    pub eta: f64,
    pub intercept: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RideshareConfig {
    /// Square grid side length in cells.
    pub grid_size: usize,
    pub num_drivers: usize,
    /// Mean rider arrivals per minute at profile level 1.
    pub base_arrival_rate: f64,
    /// 24 hourly multipliers applied cyclically to the base rate.
    pub hourly_profile: Vec<f64>,
    pub choice: ChoiceWeights,
    /// Fare per trip-second under control.
    pub control_price_rate: f64,
    /// Fare per trip-second under treatment.
    pub treatment_price_rate: f64,
    /// Driver speed in cells per minute.
    pub speed: f64,
    /// Number of rider arrivals to simulate (event-indexed horizon).
    pub num_arrivals: usize,
}

impl Default for RideshareConfig {
    fn default() -> Self {
        RideshareConfig {
            grid_size: 20,
            num_drivers: 100,
            base_arrival_rate: 8.0,
            hourly_profile: vec![
                0.45, 0.35, 0.3, 0.3, 0.35, 0.5, 0.8, 1.2, 1.5, 1.3, 1.1, 1.05, 1.1, 1.05, 1.0,
                1.05, 1.2, 1.5, 1.65, 1.5, 1.25, 1.0, 0.8, 0.6,
            ],
            choice: ChoiceWeights {
                price: -0.3,
                eta: -0.005,
                intercept: 4.0,
            },
            control_price_rate: 0.01,
            treatment_price_rate: 0.02,
            speed: 2.0,
            num_arrivals: 50_000,
        }
    }
}

impl RideshareConfig {
    fn validate(&self) -> Result<()> {
        if self.num_drivers == 0 {
            return Err(Error::Config("ride-share needs at least one driver".into()));
        }
        if self.grid_size == 0 {
            return Err(Error::Config("grid size must be at least 1".into()));
        }
        if self.num_arrivals == 0 {
            return Err(Error::Config("need at least one arrival".into()));
        }
        if self.speed <= 0.0 {
            return Err(Error::Config("speed must be positive".into()));
        }
        if self.hourly_profile.len() != 24 {
            return Err(Error::Config(format!(
                "hourly profile needs 24 entries, got {}",
                self.hourly_profile.len()
            )));
        }
        if self.hourly_profile.iter().any(|&m| m < 0.0) {
            return Err(Error::Config("hourly profile entries must be nonnegative".into()));
        }
        let peak = self.base_arrival_rate
            * self.hourly_profile.iter().fold(0.0f64, |a, &b| a.max(b));
        if peak <= 0.0 {
            return Err(Error::Config("arrival rate must be positive somewhere".into()));
        }
        Ok(())
    }

    fn price_rate(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Control => self.control_price_rate,
            Arm::Treatment => self.treatment_price_rate,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
struct Cell {
    x: i64,
    y: i64,
}

/// Travel time in whole minutes: Manhattan distance over speed, rounded up.
fn travel_minutes(a: Cell, b: Cell, speed: f64) -> f64 {
    let dist = ((a.x - b.x).abs() + (a.y - b.y).abs()) as f64;
    (dist / speed).ceil()
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn draw_cell(grid: usize, rng: &mut impl Rng) -> Cell {
    Cell {
        x: (rng.random::<f64>() * grid as f64) as i64,
        y: (rng.random::<f64>() * grid as f64) as i64,
    }
}

/// Simulates one event-indexed trajectory.
///
/// The state recorded per event is the number of available drivers at the
/// arrival instant. Switchback blocks are defined in wall-clock minutes and
/// the per-event block id is recorded for the block estimators.
pub fn simulate_rideshare(
    config: &RideshareConfig,
    policy: &AssignmentPolicy,
    seed: u64,
) -> Result<Trajectory> {
    config.validate()?;
    policy.validate()?;
    let mut transition_rng = stream_rng(seed, StreamTag::Transition);
    let mut policy_rng = stream_rng(seed, StreamTag::Policy);

    let n = config.num_arrivals;
    let peak_rate = config.base_arrival_rate
        * config.hourly_profile.iter().fold(0.0f64, |a, &b| a.max(b));

    let mut positions: Vec<Cell> = (0..config.num_drivers)
        .map(|_| draw_cell(config.grid_size, &mut transition_rng))
        .collect();
    let mut busy_until = vec![0.0f64; config.num_drivers];

    let mut states = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    let mut block_ids_out = Vec::with_capacity(n);

    // Switchback assignments are drawn per wall-clock block, in block order,
    // independent of the event pattern.
    let (interval_len, theta, is_switchback) = match *policy {
        AssignmentPolicy::Switchback { interval_len, theta } => (interval_len, theta, true),
        AssignmentPolicy::Bernoulli { theta } => (0, theta, false),
        AssignmentPolicy::AlwaysTreat => (0, 2.0, false),
        AssignmentPolicy::AlwaysControl => (0, -1.0, false),
    };
    let mut next_block_to_draw: u64 = 0;
    let mut block_arm = Arm::Control;

    let mut now = 0.0f64; // minutes
    for _ in 0..n {
        // Next arrival by thinning a rate-`peak_rate` Poisson process.
        loop {
            let u: f64 = transition_rng.random();
            now += -(1.0 - u).ln() / peak_rate;
            let hour = ((now / 60.0) as usize) % 24;
            let rate = config.base_arrival_rate * config.hourly_profile[hour];
            let accept: f64 = transition_rng.random();
            if accept * peak_rate < rate {
                break;
            }
        }

        let pickup = draw_cell(config.grid_size, &mut transition_rng);
        let mut dropoff = draw_cell(config.grid_size, &mut transition_rng);
        while dropoff == pickup {
            dropoff = draw_cell(config.grid_size, &mut transition_rng);
        }
        let choice_u: f64 = transition_rng.random();

        let arm = if is_switchback {
            let block = (now / interval_len as f64) as u64;
            while next_block_to_draw <= block {
                block_arm = Arm::from_bit(policy_rng.random::<f64>() < theta);
                next_block_to_draw += 1;
            }
            block_ids_out.push(block);
            block_arm
        } else {
            match *policy {
                AssignmentPolicy::AlwaysTreat => Arm::Treatment,
                AssignmentPolicy::AlwaysControl => Arm::Control,
                _ => Arm::from_bit(policy_rng.random::<f64>() < theta),
            }
        };

        let available: Vec<usize> = (0..config.num_drivers)
            .filter(|&d| busy_until[d] <= now)
            .collect();
        states.push(available.len() as u32);
        actions.push(arm);

        if available.is_empty() {
            rewards.push(0.0);
            continue;
        }

        let eta_minutes = available
            .iter()
            .map(|&d| travel_minutes(positions[d], pickup, config.speed))
            .fold(f64::INFINITY, f64::min);
        let trip_minutes = travel_minutes(pickup, dropoff, config.speed);
        let price = config.price_rate(arm) * trip_minutes * 60.0;
        let p_accept = sigmoid(
            config.choice.price * price
                + config.choice.eta * eta_minutes * 60.0
                + config.choice.intercept,
        );

        if choice_u < p_accept {
            // Nearest available driver by squared Euclidean distance, ties
            // broken by the lowest index.
            let mut best = available[0];
            let mut best_d2 = i64::MAX;
            for &d in &available {
                let dx = positions[d].x - pickup.x;
                let dy = positions[d].y - pickup.y;
                let d2 = dx * dx + dy * dy;
                if d2 < best_d2 {
                    best_d2 = d2;
                    best = d;
                }
            }
            let pickup_leg = travel_minutes(positions[best], pickup, config.speed);
            busy_until[best] = now + pickup_leg + trip_minutes;
            positions[best] = dropoff;
            rewards.push(price);
        } else {
            rewards.push(0.0);
        }
    }

    Ok(Trajectory {
        states,
        actions,
        rewards,
        seed,
        policy: Some(policy.clone()),
        block_ids: if is_switchback { Some(block_ids_out) } else { None },
    })
}

impl ArmMeanSampler for RideshareConfig {
    fn arm_mean(&self, arm: Arm, sim_seed: u64) -> Result<f64> {
        let policy = match arm {
            Arm::Treatment => AssignmentPolicy::AlwaysTreat,
            Arm::Control => AssignmentPolicy::AlwaysControl,
        };
        Ok(simulate_rideshare(self, &policy, sim_seed)?.mean_reward())
    }
}

/// Per-event decile (0..=9) of the block-averaged available-driver count,
/// the state representation used by state-based baselines on switchback
/// data.
pub fn block_average_driver_deciles(states: &[u32], block_ids: &[u64]) -> Result<Vec<u32>> {
    if states.len() != block_ids.len() || states.is_empty() {
        return Err(Error::Estimation("states and block ids must align".into()));
    }
    let mut block_means: Vec<(u64, f64)> = Vec::new();
    let mut start = 0usize;
    for i in 1..=states.len() {
        if i == states.len() || block_ids[i] != block_ids[start] {
            let mean = states[start..i].iter().map(|&s| s as f64).sum::<f64>()
                / (i - start) as f64;
            block_means.push((block_ids[start], mean));
            start = i;
        }
    }
    let mut sorted: Vec<f64> = block_means.iter().map(|&(_, m)| m).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let decile_of = |m: f64| -> u32 {
        let rank = sorted.partition_point(|&v| v <= m);
        (((rank - 1) * 10) / sorted.len().max(1)).min(9) as u32
    };
    let mut lookup = std::collections::BTreeMap::new();
    for &(id, m) in &block_means {
        lookup.insert(id, decile_of(m));
    }
    Ok(block_ids.iter().map(|id| lookup[id]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::truth::mc_gate;

    fn small_config() -> RideshareConfig {
        RideshareConfig {
            grid_size: 10,
            num_drivers: 12,
            base_arrival_rate: 2.0,
            num_arrivals: 2_000,
            ..RideshareConfig::default()
        }
    }

    #[test]
    fn travel_time_symmetric_zero_diagonal() {
        let a = Cell { x: 3, y: 7 };
        let b = Cell { x: 9, y: 2 };
        assert_eq!(travel_minutes(a, b, 2.0), travel_minutes(b, a, 2.0));
        assert_eq!(travel_minutes(a, a, 2.0), 0.0);
        // ceil(11 / 2) = 6.
        assert_eq!(travel_minutes(a, b, 2.0), 6.0);
    }

    #[test]
    fn zero_drivers_rejected() {
        let cfg = RideshareConfig {
            num_drivers: 0,
            ..RideshareConfig::default()
        };
        assert!(simulate_rideshare(&cfg, &AssignmentPolicy::AlwaysTreat, 1).is_err());
    }

    #[test]
    fn deterministic_and_reward_is_sum_of_accepted_prices() {
        let cfg = small_config();
        let policy = AssignmentPolicy::Bernoulli { theta: 0.5 };
        let a = simulate_rideshare(&cfg, &policy, 42).unwrap();
        let b = simulate_rideshare(&cfg, &policy, 42).unwrap();
        assert_eq!(a.rewards, b.rewards);
        assert_eq!(a.states, b.states);
        assert_eq!(a.len(), 2_000);
        // Every reward is either zero or a positive price.
        assert!(a.rewards.iter().all(|&r| r >= 0.0));
        assert!(a.rewards.iter().any(|&r| r > 0.0));
        // Acceptance decreases in price: treated events pay double the rate,
        // so their acceptance fraction must be lower.
        let frac = |arm: Arm| {
            let (acc, tot) = a
                .actions
                .iter()
                .zip(&a.rewards)
                .filter(|(z, _)| **z == arm)
                .fold((0usize, 0usize), |(acc, tot), (_, &r)| {
                    (acc + (r > 0.0) as usize, tot + 1)
                });
            acc as f64 / tot as f64
        };
        assert!(frac(Arm::Treatment) < frac(Arm::Control));
    }

    #[test]
    fn identical_price_rates_give_zero_paired_gate() {
        let cfg = RideshareConfig {
            treatment_price_rate: 0.01,
            num_arrivals: 500,
            ..small_config()
        };
        let est = mc_gate(&cfg, 4, 3, true).unwrap();
        assert_eq!(est.estimate, 0.0);
    }

    #[test]
    fn switchback_blocks_follow_wall_clock() {
        let cfg = small_config();
        let policy = AssignmentPolicy::Switchback {
            interval_len: 10,
            theta: 0.5,
        };
        let traj = simulate_rideshare(&cfg, &policy, 9).unwrap();
        let blocks = traj.block_ids.as_ref().unwrap();
        assert_eq!(blocks.len(), traj.len());
        // Block ids are nondecreasing and assignments are block-constant.
        for i in 1..blocks.len() {
            assert!(blocks[i] >= blocks[i - 1]);
            if blocks[i] == blocks[i - 1] {
                assert_eq!(traj.actions[i], traj.actions[i - 1]);
            }
        }
        let distinct: std::collections::BTreeSet<u64> = blocks.iter().copied().collect();
        assert!(distinct.len() > 10, "expected many blocks, got {}", distinct.len());
    }

    #[test]
    fn single_driver_dispatch_trace() {
        // One driver, huge acceptance intercept: riders accept whenever the
        // driver is free, so the busy window and prices can be traced by
        // hand from the realized pickups and dropoffs.
        let cfg = RideshareConfig {
            grid_size: 6,
            num_drivers: 1,
            base_arrival_rate: 1.0,
            hourly_profile: vec![1.0; 24],
            choice: ChoiceWeights {
                price: 0.0,
                eta: 0.0,
                intercept: 50.0,
            },
            control_price_rate: 0.01,
            treatment_price_rate: 0.01,
            speed: 1.0,
            num_arrivals: 3,
        };
        let traj = simulate_rideshare(&cfg, &AssignmentPolicy::AlwaysControl, 7).unwrap();
        assert_eq!(traj.len(), 3);
        // With one driver, an event either finds it available (state 1) or
        // busy (state 0, reward forced to zero).
        for i in 0..3 {
            match traj.states[i] {
                1 => assert!(traj.rewards[i] > 0.0, "free driver must be dispatched"),
                0 => assert_eq!(traj.rewards[i], 0.0, "busy driver cannot serve"),
                s => panic!("impossible availability {s}"),
            }
        }
        // Prices are rate * 60 * whole trip minutes.
        for &r in &traj.rewards {
            if r > 0.0 {
                let minutes = r / 0.6;
                assert!((minutes - minutes.round()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deciles_cover_range() {
        let states: Vec<u32> = (0..100).map(|i| (i / 10) as u32).collect();
        let blocks: Vec<u64> = (0..100).map(|i| (i / 5) as u64).collect();
        let deciles = block_average_driver_deciles(&states, &blocks).unwrap();
        assert_eq!(deciles.len(), 100);
        assert!(deciles.iter().all(|&d| d <= 9));
        assert!(deciles.iter().any(|&d| d == 0));
        assert!(deciles.iter().any(|&d| d == 9));
    }
}
