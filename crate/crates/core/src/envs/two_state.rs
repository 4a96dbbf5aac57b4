//! Two-state nonstationary chain driven by a mean-reverting autoregressive
//! process on the kernel rows.
//!
//! For each state `x`, the control row starts at an anchor distribution
//! `μ_x` and evolves as `P_0^t(x,·) ∝ α P_0^{t-1}(x,·) + (1-α) μ_x + ε`
//! with i.i.d. Gaussian noise per entry, clipped at zero and renormalized.
//! The two anchors are `[(1+γ)/2, (1-γ)/2]` and its swap, assigned to the
//! states in random order, so their total variation distance is exactly the
//! configured mixing parameter `γ`. The treatment row moves `δ` of
//! probability mass toward state 1 (clipped and renormalized), which keeps
//! the realized kernel deviation at most `δ`.
//!
//! Mean rewards are drawn once per build (standard normal per state/arm
//! pair); trajectories add Gaussian reward noise at simulation time.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{Arm, DenseKernels, NonstationaryMdp, RewardModel, RewardNoise};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, StreamTag};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoStateConfig {
    /// Mean reversion rate `α` of the kernel-row autoregression.
    pub mean_reversion: f64,
    /// Target mixing level `γ`: the total variation distance between the
    /// two anchor rows.
    pub target_mixing: f64,
    /// Probability mass `δ` the treatment kernel moves toward state 1.
    pub kernel_shift: f64,
    /// Standard deviation `σ_ε` of the per-entry kernel noise.
    pub noise_std: f64,
    /// Standard deviation `σ_r` of the reward noise.
    pub reward_std: f64,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for TwoStateConfig {
    fn default() -> Self {
        TwoStateConfig {
            mean_reversion: 0.5,
            target_mixing: 0.5,
            kernel_shift: 0.1,
            noise_std: 0.1,
            reward_std: 0.1,
            horizon: 5000,
            seed: 0,
        }
    }
}

impl TwoStateConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.target_mixing) {
            return Err(Error::Config(format!(
                "target mixing must lie in [0,1), got {}",
                self.target_mixing
            )));
        }
        if !(0.0..=1.0).contains(&self.kernel_shift) {
            return Err(Error::Config(format!(
                "kernel shift must lie in [0,1], got {}",
                self.kernel_shift
            )));
        }
        if !(0.0..=1.0).contains(&self.mean_reversion) {
            return Err(Error::Config(format!(
                "mean reversion must lie in [0,1], got {}",
                self.mean_reversion
            )));
        }
        if self.noise_std < 0.0 || self.reward_std < 0.0 {
            return Err(Error::Config("noise levels must be nonnegative".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

fn clip_normalize(row: &mut [f64; 2], fallback: [f64; 2]) {
    row[0] = row[0].max(0.0);
    row[1] = row[1].max(0.0);
    let sum = row[0] + row[1];
    if sum <= f64::EPSILON {
        *row = fallback;
    } else {
        row[0] /= sum;
        row[1] /= sum;
    }
}

/// Builds the two-state environment. Deterministic in `config.seed`.
pub fn build_two_state(config: &TwoStateConfig) -> Result<NonstationaryMdp> {
    config.validate()?;
    let gamma = config.target_mixing;
    let delta = config.kernel_shift;
    let alpha = config.mean_reversion;
    let horizon = config.horizon;
    let mut rng = stream_rng(config.seed, StreamTag::EnvGen);

    // Anchor rows with TV(mu_0, mu_1) = gamma, assigned in random order.
    let up = [(1.0 + gamma) / 2.0, (1.0 - gamma) / 2.0];
    let down = [up[1], up[0]];
    let (mu0, mu1) = if rng.random::<f64>() < 0.5 {
        (up, down)
    } else {
        (down, up)
    };
    let mu = [mu0, mu1];

    let reward_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut reward_means = vec![[0.0f64; 2]; 2];
    for row in reward_means.iter_mut() {
        for cell in row.iter_mut() {
            *cell = reward_normal.sample(&mut rng);
        }
    }

    let mut kernels = DenseKernels::zeros(2, horizon);
    let mut control = [mu0, mu1];
    let noise = if config.noise_std > 0.0 {
        Some(Normal::new(0.0, config.noise_std).expect("valid noise std"))
    } else {
        None
    };
    for t in 0..horizon {
        if t > 0 {
            for x in 0..2 {
                let mut raw = [0.0f64; 2];
                for j in 0..2 {
                    let eps = noise.map_or(0.0, |n| n.sample(&mut rng));
                    raw[j] = alpha * control[x][j] + (1.0 - alpha) * mu[x][j] + eps;
                }
                clip_normalize(&mut raw, mu[x]);
                control[x] = raw;
            }
        }
        for x in 0..2 {
            kernels
                .row_mut(t, Arm::Control, x)
                .copy_from_slice(&control[x]);
            // Move delta of mass toward state 1, clipping at zero. Applying
            // the realized shift to both entries keeps the row sum within
            // one rounding of the control row's and makes delta = 0
            // reproduce the control row bit for bit.
            let shift = delta.min(control[x][0]);
            let row = [control[x][0] - shift, control[x][1] + shift];
            kernels.row_mut(t, Arm::Treatment, x).copy_from_slice(&row);
        }
    }

    let noise_model = if config.reward_std > 0.0 {
        RewardNoise::Gaussian {
            std: config.reward_std,
        }
    } else {
        RewardNoise::None
    };
    NonstationaryMdp::from_dense(
        kernels,
        RewardModel::table(reward_means, noise_model),
        vec![0.5, 0.5],
    )
}
