//! JSON run configuration for the command-line harness.
//!
//! Configs are strict: unknown fields are rejected, and parse errors carry
//! serde_json's line/column diagnostics. Parsing then re-serializing a
//! config is idempotent.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::env::AssignmentPolicy;
use crate::envs::{
    default_rate_table, load_rate_table, QueueConfig, QueueReward, RideshareConfig, TwoStateConfig,
};
use crate::error::{Error, Result};

fn default_true() -> bool {
    true
}

fn default_mc_reps() -> u64 {
    200
}

fn default_j_thetas() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}

fn default_k_grid() -> Vec<usize> {
    vec![0, 1, 3, 5, 10]
}

/// Serializable queueing section; the rate table comes from a CSV path or
/// the bundled default.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueueSpec {
    pub max_queue_len: usize,
    pub service_rate: f64,
    /// Path to a `day,bin,rate` CSV; `null` selects the bundled table.
    pub rate_table_path: Option<PathBuf>,
    pub weekly_multipliers: Vec<f64>,
    pub treatment_p: f64,
    pub control_p: f64,
    pub step_minutes: usize,
    pub weeks: usize,
    pub reward: QueueReward,
}

impl Default for QueueSpec {
    fn default() -> Self {
        let d = QueueConfig::defaults(default_rate_table());
        QueueSpec {
            max_queue_len: d.max_queue_len,
            service_rate: d.service_rate,
            rate_table_path: None,
            weekly_multipliers: d.weekly_multipliers,
            treatment_p: d.treatment_p,
            control_p: d.control_p,
            step_minutes: d.step_minutes,
            weeks: d.weeks,
            reward: d.reward,
        }
    }
}

impl QueueSpec {
    pub fn to_config(&self) -> Result<QueueConfig> {
        let rate_table = match &self.rate_table_path {
            Some(p) => load_rate_table(p)?,
            None => default_rate_table(),
        };
        Ok(QueueConfig {
            max_queue_len: self.max_queue_len,
            service_rate: self.service_rate,
            rate_table,
            weekly_multipliers: self.weekly_multipliers.clone(),
            treatment_p: self.treatment_p,
            control_p: self.control_p,
            step_minutes: self.step_minutes,
            weeks: self.weeks,
            reward: self.reward,
        })
    }
}

/// Environment section.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "snake_case")]
pub enum EnvConfig {
    TwoState(TwoStateConfig),
    Queueing(QueueSpec),
    Rideshare(RideshareConfig),
}

/// One estimator request. `theta` defaults to the design's treatment
/// probability.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorConfig {
    Dm {
        #[serde(default)]
        theta: Option<f64>,
    },
    TruncatedDq {
        k: Vec<usize>,
        #[serde(default)]
        theta: Option<f64>,
    },
    UntruncatedDq {
        #[serde(default)]
        theta: Option<f64>,
    },
    SwitchbackBc {
        burn_in: usize,
    },
    TruncatedDqBlocks {
        k: Vec<usize>,
        #[serde(default)]
        theta: Option<f64>,
    },
    StationaryModel {
        mode: StationaryModeConfig,
    },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum StationaryModeConfig {
    ModelOpe,
    StationaryDq,
}

/// Ground-truth section.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub method: TruthMethodConfig,
    /// Replications for Monte Carlo truth.
    #[serde(default = "default_mc_reps")]
    pub reps: u64,
    /// Recompute truth for every trial (required when the environment is
    /// regenerated per trial).
    #[serde(default = "default_true")]
    pub per_trial: bool,
    /// Common random numbers across the two arms of Monte Carlo truth.
    #[serde(default = "default_true")]
    pub paired: bool,
    /// θ grid for the J(θ) curve in truth bundles.
    #[serde(default = "default_j_thetas")]
    pub theta_grid: Vec<f64>,
    /// k grid for truncated values/gradients in truth bundles.
    #[serde(default = "default_k_grid")]
    pub k_grid: Vec<usize>,
    /// Also emit per-step Q-values in truth bundles.
    #[serde(default)]
    pub per_step_q: bool,
}

impl Default for TruthConfig {
    fn default() -> Self {
        TruthConfig {
            method: TruthMethodConfig::Exact,
            reps: default_mc_reps(),
            per_trial: true,
            paired: true,
            theta_grid: default_j_thetas(),
            k_grid: default_k_grid(),
            per_step_q: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum TruthMethodConfig {
    Exact,
    Mc,
}

/// Full harness configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub design: AssignmentPolicy,
    pub estimators: Vec<EstimatorConfig>,
    pub replications: u64,
    pub master_seed: u64,
    #[serde(default)]
    pub truth: TruthConfig,
    /// Rebuild the environment with a fresh seed for every replication.
    #[serde(default)]
    pub regenerate_env_per_trial: bool,
}

impl RunConfig {
    /// Parses and validates a JSON config.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        if self.replications == 0 {
            return Err(Error::Config("need at least one replication".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("need at least one estimator".into()));
        }
        let horizon = match &self.env {
            EnvConfig::TwoState(c) => c.horizon,
            EnvConfig::Queueing(q) => q.to_config()?.horizon(),
            EnvConfig::Rideshare(r) => r.num_arrivals,
        };
        for est in &self.estimators {
            if let EstimatorConfig::TruncatedDq { k, .. } = est {
                if let Some(&bad) = k.iter().find(|&&k| k + 1 > horizon) {
                    return Err(Error::Config(format!(
                        "truncation k={bad} out of range for horizon {horizon}"
                    )));
                }
            }
        }
        if matches!(self.env, EnvConfig::Rideshare(_))
            && self.truth.method == TruthMethodConfig::Exact
        {
            return Err(Error::Config(
                "exact truth is unavailable for the ride-share simulator; use method \"mc\""
                    .into(),
            ));
        }
        Ok(())
    }
}
