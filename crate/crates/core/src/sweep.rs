//! Seeded replication harness: build (or rebuild) the environment, simulate
//! the experimental design, run every configured estimator, attach
//! per-trial ground truth, and summarize.
//!
//! Replications run in parallel; every random stream is derived from
//! `(master_seed, purpose, replication)`, and records are assembled in
//! replication order, so outputs are byte-identical regardless of the
//! thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{summarize_sweep, SweepPoint, SweepSummaryRow};
use crate::config::{
    EnvConfig, EstimatorConfig, RunConfig, StationaryModeConfig, TruthMethodConfig,
};
use crate::env::{simulate, AssignmentPolicy, NonstationaryMdp, Trajectory};
use crate::envs::{build_queue, build_two_state, simulate_rideshare, RideshareConfig};
use crate::error::{Error, Result};
use crate::estimators::{
    dm, stationary_model_baseline, switchback_bc, truncated_dq, truncated_dq_blocks,
    untruncated_dq, StationaryMode,
};
use crate::rng::{derive_seed, SALT_ENV, SALT_EXPERIMENT, SALT_TRUTH};
use crate::truth::{exact_gate, exact_truth_bundle, mc_gate, mc_truth_bundle, TruthBundle};

/// A built environment: finite-state (kernels available) or event-driven.
#[derive(Clone)]
pub enum BuiltEnv {
    Finite(NonstationaryMdp),
    Rideshare(RideshareConfig),
}

/// Builds the configured environment. `seed_override` replaces the config's
/// own seed for per-trial regeneration; the ride-share system has no build
/// randomness, so regeneration is a no-op there.
pub fn build_env(cfg: &EnvConfig, seed_override: Option<u64>) -> Result<BuiltEnv> {
    match cfg {
        EnvConfig::TwoState(c) => {
            let mut c = *c;
            if let Some(seed) = seed_override {
                c.seed = seed;
            }
            Ok(BuiltEnv::Finite(build_two_state(&c)?))
        }
        EnvConfig::Queueing(spec) => Ok(BuiltEnv::Finite(build_queue(&spec.to_config()?)?)),
        EnvConfig::Rideshare(r) => Ok(BuiltEnv::Rideshare(r.clone())),
    }
}

impl BuiltEnv {
    fn simulate(&self, policy: &AssignmentPolicy, seed: u64) -> Result<Trajectory> {
        match self {
            BuiltEnv::Finite(env) => simulate(env, policy, seed),
            BuiltEnv::Rideshare(cfg) => simulate_rideshare(cfg, policy, seed),
        }
    }

    /// Scalar GATE truth for one trial.
    fn gate_truth(&self, cfg: &RunConfig, truth_seed: u64) -> Result<f64> {
        match (self, cfg.truth.method) {
            (BuiltEnv::Finite(env), TruthMethodConfig::Exact) => Ok(exact_gate(env).0),
            (BuiltEnv::Finite(env), TruthMethodConfig::Mc) => Ok(mc_gate(
                env,
                cfg.truth.reps,
                truth_seed,
                cfg.truth.paired,
            )?
            .estimate),
            (BuiltEnv::Rideshare(r), TruthMethodConfig::Mc) => Ok(mc_gate(
                r,
                cfg.truth.reps,
                truth_seed,
                cfg.truth.paired,
            )?
            .estimate),
            (BuiltEnv::Rideshare(_), TruthMethodConfig::Exact) => Err(Error::Config(
                "exact truth is unavailable for the ride-share simulator; use method \"mc\""
                    .into(),
            )),
        }
    }
}

/// Computes the full truth bundle for a config (used by the `truth`
/// subcommand).
pub fn truth_bundle_for_config(cfg: &RunConfig) -> Result<TruthBundle> {
    let env = build_env(&cfg.env, None)?;
    let truth_seed = derive_seed(cfg.master_seed, SALT_TRUTH, u64::MAX);
    match (&env, cfg.truth.method) {
        (BuiltEnv::Finite(e), TruthMethodConfig::Exact) => {
            let mut k_grid = cfg.truth.k_grid.clone();
            k_grid.retain(|&k| k + 1 <= e.horizon());
            exact_truth_bundle(e, &cfg.truth.theta_grid, &k_grid, cfg.truth.per_step_q)
        }
        (BuiltEnv::Finite(e), TruthMethodConfig::Mc) => {
            let (bound, _) = e.rewards().bound();
            mc_truth_bundle(e, cfg.truth.reps, truth_seed, cfg.truth.paired, bound)
        }
        (BuiltEnv::Rideshare(r), TruthMethodConfig::Mc) => {
            // Prices are bounded by the treatment rate times the longest trip.
            let longest_trip_minutes =
                (2.0 * (r.grid_size.saturating_sub(1)) as f64 / r.speed).ceil();
            let bound = r.treatment_price_rate.max(r.control_price_rate)
                * longest_trip_minutes
                * 60.0;
            mc_truth_bundle(r, cfg.truth.reps, truth_seed, cfg.truth.paired, bound)
        }
        (BuiltEnv::Rideshare(_), TruthMethodConfig::Exact) => Err(Error::Config(
            "exact truth is unavailable for the ride-share simulator; use method \"mc\"".into(),
        )),
    }
}

/// One estimator evaluation on one replication.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: u64,
    pub seed: u64,
    pub estimator: String,
    pub param_k: Option<usize>,
    pub estimate: Option<f64>,
    /// Populated when the estimator was incompatible with the data; the
    /// sweep continues past such rows.
    pub error: Option<String>,
    pub truth: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepOutput {
    pub records: Vec<RepRecord>,
    pub summary: Vec<SweepSummaryRow>,
    pub truth_method: String,
}

fn design_theta(policy: &AssignmentPolicy) -> f64 {
    match *policy {
        AssignmentPolicy::Bernoulli { theta } => theta,
        AssignmentPolicy::Switchback { theta, .. } => theta,
        _ => 0.5,
    }
}

fn block_len_of(policy: &AssignmentPolicy) -> Option<usize> {
    match *policy {
        AssignmentPolicy::Switchback { interval_len, .. } => Some(interval_len),
        _ => None,
    }
}

/// Evaluates all configured estimators on one trajectory.
fn run_estimators(
    cfg: &RunConfig,
    traj: &Trajectory,
) -> Vec<(String, Option<usize>, Result<f64>)> {
    let zy = traj.zy();
    let theta_default = design_theta(&cfg.design);
    let mut out = Vec::new();
    for est in &cfg.estimators {
        match est {
            EstimatorConfig::Dm { theta } => {
                let th = theta.unwrap_or(theta_default);
                out.push(("dm".into(), Some(0), dm(zy, th)));
            }
            EstimatorConfig::TruncatedDq { k, theta } => {
                let th = theta.unwrap_or(theta_default);
                for &k in k {
                    out.push(("truncated_dq".into(), Some(k), truncated_dq(zy, k, th)));
                }
            }
            EstimatorConfig::UntruncatedDq { theta } => {
                let th = theta.unwrap_or(theta_default);
                out.push((
                    "untruncated_dq".into(),
                    Some(traj.len().saturating_sub(1)),
                    untruncated_dq(zy, th),
                ));
            }
            EstimatorConfig::SwitchbackBc { burn_in } => {
                let result = match (&traj.block_ids, block_len_of(&cfg.design)) {
                    (Some(blocks), Some(block_len)) => {
                        switchback_bc(zy, blocks, block_len, *burn_in)
                    }
                    _ => Err(Error::Estimation(
                        "switchback_bc needs a switchback design".into(),
                    )),
                };
                out.push((format!("switchback_bc[b={burn_in}]"), None, result));
            }
            EstimatorConfig::TruncatedDqBlocks { k, theta } => {
                let th = theta.unwrap_or(theta_default);
                for &k in k {
                    let result = match &traj.block_ids {
                        Some(blocks) => truncated_dq_blocks(zy, blocks, k, th),
                        None => Err(Error::Estimation(
                            "truncated_dq_blocks needs a switchback design".into(),
                        )),
                    };
                    out.push(("truncated_dq_blocks".into(), Some(k), result));
                }
            }
            EstimatorConfig::StationaryModel { mode } => {
                let (name, mode) = match mode {
                    StationaryModeConfig::ModelOpe => ("model_ope", StationaryMode::ModelOpe),
                    StationaryModeConfig::StationaryDq => {
                        ("stationary_dq", StationaryMode::StationaryDq)
                    }
                };
                out.push((
                    name.into(),
                    None,
                    stationary_model_baseline(traj, mode).map(|e| e.estimate),
                ));
            }
        }
    }
    out
}

/// Runs the configured sweep. Deterministic given the config.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let shared_env = if cfg.regenerate_env_per_trial {
        None
    } else {
        Some(build_env(&cfg.env, None)?)
    };
    let shared_truth = match (&shared_env, cfg.truth.per_trial) {
        (Some(env), false) => Some(env.gate_truth(cfg, derive_seed(cfg.master_seed, SALT_TRUTH, u64::MAX))?),
        _ => None,
    };

    let per_rep: Result<Vec<Vec<RepRecord>>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let env = match &shared_env {
                Some(e) => e.clone(),
                None => build_env(&cfg.env, Some(derive_seed(cfg.master_seed, SALT_ENV, rep)))?,
            };
            let sim_seed = derive_seed(cfg.master_seed, SALT_EXPERIMENT, rep);
            let traj = env.simulate(&cfg.design, sim_seed)?;
            let truth = match shared_truth {
                Some(t) => t,
                None => env.gate_truth(cfg, derive_seed(cfg.master_seed, SALT_TRUTH, rep))?,
            };
            Ok(run_estimators(cfg, &traj)
                .into_iter()
                .map(|(estimator, param_k, result)| RepRecord {
                    rep,
                    seed: sim_seed,
                    estimator,
                    param_k,
                    estimate: result.as_ref().ok().copied(),
                    error: result.err().map(|e| e.to_string()),
                    truth,
                })
                .collect())
        })
        .collect();
    let records: Vec<RepRecord> = per_rep?.into_iter().flatten().collect();

    let points: Vec<SweepPoint> = records
        .iter()
        .filter_map(|r| {
            r.estimate.map(|estimate| SweepPoint {
                estimator: r.estimator.clone(),
                param_k: r.param_k,
                estimate,
                truth: r.truth,
            })
        })
        .collect();
    let truth_method = match cfg.truth.method {
        TruthMethodConfig::Exact => "exact",
        TruthMethodConfig::Mc => "mc",
    };
    let summary = summarize_sweep(&points, truth_method)?;
    Ok(SweepOutput {
        records,
        summary,
        truth_method: truth_method.to_string(),
    })
}

/// Writes per-replication records as CSV.
pub fn write_records_csv(records: &[RepRecord], mut w: impl std::io::Write) -> Result<()> {
    writeln!(w, "rep,seed,estimator,param_k,estimate,error,truth")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.rep,
            r.seed,
            r.estimator,
            r.param_k.map_or(String::new(), |k| k.to_string()),
            r.estimate.map_or(String::new(), |e| e.to_string()),
            r.error.as_deref().unwrap_or("").replace(',', ";"),
            r.truth
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_config(replications: u64) -> RunConfig {
        RunConfig::from_json(&format!(
            r#"{{
                "env": {{"type": "two_state", "params": {{"horizon": 300, "seed": 7}}}},
                "design": {{"kind": "bernoulli", "theta": 0.5}},
                "estimators": [
                    {{"name": "dm"}},
                    {{"name": "truncated_dq", "k": [0, 1, 3]}},
                    {{"name": "switchback_bc", "burn_in": 2}}
                ],
                "replications": {replications},
                "master_seed": 99,
                "truth": {{"method": "exact"}},
                "regenerate_env_per_trial": true
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn sweep_is_deterministic_across_thread_counts() {
        let cfg = sample_config(12);
        let a = run_sweep(&cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_sweep(&cfg).unwrap());
        let ja = serde_json::to_string(&a.summary).unwrap();
        let jb = serde_json::to_string(&b.summary).unwrap();
        assert_eq!(ja, jb);
        let ra = serde_json::to_string(&a.records).unwrap();
        let rb = serde_json::to_string(&b.records).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn incompatible_estimator_recorded_not_fatal() {
        let out = run_sweep(&sample_config(3)).unwrap();
        // switchback_bc on Bernoulli data: per-row error, run continues.
        let bc_rows: Vec<_> = out
            .records
            .iter()
            .filter(|r| r.estimator.starts_with("switchback_bc"))
            .collect();
        assert_eq!(bc_rows.len(), 3);
        assert!(bc_rows.iter().all(|r| r.estimate.is_none() && r.error.is_some()));
        // The DQ rows all succeeded and were summarized.
        assert!(out.summary.iter().any(|s| s.estimator == "truncated_dq"));
        assert!(!out.summary.iter().any(|s| s.estimator.starts_with("switchback_bc")));
    }

    #[test]
    fn truncated_dq_k0_matches_dm_rowwise() {
        let out = run_sweep(&sample_config(5)).unwrap();
        for rep in 0..5u64 {
            let dm_row = out
                .records
                .iter()
                .find(|r| r.rep == rep && r.estimator == "dm")
                .unwrap();
            let k0_row = out
                .records
                .iter()
                .find(|r| r.rep == rep && r.estimator == "truncated_dq" && r.param_k == Some(0))
                .unwrap();
            assert_eq!(dm_row.estimate, k0_row.estimate);
        }
    }

    #[test]
    fn per_trial_truth_varies_with_regeneration() {
        let out = run_sweep(&sample_config(6)).unwrap();
        let truths: std::collections::BTreeSet<String> = out
            .records
            .iter()
            .map(|r| format!("{:.12}", r.truth))
            .collect();
        assert!(truths.len() > 1, "regenerated environments share a truth");
    }
}
