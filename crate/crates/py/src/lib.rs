//! Python bindings: environment builders, trajectory simulation, the DQ
//! estimator family, and the exact oracle computations.
//!
//! Trajectories cross the boundary as plain lists `(states, actions,
//! rewards)`; assignments are 0/1 integers. Estimators accept the
//! `(actions, rewards)` pair, mirroring the state-free contract of the
//! library.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use truncdq_core::analysis;
use truncdq_core::env::{self, Arm, AssignmentPolicy, NonstationaryMdp};
use truncdq_core::envs;
use truncdq_core::estimators;
use truncdq_core::truth;

fn err(e: truncdq_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn arms_from(actions: Vec<u8>) -> Vec<Arm> {
    actions.into_iter().map(|z| Arm::from_bit(z != 0)).collect()
}

/// A finite-state nonstationary environment.
#[pyclass(name = "Env", frozen)]
struct PyEnv {
    inner: NonstationaryMdp,
}

#[pymethods]
impl PyEnv {
    #[getter]
    fn num_states(&self) -> usize {
        self.inner.num_states()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }
}

/// Assignment policy wrapper.
#[pyclass(name = "Policy", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPolicy {
    inner: AssignmentPolicy,
}

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    fn always_treat() -> Self {
        PyPolicy {
            inner: AssignmentPolicy::AlwaysTreat,
        }
    }

    #[staticmethod]
    fn always_control() -> Self {
        PyPolicy {
            inner: AssignmentPolicy::AlwaysControl,
        }
    }

    #[staticmethod]
    fn bernoulli(theta: f64) -> Self {
        PyPolicy {
            inner: AssignmentPolicy::Bernoulli { theta },
        }
    }

    #[staticmethod]
    fn switchback(interval_len: usize, theta: f64) -> Self {
        PyPolicy {
            inner: AssignmentPolicy::Switchback { interval_len, theta },
        }
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Builds the two-state autoregressive environment.
#[pyfunction]
#[pyo3(signature = (horizon=5000, seed=0, mean_reversion=0.5, target_mixing=0.5,
                    kernel_shift=0.1, noise_std=0.1, reward_std=0.1))]
#[allow(clippy::too_many_arguments)]
fn build_two_state(
    horizon: usize,
    seed: u64,
    mean_reversion: f64,
    target_mixing: f64,
    kernel_shift: f64,
    noise_std: f64,
    reward_std: f64,
) -> PyResult<PyEnv> {
    let cfg = envs::TwoStateConfig {
        mean_reversion,
        target_mixing,
        kernel_shift,
        noise_std,
        reward_std,
        horizon,
        seed,
    };
    Ok(PyEnv {
        inner: envs::build_two_state(&cfg).map_err(err)?,
    })
}

/// Builds the queueing environment with the bundled default rate table (or
/// one loaded from `rate_table_path`).
#[pyfunction]
#[pyo3(signature = (weeks=4, max_queue_len=50, service_rate=20.0, treatment_p=1.75,
                    control_p=0.25, step_minutes=1, reward="neg_queue_len",
                    rate_table_path=None))]
#[allow(clippy::too_many_arguments)]
fn build_queue(
    weeks: usize,
    max_queue_len: usize,
    service_rate: f64,
    treatment_p: f64,
    control_p: f64,
    step_minutes: usize,
    reward: &str,
    rate_table_path: Option<String>,
) -> PyResult<PyEnv> {
    let rate_table = match rate_table_path {
        Some(p) => envs::load_rate_table(p).map_err(err)?,
        None => envs::default_rate_table(),
    };
    let reward = match reward {
        "neg_queue_len" => envs::QueueReward::NegQueueLen,
        "arrival_joined" => envs::QueueReward::ArrivalJoined,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown queue reward {other:?}; use neg_queue_len or arrival_joined"
            )))
        }
    };
    let cfg = envs::QueueConfig {
        max_queue_len,
        service_rate,
        rate_table,
        weekly_multipliers: vec![0.9, 1.0, 1.1, 1.2],
        treatment_p,
        control_p,
        step_minutes,
        weeks,
        reward,
    };
    Ok(PyEnv {
        inner: envs::build_queue(&cfg).map_err(err)?,
    })
}

/// Simulates one trajectory; returns `(states, actions, rewards)`.
#[pyfunction]
fn simulate(env: &PyEnv, policy: &PyPolicy, seed: u64) -> PyResult<(Vec<u32>, Vec<u8>, Vec<f64>)> {
    let traj = env::simulate(&env.inner, &policy.inner, seed).map_err(err)?;
    Ok((
        traj.states,
        traj.actions.iter().map(|a| a.index() as u8).collect(),
        traj.rewards,
    ))
}

/// Simulates one event-indexed ride-share trajectory with default
/// marketplace parameters; returns `(states, actions, rewards, block_ids)`
/// where `block_ids` is empty unless the policy is a switchback.
#[pyfunction]
#[pyo3(signature = (policy, seed, num_arrivals=50_000, num_drivers=100, grid_size=20,
                    base_arrival_rate=8.0, speed=2.0))]
fn simulate_rideshare(
    policy: &PyPolicy,
    seed: u64,
    num_arrivals: usize,
    num_drivers: usize,
    grid_size: usize,
    base_arrival_rate: f64,
    speed: f64,
) -> PyResult<(Vec<u32>, Vec<u8>, Vec<f64>, Vec<u64>)> {
    let cfg = envs::RideshareConfig {
        grid_size,
        num_drivers,
        base_arrival_rate,
        speed,
        num_arrivals,
        ..envs::RideshareConfig::default()
    };
    let traj = envs::simulate_rideshare(&cfg, &policy.inner, seed).map_err(err)?;
    Ok((
        traj.states,
        traj.actions.iter().map(|a| a.index() as u8).collect(),
        traj.rewards,
        traj.block_ids.unwrap_or_default(),
    ))
}

#[pyfunction]
#[pyo3(signature = (actions, rewards, theta=0.5))]
fn dm(actions: Vec<u8>, rewards: Vec<f64>, theta: f64) -> PyResult<f64> {
    let arms = arms_from(actions);
    estimators::dm(
        env::ZyView {
            actions: &arms,
            rewards: &rewards,
        },
        theta,
    )
    .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (actions, rewards, k, theta=0.5))]
fn truncated_dq(actions: Vec<u8>, rewards: Vec<f64>, k: usize, theta: f64) -> PyResult<f64> {
    let arms = arms_from(actions);
    estimators::truncated_dq(
        env::ZyView {
            actions: &arms,
            rewards: &rewards,
        },
        k,
        theta,
    )
    .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (actions, rewards, ks, theta=0.5))]
fn truncated_dq_scan(
    actions: Vec<u8>,
    rewards: Vec<f64>,
    ks: Vec<usize>,
    theta: f64,
) -> PyResult<Vec<(usize, f64)>> {
    let arms = arms_from(actions);
    estimators::truncated_dq_scan(
        env::ZyView {
            actions: &arms,
            rewards: &rewards,
        },
        &ks,
        theta,
    )
    .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (actions, rewards, block_ids, block_len, burn_in))]
fn switchback_bc(
    actions: Vec<u8>,
    rewards: Vec<f64>,
    block_ids: Vec<u64>,
    block_len: usize,
    burn_in: usize,
) -> PyResult<f64> {
    let arms = arms_from(actions);
    estimators::switchback_bc(
        env::ZyView {
            actions: &arms,
            rewards: &rewards,
        },
        &block_ids,
        block_len,
        burn_in,
    )
    .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (actions, rewards, block_ids, k, theta=0.5))]
fn truncated_dq_blocks(
    actions: Vec<u8>,
    rewards: Vec<f64>,
    block_ids: Vec<u64>,
    k: usize,
    theta: f64,
) -> PyResult<f64> {
    let arms = arms_from(actions);
    estimators::truncated_dq_blocks(
        env::ZyView {
            actions: &arms,
            rewards: &rewards,
        },
        &block_ids,
        k,
        theta,
    )
    .map_err(err)
}

#[pyfunction]
fn exact_value(env: &PyEnv, theta: f64) -> PyResult<f64> {
    truth::exact_value(&env.inner, theta).map_err(err)
}

#[pyfunction]
fn exact_gate(env: &PyEnv) -> (f64, Vec<f64>) {
    truth::exact_gate(&env.inner)
}

#[pyfunction]
fn exact_policy_gradient(env: &PyEnv) -> f64 {
    truth::exact_policy_gradient(&env.inner)
}

#[pyfunction]
fn exact_truncated_value(env: &PyEnv, theta: f64, k: usize) -> PyResult<f64> {
    truth::exact_truncated_value(&env.inner, theta, k).map_err(err)
}

#[pyfunction]
fn exact_truncated_gradient(env: &PyEnv, k: usize) -> PyResult<f64> {
    truth::exact_truncated_gradient(&env.inner, k).map_err(err)
}

#[pyfunction]
fn kernel_deviation(env: &PyEnv) -> f64 {
    env::kernel_deviation(&env.inner)
}

#[pyfunction]
fn dobrushin_coefficient(env: &PyEnv) -> f64 {
    env::dobrushin_coefficient(&env.inner)
}

/// Monte Carlo GATE with common random numbers across arms when `paired`.
/// Returns `(estimate, standard_error)`.
#[pyfunction]
#[pyo3(signature = (env, reps, seed, paired=true))]
fn mc_gate(env: &PyEnv, reps: u64, seed: u64, paired: bool) -> PyResult<(f64, f64)> {
    let est = truth::mc_gate(&env.inner, reps, seed, paired).map_err(err)?;
    Ok((est.estimate, est.standard_error))
}

/// Exact bias decomposition at truncation `k`.
#[pyfunction]
fn decompose_bias<'py>(py: Python<'py>, env: &PyEnv, k: usize) -> PyResult<Bound<'py, PyDict>> {
    let d = analysis::decompose_bias(&env.inner, k).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("k", d.k)?;
    out.set_item("taylor_error", d.taylor_error)?;
    out.set_item("mixing_bias", d.mixing_bias)?;
    out.set_item("total_bias", d.total_bias)?;
    out.set_item("delta", d.delta)?;
    out.set_item("gamma_hat", d.gamma_hat)?;
    Ok(out)
}

/// Full exact truth bundle as a JSON string.
#[pyfunction]
#[pyo3(signature = (env, theta_grid=vec![0.0, 0.25, 0.5, 0.75, 1.0], k_grid=vec![0, 1, 3, 5, 10]))]
fn truth_bundle_json(env: &PyEnv, theta_grid: Vec<f64>, k_grid: Vec<usize>) -> PyResult<String> {
    let bundle =
        truth::exact_truth_bundle(&env.inner, &theta_grid, &k_grid, false).map_err(err)?;
    serde_json::to_string_pretty(&bundle).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn truncdq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnv>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(build_two_state, m)?)?;
    m.add_function(wrap_pyfunction!(build_queue, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_rideshare, m)?)?;
    m.add_function(wrap_pyfunction!(dm, m)?)?;
    m.add_function(wrap_pyfunction!(truncated_dq, m)?)?;
    m.add_function(wrap_pyfunction!(truncated_dq_scan, m)?)?;
    m.add_function(wrap_pyfunction!(switchback_bc, m)?)?;
    m.add_function(wrap_pyfunction!(truncated_dq_blocks, m)?)?;
    m.add_function(wrap_pyfunction!(exact_value, m)?)?;
    m.add_function(wrap_pyfunction!(exact_gate, m)?)?;
    m.add_function(wrap_pyfunction!(exact_policy_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(exact_truncated_value, m)?)?;
    m.add_function(wrap_pyfunction!(exact_truncated_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_deviation, m)?)?;
    m.add_function(wrap_pyfunction!(dobrushin_coefficient, m)?)?;
    m.add_function(wrap_pyfunction!(mc_gate, m)?)?;
    m.add_function(wrap_pyfunction!(decompose_bias, m)?)?;
    m.add_function(wrap_pyfunction!(truth_bundle_json, m)?)?;
    Ok(())
}
