//! Simulation and GATE estimation for randomized experiments on
//! nonstationary Markovian systems.
//!
//! The crate is organized around six pieces:
//!
//! - [`env`]: the finite-state nonstationary MDP abstraction (per-time
//!   kernels for treatment and control), assignment policies, and seeded
//!   trajectory simulation;
//! - [`envs`]: builders for the three experimental testbeds — a two-state
//!   autoregressive chain, a queueing birth-death chain with nonstationary
//!   arrivals, and an event-indexed ride-sharing marketplace;
//! - [`truth`]: exact oracle computations (policy values, policy gradients,
//!   the GATE, and their truncated counterparts) via kernel propagation,
//!   plus a Monte Carlo fallback for simulation-only systems;
//! - [`estimators`]: trajectory-only GATE estimators — difference-in-means,
//!   the truncated difference-in-Q's family, switchback burn-in, and
//!   tabular stationary baselines;
//! - [`analysis`]: bias decompositions, bound-scaling diagnostics, and sweep
//!   summaries;
//! - [`sweep`] and [`validate`]: the seeded replication harness and the
//!   invariant self-check suite driven by the command-line tool.

pub mod analysis;
pub mod config;
pub mod env;
pub mod envs;
pub mod error;
pub mod estimators;
pub mod rng;
pub mod sweep;
pub mod truth;
pub mod validate;

pub use env::{
    dobrushin_coefficient, kernel_deviation, simulate, simulate_with_schedule, Arm,
    AssignmentPolicy, DenseKernels, EstimateReport, KernelSet, MeanRewards, NonstationaryMdp,
    RewardModel, RewardNoise, Trajectory, ZyView,
};
pub use error::{Error, Result};
