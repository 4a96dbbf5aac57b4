//! Command-line harness: seeded simulation, ground truth, estimation,
//! replication sweeps, and the validation suite.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use truncdq_core::analysis::write_summary_csv;
use truncdq_core::config::RunConfig;
use truncdq_core::env::{Arm, Trajectory};
use truncdq_core::estimators::{
    dm, stationary_model_baseline, switchback_bc, truncated_dq, truncated_dq_blocks,
    untruncated_dq, StationaryMode,
};
use truncdq_core::rng::{derive_seed, SALT_ENV, SALT_EXPERIMENT};
use truncdq_core::sweep::{build_env, run_sweep, truth_bundle_for_config, write_records_csv};
use truncdq_core::validate;
use truncdq_core::EstimateReport;

#[derive(Parser)]
#[command(
    name = "truncdq",
    about = "Simulate randomized experiments on nonstationary Markovian systems and estimate the GATE",
    version
)]
struct Cli {
    /// Size of the worker thread pool (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one trajectory CSV per replication.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute the ground-truth bundle for a config and write it as JSON.
    Truth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one estimator on a trajectory file and print its report row.
    Estimate {
        /// Trajectory CSV with header t,state,action,reward.
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        estimator: EstimatorName,
        /// Truncation size for the DQ family.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        /// Switchback block length in steps (block estimators).
        #[arg(long)]
        block_len: Option<usize>,
        /// Burn-in steps discarded per block (switchback_bc).
        #[arg(long, default_value_t = 0)]
        burn_in: usize,
    },
    /// Run the configured replication sweep and write records + summaries.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the invariant self-check suite; exits nonzero on any failure.
    Validate {
        #[arg(long, value_enum, default_value_t = LevelArg::Fast)]
        level: LevelArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Fast,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorName {
    Dm,
    TruncatedDq,
    UntruncatedDq,
    SwitchbackBc,
    TruncatedDqBlocks,
    ModelOpe,
    StationaryDq,
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool built once");
    }
    if let Err(err) = run(cli.command) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { config, out, seed } => cmd_simulate(&config, &out, seed),
        Command::Truth { config, out, seed } => cmd_truth(&config, &out, seed),
        Command::Estimate {
            traj,
            estimator,
            k,
            theta,
            block_len,
            burn_in,
        } => cmd_estimate(&traj, estimator, k, theta, block_len, burn_in),
        Command::Sweep { config, out, seed } => cmd_sweep(&config, &out, seed),
        Command::Validate { level } => cmd_validate(level),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<(RunConfig, String)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    Ok((cfg, text))
}

fn write_manifest(out_dir: &Path, config_text: &str, cfg: &RunConfig) -> Result<()> {
    let mut hasher = Sha256::new();
    hasher.update(config_text.as_bytes());
    let digest: String = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let manifest = serde_json::json!({
        "config_sha256": digest,
        "master_seed": cfg.master_seed,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "created_utc": chrono::Utc::now().to_rfc3339(),
    });
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "t,state,action,reward")?;
    for t in 0..traj.len() {
        writeln!(
            w,
            "{},{},{},{}",
            t + 1,
            traj.states[t],
            traj.actions[t].index(),
            traj.rewards[t]
        )?;
    }
    Ok(())
}

fn cmd_simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let (cfg, text) = load_config(config, seed)?;
    fs::create_dir_all(out)?;
    for rep in 0..cfg.replications {
        let env = if cfg.regenerate_env_per_trial {
            build_env(&cfg.env, Some(derive_seed(cfg.master_seed, SALT_ENV, rep)))?
        } else {
            build_env(&cfg.env, None)?
        };
        let sim_seed = derive_seed(cfg.master_seed, SALT_EXPERIMENT, rep);
        let traj = match env {
            truncdq_core::sweep::BuiltEnv::Finite(e) => {
                truncdq_core::env::simulate(&e, &cfg.design, sim_seed)?
            }
            truncdq_core::sweep::BuiltEnv::Rideshare(r) => {
                truncdq_core::envs::simulate_rideshare(&r, &cfg.design, sim_seed)?
            }
        };
        write_trajectory_csv(&out.join(format!("trajectory_{rep:04}.csv")), &traj)?;
    }
    write_manifest(out, &text, &cfg)?;
    println!(
        "wrote {} trajectories to {}",
        cfg.replications,
        out.display()
    );
    Ok(())
}

fn cmd_truth(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let (cfg, text) = load_config(config, seed)?;
    fs::create_dir_all(out)?;
    let bundle = truth_bundle_for_config(&cfg)?;
    fs::write(
        out.join("truth.json"),
        serde_json::to_string_pretty(&bundle)?,
    )?;
    write_manifest(out, &text, &cfg)?;
    println!("tau = {} (method {:?})", bundle.tau, bundle.metadata.method);
    Ok(())
}

fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading trajectory {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("empty trajectory file")?;
    if header.trim() != "t,state,action,reward" {
        bail!("expected header t,state,action,reward, got {header:?}");
    }
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            bail!("row {}: expected 4 fields", i + 1);
        }
        states.push(
            fields[1]
                .trim()
                .parse::<u32>()
                .with_context(|| format!("row {}: bad state", i + 1))?,
        );
        let z: u8 = fields[2]
            .trim()
            .parse()
            .with_context(|| format!("row {}: bad action", i + 1))?;
        actions.push(Arm::from_bit(z != 0));
        rewards.push(
            fields[3]
                .trim()
                .parse::<f64>()
                .with_context(|| format!("row {}: bad reward", i + 1))?,
        );
    }
    Ok(Trajectory {
        states,
        actions,
        rewards,
        seed: 0,
        policy: None,
        block_ids: None,
    })
}

fn cmd_estimate(
    traj_path: &Path,
    estimator: EstimatorName,
    k: Option<usize>,
    theta: f64,
    block_len: Option<usize>,
    burn_in: usize,
) -> Result<()> {
    let traj = read_trajectory_csv(traj_path)?;
    let zy = traj.zy();
    let blocks: Option<Vec<u64>> =
        block_len.map(|len| (0..traj.len()).map(|t| (t / len.max(1)) as u64).collect());
    let need_blocks = || -> Result<&Vec<u64>> {
        blocks
            .as_ref()
            .context("this estimator needs --block-len")
    };
    let (id, param_k, estimate) = match estimator {
        EstimatorName::Dm => ("dm".to_string(), Some(0), dm(zy, theta)?),
        EstimatorName::TruncatedDq => {
            let k = k.context("--k is required for truncated_dq")?;
            ("truncated_dq".to_string(), Some(k), truncated_dq(zy, k, theta)?)
        }
        EstimatorName::UntruncatedDq => (
            "untruncated_dq".to_string(),
            Some(traj.len().saturating_sub(1)),
            untruncated_dq(zy, theta)?,
        ),
        EstimatorName::SwitchbackBc => {
            let len = block_len.context("--block-len is required for switchback_bc")?;
            (
                format!("switchback_bc[b={burn_in}]"),
                None,
                switchback_bc(zy, need_blocks()?, len, burn_in)?,
            )
        }
        EstimatorName::TruncatedDqBlocks => {
            let k = k.context("--k is required for truncated_dq_blocks")?;
            (
                "truncated_dq_blocks".to_string(),
                Some(k),
                truncated_dq_blocks(zy, need_blocks()?, k, theta)?,
            )
        }
        EstimatorName::ModelOpe => (
            "model_ope".to_string(),
            None,
            stationary_model_baseline(&traj, StationaryMode::ModelOpe)?.estimate,
        ),
        EstimatorName::StationaryDq => (
            "stationary_dq".to_string(),
            None,
            stationary_model_baseline(&traj, StationaryMode::StationaryDq)?.estimate,
        ),
    };
    let report = EstimateReport {
        estimator_id: id,
        param_k,
        point_estimate: estimate,
        horizon: traj.len(),
        seed: traj.seed,
        diagnostics: None,
    };
    println!("estimator_id,params,estimate,seed,T");
    println!("{}", report.csv_row());
    Ok(())
}

fn cmd_sweep(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let (cfg, text) = load_config(config, seed)?;
    fs::create_dir_all(out)?;
    let output = run_sweep(&cfg)?;
    let mut records = Vec::new();
    write_records_csv(&output.records, &mut records)?;
    fs::write(out.join("records.csv"), records)?;
    let mut summary_csv = Vec::new();
    write_summary_csv(&output.summary, &mut summary_csv)?;
    fs::write(out.join("summary.csv"), summary_csv)?;
    fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&output.summary)?,
    )?;
    write_manifest(out, &text, &cfg)?;
    println!(
        "swept {} replications x {} estimators; summary in {}",
        cfg.replications,
        output.summary.len(),
        out.display()
    );
    Ok(())
}

fn cmd_validate(level: LevelArg) -> Result<()> {
    let level = match level {
        LevelArg::Fast => validate::Level::Fast,
        LevelArg::Full => validate::Level::Full,
    };
    let report = validate::run(level);
    print!("{}", report.render());
    if !report.passed() {
        std::process::exit(1);
    }
    Ok(())
}
