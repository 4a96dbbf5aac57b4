use rayon::prelude::*;
use truncdq_core::env::AssignmentPolicy;
use truncdq_core::envs::{simulate_rideshare, RideshareConfig};
use truncdq_core::estimators::truncated_dq_blocks;
use truncdq_core::rng::{derive_seed, SALT_EXPERIMENT, SALT_TRUTH};
use truncdq_core::truth::mc_gate;

fn run(base: f64, speed: f64, batches: u64) {
    let cfg = RideshareConfig {
        base_arrival_rate: base,
        speed,
        ..RideshareConfig::default()
    };
    let master = 4242u64;
    let truth = mc_gate(&cfg, 40, derive_seed(master, SALT_TRUTH, u64::MAX), true)
        .unwrap()
        .estimate;
    let policy = AssignmentPolicy::Switchback { interval_len: 10, theta: 0.5 };
    let ks = [0usize, 1, 2, 3, 4, 5, 6];
    let reps = batches * 20;
    let all: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let traj =
                simulate_rideshare(&cfg, &policy, derive_seed(master, SALT_EXPERIMENT, rep))
                    .unwrap();
            let blocks = traj.block_ids.as_ref().unwrap();
            ks.iter()
                .map(|&k| truncated_dq_blocks(traj.zy(), blocks, k, 0.5).unwrap())
                .collect()
        })
        .collect();
    let mut passes = 0;
    let mut total_wins = 0;
    for b in 0..batches as usize {
        let batch = &all[b * 20..(b + 1) * 20];
        let bias = |i: usize| -> f64 { batch.iter().map(|v| v[i]).sum::<f64>() / 20.0 - truth };
        let dm_bias = bias(0).abs();
        let wins = (1..7).filter(|&i| bias(i).abs() < dm_bias).count();
        total_wins += wins;
        if wins >= 4 {
            passes += 1;
        }
    }
    // full-sample true biases
    let bias_full = |i: usize| -> f64 {
        all.iter().map(|v| v[i]).sum::<f64>() / all.len() as f64 - truth
    };
    println!(
        "base={base} speed={speed}: tau={truth:.3} dm_bias={:+.3} k-biases: {} | pass {passes}/{batches} (avg wins {:.1})",
        bias_full(0),
        (1..7).map(|i| format!("{:+.2}", bias_full(i))).collect::<Vec<_>>().join(" "),
        total_wins as f64 / batches as f64
    );
}

fn main() {
    run(13.0, 1.8, 15);
    run(14.0, 1.8, 15);
    run(15.0, 1.8, 15);
}
