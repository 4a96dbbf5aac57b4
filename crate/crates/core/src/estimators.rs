//! Trajectory-only estimators of the GATE.
//!
//! The DQ family (`dm`, `truncated_dq`, `untruncated_dq`, and the block
//! variants) takes a [`ZyView`] — assignments and outcomes only — so it is
//! state-free by construction. The tabular stationary baselines fit a
//! time-homogeneous model from the full trajectory and therefore take a
//! [`Trajectory`].

use std::collections::BTreeMap;

use crate::env::{Arm, Trajectory, ZyView};
use crate::error::{Error, Result};

fn check_theta_open(theta: f64) -> Result<()> {
    if theta > 0.0 && theta < 1.0 {
        Ok(())
    } else {
        Err(Error::Estimation(format!(
            "inverse-propensity weights need theta in (0,1), got {theta}"
        )))
    }
}

fn weight(arm: Arm, theta: f64) -> f64 {
    match arm {
        Arm::Treatment => 1.0 / theta,
        Arm::Control => -1.0 / (1.0 - theta),
    }
}

/// Difference-in-means: `(1/T) Σ_u (1{Z_u=1}/θ − 1{Z_u=0}/(1−θ)) Y_u`.
///
/// At `θ = 1/2` this is the naive Horvitz–Thompson contrast of instantaneous
/// outcomes, and it coincides with [`truncated_dq`] at `k = 0`.
pub fn dm(zy: ZyView<'_>, theta: f64) -> Result<f64> {
    check_theta_open(theta)?;
    if zy.is_empty() {
        return Err(Error::Estimation("empty trajectory".into()));
    }
    let mut acc = 0.0;
    for (u, &arm) in zy.actions.iter().enumerate() {
        acc += weight(arm, theta) * zy.rewards[u];
    }
    Ok(acc / zy.len() as f64)
}

/// Truncated difference-in-Q's estimator with window size `k`:
/// `(1/T) Σ_u w_u Σ_{t=u}^{min(u+k, T)} Y_t`.
///
/// The window sums are maintained by an O(T) sliding pass. `k = 0` runs the
/// [`dm`] summation itself, so the reduction is exact.
pub fn truncated_dq(zy: ZyView<'_>, k: usize, theta: f64) -> Result<f64> {
    check_theta_open(theta)?;
    let t_len = zy.len();
    if t_len == 0 {
        return Err(Error::Estimation("empty trajectory".into()));
    }
    if k > t_len - 1 {
        return Err(Error::Estimation(format!(
            "truncation k={k} out of range for trajectory of length {t_len}"
        )));
    }
    if k == 0 {
        return dm(zy, theta);
    }
    let mut windows = vec![0.0; t_len];
    let mut acc = 0.0;
    for u in (0..t_len).rev() {
        acc += zy.rewards[u];
        if u + k + 1 < t_len {
            acc -= zy.rewards[u + k + 1];
        }
        windows[u] = acc;
    }
    let mut est = 0.0;
    for (u, &arm) in zy.actions.iter().enumerate() {
        est += weight(arm, theta) * windows[u];
    }
    Ok(est / t_len as f64)
}

/// Untruncated DQ estimator: the window covers the full remaining
/// trajectory, i.e. [`truncated_dq`] with `k = T − 1`.
pub fn untruncated_dq(zy: ZyView<'_>, theta: f64) -> Result<f64> {
    if zy.is_empty() {
        return Err(Error::Estimation("empty trajectory".into()));
    }
    truncated_dq(zy, zy.len() - 1, theta)
}

/// Evaluates `τ̂_k` for every `k` in a grid over one dataset, using a single
/// prefix-sum pass over the rewards.
pub fn truncated_dq_scan(zy: ZyView<'_>, ks: &[usize], theta: f64) -> Result<Vec<(usize, f64)>> {
    check_theta_open(theta)?;
    let t_len = zy.len();
    if t_len == 0 {
        return Err(Error::Estimation("empty trajectory".into()));
    }
    let mut prefix = vec![0.0; t_len + 1];
    for (t, &y) in zy.rewards.iter().enumerate() {
        prefix[t + 1] = prefix[t] + y;
    }
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        if k > t_len - 1 {
            return Err(Error::Estimation(format!(
                "truncation k={k} out of range for trajectory of length {t_len}"
            )));
        }
        let mut est = 0.0;
        for (u, &arm) in zy.actions.iter().enumerate() {
            let hi = (u + k + 1).min(t_len);
            est += weight(arm, theta) * (prefix[hi] - prefix[u]);
        }
        out.push((k, est / t_len as f64));
    }
    Ok(out)
}

/// Per-block aggregation of a switchback trajectory: arm, summed outcome,
/// and step count per block, in block order.
#[derive(Clone, Debug)]
pub struct BlockStats {
    pub arm: Arm,
    pub sum: f64,
    pub len: usize,
}

/// Groups steps by block id, checking that ids are nondecreasing and that
/// the assignment is constant inside each block.
pub fn group_blocks(zy: ZyView<'_>, block_ids: &[u64]) -> Result<Vec<BlockStats>> {
    if block_ids.len() != zy.len() {
        return Err(Error::Estimation(format!(
            "{} block ids for {} steps",
            block_ids.len(),
            zy.len()
        )));
    }
    if zy.is_empty() {
        return Err(Error::Estimation("empty trajectory".into()));
    }
    let mut blocks: Vec<BlockStats> = Vec::new();
    let mut current_id = None;
    for (t, &id) in block_ids.iter().enumerate() {
        match current_id {
            Some(prev) if id == prev => {
                let b = blocks.last_mut().expect("block exists");
                if b.arm != zy.actions[t] {
                    return Err(Error::Estimation(format!(
                        "block {id} mixes treatment and control; switchback estimators need \
                         block-constant assignments"
                    )));
                }
                b.sum += zy.rewards[t];
                b.len += 1;
            }
            Some(prev) if id < prev => {
                return Err(Error::Estimation("block ids must be nondecreasing".into()));
            }
            _ => {
                blocks.push(BlockStats {
                    arm: zy.actions[t],
                    sum: zy.rewards[t],
                    len: 1,
                });
                current_id = Some(id);
            }
        }
    }
    Ok(blocks)
}

/// Bias-corrected switchback estimator with burn-in: discards the first
/// `burn_in` steps of every block, averages the remainder per block, and
/// contrasts the mean over treated blocks with the mean over control blocks.
pub fn switchback_bc(
    zy: ZyView<'_>,
    block_ids: &[u64],
    block_len: usize,
    burn_in: usize,
) -> Result<f64> {
    if burn_in >= block_len {
        return Err(Error::Config(format!(
            "burn-in {burn_in} must be smaller than the block length {block_len}"
        )));
    }
    if block_ids.len() != zy.len() || zy.is_empty() {
        return Err(Error::Estimation("block ids must match a nonempty trajectory".into()));
    }
    let mut treated = Vec::new();
    let mut control = Vec::new();
    let mut pos = 0usize;
    let mut idx = 0usize;
    while idx < zy.len() {
        let id = block_ids[idx];
        let arm = zy.actions[idx];
        let mut sum = 0.0;
        let mut count = 0usize;
        pos = 0;
        while idx < zy.len() && block_ids[idx] == id {
            if zy.actions[idx] != arm {
                return Err(Error::Estimation(format!(
                    "block {id} mixes treatment and control; switchback estimators need \
                     block-constant assignments"
                )));
            }
            if pos >= burn_in {
                sum += zy.rewards[idx];
                count += 1;
            }
            pos += 1;
            idx += 1;
        }
        if count > 0 {
            let mean = sum / count as f64;
            match arm {
                Arm::Treatment => treated.push(mean),
                Arm::Control => control.push(mean),
            }
        }
    }
    let _ = pos;
    if treated.is_empty() || control.is_empty() {
        return Err(Error::Estimation(
            "switchback estimate needs at least one block per arm after burn-in".into(),
        ));
    }
    let mt = treated.iter().sum::<f64>() / treated.len() as f64;
    let mc = control.iter().sum::<f64>() / control.len() as f64;
    Ok(mt - mc)
}

/// Truncated DQ on switchback data with blocks as units: each block carries
/// the inverse-propensity weight of its assignment, and the window sums the
/// outcomes of the block and its `k` successors. Normalizing by the total
/// step count makes `k = 0` coincide with the step-level [`dm`] on the same
/// data.
pub fn truncated_dq_blocks(
    zy: ZyView<'_>,
    block_ids: &[u64],
    k: usize,
    theta: f64,
) -> Result<f64> {
    check_theta_open(theta)?;
    let blocks = group_blocks(zy, block_ids)?;
    let n_blocks = blocks.len();
    if k > n_blocks - 1 {
        return Err(Error::Estimation(format!(
            "block truncation k={k} out of range for {n_blocks} blocks"
        )));
    }
    let mut windows = vec![0.0; n_blocks];
    let mut acc = 0.0;
    for j in (0..n_blocks).rev() {
        acc += blocks[j].sum;
        if j + k + 1 < n_blocks {
            acc -= blocks[j + k + 1].sum;
        }
        windows[j] = acc;
    }
    let total_steps: usize = blocks.iter().map(|b| b.len).sum();
    let mut est = 0.0;
    for (j, b) in blocks.iter().enumerate() {
        est += weight(b.arm, theta) * windows[j];
    }
    Ok(est / total_steps as f64)
}

/// Mode of the tabular stationary baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StationaryMode {
    /// Value difference of the fitted time-homogeneous model over the
    /// horizon, started from the empirically observed initial state.
    ModelOpe,
    /// Difference in average-reward Q-values of the fitted model, weighted
    /// by its stationary distribution.
    StationaryDq,
}

/// Fitted time-homogeneous tabular model plus the estimate.
#[derive(Clone, Debug)]
pub struct StationaryEstimate {
    pub estimate: f64,
    pub diagnostics: BTreeMap<String, f64>,
}

/// Fits time-homogeneous `P̂_z` (transition counts) and `r̂_z` (reward
/// means) over the observed state set and evaluates the requested baseline.
///
/// Unvisited `(x, z)` pairs fall back to a uniform transition row and zero
/// reward and are counted in the diagnostics.
pub fn stationary_model_baseline(
    traj: &Trajectory,
    mode: StationaryMode,
) -> Result<StationaryEstimate> {
    let t_len = traj.len();
    if t_len < 2 {
        return Err(Error::Estimation("need at least two steps to fit a model".into()));
    }
    // Compact the observed state set.
    let mut observed: Vec<u32> = traj.states.clone();
    observed.sort_unstable();
    observed.dedup();
    let index: BTreeMap<u32, usize> = observed
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, i))
        .collect();
    let s = observed.len();

    let mut counts = vec![vec![0.0f64; s * s]; 2];
    let mut rew_sum = vec![vec![0.0f64; s]; 2];
    let mut rew_n = vec![vec![0.0f64; s]; 2];
    for t in 0..t_len {
        let x = index[&traj.states[t]];
        let z = traj.actions[t].index();
        rew_sum[z][x] += traj.rewards[t];
        rew_n[z][x] += 1.0;
        if t + 1 < t_len {
            let xn = index[&traj.states[t + 1]];
            counts[z][x * s + xn] += 1.0;
        }
    }

    let mut p = vec![vec![0.0f64; s * s]; 2];
    let mut r = vec![vec![0.0f64; s]; 2];
    let mut fallbacks = 0usize;
    for z in 0..2 {
        for x in 0..s {
            let row = &counts[z][x * s..(x + 1) * s];
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                for j in 0..s {
                    p[z][x * s + j] = row[j] / total;
                }
            } else {
                fallbacks += 1;
                for j in 0..s {
                    p[z][x * s + j] = 1.0 / s as f64;
                }
            }
            r[z][x] = if rew_n[z][x] > 0.0 {
                rew_sum[z][x] / rew_n[z][x]
            } else {
                0.0
            };
        }
    }

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("observed_states".into(), s as f64);
    diagnostics.insert("fallback_pairs".into(), fallbacks as f64);

    let estimate = match mode {
        StationaryMode::ModelOpe => {
            let x1 = index[&traj.states[0]];
            let mut value = [0.0f64; 2];
            for z in 0..2 {
                let mut d = vec![0.0; s];
                d[x1] = 1.0;
                let mut next = vec![0.0; s];
                let mut acc = 0.0;
                for t in 0..t_len {
                    acc += d.iter().zip(&r[z]).map(|(a, b)| a * b).sum::<f64>();
                    if t + 1 < t_len {
                        next.iter_mut().for_each(|v| *v = 0.0);
                        for (x, &mass) in d.iter().enumerate() {
                            if mass == 0.0 {
                                continue;
                            }
                            for j in 0..s {
                                next[j] += mass * p[z][x * s + j];
                            }
                        }
                        std::mem::swap(&mut d, &mut next);
                    }
                }
                value[z] = acc / t_len as f64;
            }
            value[1] - value[0]
        }
        StationaryMode::StationaryDq => stationary_dq(&p, &r, s)?,
    };

    Ok(StationaryEstimate {
        estimate,
        diagnostics,
    })
}

/// Average-reward DQ on the fitted model: solve the Poisson equation for the
/// uniform-mixture chain, then contrast one-step-deviation Q-values.
fn stationary_dq(p: &[Vec<f64>], r: &[Vec<f64>], s: usize) -> Result<f64> {
    let mut p_half = vec![0.0f64; s * s];
    let mut r_half = vec![0.0f64; s];
    for x in 0..s {
        for j in 0..s {
            p_half[x * s + j] = 0.5 * (p[0][x * s + j] + p[1][x * s + j]);
        }
        r_half[x] = 0.5 * (r[0][x] + r[1][x]);
    }

    check_unichain(&p_half, s)?;
    let pi = stationary_distribution(&p_half, s)
        .ok_or_else(|| Error::NotUnichain("stationary distribution solve failed".into()))?;
    let lambda: f64 = pi.iter().zip(&r_half).map(|(a, b)| a * b).sum();

    // (I - P + 1 piᵀ) V = r - lambda 1 pins the solution with piᵀ V = 0.
    let mut a = vec![0.0f64; s * s];
    let mut b = vec![0.0f64; s];
    for x in 0..s {
        for j in 0..s {
            a[x * s + j] = ((x == j) as u8 as f64) - p_half[x * s + j] + pi[j];
        }
        b[x] = r_half[x] - lambda;
    }
    let v = solve_linear(&mut a, &mut b, s)
        .ok_or_else(|| Error::NotUnichain("Poisson equation solve failed".into()))?;

    let mut dq = 0.0;
    for x in 0..s {
        let mut q = [0.0f64; 2];
        for z in 0..2 {
            let pv: f64 = (0..s).map(|j| p[z][x * s + j] * v[j]).sum();
            q[z] = r[z][x] - lambda + pv;
        }
        dq += pi[x] * (q[1] - q[0]);
    }
    Ok(dq)
}

/// Errors unless the chain has exactly one closed communicating class.
fn check_unichain(p: &[f64], s: usize) -> Result<()> {
    // Kosaraju strongly connected components on the support graph.
    let edge = |x: usize, j: usize| p[x * s + j] > 1e-12;
    let mut order = Vec::with_capacity(s);
    let mut seen = vec![false; s];
    for start in 0..s {
        if seen[start] {
            continue;
        }
        // Iterative DFS recording post-order.
        let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
        seen[start] = true;
        while !stack.is_empty() {
            let (x, next_child) = {
                let top = stack.last_mut().expect("stack nonempty");
                let x = top.0;
                let mut j = top.1;
                let mut found = None;
                while j < s {
                    if edge(x, j) && !seen[j] {
                        found = Some(j);
                        j += 1;
                        break;
                    }
                    j += 1;
                }
                top.1 = j;
                (x, found)
            };
            match next_child {
                Some(j) => {
                    seen[j] = true;
                    stack.push((j, 0));
                }
                None => {
                    order.push(x);
                    stack.pop();
                }
            }
        }
    }
    let mut comp = vec![usize::MAX; s];
    let mut n_comp = 0;
    for &start in order.iter().rev() {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = n_comp;
        while let Some(x) = stack.pop() {
            for j in 0..s {
                // Reverse edge j -> x.
                if edge(j, x) && comp[j] == usize::MAX {
                    comp[j] = n_comp;
                    stack.push(j);
                }
            }
        }
        n_comp += 1;
    }
    let mut closed = vec![true; n_comp];
    for x in 0..s {
        for j in 0..s {
            if edge(x, j) && comp[j] != comp[x] {
                closed[comp[x]] = false;
            }
        }
    }
    let n_closed = closed.iter().filter(|c| **c).count();
    if n_closed == 1 {
        Ok(())
    } else {
        Err(Error::NotUnichain(format!(
            "fitted mixture chain has {n_closed} closed communicating classes"
        )))
    }
}

/// Stationary distribution of a row-stochastic matrix via a linear solve
/// (πᵀ(I − P) = 0 with Σ π = 1).
fn stationary_distribution(p: &[f64], s: usize) -> Option<Vec<f64>> {
    let mut a = vec![0.0f64; s * s];
    let mut b = vec![0.0f64; s];
    for i in 0..s {
        for j in 0..s {
            // Row i of (I - Pᵀ).
            a[i * s + j] = ((i == j) as u8 as f64) - p[j * s + i];
        }
    }
    // Replace the last equation with the normalization.
    for j in 0..s {
        a[(s - 1) * s + j] = 1.0;
    }
    b[s - 1] = 1.0;
    let pi = solve_linear(&mut a, &mut b, s)?;
    if pi.iter().any(|&x| x < -1e-9) {
        return None;
    }
    let total: f64 = pi.iter().sum();
    Some(pi.iter().map(|&x| x.max(0.0) / total).collect())
}

/// Gaussian elimination with partial pivoting; `a` is row-major `s × s`.
fn solve_linear(a: &mut [f64], b: &mut [f64], s: usize) -> Option<Vec<f64>> {
    for col in 0..s {
        let mut pivot = col;
        for row in col + 1..s {
            if a[row * s + col].abs() > a[pivot * s + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * s + col].abs() < 1e-12 {
            return None;
        }
        if pivot != col {
            for j in 0..s {
                a.swap(col * s + j, pivot * s + j);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * s + col];
        for row in col + 1..s {
            let factor = a[row * s + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for j in col..s {
                a[row * s + j] -= factor * a[col * s + j];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0f64; s];
    for col in (0..s).rev() {
        let mut acc = b[col];
        for j in col + 1..s {
            acc -= a[col * s + j] * x[j];
        }
        x[col] = acc / a[col * s + col];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zy<'a>(actions: &'a [Arm], rewards: &'a [f64]) -> ZyView<'a> {
        ZyView { actions, rewards }
    }

    /// Reference double-loop implementation of the truncated DQ estimator.
    fn truncated_dq_naive(v: ZyView<'_>, k: usize, theta: f64) -> f64 {
        let t_len = v.len();
        let mut est = 0.0;
        for u in 0..t_len {
            let mut window = 0.0;
            for t in u..=(u + k).min(t_len - 1) {
                window += v.rewards[t];
            }
            est += weight(v.actions[u], theta) * window;
        }
        est / t_len as f64
    }

    #[test]
    fn constant_rewards_balanced_assignments_give_zero_dm() {
        let actions = [Arm::Treatment, Arm::Control, Arm::Treatment, Arm::Control];
        let rewards = [3.0; 4];
        assert_eq!(dm(zy(&actions, &rewards), 0.5).unwrap(), 0.0);
    }

    #[test]
    fn constant_rewards_unbalanced_dm_formula() {
        // All Y = c at theta = 1/2: DM = 2c (2 n1 / T - 1).
        let actions = [Arm::Treatment, Arm::Treatment, Arm::Treatment, Arm::Control];
        let rewards = [1.5; 4];
        let expect = 2.0 * 1.5 * (2.0 * 3.0 / 4.0 - 1.0);
        assert!((dm(zy(&actions, &rewards), 0.5).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn degenerate_theta_rejected() {
        let actions = [Arm::Treatment];
        let rewards = [1.0];
        assert!(dm(zy(&actions, &rewards), 0.0).is_err());
        assert!(dm(zy(&actions, &rewards), 1.0).is_err());
    }

    #[test]
    fn k_zero_is_dm_bit_exactly() {
        let actions: Vec<Arm> = (0..37).map(|i| Arm::from_bit(i % 3 == 0)).collect();
        let rewards: Vec<f64> = (0..37).map(|i| ((i * 31 % 17) as f64) * 0.37 - 2.0).collect();
        let v = zy(&actions, &rewards);
        assert_eq!(dm(v, 0.5).unwrap(), truncated_dq(v, 0, 0.5).unwrap());
        assert_eq!(dm(v, 0.3).unwrap(), truncated_dq(v, 0, 0.3).unwrap());
    }

    #[test]
    fn untruncated_matches_full_window() {
        let actions: Vec<Arm> = (0..20).map(|i| Arm::from_bit(i % 2 == 0)).collect();
        let rewards: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let v = zy(&actions, &rewards);
        assert_eq!(
            untruncated_dq(v, 0.5).unwrap(),
            truncated_dq(v, 19, 0.5).unwrap()
        );
    }

    #[test]
    fn k_out_of_range_rejected() {
        let actions = [Arm::Treatment, Arm::Control];
        let rewards = [1.0, 2.0];
        assert!(truncated_dq(zy(&actions, &rewards), 2, 0.5).is_err());
    }

    proptest! {
        // Dyadic rewards keep every partial sum exact in f64, so the sliding
        // window must agree with the double loop bit for bit.
        #[test]
        fn window_matches_double_loop_bit_exactly(
            data in prop::collection::vec((any::<bool>(), -512i32..512), 1..120),
            k_frac in 0.0f64..1.0,
        ) {
            let actions: Vec<Arm> = data.iter().map(|(b, _)| Arm::from_bit(*b)).collect();
            let rewards: Vec<f64> = data.iter().map(|(_, r)| *r as f64 / 256.0).collect();
            let v = zy(&actions, &rewards);
            let k = ((data.len() - 1) as f64 * k_frac) as usize;
            let fast = truncated_dq(v, k, 0.5).unwrap();
            let naive = truncated_dq_naive(v, k, 0.5);
            prop_assert_eq!(fast, naive);
        }

        #[test]
        fn scan_agrees_with_individual_estimates(
            data in prop::collection::vec((any::<bool>(), -10.0f64..10.0), 2..80),
        ) {
            let actions: Vec<Arm> = data.iter().map(|(b, _)| Arm::from_bit(*b)).collect();
            let rewards: Vec<f64> = data.iter().map(|(_, r)| *r).collect();
            let v = zy(&actions, &rewards);
            let ks: Vec<usize> = [0usize, 1, 3, data.len() - 1]
                .into_iter()
                .filter(|&k| k < data.len())
                .collect();
            let scanned = truncated_dq_scan(v, &ks, 0.5).unwrap();
            for (k, est) in scanned {
                let direct = truncated_dq(v, k, 0.5).unwrap();
                let scale = direct.abs().max(1.0);
                prop_assert!((est - direct).abs() <= 1e-11 * scale);
            }
        }
    }

    #[test]
    fn switchback_bc_zero_burn_in_equals_block_dm() {
        let actions = [
            Arm::Treatment,
            Arm::Treatment,
            Arm::Control,
            Arm::Control,
            Arm::Treatment,
            Arm::Treatment,
            Arm::Control,
            Arm::Control,
        ];
        let rewards = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let blocks = [0, 0, 1, 1, 2, 2, 3, 3];
        let est = switchback_bc(zy(&actions, &rewards), &blocks, 2, 0).unwrap();
        // Treated block means: 1.5, 5.5; control: 3.5, 7.5.
        assert!((est - (3.5 - 5.5)).abs() < 1e-15);
    }

    #[test]
    fn switchback_bc_discards_burn_in() {
        let actions = [Arm::Treatment, Arm::Treatment, Arm::Control, Arm::Control];
        let rewards = [100.0, 2.0, 100.0, 4.0];
        let blocks = [0, 0, 1, 1];
        let est = switchback_bc(zy(&actions, &rewards), &blocks, 2, 1).unwrap();
        assert!((est - (2.0 - 4.0)).abs() < 1e-15);
    }

    #[test]
    fn switchback_bc_requires_both_arms() {
        let actions = [Arm::Treatment, Arm::Treatment];
        let rewards = [1.0, 2.0];
        let blocks = [0, 1];
        assert!(switchback_bc(zy(&actions, &rewards), &blocks, 1, 0).is_err());
    }

    #[test]
    fn switchback_bc_rejects_burn_in_of_full_block() {
        let actions = [Arm::Treatment, Arm::Control];
        let rewards = [1.0, 2.0];
        let blocks = [0, 1];
        assert!(matches!(
            switchback_bc(zy(&actions, &rewards), &blocks, 1, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mixed_block_detected() {
        let actions = [Arm::Treatment, Arm::Control];
        let rewards = [1.0, 2.0];
        let blocks = [0, 0];
        assert!(switchback_bc(zy(&actions, &rewards), &blocks, 2, 0).is_err());
        assert!(truncated_dq_blocks(zy(&actions, &rewards), &blocks, 0, 0.5).is_err());
    }

    #[test]
    fn block_dq_k0_equals_step_dm() {
        let actions = [
            Arm::Treatment,
            Arm::Treatment,
            Arm::Treatment,
            Arm::Control,
            Arm::Control,
            Arm::Control,
        ];
        let rewards = [1.0, -2.0, 0.5, 3.0, 1.0, -1.0];
        let blocks = [0, 0, 0, 1, 1, 1];
        let v = zy(&actions, &rewards);
        let a = truncated_dq_blocks(v, &blocks, 0, 0.5).unwrap();
        let b = dm(v, 0.5).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn stationary_baselines_recover_tau_on_stationary_env() {
        use crate::env::{simulate, AssignmentPolicy, DenseKernels, NonstationaryMdp, RewardModel, RewardNoise};
        use crate::truth::exact_gate;

        let horizon = 20_000;
        let mut k = DenseKernels::zeros(2, horizon);
        for t in 0..horizon {
            k.row_mut(t, Arm::Control, 0).copy_from_slice(&[0.7, 0.3]);
            k.row_mut(t, Arm::Control, 1).copy_from_slice(&[0.4, 0.6]);
            k.row_mut(t, Arm::Treatment, 0).copy_from_slice(&[0.5, 0.5]);
            k.row_mut(t, Arm::Treatment, 1).copy_from_slice(&[0.2, 0.8]);
        }
        let rewards = RewardModel::table(vec![[1.0, 1.5], [3.0, 3.2]], RewardNoise::None);
        let env = NonstationaryMdp::from_dense(k, rewards, vec![1.0, 0.0]).unwrap();
        let (tau, _) = exact_gate(&env);

        let traj = simulate(&env, &AssignmentPolicy::Bernoulli { theta: 0.5 }, 17).unwrap();
        let ope = stationary_model_baseline(&traj, StationaryMode::ModelOpe).unwrap();
        assert!(
            (ope.estimate - tau).abs() < 0.1,
            "model OPE {} vs exact tau {tau}",
            ope.estimate
        );
        let dq = stationary_model_baseline(&traj, StationaryMode::StationaryDq).unwrap();
        assert!(
            (dq.estimate - tau).abs() < 0.1,
            "stationary DQ {} vs exact tau {tau}",
            dq.estimate
        );
        assert_eq!(dq.diagnostics["fallback_pairs"], 0.0);
    }

    #[test]
    fn identical_arms_give_near_zero_baselines() {
        use crate::env::{simulate, AssignmentPolicy, DenseKernels, NonstationaryMdp, RewardModel, RewardNoise};

        let horizon = 10_000;
        let mut k = DenseKernels::zeros(2, horizon);
        for t in 0..horizon {
            for arm in [Arm::Control, Arm::Treatment] {
                k.row_mut(t, arm, 0).copy_from_slice(&[0.6, 0.4]);
                k.row_mut(t, arm, 1).copy_from_slice(&[0.3, 0.7]);
            }
        }
        let rewards = RewardModel::table(vec![[2.0, 2.0], [-1.0, -1.0]], RewardNoise::None);
        let env = NonstationaryMdp::from_dense(k, rewards, vec![0.5, 0.5]).unwrap();
        let traj = simulate(&env, &AssignmentPolicy::Bernoulli { theta: 0.5 }, 4).unwrap();
        for mode in [StationaryMode::ModelOpe, StationaryMode::StationaryDq] {
            let est = stationary_model_baseline(&traj, mode).unwrap();
            assert!(
                est.estimate.abs() < 0.05,
                "baseline {:?} should be near zero, got {}",
                mode,
                est.estimate
            );
        }
    }

    #[test]
    fn multiple_closed_classes_rejected() {
        // Block-diagonal mixture chain: two absorbing classes.
        let p = vec![
            1.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, //
            0.0, 0.0, 1.0,
        ];
        assert!(matches!(
            check_unichain(&p, 3),
            Err(Error::NotUnichain(_))
        ));
        let connected = vec![
            0.5, 0.5, 0.0, //
            0.0, 0.5, 0.5, //
            0.5, 0.0, 0.5,
        ];
        assert!(check_unichain(&connected, 3).is_ok());
    }
}
