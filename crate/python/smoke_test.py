"""Smoke test for the Python bindings.

Build the extension first:

    cargo build -p truncdq-py --release

then run:

    python3 python/smoke_test.py
"""

import json
import math
import pathlib
import shutil
import sys
import tempfile


def load_module():
    root = pathlib.Path(__file__).resolve().parents[1]
    candidates = [
        root / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libtruncdq.so", "libtruncdq.dylib", "truncdq.dll")
    ]
    built = next((c for c in candidates if c.exists()), None)
    assert built is not None, "extension not found; run: cargo build -p truncdq-py --release"
    staging = pathlib.Path(tempfile.mkdtemp(prefix="truncdq_py_"))
    target = staging / ("truncdq" + (".so" if built.suffix != ".dll" else ".pyd"))
    shutil.copy(built, target)
    sys.path.insert(0, str(staging))
    import truncdq

    return truncdq


def main():
    tq = load_module()

    env = tq.build_two_state(horizon=400, seed=7)
    assert env.num_states == 2 and env.horizon == 400

    # Definitional identity: tau = J(1) - J(0).
    tau, tau_t = tq.exact_gate(env)
    assert len(tau_t) == 400
    assert abs(tau - (tq.exact_value(env, 1.0) - tq.exact_value(env, 0.0))) < 1e-10

    # Gradient against a central finite difference.
    grad = tq.exact_policy_gradient(env)
    h = 1e-4
    fd = (tq.exact_value(env, 0.5 + h) - tq.exact_value(env, 0.5 - h)) / (2 * h)
    assert abs(grad - fd) < 1e-6, (grad, fd)

    # Truncation consistency at k = T - 1.
    assert tq.exact_truncated_gradient(env, 399) == grad
    assert tq.exact_truncated_value(env, 0.25, 399) == tq.exact_value(env, 0.25)

    # Kernel diagnostics.
    assert tq.kernel_deviation(env) <= 0.1 + 1e-12
    assert 0.0 <= tq.dobrushin_coefficient(env) <= 1.0

    # Simulation and the state-free estimators.
    states, actions, rewards = tq.simulate(env, tq.Policy.bernoulli(0.5), seed=42)
    assert len(states) == len(actions) == len(rewards) == 400
    assert tq.dm(actions, rewards) == tq.truncated_dq(actions, rewards, 0)
    scan = dict(tq.truncated_dq_scan(actions, rewards, [0, 1, 3]))
    assert abs(scan[0] - tq.dm(actions, rewards)) < 1e-9

    # Monte Carlo truth brackets the exact GATE.
    est, se = tq.mc_gate(env, reps=2000, seed=3, paired=True)
    assert abs(est - tau) < 5 * se, (est, tau, se)

    # Bias decomposition identity.
    d = tq.decompose_bias(env, 3)
    assert abs(d["total_bias"] - d["taylor_error"] - d["mixing_bias"]) < 1e-10

    # Truth bundle round-trips through JSON.
    bundle = json.loads(tq.truth_bundle_json(env, k_grid=[0, 3]))
    assert abs(bundle["tau"] - tau) < 1e-12
    assert len(bundle["grad_jk_half"]) == 2

    # Queueing environment: treatment damps arrivals, so the congestion-cost
    # GATE is positive.
    q = tq.build_queue(weeks=1)
    assert q.horizon == 10080
    q_tau, _ = tq.exact_gate(q)
    assert q_tau > 0, q_tau

    # Ride-share smoke: switchback blocks recorded, rewards are nonnegative
    # prices.
    s, a, r, blocks = tq.simulate_rideshare(
        tq.Policy.switchback(10, 0.5), seed=5, num_arrivals=2000, num_drivers=12,
        base_arrival_rate=2.0,
    )
    assert len(blocks) == 2000 and min(r) >= 0.0 and max(r) > 0.0
    block_dm = tq.truncated_dq_blocks(a, r, blocks, 0)
    assert math.isfinite(block_dm)

    print("smoke test passed")


if __name__ == "__main__":
    main()
