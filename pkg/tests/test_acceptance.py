"""Acceptance gate.

One test per acceptance criterion, in order; each prints a single
``[acceptance] criterion NN ...: PASS/FAIL`` line (visible with ``pytest -s``
or in the captured output of a failing run).  Criteria 7-10 share one set of
reduced-scale training runs (5 seeds per scenario) built by a module-scoped
fixture; expect roughly half an hour of wall-clock time for the full gate on
a single core.
"""
import math
import time

import numpy as np
import pytest

from quadq import nn
from quadq.qnet import (
    clone_qnet, default_action_bound, greedy_value, loss_and_gradients,
    make_qnet, mu, q_value,
)
from quadq.reward import RewardConfig, RewardInputs, total_reward
from quadq.scenario import Scenario, obs_dim
from quadq.trainer import ReplayBuffer, TrainConfig, Transition, evaluate, train
from quadq.vehicle import IdmParams, idm_acceleration, no_leader_acceleration
from quadq.world import ScenarioConfig

SEEDS = (0, 1, 2, 3, 4)
EVAL_SEED = 123
EVAL_EPISODES = 100
TREND_EPISODES = {Scenario.LANE_CHANGE: 1500, Scenario.RAMP_MERGE: 1000}
ACTION_RANGE = {Scenario.LANE_CHANGE: (-0.4, 0.4), Scenario.RAMP_MERGE: (-4.5, 2.5)}


def _report(num, name, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"[acceptance] criterion {num:02d} ({name}): {status} -- {detail}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


def _tiny_qnet(scenario, seed):
    bound = default_action_bound(scenario, ACTION_RANGE[scenario])
    return make_qnet(scenario, np.random.default_rng(seed), bound,
                     hidden_mv=(6, 5), hidden_mu=(4, 4))


def _flat_all(qnet, names):
    return np.concatenate([nn.flatten_params(qnet.nets[n]) for n in names])


# ---------------------------------------------------------------------------
# 1. gradient correctness
# ---------------------------------------------------------------------------

def test_criterion_01_gradient_correctness():
    t0 = time.time()
    h = 1e-5
    worst = 0.0
    rng = np.random.default_rng(2024)
    for trial in range(100):
        scenario = Scenario.LANE_CHANGE if trial % 2 == 0 else Scenario.RAMP_MERGE
        frozen = trial % 4 >= 2
        q = _tiny_qnet(scenario, seed=trial)
        obs = rng.normal(size=(4, obs_dim(scenario)))
        lo, hi = ACTION_RANGE[scenario]
        actions = rng.uniform(lo, hi, 4)
        targets = rng.normal(size=4)
        _, grads = loss_and_gradients(q, obs, actions, targets, freeze_mu=frozen)
        checked = ("m", "v") if frozen else ("m", "v", "a_max", "beta_sen", "t_trs")
        if frozen:
            # the action network must be exactly untouched in pretraining mode
            for name in ("a_max", "beta_sen", "t_trs"):
                assert all(np.all(g == 0.0) for g in grads[name])
        for name in checked:
            net = q.nets[name]
            flat = nn.flatten_params(net)
            analytic = np.concatenate([g.ravel() for g in grads[name]])
            fd = np.zeros_like(flat)
            for i in range(flat.size):
                for sgn in (1.0, -1.0):
                    flat[i] += sgn * h
                    nn.set_flat_params(net, flat)
                    loss, _ = loss_and_gradients(q, obs, actions, targets, freeze_mu=frozen)
                    fd[i] += sgn * loss / (2 * h)
                    flat[i] -= sgn * h
            nn.set_flat_params(net, flat)
            err = float(np.max(np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd))))
            worst = max(worst, err)
    elapsed = time.time() - t0
    _report(1, "gradient correctness", worst < 1e-4 and elapsed < 60.0,
            f"max rel err {worst:.3e} (tol 1e-4), {elapsed:.1f}s over 100 instantiations")


# ---------------------------------------------------------------------------
# 2. closed-form greedy optimality
# ---------------------------------------------------------------------------

def test_criterion_02_greedy_optimality():
    t0 = time.time()
    worst_excess = -np.inf
    worst_offset = 0.0
    step_size = 1e-3
    rng = np.random.default_rng(7)
    for scenario, n_states in ((Scenario.LANE_CHANGE, 1000), (Scenario.RAMP_MERGE, 1000)):
        q = _tiny_qnet(scenario, seed=99)
        obs = rng.normal(size=(n_states, obs_dim(scenario)))
        a_star = mu(q, obs)
        q_star = q_value(q, obs, a_star)
        lo, hi = ACTION_RANGE[scenario]
        grid = np.arange(lo, hi + step_size / 2, step_size)
        best_q = np.full(n_states, -np.inf)
        best_a = np.zeros(n_states)
        for a in grid:
            qa = q_value(q, obs, float(a))
            better = qa > best_q
            best_q = np.where(better, qa, best_q)
            best_a = np.where(better, a, best_a)
        worst_excess = max(worst_excess, float(np.max(best_q - q_star)))
        worst_offset = max(worst_offset, float(np.max(np.abs(best_a - a_star))))
    elapsed = time.time() - t0
    ok = worst_excess <= 1e-9 and worst_offset <= step_size + 1e-12 and elapsed < 60.0
    _report(2, "closed-form greedy optimality", ok,
            f"max grid excess {worst_excess:.2e} (tol 1e-9), "
            f"max argmax offset {worst_offset:.4g} (tol {step_size}), {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. quadratic-form identities
# ---------------------------------------------------------------------------

def test_criterion_03_quadratic_identities():
    rng = np.random.default_rng(31)
    worst_gap = 0.0
    worst_m = -np.inf
    for scenario in (Scenario.LANE_CHANGE, Scenario.RAMP_MERGE):
        bound = default_action_bound(scenario, ACTION_RANGE[scenario])
        q = make_qnet(scenario, np.random.default_rng(5), bound)
        obs = rng.normal(size=(50_000, obs_dim(scenario)))
        a_star = mu(q, obs)
        v = greedy_value(q, obs)
        worst_gap = max(worst_gap, float(np.max(np.abs(q_value(q, obs, a_star) - v))))
        # M(s) = Q(s, mu(s)+1) - V(s); it must never be positive
        worst_m = max(worst_m, float(np.max(q_value(q, obs, a_star + 1.0) - v)))
    ok = worst_gap <= 1e-10 and worst_m <= 0.0
    _report(3, "quadratic-form identities", ok,
            f"max |Q(s,mu)-V| {worst_gap:.2e} (tol 1e-10), max M {worst_m:.2e} over 1e5 states")


# ---------------------------------------------------------------------------
# 4. car-following equilibria and monotonicity
# ---------------------------------------------------------------------------

def test_criterion_04_idm_properties():
    p = IdmParams()
    eq1 = idm_acceleration(p.v0, 0.0, 1e9, p)
    eq2 = idm_acceleration(0.0, 0.0, p.s0, p)
    mono_ok = True
    vs = np.linspace(0.0, 40.0, 9)
    dvs = np.linspace(-10.0, 10.0, 9)
    ss = np.linspace(2.0, 120.0, 12)
    for v in vs:
        for dv in dvs:
            accs = [idm_acceleration(v, dv, s, p) for s in ss]
            mono_ok &= all(a1 <= a2 + 1e-12 for a1, a2 in zip(accs, accs[1:]))
        for s in ss:
            accs = [idm_acceleration(v, dv, s, p) for dv in dvs]
            mono_ok &= all(a2 <= a1 + 1e-12 for a1, a2 in zip(accs, accs[1:]))
    free_ok = all(no_leader_acceleration(v, p) <= p.a_m for v in vs)
    ok = eq1 == 0.0 and eq2 == 0.0 and mono_ok and free_ok
    _report(4, "car-following equilibria/monotonicity", ok,
            f"a(v0,free)={eq1!r}, a(0,s0,0)={eq2!r}, monotone grids {'ok' if mono_ok else 'VIOLATED'}")


# ---------------------------------------------------------------------------
# 5. reward arithmetic
# ---------------------------------------------------------------------------

def test_criterion_05_reward_arithmetic():
    lc = RewardConfig.for_scenario(Scenario.LANE_CHANGE)
    rm = RewardConfig.for_scenario(Scenario.RAMP_MERGE)
    worked = total_reward(RewardInputs(dt=0.1, delta_d_lt=1.85, a_lt=0.5, omega=0.1), lc)
    worked_err = abs(worked - (-0.5475))
    rng = np.random.default_rng(55)
    n = 100_000
    worst = -np.inf
    for k in range(n):
        if k % 2 == 0:
            r = total_reward(RewardInputs(
                dt=0.1, delta_d_lt=rng.uniform(-20, 20),
                a_lt=rng.uniform(-0.4, 0.4), omega=rng.uniform(-2, 2)), lc)
        else:
            r = total_reward(RewardInputs(
                dt=0.1, gap_clearances=(rng.uniform(0.01, 200), rng.uniform(0.01, 200)),
                a_lg=rng.uniform(-4.5, 2.5)), rm)
        worst = max(worst, r)
    ok = worked_err < 1e-12 and worst <= 0.0
    _report(5, "reward arithmetic", ok,
            f"worked example err {worked_err:.2e} (tol 1e-12), max random reward {worst:.3g}")


# ---------------------------------------------------------------------------
# 6. training-loop mechanics
# ---------------------------------------------------------------------------

def test_criterion_06_training_mechanics(monkeypatch):
    # (a) replay eviction is strictly first-in-first-out
    buf = ReplayBuffer(capacity=4)
    for i in range(7):
        buf.push(Transition(np.array([float(i)]), float(i), np.array([0.0]), 0.0, False))
    fifo_ok = [t.a for t in buf] == [3.0, 4.0, 5.0, 6.0]

    fast = ScenarioConfig(scenario=Scenario.LANE_CHANGE, max_episode_steps=80)
    mu_names = ("a_max", "beta_sen", "t_trs")

    # (b) action-network parameters bitwise frozen while pretraining
    cfg = TrainConfig(episodes=3, pretrain_episodes=3, n_checkpoints=1)
    res = train(cfg, fast, seed=40)
    bound = default_action_bound(Scenario.LANE_CHANGE, fast.action_range)
    fresh = make_qnet(Scenario.LANE_CHANGE, np.random.default_rng([40, 0]), bound)
    frozen_ok = np.array_equal(_flat_all(res.qnet, mu_names), _flat_all(fresh, mu_names))
    critic_moved = not np.array_equal(_flat_all(res.qnet, ("m", "v")),
                                      _flat_all(fresh, ("m", "v")))

    # (c) target copied exactly at syncs and untouched in between
    import quadq.trainer as trainer_mod
    events = []

    def recording_clone(qnet):
        dup = clone_qnet(qnet)
        events.append(np.array_equal(_flat_all(dup, ("m", "v")), _flat_all(qnet, ("m", "v"))))
        return dup

    monkeypatch.setattr(trainer_mod, "clone_qnet", recording_clone)
    cfg = TrainConfig(episodes=2, pretrain_episodes=0, n_checkpoints=1, target_sync=40)
    res = train(cfg, fast, seed=41)
    monkeypatch.undo()
    grad_steps = res.checkpoints[-1].step
    sync_ok = (len(events) == 1 + grad_steps // 40) and all(events)

    # (d) bitwise determinism of the whole loop
    cfg = TrainConfig(episodes=2, pretrain_episodes=1, n_checkpoints=2)
    r1 = train(cfg, fast, seed=42)
    r2 = train(cfg, fast, seed=42)
    det_ok = all(
        np.array_equal(c1.nets[n][1], c2.nets[n][1])
        for c1, c2 in zip(r1.checkpoints, r2.checkpoints) for n in c1.nets
    ) and r1.checkpoints[-1].rng_state == r2.checkpoints[-1].rng_state

    ok = fifo_ok and frozen_ok and critic_moved and sync_ok and det_ok
    _report(6, "training-loop mechanics", ok,
            f"fifo {fifo_ok}, frozen-mu {frozen_ok}, critic-moved {critic_moved}, "
            f"target-sync {sync_ok} ({len(events)} clones/{grad_steps} steps), determinism {det_ok}")


# ---------------------------------------------------------------------------
# 7-10. reduced-scale training trends (shared runs)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def trend_data():
    data = {}
    for scenario, episodes in TREND_EPISODES.items():
        cfg = ScenarioConfig(scenario=scenario)
        t0 = time.time()
        runs = [train(TrainConfig(episodes=episodes), cfg, seed=s) for s in SEEDS]
        train_seconds = (time.time() - t0) / len(SEEDS)
        evals = [
            (evaluate(r.checkpoints[0], cfg, EVAL_EPISODES, EVAL_SEED),
             evaluate(r.checkpoints[-1], cfg, EVAL_EPISODES, EVAL_SEED))
            for r in runs
        ]
        data[scenario] = {"runs": runs, "evals": evals, "train_seconds": train_seconds}
    return data


def test_criterion_07_training_trend(trend_data):
    details = []
    ok = True
    for scenario, d in trend_data.items():
        wins = 0
        for r in d["runs"]:
            rewards = [row["total_reward"] for row in r.log]
            wins += float(np.mean(rewards[-100:])) > float(np.mean(rewards[:100]))
        ok &= wins >= 4
        details.append(f"{scenario.value}: {wins}/{len(SEEDS)} seeds improved, "
                       f"{d['train_seconds']:.0f}s/run")
    _report(7, "training reward trend", ok, "; ".join(details))


def test_criterion_08_checkpoint_eval_trend(trend_data):
    details = []
    ok = True
    for scenario, d in trend_data.items():
        first = np.concatenate([s1.episode_rewards for s1, _ in d["evals"]])
        last = np.concatenate([s12.episode_rewards for _, s12 in d["evals"]])
        diff = float(last.mean() - first.mean())
        se = math.sqrt(first.var(ddof=1) / first.size + last.var(ddof=1) / last.size)
        ok &= diff > 3.0 * se
        details.append(f"{scenario.value}: c1 {first.mean():.2f} -> c12 {last.mean():.2f}, "
                       f"diff {diff:.2f} vs 3*SE {3 * se:.2f}")
    _report(8, "checkpoint evaluation trend", ok, "; ".join(details))


def test_criterion_09_smoothness(trend_data):
    details = []
    ok = True
    for scenario, d in trend_data.items():
        first = float(np.mean([s1.mean_smoothness for s1, _ in d["evals"]]))
        last = float(np.mean([s12.mean_smoothness for _, s12 in d["evals"]]))
        ok &= last < first
        details.append(f"{scenario.value}: {first:.4f} -> {last:.4f}")
    _report(9, "control smoothness improvement", ok, "; ".join(details))


def test_criterion_10_safety(trend_data):
    details = []
    ok = True
    for scenario, d in trend_data.items():
        rate = float(np.mean([s12.collision_rate for _, s12 in d["evals"]]))
        ok &= rate <= 0.05
        details.append(f"{scenario.value}: collision rate {rate:.3f} (limit 0.05)")
    _report(10, "safety envelope", ok, "; ".join(details))
