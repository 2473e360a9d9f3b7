import math

import numpy as np
import pytest

from quadq import nn
from quadq.qnet import make_qnet, default_action_bound, mu
from quadq.scenario import Scenario
from quadq.trainer import (
    DEFAULT_LEARNING_RATE, ReplayBuffer, TrainConfig, Transition,
    evaluate, explore_action, sample_batch, train,
)
from quadq.world import ScenarioConfig

# a deliberately short world so trainer tests stay fast
FAST_LC = ScenarioConfig(scenario=Scenario.LANE_CHANGE, max_episode_steps=80)
FAST_RM = ScenarioConfig(scenario=Scenario.RAMP_MERGE, max_episode_steps=80)


def _tr(i):
    return Transition(np.full(3, float(i)), float(i), np.full(3, float(i)), -1.0, False)


# ---------------------------------------------------------------------------
# replay buffer
# ---------------------------------------------------------------------------

def test_replay_fifo_eviction_order():
    buf = ReplayBuffer(capacity=5)
    for i in range(8):
        buf.push(_tr(i))
    assert len(buf) == 5
    # oldest three evicted; iteration yields insertion order
    assert [t.a for t in buf] == [3.0, 4.0, 5.0, 6.0, 7.0]


def test_replay_partial_fill():
    buf = ReplayBuffer(capacity=5)
    for i in range(3):
        buf.push(_tr(i))
    assert [t.a for t in buf] == [0.0, 1.0, 2.0]


def test_replay_capacity_validation():
    with pytest.raises(ValueError):
        ReplayBuffer(capacity=0)


def test_sample_batch_underfilled_raises():
    buf = ReplayBuffer(capacity=10)
    buf.push(_tr(0))
    with pytest.raises(ValueError):
        sample_batch(buf, 2, np.random.default_rng(0))


def test_sample_batch_uniform_with_replacement():
    buf = ReplayBuffer(capacity=50)
    for i in range(50):
        buf.push(_tr(i))
    rng = np.random.default_rng(0)
    draws = [t.a for _ in range(200) for t in sample_batch(buf, 50, rng)]
    counts = np.bincount(np.array(draws, dtype=int), minlength=50)
    # chi-square against uniform: 49 dof, mean 200 per bin
    chi2 = float(((counts - 200.0) ** 2 / 200.0).sum())
    assert chi2 < 90.0  # p ~ 2e-4 cutoff for 49 dof


# ---------------------------------------------------------------------------
# exploration
# ---------------------------------------------------------------------------

def test_explore_action_zero_sigma_is_greedy():
    q = make_qnet(Scenario.LANE_CHANGE, np.random.default_rng(0), 0.4)
    rng = np.random.default_rng(1)
    obs = np.zeros(10)
    assert explore_action(q, obs, 0.0, rng, (-0.4, 0.4)) == mu(q, obs)


def test_explore_action_clamped():
    q = make_qnet(Scenario.LANE_CHANGE, np.random.default_rng(0), 0.4)
    rng = np.random.default_rng(1)
    obs = np.zeros(10)
    for _ in range(100):
        a = explore_action(q, obs, 10.0, rng, (-0.4, 0.4))
        assert -0.4 <= a <= 0.4


# ---------------------------------------------------------------------------
# training loop mechanics
# ---------------------------------------------------------------------------

def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(episodes=0)
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.5)
    with pytest.raises(ValueError):
        TrainConfig(pretrain_episodes=-1)
    assert TrainConfig().resolved_lr(Scenario.RAMP_MERGE) == DEFAULT_LEARNING_RATE[Scenario.RAMP_MERGE]
    assert TrainConfig(learning_rate=0.01).resolved_lr(Scenario.RAMP_MERGE) == 0.01


def test_train_deterministic_bitwise():
    cfg = TrainConfig(episodes=2, pretrain_episodes=0, n_checkpoints=2)
    r1 = train(cfg, FAST_LC, seed=13)
    r2 = train(cfg, FAST_LC, seed=13)
    assert len(r1.checkpoints) == 2
    for c1, c2 in zip(r1.checkpoints, r2.checkpoints):
        assert c1.episode == c2.episode and c1.step == c2.step
        for name in c1.nets:
            np.testing.assert_array_equal(c1.nets[name][1], c2.nets[name][1])
        assert c1.rng_state == c2.rng_state


def test_pretraining_freezes_action_network_bitwise():
    cfg = TrainConfig(episodes=2, pretrain_episodes=2, n_checkpoints=1)
    seed = 21
    result = train(cfg, FAST_LC, seed=seed)
    bound = default_action_bound(Scenario.LANE_CHANGE, FAST_LC.action_range)
    fresh = make_qnet(Scenario.LANE_CHANGE, np.random.default_rng([seed, 0]), bound)
    for name in ("a_max", "beta_sen", "t_trs"):
        np.testing.assert_array_equal(
            nn.flatten_params(result.qnet.nets[name]),
            nn.flatten_params(fresh.nets[name]))
    # the critic, by contrast, must have moved
    assert not np.array_equal(nn.flatten_params(result.qnet.net_v),
                              nn.flatten_params(fresh.net_v))


def test_target_sync_cadence(monkeypatch):
    import quadq.trainer as trainer_mod
    calls = []
    real = trainer_mod.clone_qnet

    def counting_clone(q):
        calls.append(1)
        return real(q)

    monkeypatch.setattr(trainer_mod, "clone_qnet", counting_clone)
    cfg = TrainConfig(episodes=2, pretrain_episodes=0, n_checkpoints=1, target_sync=50)
    result = train(cfg, FAST_LC, seed=3)
    total_steps = sum(r["steps"] for r in result.log)
    grad_steps = total_steps - (cfg.batch_size - 1)  # updates start at the 64th transition
    assert result.checkpoints[-1].step == grad_steps
    # one initial clone plus one per completed sync interval
    assert len(calls) == 1 + grad_steps // cfg.target_sync


def test_noise_schedule_in_log():
    cfg = TrainConfig(episodes=3, pretrain_episodes=0, n_checkpoints=1,
                      noise_sigma0=0.3, noise_tau=2.0)
    result = train(cfg, FAST_LC, seed=4)
    for row in result.log:
        expected = 0.3 * math.exp(-(row["episode"] - 1) / 2.0)
        assert row["sigma"] == pytest.approx(expected, rel=1e-12)


def test_checkpoints_evenly_spaced():
    cfg = TrainConfig(episodes=12, pretrain_episodes=0, n_checkpoints=4)
    result = train(cfg, FAST_RM, seed=5)
    assert [c.episode for c in result.checkpoints] == [3, 6, 9, 12]


def test_train_writes_checkpoint_files(tmp_path):
    cfg = TrainConfig(episodes=2, pretrain_episodes=0, n_checkpoints=2)
    result = train(cfg, FAST_RM, seed=6, out_dir=str(tmp_path))
    assert len(result.checkpoint_paths) == 2
    for p in result.checkpoint_paths:
        assert (tmp_path / p.split("/")[-1]).exists()


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def test_evaluate_scenario_mismatch_raises():
    cfg = TrainConfig(episodes=1, pretrain_episodes=0, n_checkpoints=1)
    result = train(cfg, FAST_LC, seed=7)
    with pytest.raises(ValueError):
        evaluate(result.checkpoints[0], FAST_RM, 1, 0)
    with pytest.raises(ValueError):
        evaluate(result.checkpoints[0], FAST_LC, 0, 0)
    with pytest.raises(TypeError):
        evaluate("not a checkpoint", FAST_LC, 1, 0)


def test_evaluate_summary_shape_and_determinism():
    cfg = TrainConfig(episodes=1, pretrain_episodes=0, n_checkpoints=1)
    result = train(cfg, FAST_LC, seed=8)
    s1 = evaluate(result.checkpoints[0], FAST_LC, 5, seed=8)
    s2 = evaluate(result.checkpoints[0], FAST_LC, 5, seed=8)
    assert s1.episode_rewards == s2.episode_rewards
    assert len(s1.episode_rewards) == 5
    assert s1.mean_reward == pytest.approx(np.mean(s1.episode_rewards))
    assert 0.0 <= s1.success_rate <= 1.0
    assert 0.0 <= s1.collision_rate <= 1.0
    assert s1.mean_smoothness >= 0.0
    # greedy rollouts are noise-free, so the summary is independent of
    # everything but the checkpoint and the eval seed
    s3 = evaluate(result.qnet, FAST_LC, 5, seed=8)
    assert s3.episode_rewards == s1.episode_rewards
