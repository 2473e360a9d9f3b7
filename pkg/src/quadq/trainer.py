"""Training loop: exploration, replay memory, pretraining with a frozen
action network, per-step Adam updates and periodic target-network sync.

All randomness derives from one root seed.  Stream layout (arguments to
``np.random.default_rng([...])``):

    [seed, 0]        network initialization
    [seed, 1]        exploration noise
    [seed, 2]        replay sampling
    [seed, 3, i]     world for training episode i (1-based)
    [seed, 4, e]     world for evaluation episode e
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import nn
from .qnet import (
    Checkpoint, QuadraticQNet, checkpoint_from_qnet, clone_qnet,
    default_action_bound, loss_and_gradients, make_qnet, mu, qnet_from_checkpoint,
    td_target,
)
from .reward import RewardConfig
from .scenario import Scenario
from .world import Outcome, ScenarioConfig, reset, step

DEFAULT_LEARNING_RATE = {Scenario.LANE_CHANGE: 0.0005, Scenario.RAMP_MERGE: 0.001}


class DivergenceError(RuntimeError):
    """Raised when a loss or parameter becomes non-finite during training."""


@dataclass
class Transition:
    s: np.ndarray
    a: float
    s_next: np.ndarray
    r: float
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions."""

    def __init__(self, capacity: int = 2000):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: List[Transition] = []
        self._next = 0

    def push(self, item: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        n = len(self._items)
        start = self._next if n == self.capacity else 0
        for k in range(n):
            yield self._items[(start + k) % n]


def sample_batch(buffer: ReplayBuffer, k: int, rng: np.random.Generator) -> List[Transition]:
    """k uniform draws with replacement; requires at least k stored items."""
    if len(buffer) < k:
        raise ValueError(f"buffer holds {len(buffer)} transitions, need at least {k}")
    idx = rng.integers(0, len(buffer), size=k)
    items = buffer._items
    return [items[i] for i in idx]


@dataclass
class TrainConfig:
    episodes: int = 6000
    batch_size: int = 64
    gamma: float = 0.95
    target_sync: int = 1000          # gradient steps between target copies
    learning_rate: Optional[float] = None  # None -> per-scenario default
    updates_per_step: int = 1
    pretrain_episodes: int = 50
    noise_sigma0: Optional[float] = None   # None -> 0.2 * action half-range
    noise_tau: Optional[float] = None      # None -> episodes / 3
    replay_capacity: int = 2000
    n_checkpoints: int = 12
    eval_episodes: int = 100

    def __post_init__(self) -> None:
        for name in ("episodes", "batch_size", "target_sync", "updates_per_step",
                     "replay_capacity", "n_checkpoints", "eval_episodes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.pretrain_episodes < 0:
            raise ValueError("pretrain_episodes must be non-negative")

    def resolved_lr(self, scenario: Scenario) -> float:
        return self.learning_rate if self.learning_rate is not None else DEFAULT_LEARNING_RATE[scenario]


def explore_action(qnet: QuadraticQNet, obs: np.ndarray, sigma: float,
                   rng: np.random.Generator, action_range) -> float:
    """Greedy action plus Gaussian exploration noise, clamped to the range."""
    a = mu(qnet, obs)
    if sigma > 0:
        a += sigma * rng.standard_normal()
    lo, hi = action_range
    return float(min(hi, max(lo, a)))


def _rng_state(rng: np.random.Generator):
    st = rng.bit_generator.state
    return (st["state"]["state"], st["state"]["inc"], st["has_uint32"], st["uinteger"])


@dataclass
class TrainResult:
    checkpoints: List[Checkpoint]
    checkpoint_paths: List[str]
    log: List[dict]
    qnet: QuadraticQNet


TRAIN_LOG_HEADER = "episode,steps,total_reward,mean_loss,sigma,outcome"


def _stack(batch: Sequence[Transition]):
    s = np.stack([t.s for t in batch])
    a = np.array([t.a for t in batch])
    s_next = np.stack([t.s_next for t in batch])
    r = np.array([t.r for t in batch])
    term = np.array([t.terminal for t in batch])
    return s, a, s_next, r, term


def train(config: TrainConfig, scenario_cfg: ScenarioConfig, seed: int,
          out_dir: Optional[str] = None,
          reward_cfg: Optional[RewardConfig] = None) -> TrainResult:
    """Run the full training loop and emit evenly spaced checkpoints."""
    scenario = scenario_cfg.scenario
    rng_init = np.random.default_rng([seed, 0])
    rng_noise = np.random.default_rng([seed, 1])
    rng_sample = np.random.default_rng([seed, 2])

    bound = default_action_bound(scenario, scenario_cfg.action_range)
    q = make_qnet(scenario, rng_init, bound)
    target = clone_qnet(q)
    lr = config.resolved_lr(scenario)
    adam: Dict[str, nn.AdamState] = {name: nn.adam_init(net.params, lr)
                                     for name, net in q.nets.items()}
    replay = ReplayBuffer(config.replay_capacity)

    n = config.episodes
    sigma0 = (config.noise_sigma0 if config.noise_sigma0 is not None
              else 0.2 * 0.5 * (scenario_cfg.action_range[1] - scenario_cfg.action_range[0]))
    tau = config.noise_tau if config.noise_tau is not None else n / 3.0
    ckpt_at = {k: max(1, math.ceil(k * n / config.n_checkpoints))
               for k in range(1, config.n_checkpoints + 1)}

    checkpoints: List[Checkpoint] = []
    paths: List[str] = []
    log: List[dict] = []
    grad_steps = 0

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    for episode in range(1, n + 1):
        sigma = sigma0 * math.exp(-(episode - 1) / tau)
        freeze = episode <= config.pretrain_episodes
        world, obs = reset(scenario_cfg, [seed, 3, episode], reward_cfg)
        ep_reward = 0.0
        losses: List[float] = []
        steps = 0
        while world.outcome is Outcome.RUNNING:
            a = explore_action(q, obs, sigma, rng_noise, scenario_cfg.action_range)
            res = step(world, a)
            replay.push(Transition(obs, a, res.next_obs, res.reward, res.terminal))
            obs = res.next_obs
            ep_reward += res.reward
            steps += 1
            if len(replay) >= config.batch_size:
                for _ in range(config.updates_per_step):
                    batch = sample_batch(replay, config.batch_size, rng_sample)
                    s, a_b, s_next, r, term = _stack(batch)
                    y = td_target(r, s_next, term, config.gamma, target)
                    loss, grads = loss_and_gradients(q, s, a_b, y, freeze_mu=freeze)
                    if not math.isfinite(loss):
                        raise DivergenceError(
                            f"non-finite loss at episode {episode}, gradient step {grad_steps}")
                    for name, net in q.nets.items():
                        nn.adam_step(net.params, grads[name], adam[name])
                    grad_steps += 1
                    if grad_steps % config.target_sync == 0:
                        target = clone_qnet(q)
                    if grad_steps % 500 == 0:
                        for name, net in q.nets.items():
                            if not all(np.isfinite(p).all() for p in net.params):
                                raise DivergenceError(
                                    f"non-finite parameter in net {name} at episode {episode}")
                    losses.append(loss)

        log.append({
            "episode": episode,
            "steps": steps,
            "total_reward": ep_reward,
            "mean_loss": float(np.mean(losses)) if losses else float("nan"),
            "sigma": sigma,
            "outcome": world.outcome.value,
        })
        for k in range(1, config.n_checkpoints + 1):
            if ckpt_at[k] == episode:
                ckpt = checkpoint_from_qnet(q, step=grad_steps, episode=episode,
                                            rng_state=_rng_state(rng_noise))
                checkpoints.append(ckpt)
                if out_dir:
                    path = os.path.join(out_dir, f"checkpoint_{k:02d}.ckpt")
                    from .qnet import save_checkpoint
                    save_checkpoint(path, ckpt)
                    paths.append(path)

    return TrainResult(checkpoints=checkpoints, checkpoint_paths=paths, log=log, qnet=q)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalSummary:
    episodes: int
    mean_reward: float
    std_reward: float
    mean_discounted: float
    success_rate: float
    collision_rate: float
    mean_smoothness: float  # mean |omega| (lane change) or mean |jerk| (ramp merge)
    episode_rewards: List[float] = field(default_factory=list)


def evaluate(checkpoint, scenario_cfg: ScenarioConfig, episodes: int, seed: int,
             gamma: float = 0.95,
             reward_cfg: Optional[RewardConfig] = None) -> EvalSummary:
    """Greedy (noise-free) rollouts of a checkpoint or a live network."""
    if episodes <= 0:
        raise ValueError("episodes must be positive")
    if isinstance(checkpoint, Checkpoint):
        if checkpoint.scenario is not scenario_cfg.scenario:
            raise ValueError(
                f"checkpoint is for {checkpoint.scenario.value}, "
                f"config is {scenario_cfg.scenario.value}")
        q = qnet_from_checkpoint(checkpoint)
    elif isinstance(checkpoint, QuadraticQNet):
        q = checkpoint
    else:
        raise TypeError("expected a Checkpoint or QuadraticQNet")

    rewards, discounted, successes, collisions, smooth = [], [], 0, 0, []
    for e in range(episodes):
        world, obs = reset(scenario_cfg, [seed, 4, e], reward_cfg)
        total = 0.0
        disc = 0.0
        g = 1.0
        prev_a_lg = None
        roughness = []
        while world.outcome is Outcome.RUNNING:
            a = mu(q, obs)
            res = step(world, a)
            total += res.reward
            disc += g * res.reward
            g *= gamma
            if scenario_cfg.scenario is Scenario.LANE_CHANGE:
                roughness.append(abs(world.ego.omega))
            else:
                if prev_a_lg is not None:
                    roughness.append(abs(res.a_lg - prev_a_lg) / scenario_cfg.dt)
                prev_a_lg = res.a_lg
            obs = res.next_obs
        rewards.append(total)
        discounted.append(disc)
        successes += world.outcome is Outcome.SUCCESS
        collisions += world.outcome is Outcome.COLLISION
        smooth.append(float(np.mean(roughness)) if roughness else 0.0)

    return EvalSummary(
        episodes=episodes,
        mean_reward=float(np.mean(rewards)),
        std_reward=float(np.std(rewards)),
        mean_discounted=float(np.mean(discounted)),
        success_rate=successes / episodes,
        collision_rate=collisions / episodes,
        mean_smoothness=float(np.mean(smooth)),
        episode_rewards=[float(r) for r in rewards],
    )
