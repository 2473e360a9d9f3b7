"""Immediate reward: weighted safety, comfort and efficiency penalties.

Every term is a penalty (non-positive), so the best achievable step reward
is the pure time cost and the agent is taught to finish the maneuver quickly
while staying centered and smooth.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .scenario import Scenario

# Reference distance for the longitudinal safety feature: a gap of D_REF
# meters scores exactly -w_s1 per vehicle; smaller gaps are penalized harder.
D_REF = 10.0


@dataclass
class RewardConfig:
    """Feature weights; defaults follow the per-scenario tuning."""

    scenario: Scenario
    w_s1: float = 0.0   # longitudinal clearance weight (ramp merge)
    w_s2: float = 0.0   # lateral offset weight (lane change)
    w_c1: float = 0.0   # control magnitude weight
    w_c2: float = 0.0   # yaw-rate weight (lane change)
    w_t: float = 0.0    # time cost weight

    def __post_init__(self) -> None:
        for name in ("w_s1", "w_s2", "w_c1", "w_c2", "w_t"):
            if getattr(self, name) < 0:
                raise ValueError(f"RewardConfig.{name} must be non-negative")

    @classmethod
    def for_scenario(cls, scenario: Scenario) -> "RewardConfig":
        if scenario is Scenario.LANE_CHANGE:
            return cls(scenario, w_s2=0.05, w_c1=0.5, w_c2=2.0, w_t=0.05)
        return cls(scenario, w_s1=0.01, w_c1=0.5, w_t=0.05)


@dataclass
class RewardInputs:
    """Per-step quantities the reward terms are evaluated on."""

    dt: float
    delta_d_lt: float = 0.0                       # lateral offset to target centerline (m)
    gap_clearances: Sequence[float] = field(default_factory=tuple)  # clearances to gap vehicles (m)
    a_lt: float = 0.0                             # yaw acceleration (rad/s^2)
    a_lg: float = 0.0                             # longitudinal acceleration (m/s^2)
    omega: float = 0.0                            # yaw rate (rad/s)

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("dt must be positive")


def safety_reward(inputs: RewardInputs, cfg: RewardConfig) -> float:
    """Penalty for lateral offset (lane change) or small gap clearances (merge)."""
    if cfg.scenario is Scenario.LANE_CHANGE:
        return -cfg.w_s2 * abs(inputs.delta_d_lt)
    total = 0.0
    for d in inputs.gap_clearances:
        if d <= 0:
            raise ValueError("gap clearance must be positive (collision is handled by termination)")
        total += D_REF / max(d, 1.0)
    return -cfg.w_s1 * total


def comfort_reward(inputs: RewardInputs, cfg: RewardConfig) -> float:
    """Penalty on the control magnitude (and yaw rate in the lane-change case)."""
    if cfg.scenario is Scenario.LANE_CHANGE:
        return -cfg.w_c1 * abs(inputs.a_lt) - cfg.w_c2 * abs(inputs.omega)
    return -cfg.w_c1 * abs(inputs.a_lg)


def efficiency_reward(inputs: RewardInputs, cfg: RewardConfig) -> float:
    """Constant time cost per step."""
    return -cfg.w_t * inputs.dt


def total_reward(inputs: RewardInputs, cfg: RewardConfig) -> float:
    return safety_reward(inputs, cfg) + comfort_reward(inputs, cfg) + efficiency_reward(inputs, cfg)
