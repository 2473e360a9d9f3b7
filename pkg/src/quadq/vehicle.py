"""Vehicle kinematics and the relaxed intelligent-driver car-following model.

All functions here are pure: they take value objects and return new values,
so they are safe to call concurrently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

_THETA_LIMIT = math.pi / 2 - 1e-9


@dataclass
class VehicleState:
    """Pose and kinematics of a single vehicle on a straight road segment."""

    x: float            # longitudinal position (m)
    y: float            # lateral position (m)
    v: float            # speed (m/s), never negative
    theta: float = 0.0  # yaw angle relative to the road axis (rad)
    omega: float = 0.0  # yaw rate (rad/s)
    lane_id: int = 0
    length: float = 5.0

    def __post_init__(self) -> None:
        if self.v < 0:
            raise ValueError(f"speed must be non-negative, got {self.v}")
        if abs(self.theta) >= math.pi / 2:
            raise ValueError(f"|theta| must stay below pi/2, got {self.theta}")


@dataclass
class IdmParams:
    """Intelligent-driver-model parameters for one driver."""

    v0: float = 30.0    # desired free-flow speed (m/s)
    s0: float = 1.0     # minimum spacing (m)
    T: float = 1.0      # minimum headway (s)
    a_m: float = 2.0    # maximum acceleration (m/s^2)
    b: float = 1.5      # comfortable braking deceleration (m/s^2)
    delta: float = 4.0  # velocity exponent

    def __post_init__(self) -> None:
        for name in ("v0", "s0", "T", "a_m", "b", "delta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"IdmParams.{name} must be strictly positive")


def idm_acceleration(ego_v: float, delta_v: float, spacing: float, params: IdmParams) -> float:
    """Longitudinal acceleration of the relaxed IDM.

    ``delta_v`` is the closing speed (ego minus leader), ``spacing`` the
    bumper-to-bumper gap to the leader.  Uses the max() form of the model,
    which drops the additive interaction term to avoid overly conservative
    behavior.  The desired gap is floored at zero so a fast-receding leader
    reads as free road rather than a negative gap.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive; a non-positive gap is a collision state")
    if ego_v < 0:
        raise ValueError("ego_v must be non-negative")
    s_star = params.s0 + ego_v * params.T + ego_v * delta_v / (2.0 * math.sqrt(params.a_m * params.b))
    s_star = max(0.0, s_star)
    free_term = (ego_v / params.v0) ** params.delta
    gap_term = (s_star / spacing) ** 2
    return params.a_m * (1.0 - max(free_term, gap_term))


def no_leader_acceleration(ego_v: float, params: IdmParams) -> float:
    """Free-flow IDM acceleration when no leader is present."""
    if ego_v < 0:
        raise ValueError("ego_v must be non-negative")
    return params.a_m * (1.0 - (ego_v / params.v0) ** params.delta)


def step_kinematics(state: VehicleState, a_lg: float, a_lt: float, dt: float) -> VehicleState:
    """Advance one vehicle by ``dt`` under longitudinal and yaw acceleration.

    Semi-implicit Euler: velocities are updated first and the new velocities
    drive the position update.  Speed is clamped at zero (no reversing).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    omega = state.omega + a_lt * dt
    theta = state.theta + omega * dt
    theta = max(-_THETA_LIMIT, min(_THETA_LIMIT, theta))
    v = max(0.0, state.v + a_lg * dt)
    x = state.x + v * math.cos(theta) * dt
    y = state.y + v * math.sin(theta) * dt
    return replace(state, x=x, y=y, v=v, theta=theta, omega=omega)
