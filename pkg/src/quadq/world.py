"""Episode environment for the lane-change and ramp-merge scenarios.

Straight multi-lane road segment, randomized background traffic driven by
the intelligent driver model, gap selection, observation construction and
termination detection.  Background vehicles are stored in flat numpy arrays
(sorted by lane, then position; IDM never reorders a lane) so a step is a
handful of vectorized operations.

A WorldState is single-owner: `step` mutates it.  Distinct worlds are fully
independent and carry their own seeded RNG.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import IO, Optional, Tuple

import numpy as np

from .reward import RewardConfig, RewardInputs, total_reward
from .scenario import (
    LC_DLAT, LC_KAPPA, LC_LAG_DV, LC_LAG_DX, LC_LEAD_DV, LC_LEAD_DX,
    LC_OMEGA, LC_OWN_DX, LC_THETA, LC_V,
    RM_DMERGE, RM_LAG_DV, RM_LAG_DX, RM_LEAD_DV, RM_LEAD_DX,
    RM_OWN_DV, RM_OWN_DX, RM_V,
    SENTINEL_DX, Scenario, obs_scales,
)
from .vehicle import IdmParams, VehicleState, step_kinematics

VEHICLE_LENGTH = 5.0
VEHICLE_WIDTH = 1.8
# Lateral margin at which a vehicle ahead starts to matter for car-following.
LEADER_LATERAL_MARGIN = 2.2
# Length of the linear taper that brings the ramp onto the rightmost lane.
RAMP_TAPER = 50.0
# Rear extent of the traffic spawn region relative to the ego start (m).
SPAWN_BEHIND = 150.0
# Emergency braking floor for background vehicles (m/s^2).
MAX_BRAKE = 9.0

# Success thresholds for the lane-change maneuver.
LC_SUCCESS_DLAT = 0.2    # m
LC_SUCCESS_THETA = 0.02  # rad
LC_SUCCESS_OMEGA = 0.05  # rad/s
# Minimum bumper clearance to both gap vehicles for a completed merge (m).
RM_SUCCESS_CLEARANCE = 0.5

# Driver-style IDM overrides.
AGGRESSIVE_STYLE = {"a_m": 3.0, "T": 0.5, "s0": 0.5}
DEFENSIVE_STYLE = {"a_m": 1.2, "T": 1.8, "s0": 2.0}

_KMH = 1.0 / 3.6


class Outcome(enum.Enum):
    RUNNING = "running"
    SUCCESS = "success"
    COLLISION = "collision"
    TIMEOUT = "timeout"


@dataclass
class ScenarioConfig:
    scenario: Scenario
    segment_length: float = 350.0
    lane_count: int = 3
    lane_width: float = 3.7
    command_distance: float = 150.0
    ramp_start_distance: float = 150.0
    init_speed_range: Tuple[float, float] = (30.0, 50.0)        # km/h
    departure_interval_range: Tuple[float, float] = (5.0, 10.0)  # s
    speed_limit_range: Tuple[float, float] = (80.0, 120.0)       # km/h
    aggressive_fraction: float = 0.1
    defensive_fraction: float = 0.1
    dt: float = 0.1
    max_episode_steps: int = 300
    lg_action_range: Tuple[float, float] = (-4.5, 2.5)   # m/s^2
    lt_action_range: Tuple[float, float] = (-0.4, 0.4)   # rad/s^2
    gap_min: float = 10.0
    collision_penalty: float = 20.0

    def __post_init__(self) -> None:
        self.scenario = Scenario(self.scenario)
        for name in ("init_speed_range", "departure_interval_range",
                     "speed_limit_range", "lg_action_range", "lt_action_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must be a nonempty interval")
        if not (0 <= self.aggressive_fraction <= 1 and 0 <= self.defensive_fraction <= 1
                and self.aggressive_fraction + self.defensive_fraction <= 1):
            raise ValueError("style fractions must lie in [0,1] and sum to at most 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.max_episode_steps <= 0 or self.lane_count < 2:
            raise ValueError("max_episode_steps and lane_count must be positive")
        if self.collision_penalty < 0:
            raise ValueError("collision_penalty is a magnitude and must be >= 0")

    @property
    def action_range(self) -> Tuple[float, float]:
        if self.scenario is Scenario.LANE_CHANGE:
            return self.lt_action_range
        return self.lg_action_range

    def lane_center(self, lane_id: int) -> float:
        return lane_id * self.lane_width

    @property
    def merge_x(self) -> float:
        """Longitudinal position where the ramp meets the rightmost lane."""
        return self.ramp_start_distance

    def ramp_y(self, x: float) -> float:
        """Ramp centerline: parallel to lane 0, linear taper onto it."""
        if x >= self.merge_x:
            return 0.0
        if x <= self.merge_x - RAMP_TAPER:
            return -self.lane_width
        return -self.lane_width * (self.merge_x - x) / RAMP_TAPER


@dataclass
class Traffic:
    """Background vehicles as flat arrays, sorted by (lane, x)."""

    x: np.ndarray
    v: np.ndarray
    lane: np.ndarray
    v0: np.ndarray
    s0: np.ndarray
    T: np.ndarray
    a_m: np.ndarray
    b: np.ndarray
    style: np.ndarray  # 0 normal, 1 aggressive, 2 defensive

    @property
    def n(self) -> int:
        return int(self.x.size)

    def y(self, cfg: ScenarioConfig) -> np.ndarray:
        return self.lane * cfg.lane_width


@dataclass
class StepResult:
    next_obs: np.ndarray
    reward: float
    terminal: bool
    outcome: Outcome
    a_lg: float = 0.0
    a_lt: float = 0.0


@dataclass
class WorldState:
    cfg: ScenarioConfig
    reward_cfg: RewardConfig
    rng: np.random.Generator
    ego: VehicleState
    ego_idm: IdmParams
    traffic: Traffic
    target_lane: Optional[int] = None
    gap_leader: Optional[int] = None
    gap_lagger: Optional[int] = None
    step_count: int = 0
    outcome: Outcome = Outcome.RUNNING
    last_a_lg: float = 0.0


# ---------------------------------------------------------------------------
# Traffic generation
# ---------------------------------------------------------------------------

def _spawn_traffic(cfg: ScenarioConfig, rng: np.random.Generator, lanes) -> Traffic:
    xs, vs, lns, v0s, intervals, styles = [], [], [], [], [], []
    lo_i, hi_i = cfg.init_speed_range
    lo_l, hi_l = cfg.speed_limit_range
    lo_d, hi_d = cfg.departure_interval_range
    for lane in lanes:
        x = cfg.segment_length - rng.uniform(0.0, 40.0)
        while x > -SPAWN_BEHIND:
            speed = rng.uniform(lo_i, hi_i) * _KMH
            xs.append(x)
            vs.append(speed)
            lns.append(lane)
            v0s.append(rng.uniform(lo_l, hi_l) * _KMH)
            styles.append(rng.random())
            x -= rng.uniform(lo_d, hi_d) * speed + VEHICLE_LENGTH
    x = np.array(xs)
    lane = np.array(lns, dtype=int)
    order = np.lexsort((x, lane))
    x = x[order]
    lane = lane[order]
    v = np.array(vs)[order]
    v0 = np.array(v0s)[order]
    u = np.array(styles)[order]

    style = np.zeros(x.size, dtype=int)
    style[u < cfg.aggressive_fraction] = 1
    style[(u >= cfg.aggressive_fraction)
          & (u < cfg.aggressive_fraction + cfg.defensive_fraction)] = 2
    base = IdmParams()
    s0 = np.full(x.size, base.s0)
    T = np.full(x.size, base.T)
    a_m = np.full(x.size, base.a_m)
    b = np.full(x.size, base.b)
    for code, ov in ((1, AGGRESSIVE_STYLE), (2, DEFENSIVE_STYLE)):
        mask = style == code
        s0[mask] = ov["s0"]
        T[mask] = ov["T"]
        a_m[mask] = ov["a_m"]
    return Traffic(x=x, v=v, lane=lane, v0=v0, s0=s0, T=T, a_m=a_m, b=b, style=style)


def _drop_around(traffic: Traffic, lane: int, x: float, clear: float) -> Traffic:
    keep = ~((traffic.lane == lane) & (np.abs(traffic.x - x) < clear))
    return Traffic(**{f: getattr(traffic, f)[keep]
                      for f in ("x", "v", "lane", "v0", "s0", "T", "a_m", "b", "style")})


# ---------------------------------------------------------------------------
# IDM over arrays
# ---------------------------------------------------------------------------

def _idm_array(v, dv, s, v0, s0, T, a_m, b):
    s = np.maximum(s, 0.01)
    s_star = np.maximum(0.0, s0 + v * T + v * dv / (2.0 * np.sqrt(a_m * b)))
    a = a_m * (1.0 - np.maximum((v / v0) ** 4, (s_star / s) ** 2))
    return np.clip(a, -MAX_BRAKE, None)


def _advance_traffic(world: WorldState, ego_active: bool) -> None:
    """One synchronous IDM step for every background vehicle."""
    cfg = world.cfg
    tr = world.traffic
    if tr.n == 0:
        return
    x, v = tr.x, tr.v
    # same-lane leader: next entry in the (lane, x)-sorted arrays
    lead_s = np.full(tr.n, 1e6)
    lead_dv = np.zeros(tr.n)
    same_lane = np.empty(tr.n, dtype=bool)
    same_lane[:-1] = tr.lane[:-1] == tr.lane[1:]
    same_lane[-1] = False
    idx = np.nonzero(same_lane)[0]
    lead_s[idx] = x[idx + 1] - x[idx] - VEHICLE_LENGTH
    lead_dv[idx] = v[idx] - v[idx + 1]
    accel = _idm_array(v, lead_dv, lead_s, tr.v0, tr.s0, tr.T, tr.a_m, tr.b)

    if ego_active:
        ego = world.ego
        lane_y = tr.lane * cfg.lane_width
        # a vehicle yields to the ego once the ego is ahead of it and has
        # visibly encroached toward its lane.  For lane changes drivers react
        # a full lane width out (a car angling across the boundary is an
        # unambiguous signal); elsewhere the trigger is half a lane width
        # (majority overlap).
        if cfg.scenario is Scenario.LANE_CHANGE:
            yield_band = cfg.lane_width
        else:
            yield_band = cfg.lane_width / 2.0
        overlap = np.abs(lane_y - ego.y) < yield_band
        if cfg.scenario is Scenario.RAMP_MERGE and ego.x >= cfg.merge_x - RAMP_TAPER:
            # on the taper the ego is visibly committed to merging; mainline
            # drivers behind it already treat it as their leader
            overlap = overlap | (tr.lane == 0)
        mask = overlap & (x < ego.x)
        if mask.any():
            s_ego = ego.x - x[mask] - VEHICLE_LENGTH
            dv_ego = v[mask] - ego.v
            a_ego = _idm_array(v[mask], dv_ego, s_ego,
                               tr.v0[mask], tr.s0[mask], tr.T[mask],
                               tr.a_m[mask], tr.b[mask])
            accel[mask] = np.minimum(accel[mask], a_ego)

    v_new = np.maximum(0.0, v + accel * cfg.dt)
    tr.v = v_new
    tr.x = x + v_new * cfg.dt


def _ego_leader(world: WorldState):
    """Nearest laterally-overlapping vehicle ahead of the ego, or None."""
    tr = world.traffic
    if tr.n == 0:
        return None
    lane_y = tr.lane * world.cfg.lane_width
    mask = (np.abs(lane_y - world.ego.y) < LEADER_LATERAL_MARGIN) & (tr.x > world.ego.x)
    if not mask.any():
        return None
    cand = np.nonzero(mask)[0]
    return int(cand[np.argmin(tr.x[cand])])


def _ego_idm_accel(world: WorldState) -> float:
    from .vehicle import idm_acceleration, no_leader_acceleration
    leader = _ego_leader(world)
    ego = world.ego
    if leader is None:
        return no_leader_acceleration(ego.v, world.ego_idm)
    spacing = world.traffic.x[leader] - ego.x - VEHICLE_LENGTH
    if spacing <= 0.01:
        return -MAX_BRAKE
    dv = ego.v - world.traffic.v[leader]
    return idm_acceleration(ego.v, dv, spacing, world.ego_idm)


# ---------------------------------------------------------------------------
# Gap selection
# ---------------------------------------------------------------------------

def select_gap(world: WorldState) -> Tuple[Optional[int], Optional[int]]:
    """Pick the target gap in the target lane (lane change) or the mainline
    (ramp merge).

    The gap bracketing the ego's position wins if both its clearances exceed
    gap_min.  Otherwise every gap (including the open road in front of and
    behind the platoon) is scored by the minimum clearance the ego would
    enjoy at its insertion point (current position for the bracketing gap,
    gap midpoint otherwise); among gaps clearing gap_min the nearest is
    taken, and if none qualifies the gap with the largest minimum clearance.
    Returns indices into the traffic arrays.
    """
    cfg = world.cfg
    target = world.target_lane if cfg.scenario is Scenario.LANE_CHANGE else 0
    tr = world.traffic
    cand = np.nonzero(tr.lane == target)[0]
    if cand.size == 0:
        return None, None
    cand = cand[np.argsort(tr.x[cand])]
    xs = tr.x[cand]
    p = world.ego.x

    gaps = []  # (leader_idx|None, lagger_idx|None, x_lead|None, x_lag|None)
    gaps.append((int(cand[0]), None, xs[0], None))
    for i in range(cand.size - 1):
        gaps.append((int(cand[i + 1]), int(cand[i]), xs[i + 1], xs[i]))
    gaps.append((None, int(cand[-1]), None, xs[-1]))

    scored = []
    bracketing = None
    for gap in gaps:
        _, _, x_lead, x_lag = gap
        is_br = (x_lag is None or x_lag <= p) and (x_lead is None or x_lead > p)
        if is_br:
            point = p
        elif x_lead is None:
            point = x_lag + 50.0
        elif x_lag is None:
            point = x_lead - 50.0
        else:
            point = 0.5 * (x_lead + x_lag)
        lead_c = min(100.0, x_lead - point) if x_lead is not None else 100.0
        lag_c = min(100.0, point - x_lag) if x_lag is not None else 100.0
        entry = (gap, min(lead_c, lag_c), abs(point - p))
        scored.append(entry)
        if is_br:
            bracketing = entry

    if bracketing is not None and bracketing[1] > cfg.gap_min:
        chosen = bracketing[0]
    else:
        qualifying = [e for e in scored if e[1] > cfg.gap_min]
        if qualifying:
            chosen = min(qualifying, key=lambda e: e[2])[0]
        else:
            chosen = max(scored, key=lambda e: e[1])[0]
    return chosen[0], chosen[1]


# ---------------------------------------------------------------------------
# Reset
# ---------------------------------------------------------------------------

def reset(cfg: ScenarioConfig, seed, reward_cfg: Optional[RewardConfig] = None):
    """Build a fresh episode; returns (WorldState, Observation).

    Deterministic for a fixed seed.  For the lane-change scenario the world
    is rolled forward with the ego lane-keeping under IDM until it has
    covered command_distance; the returned world starts at the moment the
    maneuver command is issued.
    """
    rng = np.random.default_rng(seed)
    reward_cfg = reward_cfg or RewardConfig.for_scenario(cfg.scenario)
    lo_i, hi_i = cfg.init_speed_range
    lo_l, hi_l = cfg.speed_limit_range

    if cfg.scenario is Scenario.LANE_CHANGE:
        ego_lane = cfg.lane_count // 2
        ego_v = rng.uniform(lo_i, hi_i) * _KMH
        ego_v0 = rng.uniform(lo_l, hi_l) * _KMH
        ego = VehicleState(x=0.0, y=cfg.lane_center(ego_lane), v=ego_v,
                           lane_id=ego_lane, length=VEHICLE_LENGTH)
        traffic = _spawn_traffic(cfg, rng, range(cfg.lane_count))
        traffic = _drop_around(traffic, ego_lane, ego.x, 25.0)
        world = WorldState(cfg=cfg, reward_cfg=reward_cfg, rng=rng, ego=ego,
                           ego_idm=IdmParams(v0=ego_v0), traffic=traffic)
        # roll forward in lane until the maneuver command is issued
        for _ in range(int(60.0 / cfg.dt)):
            if world.ego.x >= cfg.command_distance:
                break
            a_lg = float(np.clip(_ego_idm_accel(world), *cfg.lg_action_range))
            world.ego = step_kinematics(world.ego, a_lg, 0.0, cfg.dt)
            _advance_traffic(world, ego_active=True)
        direction = int(rng.choice([-1, 1]))
        world.target_lane = ego_lane + direction
    else:
        ego_v = rng.uniform(lo_i, hi_i) * _KMH
        ego_v0 = rng.uniform(lo_l, hi_l) * _KMH
        ego = VehicleState(x=0.0, y=cfg.ramp_y(0.0), v=ego_v,
                           lane_id=-1, length=VEHICLE_LENGTH)
        traffic = _spawn_traffic(cfg, rng, [0])
        world = WorldState(cfg=cfg, reward_cfg=reward_cfg, rng=rng, ego=ego,
                           ego_idm=IdmParams(v0=ego_v0), traffic=traffic)

    world.gap_leader, world.gap_lagger = select_gap(world)
    return world, observe(world)


# ---------------------------------------------------------------------------
# Observation
# ---------------------------------------------------------------------------

def _gap_slots(world: WorldState, idx: Optional[int], behind: bool):
    """(dx, dv) for one gap vehicle, sentinel-filled when absent."""
    if idx is None:
        return (-SENTINEL_DX if behind else SENTINEL_DX), 0.0
    tr = world.traffic
    dx = float(np.clip(tr.x[idx] - world.ego.x, -SENTINEL_DX, SENTINEL_DX))
    dv = float(tr.v[idx] - world.ego.v)
    return dx, dv


def observe(world: WorldState) -> np.ndarray:
    cfg = world.cfg
    ego = world.ego
    scales = obs_scales(cfg.scenario)
    lead_dx, lead_dv = _gap_slots(world, world.gap_leader, behind=False)
    lag_dx, lag_dv = _gap_slots(world, world.gap_lagger, behind=True)
    own = _ego_leader(world)
    own_dx, own_dv = _gap_slots(world, own, behind=False)

    if cfg.scenario is Scenario.LANE_CHANGE:
        obs = np.empty(10)
        obs[LC_DLAT] = cfg.lane_center(world.target_lane) - ego.y
        obs[LC_V] = ego.v
        obs[LC_THETA] = ego.theta
        obs[LC_OMEGA] = ego.omega
        obs[LC_LEAD_DX] = lead_dx
        obs[LC_LEAD_DV] = lead_dv
        obs[LC_LAG_DX] = lag_dx
        obs[LC_LAG_DV] = lag_dv
        obs[LC_OWN_DX] = own_dx
        obs[LC_KAPPA] = 0.0  # roads are simulated straight
    else:
        obs = np.empty(8)
        obs[RM_V] = ego.v
        obs[RM_DMERGE] = cfg.merge_x - ego.x
        obs[RM_OWN_DX] = own_dx
        obs[RM_OWN_DV] = own_dv
        obs[RM_LEAD_DX] = lead_dx
        obs[RM_LEAD_DV] = lead_dv
        obs[RM_LAG_DX] = lag_dx
        obs[RM_LAG_DV] = lag_dv
    return obs / scales


# ---------------------------------------------------------------------------
# Step
# ---------------------------------------------------------------------------

def _gap_clearances(world: WorldState):
    out = []
    for idx, behind in ((world.gap_leader, False), (world.gap_lagger, True)):
        if idx is None:
            out.append(SENTINEL_DX)
            continue
        dx = world.traffic.x[idx] - world.ego.x
        clear = (dx if not behind else -dx) - VEHICLE_LENGTH
        out.append(max(0.01, float(clear)))
    return tuple(out)


def _check_collision(world: WorldState) -> bool:
    tr = world.traffic
    if tr.n == 0:
        return False
    dy = np.abs(tr.lane * world.cfg.lane_width - world.ego.y)
    dx = np.abs(tr.x - world.ego.x)
    return bool(np.any((dx < VEHICLE_LENGTH) & (dy < VEHICLE_WIDTH)))


def _check_success(world: WorldState) -> bool:
    cfg = world.cfg
    ego = world.ego
    if cfg.scenario is Scenario.LANE_CHANGE:
        dlat = cfg.lane_center(world.target_lane) - ego.y
        return (abs(dlat) < LC_SUCCESS_DLAT and abs(ego.theta) < LC_SUCCESS_THETA
                and abs(ego.omega) < LC_SUCCESS_OMEGA)
    if ego.x <= cfg.merge_x:
        return False
    for idx, behind in ((world.gap_leader, False), (world.gap_lagger, True)):
        if idx is None:
            continue
        dx = world.traffic.x[idx] - ego.x
        clear = (dx if not behind else -dx) - VEHICLE_LENGTH
        if clear <= RM_SUCCESS_CLEARANCE:
            return False
    return True


def step(world: WorldState, action: float) -> StepResult:
    """Apply one control action and advance the world by dt."""
    if world.outcome is not Outcome.RUNNING:
        raise RuntimeError("cannot step a terminal world")
    if not math.isfinite(action):
        raise ValueError("action must be finite")
    cfg = world.cfg
    lo, hi = cfg.action_range
    a = float(np.clip(action, lo, hi))

    if cfg.scenario is Scenario.LANE_CHANGE:
        a_lt = a
        a_lg = float(np.clip(_ego_idm_accel(world), *cfg.lg_action_range))
        world.ego = step_kinematics(world.ego, a_lg, a_lt, cfg.dt)
        world.ego.lane_id = int(round(world.ego.y / cfg.lane_width))
    else:
        a_lg = a
        a_lt = 0.0
        ego = world.ego
        v = max(0.0, ego.v + a_lg * cfg.dt)
        x = ego.x + v * cfg.dt
        # lateral motion locked to the ramp/lane centerline
        world.ego = replace(ego, x=x, y=cfg.ramp_y(x), v=v, theta=0.0, omega=0.0,
                            lane_id=0 if x >= cfg.merge_x else -1)

    _advance_traffic(world, ego_active=True)
    if cfg.scenario is Scenario.RAMP_MERGE:
        # mainline traffic usually runs faster than the ego, so the gap chosen
        # at reset can slide out of reach; retarget the best gap every step
        world.gap_leader, world.gap_lagger = select_gap(world)
    world.step_count += 1
    world.last_a_lg = a_lg

    # leaving the roadway sideways (a full lane beyond the outer centerlines)
    # ends the episode and is penalized like a crash
    off_road = cfg.scenario is Scenario.LANE_CHANGE and not (
        -cfg.lane_width < world.ego.y < cfg.lane_count * cfg.lane_width)
    if _check_collision(world):
        world.outcome = Outcome.COLLISION
    elif _check_success(world):
        world.outcome = Outcome.SUCCESS
    elif (world.step_count >= cfg.max_episode_steps
          or world.ego.x > cfg.segment_length or off_road):
        world.outcome = Outcome.TIMEOUT

    if cfg.scenario is Scenario.LANE_CHANGE:
        inputs = RewardInputs(
            dt=cfg.dt,
            delta_d_lt=cfg.lane_center(world.target_lane) - world.ego.y,
            a_lt=a_lt,
            omega=world.ego.omega,
        )
    else:
        inputs = RewardInputs(dt=cfg.dt, gap_clearances=_gap_clearances(world), a_lg=a_lg)
    reward = total_reward(inputs, world.reward_cfg)
    if world.outcome is Outcome.COLLISION or off_road:
        reward -= cfg.collision_penalty

    terminal = world.outcome is not Outcome.RUNNING
    return StepResult(next_obs=observe(world), reward=reward, terminal=terminal,
                      outcome=world.outcome, a_lg=a_lg, a_lt=a_lt)


# ---------------------------------------------------------------------------
# Telemetry
# ---------------------------------------------------------------------------

TELEMETRY_HEADER = "episode,step,x,y,v,theta,omega,action,reward,outcome"


class TelemetryLogger:
    """Appends one CSV row per step when logging is enabled."""

    def __init__(self, fh: IO[str]):
        self._fh = fh
        fh.write(TELEMETRY_HEADER + "\n")

    def log(self, episode: int, step_idx: int, world: WorldState,
            action: float, reward: float) -> None:
        e = world.ego
        row = (f"{episode},{step_idx},{e.x!r},{e.y!r},{e.v!r},{e.theta!r},"
               f"{e.omega!r},{float(action)!r},{float(reward)!r},{world.outcome.value}")
        self._fh.write(row + "\n")
