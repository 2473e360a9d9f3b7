"""Quadratic Q-function with a closed-form greedy action.

Q(s, a) = M(s) * (mu(s) - a)^2 + V(s)

with M(s) <= 0 by construction, so the greedy action is mu(s) and the greedy
value is V(s).  The action network mu is structured like a PID law whose
gains (a_max, beta_sen, T_trs) come from three small MLPs:

    a_tmp = e / T_trs^2 + e_dot / T_trs
    a     = a_max * tanh(beta_sen * a_tmp)

where (e, e_dot) are the tracking error and its rate extracted from the
observation.  The action is one-dimensional: yaw acceleration for lane
change, longitudinal acceleration for ramp merge.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import nn
from .scenario import (
    LC_DLAT, LC_OMEGA, LC_THETA, LC_V,
    RM_LAG_DV, RM_LAG_DX, RM_LEAD_DV, RM_LEAD_DX,
    Scenario, obs_dim, obs_scales,
)

# Lower bound on the transition time so the 1/T^2 term cannot blow up.
T_MIN = 0.1
# Initial biases of the action-network output heads, per scenario.  They
# start the policy at a long transition time and a small action cap, which
# keeps the untrained controller gentle instead of saturating the actuators
# from step one.  Merge tracking errors are tens of metres (vs metres for a
# lane change), so the merge head starts with a much longer transition time
# to keep tanh(beta * a_tmp) out of its flat saturated region.
T_TRS_INIT_BIAS = {
    Scenario.LANE_CHANGE: 1.74,    # T_trs ~= 1.9 s at zero input
    Scenario.RAMP_MERGE: 4.9,      # T_trs ~= 5.0 s at zero input
}
A_MAX_INIT_BIAS = {
    Scenario.LANE_CHANGE: 0.3,     # a_max ~= 0.57 * action_bound at zero input
    Scenario.RAMP_MERGE: 1.0,      # a_max ~= 0.73 * action_bound at zero input
}
B_SEN_INIT_BIAS = {
    Scenario.LANE_CHANGE: 0.0,     # beta ~= 0.69 at zero input
    Scenario.RAMP_MERGE: 0.0,
}
# Desired station offset behind/ahead of a lone gap vehicle (m).
FOLLOW_OFFSET = 15.0
# The lane-change tracking error is measured at a point this far ahead of
# the vehicle (standard lateral path-tracking practice).  Measured at the
# vehicle itself, every fixed-gain PD law on (e, e_dot) driving yaw
# acceleration is linearly unstable -- the closed loop lacks yaw-rate
# damping -- so the maneuver could never settle; the lookahead term
# reintroduces it.
LOOKAHEAD = 6.0
# A |dx| at or beyond this is treated as the missing-vehicle sentinel.
_MISSING_DX = 99.5

NET_NAMES = ("m", "v", "a_max", "beta_sen", "t_trs")

CHECKPOINT_MAGIC = "QQN-CKPT"
CHECKPOINT_VERSION = 1


@dataclass
class QuadraticQNet:
    scenario: Scenario
    net_m: nn.Mlp
    net_v: nn.Mlp
    net_amax: nn.Mlp
    net_beta: nn.Mlp
    net_t: nn.Mlp
    action_bound: float

    @property
    def nets(self) -> Dict[str, nn.Mlp]:
        return {
            "m": self.net_m,
            "v": self.net_v,
            "a_max": self.net_amax,
            "beta_sen": self.net_beta,
            "t_trs": self.net_t,
        }


def default_action_bound(scenario: Scenario, action_range: Tuple[float, float]) -> float:
    """Largest symmetric bound that keeps mu inside the physical range."""
    lo, hi = action_range
    return min(abs(lo), abs(hi))


def make_qnet(
    scenario: Scenario,
    rng: np.random.Generator,
    action_bound: float,
    hidden_mv: Tuple[int, int] = (64, 64),
    hidden_mu: Tuple[int, int] = (32, 32),
) -> QuadraticQNet:
    d = obs_dim(scenario)
    net_m = nn.init_mlp((d, *hidden_mv, 1), rng)
    net_v = nn.init_mlp((d, *hidden_mv, 1), rng)
    net_amax = nn.init_mlp((d, *hidden_mu, 1), rng)
    net_beta = nn.init_mlp((d, *hidden_mu, 1), rng)
    net_t = nn.init_mlp((d, *hidden_mu, 1), rng)
    net_amax.biases[-1][:] = A_MAX_INIT_BIAS[scenario]
    net_beta.biases[-1][:] = B_SEN_INIT_BIAS[scenario]
    net_t.biases[-1][:] = T_TRS_INIT_BIAS[scenario]
    return QuadraticQNet(
        scenario=scenario,
        net_m=net_m,
        net_v=net_v,
        net_amax=net_amax,
        net_beta=net_beta,
        net_t=net_t,
        action_bound=float(action_bound),
    )


def clone_qnet(qnet: QuadraticQNet) -> QuadraticQNet:
    return QuadraticQNet(
        scenario=qnet.scenario,
        net_m=nn.clone_mlp(qnet.net_m),
        net_v=nn.clone_mlp(qnet.net_v),
        net_amax=nn.clone_mlp(qnet.net_amax),
        net_beta=nn.clone_mlp(qnet.net_beta),
        net_t=nn.clone_mlp(qnet.net_t),
        action_bound=qnet.action_bound,
    )


# ---------------------------------------------------------------------------
# PID features
# ---------------------------------------------------------------------------

def pid_features(obs: np.ndarray, scenario: Scenario):
    """Tracking error and error rate (physical units) for the action network.

    Lane change: e is the signed lateral offset of a LOOKAHEAD-point ahead
    of the vehicle from the target centerline, e_dot its time derivative.
    Ramp merge: e is the offset to
    the target-gap midpoint and e_dot the midpoint's relative speed; with a
    single gap vehicle the target is a point FOLLOW_OFFSET meters behind the
    leader (ahead of the lagger), and with none both features are zero.
    """
    obs = np.asarray(obs, dtype=float)
    single = obs.ndim == 1
    ob = obs[None, :] if single else obs
    scales = obs_scales(scenario)
    if scenario is Scenario.LANE_CHANGE:
        dlat = ob[:, LC_DLAT] * scales[LC_DLAT]
        v = ob[:, LC_V] * scales[LC_V]
        theta = ob[:, LC_THETA] * scales[LC_THETA]
        omega = ob[:, LC_OMEGA] * scales[LC_OMEGA]
        e = dlat - LOOKAHEAD * np.sin(theta)
        e_dot = -v * np.sin(theta) - LOOKAHEAD * omega * np.cos(theta)
    else:
        dx_l = ob[:, RM_LEAD_DX] * scales[RM_LEAD_DX]
        dv_l = ob[:, RM_LEAD_DV] * scales[RM_LEAD_DV]
        dx_g = ob[:, RM_LAG_DX] * scales[RM_LAG_DX]
        dv_g = ob[:, RM_LAG_DV] * scales[RM_LAG_DV]
        has_l = np.abs(dx_l) < _MISSING_DX
        has_g = np.abs(dx_g) < _MISSING_DX
        e = np.where(
            has_l & has_g, 0.5 * (dx_l + dx_g),
            np.where(has_l, dx_l - FOLLOW_OFFSET,
                     np.where(has_g, dx_g + FOLLOW_OFFSET, 0.0)),
        )
        e_dot = np.where(
            has_l & has_g, 0.5 * (dv_l + dv_g),
            np.where(has_l, dv_l, np.where(has_g, dv_g, 0.0)),
        )
    if single:
        return float(e[0]), float(e_dot[0])
    return e, e_dot


# ---------------------------------------------------------------------------
# Forward evaluation
# ---------------------------------------------------------------------------

def _heads(qnet: QuadraticQNet, obs: np.ndarray, with_tapes: bool = False):
    """Evaluate all five nets and the derived quantities on a batch."""
    ob = np.asarray(obs, dtype=float)
    if ob.ndim == 1:
        ob = ob[None, :]
    raw, tapes = {}, {}
    for name, net in (("m", qnet.net_m), ("v", qnet.net_v), ("a_max", qnet.net_amax),
                      ("beta_sen", qnet.net_beta), ("t_trs", qnet.net_t)):
        y, tape = nn.forward(net, ob)
        raw[name] = y[:, 0]
        tapes[name] = tape
    e, e_dot = pid_features(ob, qnet.scenario)
    M = -nn.softplus(raw["m"])
    V = raw["v"]
    a_max = qnet.action_bound * nn.sigmoid(raw["a_max"])
    beta = nn.softplus(raw["beta_sen"])
    T = T_MIN + nn.softplus(raw["t_trs"])
    a_tmp = e / (T * T) + e_dot / T
    u = np.tanh(beta * a_tmp)
    mu_val = a_max * u
    out = {
        "raw": raw, "M": M, "V": V, "a_max": a_max, "beta": beta, "T": T,
        "e": e, "e_dot": e_dot, "a_tmp": a_tmp, "u": u, "mu": mu_val,
    }
    if with_tapes:
        out["tapes"] = tapes
    return out


def mu(qnet: QuadraticQNet, obs: np.ndarray):
    """Greedy (closed-form argmax) action."""
    single = np.asarray(obs).ndim == 1
    h = _heads(qnet, obs)
    return float(h["mu"][0]) if single else h["mu"]


def q_value(qnet: QuadraticQNet, obs: np.ndarray, action):
    """Q(s, a) for scalar actions; broadcasts over a batch of observations."""
    single = np.asarray(obs).ndim == 1 and np.isscalar(action)
    h = _heads(qnet, obs)
    a = np.asarray(action, dtype=float)
    d = h["mu"] - a
    q = h["M"] * d * d + h["V"]
    return float(q[0]) if single else q


def greedy_value(qnet: QuadraticQNet, obs: np.ndarray):
    """max_a Q(s, a) = V(s) since M(s) <= 0."""
    single = np.asarray(obs).ndim == 1
    h = _heads(qnet, obs)
    return float(h["V"][0]) if single else h["V"]


def td_target(reward, next_obs, terminal, gamma: float, target_net: QuadraticQNet):
    """r for terminal transitions, else r + gamma * V_target(s')."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    r = np.asarray(reward, dtype=float)
    term = np.asarray(terminal, dtype=bool)
    v_next = greedy_value(target_net, next_obs)
    scalar = r.ndim == 0
    y = np.where(term, r, r + gamma * np.asarray(v_next))
    return float(y) if scalar else y


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------

def loss_and_gradients(
    qnet: QuadraticQNet,
    obs: np.ndarray,
    actions: np.ndarray,
    targets: np.ndarray,
    freeze_mu: bool = False,
):
    """Mean-squared TD loss and exact gradients for all five nets.

    Returns (loss, grads) with grads[name] a parameter-gradient list in the
    net's flatten order.  With ``freeze_mu`` the gradients of the three
    action-network heads are zero (pretraining mode).
    """
    ob = np.asarray(obs, dtype=float)
    if ob.ndim == 1:
        ob = ob[None, :]
    B = ob.shape[0]
    if B == 0:
        raise ValueError("batch must be nonempty")
    a = np.asarray(actions, dtype=float).reshape(B)
    y = np.asarray(targets, dtype=float).reshape(B)

    h = _heads(qnet, ob, with_tapes=True)
    d = h["mu"] - a
    q = h["M"] * d * d + h["V"]
    resid = q - y
    loss = float(np.mean(resid * resid))

    g = 2.0 * resid / B                      # dL/dQ per sample
    dV = g
    dM = g * d * d
    dmu = g * 2.0 * h["M"] * d

    raw = h["raw"]
    sig = nn.sigmoid
    # chain through the head parameterizations
    d_m_raw = dM * (-sig(raw["m"]))
    one_m_u2 = 1.0 - h["u"] * h["u"]
    s_amax = sig(raw["a_max"])
    d_amax_raw = dmu * h["u"] * qnet.action_bound * s_amax * (1.0 - s_amax)
    d_beta_raw = dmu * h["a_max"] * one_m_u2 * h["a_tmp"] * sig(raw["beta_sen"])
    T = h["T"]
    da_tmp_dT = -2.0 * h["e"] / (T ** 3) - h["e_dot"] / (T ** 2)
    d_t_raw = dmu * h["a_max"] * one_m_u2 * h["beta"] * da_tmp_dT * sig(raw["t_trs"])

    if freeze_mu:
        zero = np.zeros(B)
        d_amax_raw = d_beta_raw = d_t_raw = zero

    head_grads = {
        "m": d_m_raw, "v": dV,
        "a_max": d_amax_raw, "beta_sen": d_beta_raw, "t_trs": d_t_raw,
    }
    grads: Dict[str, List[np.ndarray]] = {}
    for name, net in qnet.nets.items():
        gy = head_grads[name][:, None]
        pg, _ = nn.backward(net, h["tapes"][name], gy)
        grads[name] = pg
    return loss, grads


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    version: int
    scenario: Scenario
    action_bound: float
    nets: Dict[str, Tuple[Tuple[int, ...], np.ndarray]]   # name -> (sizes, flat params)
    step: int = 0
    episode: int = 0
    rng_state: Optional[Tuple[int, int, int, int]] = None  # PCG64 (state, inc, has_uint32, uinteger)


def checkpoint_from_qnet(qnet: QuadraticQNet, step: int = 0, episode: int = 0,
                         rng_state=None) -> Checkpoint:
    nets = {name: (net.sizes, nn.flatten_params(net)) for name, net in qnet.nets.items()}
    return Checkpoint(CHECKPOINT_VERSION, qnet.scenario, qnet.action_bound, nets,
                      step=step, episode=episode, rng_state=rng_state)


def qnet_from_checkpoint(ckpt: Checkpoint) -> QuadraticQNet:
    rng = np.random.default_rng(0)
    mlps = {}
    for name in NET_NAMES:
        sizes, flat = ckpt.nets[name]
        net = nn.init_mlp(sizes, rng)
        nn.set_flat_params(net, flat)
        mlps[name] = net
    return QuadraticQNet(
        scenario=ckpt.scenario,
        net_m=mlps["m"], net_v=mlps["v"], net_amax=mlps["a_max"],
        net_beta=mlps["beta_sen"], net_t=mlps["t_trs"],
        action_bound=ckpt.action_bound,
    )


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Text format; floats are written with repr so reloading is bitwise exact."""
    lines = [f"{CHECKPOINT_MAGIC} {ckpt.version} {ckpt.scenario.value}"]
    for name in NET_NAMES:
        sizes, flat = ckpt.nets[name]
        lines.append(f"net {name}")
        lines.append("sizes " + " ".join(str(s) for s in sizes))
        lines.append("params " + " ".join(repr(float(x)) for x in flat))
    lines.append(f"action_bound {repr(float(ckpt.action_bound))}")
    lines.append(f"step {ckpt.step}")
    lines.append(f"episode {ckpt.episode}")
    if ckpt.rng_state is None:
        lines.append("rng -")
    else:
        lines.append("rng " + " ".join(str(int(x)) for x in ckpt.rng_state))
    lines.append("end")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    head = lines[0].split()
    if len(head) != 3 or head[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version = int(head[1])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    scenario = Scenario(head[2])

    nets: Dict[str, Tuple[Tuple[int, ...], np.ndarray]] = {}
    action_bound = None
    step = episode = 0
    rng_state = None
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        key = parts[0]
        if key == "net":
            name = parts[1]
            sizes = tuple(int(s) for s in lines[i + 1].split()[1:])
            flat = np.array([float(x) for x in lines[i + 2].split()[1:]])
            nets[name] = (sizes, flat)
            i += 3
            continue
        if key == "action_bound":
            action_bound = float(parts[1])
        elif key == "step":
            step = int(parts[1])
        elif key == "episode":
            episode = int(parts[1])
        elif key == "rng":
            rng_state = None if parts[1] == "-" else tuple(int(x) for x in parts[1:5])
        elif key == "end":
            break
        else:
            raise ValueError(f"{path}: unexpected line {lines[i]!r}")
        i += 1
    missing = set(NET_NAMES) - set(nets)
    if missing or action_bound is None:
        raise ValueError(f"{path}: incomplete checkpoint (missing {sorted(missing)})")
    return Checkpoint(version, scenario, action_bound, nets,
                      step=step, episode=episode, rng_state=rng_state)
