"""Scenario identifiers and the observation vector layout shared by the
simulator and the networks.

Observations are fixed-length float vectors.  Every slot is normalized by a
per-slot scale constant so that typical magnitudes are O(1).  Missing
vehicles are encoded with sentinel values (dx = +/-100 m, dv = 0) *before*
normalization.
"""
from __future__ import annotations

import enum

import numpy as np


class Scenario(str, enum.Enum):
    LANE_CHANGE = "lane-change"
    RAMP_MERGE = "ramp-merge"


# Sentinel longitudinal offset for an absent vehicle (meters, pre-normalization).
SENTINEL_DX = 100.0

# ---------------------------------------------------------------------------
# Lane-change layout (10 slots)
# ---------------------------------------------------------------------------
LC_DLAT = 0      # signed lateral offset to target-lane centerline (m)
LC_V = 1         # ego speed (m/s)
LC_THETA = 2     # ego yaw angle (rad)
LC_OMEGA = 3     # ego yaw rate (rad/s)
LC_LEAD_DX = 4   # gap leader dx = leader.x - ego.x (m)
LC_LEAD_DV = 5   # gap leader dv = leader.v - ego.v (m/s)
LC_LAG_DX = 6    # gap lagger dx (m, negative when behind)
LC_LAG_DV = 7    # gap lagger dv (m/s)
LC_OWN_DX = 8    # own-lane leader dx (m)
LC_KAPPA = 9     # road curvature (1/m); roads are simulated straight

# ---------------------------------------------------------------------------
# Ramp-merge layout (8 slots)
# ---------------------------------------------------------------------------
RM_V = 0         # ego speed (m/s)
RM_DMERGE = 1    # distance to the merge point (m)
RM_OWN_DX = 2    # own-lane leader dx (m)
RM_OWN_DV = 3    # own-lane leader dv (m/s)
RM_LEAD_DX = 4   # gap leader dx (m)
RM_LEAD_DV = 5   # gap leader dv (m/s)
RM_LAG_DX = 6    # gap lagger dx (m)
RM_LAG_DV = 7    # gap lagger dv (m/s)

_LC_SCALES = np.array([5.0, 40.0, 0.5, 0.5, 100.0, 40.0, 100.0, 40.0, 100.0, 0.01])
_RM_SCALES = np.array([40.0, 100.0, 100.0, 40.0, 100.0, 40.0, 100.0, 40.0])


def obs_dim(scenario: Scenario) -> int:
    return 10 if scenario is Scenario.LANE_CHANGE else 8


def obs_scales(scenario: Scenario) -> np.ndarray:
    """Per-slot normalization constants (physical value / scale = stored value)."""
    return _LC_SCALES if scenario is Scenario.LANE_CHANGE else _RM_SCALES
