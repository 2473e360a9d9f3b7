"""Flat key=value run configuration with schema validation.

A config file holds one ``key = value`` pair per line ('#' starts a
comment).  Command-line overrides use the same ``key=value`` syntax.
Unknown keys are rejected.  ``dump_config`` emits the full effective
configuration in the same format, so a dumped config reloads to identical
behavior.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Dict, List

from .reward import RewardConfig
from .scenario import Scenario
from .trainer import TrainConfig
from .world import ScenarioConfig


class ConfigError(Exception):
    pass


def _as_bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes"):
        return True
    if s.lower() in ("0", "false", "no"):
        return False
    raise ValueError(s)


# key -> (converter, target section, attribute)
SCHEMA = {
    "scenario": (str, "run", "scenario"),
    "seed": (int, "run", "seed"),
    "out_dir": (str, "run", "out_dir"),
    # scenario / world
    "dt": (float, "scenario", "dt"),
    "max_episode_steps": (int, "scenario", "max_episode_steps"),
    "lane_width": (float, "scenario", "lane_width"),
    "segment_length": (float, "scenario", "segment_length"),
    "command_distance": (float, "scenario", "command_distance"),
    "ramp_start_distance": (float, "scenario", "ramp_start_distance"),
    "aggressive_fraction": (float, "scenario", "aggressive_fraction"),
    "defensive_fraction": (float, "scenario", "defensive_fraction"),
    "gap_min": (float, "scenario", "gap_min"),
    "collision_penalty": (float, "scenario", "collision_penalty"),
    # training
    "episodes": (int, "train", "episodes"),
    "batch_size": (int, "train", "batch_size"),
    "gamma": (float, "train", "gamma"),
    "target_sync": (int, "train", "target_sync"),
    "learning_rate": (float, "train", "learning_rate"),
    "updates_per_step": (int, "train", "updates_per_step"),
    "pretrain_episodes": (int, "train", "pretrain_episodes"),
    "noise_sigma0": (float, "train", "noise_sigma0"),
    "noise_tau": (float, "train", "noise_tau"),
    "replay_capacity": (int, "train", "replay_capacity"),
    "checkpoints": (int, "train", "n_checkpoints"),
    "eval_episodes": (int, "train", "eval_episodes"),
    # reward weights
    "reward.w_s1": (float, "reward", "w_s1"),
    "reward.w_s2": (float, "reward", "w_s2"),
    "reward.w_c1": (float, "reward", "w_c1"),
    "reward.w_c2": (float, "reward", "w_c2"),
    "reward.w_t": (float, "reward", "w_t"),
}


@dataclass
class RunConfig:
    scenario_cfg: ScenarioConfig
    train_cfg: TrainConfig
    reward_cfg: RewardConfig
    seed: int = 0
    out_dir: str = "out"


def parse_config_file(path: str) -> Dict[str, str]:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    values: Dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
    return values


def apply_overrides(values: Dict[str, str], overrides: List[str]) -> Dict[str, str]:
    out = dict(values)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        out[key] = value
    return out


def build_run_config(values: Dict[str, str]) -> RunConfig:
    sections: Dict[str, Dict[str, object]] = {"run": {}, "scenario": {}, "train": {}, "reward": {}}
    for key, raw in values.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key: {key}")
        conv, section, attr = SCHEMA[key]
        try:
            sections[section][attr] = conv(raw)
        except ValueError:
            raise ConfigError(f"invalid value for {key}: {raw!r}")

    run = sections["run"]
    try:
        scenario = Scenario(run.get("scenario", Scenario.LANE_CHANGE.value))
    except ValueError:
        raise ConfigError(f"unknown scenario: {run['scenario']!r}")
    try:
        scenario_cfg = ScenarioConfig(scenario=scenario, **sections["scenario"])
        train_cfg = TrainConfig(**sections["train"])
        reward_cfg = RewardConfig.for_scenario(scenario)
        for attr, val in sections["reward"].items():
            setattr(reward_cfg, attr, float(val))
            if float(val) < 0:
                raise ValueError(f"reward weight {attr} must be non-negative")
    except ValueError as exc:
        raise ConfigError(str(exc))
    return RunConfig(
        scenario_cfg=scenario_cfg,
        train_cfg=train_cfg,
        reward_cfg=reward_cfg,
        seed=int(run.get("seed", 0)),
        out_dir=str(run.get("out_dir", "out")),
    )


def dump_config(rc: RunConfig) -> str:
    """Effective configuration; reloading it reproduces the run exactly."""
    lines = []
    for key, (conv, section, attr) in SCHEMA.items():
        if section == "run":
            value = {"scenario": rc.scenario_cfg.scenario.value,
                     "seed": rc.seed, "out_dir": rc.out_dir}[key]
        elif section == "scenario":
            value = getattr(rc.scenario_cfg, attr)
        elif section == "train":
            value = getattr(rc.train_cfg, attr)
        else:
            value = getattr(rc.reward_cfg, attr)
        if value is None:
            continue
        lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
    return "\n".join(lines) + "\n"
