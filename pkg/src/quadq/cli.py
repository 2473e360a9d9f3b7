"""Command-line entry point: train / eval / export-traj.

Exit codes: 0 ok, 2 configuration error, 3 numerical divergence.
All outputs are CSV files with documented headers; a dump of the effective
configuration is always written next to them.
"""
from __future__ import annotations

import argparse
import glob
import os
import sys
from typing import List, Optional

import numpy as np

from .config import ConfigError, RunConfig, apply_overrides, build_run_config, dump_config, parse_config_file
from .qnet import load_checkpoint, mu, qnet_from_checkpoint
from .trainer import TRAIN_LOG_HEADER, DivergenceError, evaluate, train
from .world import Outcome, reset, step

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

EVAL_HEADER = "checkpoint,mean_reward,std_reward,success_rate,collision_rate,mean_smoothness"
SUMMARY_HEADER = "checkpoint,episode,mean_loss,mean_total_reward"
TRAJ_HEADER = "t,x,y,v,theta,omega,action,reward"


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def _load_run_config(args, episodes_key: str = "episodes") -> RunConfig:
    values = parse_config_file(args.config) if args.config else {}
    overrides: List[str] = list(args.overrides)
    if args.scenario:
        overrides.append(f"scenario={args.scenario}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out:
        overrides.append(f"out_dir={args.out}")
    if args.episodes is not None:
        overrides.append(f"{episodes_key}={args.episodes}")
    return build_run_config(apply_overrides(values, overrides))


def _write_effective_config(rc: RunConfig, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "effective_config.txt"), "w") as fh:
        fh.write(dump_config(rc))


def cmd_train(args) -> int:
    rc = _load_run_config(args)
    out_dir = rc.out_dir
    _write_effective_config(rc, out_dir)
    result = train(rc.train_cfg, rc.scenario_cfg, rc.seed,
                   out_dir=out_dir, reward_cfg=rc.reward_cfg)

    with open(os.path.join(out_dir, "training_log.csv"), "w") as fh:
        fh.write(TRAIN_LOG_HEADER + "\n")
        for row in result.log:
            fh.write(",".join([
                str(row["episode"]), str(row["steps"]), _fmt(row["total_reward"]),
                _fmt(row["mean_loss"]), _fmt(row["sigma"]), row["outcome"],
            ]) + "\n")

    # per-checkpoint-interval means of loss and total reward
    n = rc.train_cfg.episodes
    k_total = rc.train_cfg.n_checkpoints
    with open(os.path.join(out_dir, "summary.csv"), "w") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        prev = 0
        for k, ckpt in enumerate(result.checkpoints, 1):
            end = ckpt.episode
            rows = [r for r in result.log if prev < r["episode"] <= end]
            losses = [r["mean_loss"] for r in rows if np.isfinite(r["mean_loss"])]
            rewards = [r["total_reward"] for r in rows]
            fh.write(",".join([
                str(k), str(end),
                _fmt(float(np.mean(losses)) if losses else float("nan")),
                _fmt(float(np.mean(rewards)) if rewards else float("nan")),
            ]) + "\n")
            prev = max(prev, end)
    print(f"trained {n} episodes, wrote {k_total} checkpoints to {out_dir}")
    return EXIT_OK


def _find_checkpoints(out_dir: str) -> List[str]:
    return sorted(glob.glob(os.path.join(out_dir, "checkpoint_*.ckpt")))


def cmd_eval(args) -> int:
    rc = _load_run_config(args, episodes_key="eval_episodes")
    out_dir = rc.out_dir
    paths = _find_checkpoints(out_dir)
    if not paths:
        raise ConfigError(f"no checkpoints found in {out_dir}")
    episodes = rc.train_cfg.eval_episodes
    _write_effective_config(rc, out_dir)
    rows = []
    for idx, path in enumerate(paths, 1):
        ckpt = load_checkpoint(path)
        if ckpt.scenario is not rc.scenario_cfg.scenario:
            raise ConfigError(
                f"{path} is a {ckpt.scenario.value} checkpoint but the run is "
                f"{rc.scenario_cfg.scenario.value}")
        summary = evaluate(ckpt, rc.scenario_cfg, episodes, rc.seed,
                           gamma=rc.train_cfg.gamma, reward_cfg=rc.reward_cfg)
        rows.append((idx, summary))
    eval_path = os.path.join(out_dir, "eval.csv")
    with open(eval_path, "w") as fh:
        fh.write(EVAL_HEADER + "\n")
        for idx, s in rows:
            fh.write(",".join([
                str(idx), _fmt(s.mean_reward), _fmt(s.std_reward),
                _fmt(s.success_rate), _fmt(s.collision_rate), _fmt(s.mean_smoothness),
            ]) + "\n")
    print(f"evaluated {len(rows)} checkpoints over {episodes} episodes -> {eval_path}")
    return EXIT_OK


def cmd_export_traj(args) -> int:
    if not args.checkpoint:
        raise ConfigError("export-traj requires --checkpoint")
    if not os.path.exists(args.checkpoint):
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    ckpt = load_checkpoint(args.checkpoint)
    if not args.scenario:
        args.scenario = ckpt.scenario.value
    rc = _load_run_config(args)
    if ckpt.scenario is not rc.scenario_cfg.scenario:
        raise ConfigError(
            f"{args.checkpoint} is a {ckpt.scenario.value} checkpoint but the run is "
            f"{rc.scenario_cfg.scenario.value}")
    q = qnet_from_checkpoint(ckpt)
    out_dir = rc.out_dir
    _write_effective_config(rc, out_dir)
    world, obs = reset(rc.scenario_cfg, [rc.seed, 4, 0], rc.reward_cfg)
    path = os.path.join(out_dir, "trajectory.csv")
    with open(path, "w") as fh:
        fh.write(TRAJ_HEADER + "\n")
        t = 0.0
        while world.outcome is Outcome.RUNNING:
            a = mu(q, obs)
            res = step(world, a)
            t += rc.scenario_cfg.dt
            e = world.ego
            action = res.a_lt if rc.scenario_cfg.scenario.value == "lane-change" else res.a_lg
            fh.write(",".join(_fmt(v) for v in
                              (t, e.x, e.y, e.v, e.theta, e.omega, action, res.reward)) + "\n")
            obs = res.next_obs
    print(f"wrote greedy trajectory ({world.outcome.value}) -> {path}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadq",
                                     description="Quadratic Q-learning for continuous vehicle control")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("train", cmd_train), ("eval", cmd_eval), ("export-traj", cmd_export_traj)):
        p = sub.add_parser(name)
        p.add_argument("--config", help="path to a key=value config file")
        p.add_argument("--scenario", choices=["lane-change", "ramp-merge"])
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--episodes", type=int)
        p.add_argument("--checkpoint", help="checkpoint file (export-traj)")
        p.add_argument("overrides", nargs="*", metavar="key=value",
                       help="config overrides")
        p.set_defaults(func=fn)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
