"""Quadratic Q-learning with a PID-structured action network for continuous
lane-change and ramp-merge vehicle control."""

from .estimator import QuadraticQAgent
from .qnet import (
    Checkpoint, QuadraticQNet, greedy_value, load_checkpoint, mu, pid_features,
    q_value, save_checkpoint, td_target,
)
from .reward import RewardConfig, RewardInputs, total_reward
from .scenario import Scenario
from .trainer import EvalSummary, TrainConfig, evaluate, train
from .vehicle import IdmParams, VehicleState, idm_acceleration, no_leader_acceleration, step_kinematics
from .world import Outcome, ScenarioConfig, StepResult, observe, reset, select_gap, step

__all__ = [
    "Checkpoint", "EvalSummary", "IdmParams", "Outcome", "QuadraticQAgent",
    "QuadraticQNet", "RewardConfig", "RewardInputs", "Scenario", "ScenarioConfig",
    "StepResult", "TrainConfig", "VehicleState", "evaluate", "greedy_value",
    "idm_acceleration", "load_checkpoint", "mu", "no_leader_acceleration",
    "observe", "pid_features", "q_value", "reset", "save_checkpoint",
    "select_gap", "step", "step_kinematics", "td_target", "total_reward", "train",
]
