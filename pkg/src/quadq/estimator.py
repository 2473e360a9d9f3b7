"""Scikit-learn style front end.

`QuadraticQAgent` wraps the full training pipeline behind the familiar
fit/predict/get_params surface so the controller composes with pipelines,
grid search and `clone`.  `fit` trains in the built-in traffic simulator
(there is no X/y: the environment generates the experience), `predict` maps
observation rows to greedy continuous actions.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from .qnet import mu
from .reward import RewardConfig
from .scenario import Scenario, obs_dim
from .trainer import TrainConfig, evaluate, train
from .world import ScenarioConfig


class QuadraticQAgent(BaseEstimator):
    """Continuous-action Q-learning agent with a PID-structured policy.

    Parameters mirror the training configuration; `learning_rate=None`
    selects the per-scenario default (5e-4 lane change, 1e-3 ramp merge).
    """

    def __init__(
        self,
        scenario: str = "lane-change",
        episodes: int = 500,
        seed: int = 0,
        learning_rate: Optional[float] = None,
        gamma: float = 0.95,
        batch_size: int = 64,
        replay_capacity: int = 2000,
        target_sync: int = 1000,
        pretrain_episodes: int = 50,
        noise_sigma0: Optional[float] = None,
        n_checkpoints: int = 12,
    ):
        self.scenario = scenario
        self.episodes = episodes
        self.seed = seed
        self.learning_rate = learning_rate
        self.gamma = gamma
        self.batch_size = batch_size
        self.replay_capacity = replay_capacity
        self.target_sync = target_sync
        self.pretrain_episodes = pretrain_episodes
        self.noise_sigma0 = noise_sigma0
        self.n_checkpoints = n_checkpoints

    def _configs(self):
        scenario = Scenario(self.scenario)
        scenario_cfg = ScenarioConfig(scenario=scenario)
        train_cfg = TrainConfig(
            episodes=self.episodes,
            batch_size=self.batch_size,
            gamma=self.gamma,
            target_sync=self.target_sync,
            learning_rate=self.learning_rate,
            pretrain_episodes=self.pretrain_episodes,
            noise_sigma0=self.noise_sigma0,
            replay_capacity=self.replay_capacity,
            n_checkpoints=self.n_checkpoints,
        )
        return scenario_cfg, train_cfg, RewardConfig.for_scenario(scenario)

    def fit(self, X=None, y=None):
        """Train in the simulator; X and y are accepted and ignored for
        pipeline compatibility."""
        scenario_cfg, train_cfg, reward_cfg = self._configs()
        result = train(train_cfg, scenario_cfg, self.seed, reward_cfg=reward_cfg)
        self.qnet_ = result.qnet
        self.checkpoints_ = result.checkpoints
        self.training_log_ = result.log
        self.n_features_in_ = obs_dim(scenario_cfg.scenario)
        return self

    def _check_fitted(self):
        if not hasattr(self, "qnet_"):
            raise NotFittedError("QuadraticQAgent is not fitted; call fit() first")

    def predict(self, X):
        """Greedy continuous actions for a batch of observation rows."""
        self._check_fitted()
        X = check_array(X, dtype=float, ensure_2d=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features; {self.scenario} observations "
                f"have {self.n_features_in_}")
        return np.asarray(mu(self.qnet_, X))

    def score(self, X=None, y=None, episodes: int = 20):
        """Mean undiscounted episode reward over greedy evaluation rollouts."""
        self._check_fitted()
        scenario_cfg, _, reward_cfg = self._configs()
        summary = evaluate(self.qnet_, scenario_cfg, episodes, self.seed,
                           gamma=self.gamma, reward_cfg=reward_cfg)
        return summary.mean_reward
