"""Estimator-style front end for training a pair of delayed tabular learners.

Reinforcement learning has no ``(X, y)`` dataset, so ``fit`` ignores its
arguments and trains in simulation; ``predict`` maps ``(agent, state key)``
pairs to greedy actions and ``score`` is the greedy episode return.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .delay import DelayConfig, InitMode, Regime
from .env_core import Coupling, GridConfig, GridEnv
from .learn import ExplorationSchedule, LearnerConfig, QTable, Variant, greedy_return, run_training


def validate_delay_params(delays, regimes, init_mode, reward_delay) -> DelayConfig:
    delays = tuple(int(k) for k in delays)
    if isinstance(regimes, str):
        regimes = (regimes,) * len(delays)
    return DelayConfig(delays, tuple(Regime(r) for r in regimes), reward_delay=int(reward_delay),
                       init_mode=InitMode(init_mode))


def validate_learner_params(variant, alpha, gamma, epsilon_start, epsilon_min, decay_fraction,
                            n_agents: int) -> list[LearnerConfig]:
    if not 0 <= epsilon_min <= epsilon_start <= 1:
        raise ValueError("need 0 <= epsilon_min <= epsilon_start <= 1")
    if not 0 <= decay_fraction <= 1:
        raise ValueError("decay_fraction must lie in [0, 1]")
    variants = (variant,) * n_agents if isinstance(variant, (str, Variant)) else tuple(variant)
    sched = ExplorationSchedule(epsilon_start, epsilon_min, decay_fraction)
    return [LearnerConfig(alpha=alpha, gamma=gamma, schedule=sched, variant=Variant(v)) for v in variants]


class DelayedQLearner(BaseEstimator):
    """Independent tabular Q-learners on the two-agent grid under a delay regime."""

    def __init__(self, grid_size: int = 7, wall_enabled: bool = False,
                 coupling_mode: str = "TransitionIndependent", delays: Sequence[int] = (0, 3),
                 regimes: str | Sequence[str] = "OD", init_mode: str = "WarmStart", reward_delay: int = 0,
                 variant: str | Sequence[str] = "ODBaseline", alpha: float = 0.1, gamma: float = 0.99,
                 epsilon_start: float = 1.0, epsilon_min: float = 0.05, decay_fraction: float = 0.2,
                 episodes: int = 1000, eval_every: int = 10, random_state: int = 0):
        self.grid_size = grid_size
        self.wall_enabled = wall_enabled
        self.coupling_mode = coupling_mode
        self.delays = delays
        self.regimes = regimes
        self.init_mode = init_mode
        self.reward_delay = reward_delay
        self.variant = variant
        self.alpha = alpha
        self.gamma = gamma
        self.epsilon_start = epsilon_start
        self.epsilon_min = epsilon_min
        self.decay_fraction = decay_fraction
        self.episodes = episodes
        self.eval_every = eval_every
        self.random_state = random_state

    def _grid(self) -> GridConfig:
        return GridConfig(grid_size=self.grid_size, wall_enabled=self.wall_enabled,
                          coupling_mode=Coupling(self.coupling_mode))

    def fit(self, X=None, y=None):
        grid = self._grid()
        dcfg = validate_delay_params(self.delays, self.regimes, self.init_mode, self.reward_delay)
        configs = validate_learner_params(self.variant, self.alpha, self.gamma, self.epsilon_start,
                                          self.epsilon_min, self.decay_fraction, dcfg.n_agents)
        if self.episodes < 0:
            raise ValueError("episodes must be non-negative")
        res = run_training(lambda: GridEnv(grid), dcfg, configs, int(self.episodes), seed=int(self.random_state),
                           eval_every=int(self.eval_every))
        self.grid_ = grid
        self.delay_config_ = dcfg
        self.qtables_: list[QTable] = res.qtables
        self.curve_ = np.array(res.curve, dtype=float).reshape(-1, 2)
        self.final_return_ = res.final_return
        return self

    def predict(self, X) -> np.ndarray:
        """Greedy action index for each ``(agent, augmented state key)`` row."""
        check_is_fitted(self, "qtables_")
        out = []
        for agent, key in X:
            agent = int(agent)
            if not 0 <= agent < len(self.qtables_):
                raise ValueError(f"agent index {agent} out of range")
            out.append(self.qtables_[agent].greedy(str(key)))
        return np.asarray(out, dtype=int)

    def evaluate(self, regimes: str | Sequence[str] | None = None, init_mode: str | None = None) -> float:
        """Greedy return of the fitted tables, optionally deployed under another regime."""
        check_is_fitted(self, "qtables_")
        d = self.delay_config_
        if regimes is not None or init_mode is not None:
            d = validate_delay_params(d.delays, regimes or [r.value for r in d.regimes],
                                      init_mode or d.init_mode, 0)
        grid = self.grid_
        return greedy_return(lambda: GridEnv(grid), d, self.qtables_)

    def score(self, X=None, y=None) -> float:
        return self.evaluate()


__all__ = ["DelayedQLearner", "validate_delay_params", "validate_learner_params"]
