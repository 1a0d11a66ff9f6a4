"""Delayed cooperative multi-agent RL: grid worlds, delay wrappers, tabular learners and equivalence checks."""

__version__ = "0.1.0"

from .delay import (AgentView, DelayConfig, DelayWrapper, InitMode, Regime, additive_compose,  # noqa: E402
                    history_project)
from .env_core import Coupling, GridConfig, GridEnv, TinyMdpEnv, TinyMdpSpec, make_env  # noqa: E402
from .estimator import DelayedQLearner  # noqa: E402
from .learn import LearnerConfig, QTable, Variant, run_training  # noqa: E402
from .streams import RandomStreams  # noqa: E402

__all__ = [
    "__version__", "AgentView", "DelayConfig", "DelayWrapper", "InitMode", "Regime", "additive_compose",
    "history_project", "Coupling", "GridConfig", "GridEnv", "TinyMdpEnv", "TinyMdpSpec", "make_env",
    "DelayedQLearner", "LearnerConfig", "QTable", "Variant", "run_training", "RandomStreams",
]
