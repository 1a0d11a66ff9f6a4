from __future__ import annotations

from fractions import Fraction as F

import pytest
from hypothesis import HealthCheck, settings

from delaylab.env_core import GridConfig, TinyMdpSpec

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance lines, echoed in the terminal summary
CRITERIA: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])


@pytest.fixture
def grid6() -> GridConfig:
    return GridConfig(grid_size=6, wall_enabled=True)


@pytest.fixture
def grid4() -> GridConfig:
    return GridConfig(grid_size=4, wall_enabled=False)


def tiny_spec(horizon: int = 3) -> TinyMdpSpec:
    """Two states, two agents with two actions each, rational dynamics."""
    return TinyMdpSpec(
        state_count=2,
        action_counts=(2, 2),
        transitions=(
            ((F(1, 3), F(2, 3)), (F(1, 2), F(1, 2)), (F(1, 4), F(3, 4)), (F(1), F(0))),
            ((F(2, 5), F(3, 5)), (F(0), F(1)), (F(1, 2), F(1, 2)), (F(3, 7), F(4, 7))),
        ),
        observations=((0, 1), (1, 0)),
        rewards=((F(1), F(0), F(-1, 2), F(2)), (F(0), F(3), F(1), F(-1))),
        initial=(F(1, 2), F(1, 2)),
        horizon=horizon,
    )


@pytest.fixture
def spec() -> TinyMdpSpec:
    return tiny_spec()
