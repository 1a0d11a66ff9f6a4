import math
from dataclasses import replace
from fractions import Fraction as F
from itertools import product

import pytest
from hypothesis import given, strategies as st

from delaylab.env_core import (Action, CorruptedStateError, EnvState, GridConfig, GridEnv, MalformedDistributionError,
                               TinyMdpEnv, TinyMdpSpec, grid_reset, grid_step, inverse_cdf, tiny_mdp_step)

U, D, L, R, S = (int(a) for a in Action)


def reference_step(positions, actions, cfg):
    """Straight-line rewrite of the grid rule, kept deliberately naive."""
    n = cfg.grid_size
    wall_x = n // 2
    gap = (wall_x, n // 2)

    def wall(c):
        return cfg.wall_enabled and c[0] == wall_x and c != gap

    def clip(c):
        return (min(max(c[0], 0), n - 1), min(max(c[1], 0), n - 1))

    delta = {U: (0, -1), D: (0, 1), L: (-1, 0), R: (1, 0), S: (0, 0)}
    moved = []
    for p, a in zip(positions, actions):
        c = clip((p[0] + delta[a][0], p[1] + delta[a][1]))
        moved.append(p if wall(c) else c)
    if cfg.coupling_mode.value == "Coupled":
        r = cfg.collision_radius
        dist = lambda a, b: ((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2) ** 0.5  # noqa: E731
        if dist(moved[0], moved[1]) <= r:
            moved = list(positions)
            if dist(moved[0], moved[1]) <= r:
                dx = moved[0][0] - moved[1][0]
                dy = moved[0][1] - moved[1][1]
                sx = (dx > 0) - (dx < 0)
                sy = (dy > 0) - (dy < 0)
                if dx == 0 and dy == 0:
                    sx, sy = 1, 1
                a = clip((moved[0][0] + sx, moved[0][1] + sy))
                b = clip((moved[1][0] - sx, moved[1][1] - sy))
                if not wall(a):
                    moved[0] = a
                if not wall(b):
                    moved[1] = b
    goal = moved[0] == cfg.target_positions[0] and moved[1] == cfg.target_positions[1]
    return tuple(moved), (cfg.goal_reward if goal else cfg.step_reward), goal


# -- examples -----------------------------------------------------------------


def test_up_at_top_edge_is_clipped(grid6):
    out = grid_step(EnvState(((0, 0), (0, 5))), (U, S), grid6)
    assert out.next_state.positions[0] == (0, 0)
    assert out.reward == -1
    assert not out.done


def test_both_on_targets_pays_goal_and_ends(grid6):
    out = grid_step(EnvState(((5, 4), (5, 1))), (D, U), grid6)
    assert out.next_state.positions == ((5, 5), (5, 0))
    assert out.reward == 10
    assert out.done


def test_coupled_repel_golden_trace():
    # 6x6, wall at x=3 with the gap at (3,3); agents side by side on row 1 swap places
    cfg = GridConfig(grid_size=6, coupling_mode="Coupled", collision_radius=1.0)
    out = grid_step(EnvState(((1, 1), (2, 1))), (R, L), cfg)
    # moves cancelled, still at distance 1, direction sign(p1 - p2) = (-1, 0):
    # agent 0 pushed to (0,1); agent 1's push to (3,1) is a wall, so it stays
    assert out.next_state.positions == ((0, 1), (2, 1))
    assert math.dist(*out.next_state.positions) > 1
    assert out.reward == -1


def test_coupled_repel_zero_difference_uses_diagonal():
    cfg = GridConfig(grid_size=6, coupling_mode="Coupled", collision_radius=1.0)
    out = grid_step(EnvState(((2, 2), (2, 2))), (S, S), cfg)
    # (1,1) direction: agent 0 lands on the gap cell (3,3), agent 1 goes to (1,1)
    assert out.next_state.positions == ((3, 3), (1, 1))


def test_wall_blocks_but_gap_passes(grid6):
    blocked = grid_step(EnvState(((2, 0), (0, 5))), (R, S), grid6)
    assert blocked.next_state.positions[0] == (2, 0)
    through = grid_step(EnvState(((2, 3), (0, 5))), (R, S), grid6)
    assert through.next_state.positions[0] == (3, 3)


def test_reset_copies_starts_and_is_repeatable(grid6):
    a, b = grid_reset(grid6), grid_reset(grid6)
    assert a.positions == grid6.start_positions == ((0, 0), (0, 5))
    assert a.step_count == 0 and not a.done
    assert a == b


def test_fifty_stays_end_by_max_steps(grid6):
    env = GridEnv(grid6)
    env.reset()
    total, steps = 0.0, 0
    while not env.state.done:
        total += env.step((S, S)).reward
        steps += 1
    assert steps == 50
    assert total == -50


def test_rejects_corrupted_positions(grid6):
    with pytest.raises(CorruptedStateError):
        grid_step(EnvState(((6, 0), (0, 5))), (S, S), grid6)
    with pytest.raises(CorruptedStateError):
        grid_step(EnvState(((3, 0), (0, 5))), (S, S), grid6)


def test_step_after_done_rejected(grid6):
    with pytest.raises(ValueError):
        grid_step(EnvState(((0, 0), (0, 5)), 50, True), (S, S), grid6)


def test_config_validation():
    with pytest.raises(ValueError):
        GridConfig(grid_size=6, start_positions=((3, 0), (0, 5)))
    with pytest.raises(ValueError):
        GridConfig(grid_size=6, bottleneck_gap=(2, 2))
    with pytest.raises(ValueError):
        GridConfig(grid_size=1)


def _three_state_spec(row):
    return TinyMdpSpec(3, (1,), tuple((row,) for _ in range(3)), ((0,), (1,), (2,)),
                       ((0,),) * 3, (F(1), F(0), F(0)), 2)


def test_tiny_step_point_mass():
    spec = _three_state_spec((F(0), F(0), F(1)))
    for u in (0.0, 0.5, 0.999):
        assert tiny_mdp_step(spec, 0, (0,), u).next_state == 2


def test_tiny_step_inverse_cdf():
    assert inverse_cdf((F(1, 2), F(1, 2)), 0.25) == 0
    assert inverse_cdf((F(1, 2), F(1, 2)), 0.75) == 1
    spec = _three_state_spec((F(1, 3),) * 3)
    assert [tiny_mdp_step(spec, 0, (0,), u).next_state for u in (0.1, 0.4, 0.9)] == [0, 1, 2]


def test_malformed_rows_rejected():
    with pytest.raises(MalformedDistributionError):
        _three_state_spec((F(1, 2), F(1, 3), F(0)))
    with pytest.raises(ValueError):
        inverse_cdf((F(1),), 1.0)


def test_tiny_env_ends_at_horizon(spec):
    env = TinyMdpEnv(spec)
    env.reset(0.3)
    outs = [env.step((0, 1), 0.5) for _ in range(spec.horizon)]
    assert [o.done for o in outs] == [False, False, True]
    with pytest.raises(ValueError):
        env.step((0, 0), 0.5)


# -- properties ---------------------------------------------------------------


@pytest.mark.parametrize("wall", [False, True])
@pytest.mark.parametrize("mode", ["TransitionIndependent", "Coupled"])
def test_exhaustive_match_with_reference_4x4(wall, mode):
    cfg = GridConfig(grid_size=4, wall_enabled=wall, coupling_mode=mode, collision_radius=1.0)
    cells = cfg.free_cells()
    for p0, p1 in product(cells, repeat=2):
        for acts in product(range(5), repeat=2):
            out = grid_step(EnvState((p0, p1)), acts, cfg)
            pos, reward, goal = reference_step((p0, p1), acts, cfg)
            assert out.next_state.positions == pos, (p0, p1, acts)
            assert out.reward == reward and out.done == goal


def test_transition_independence_factorizes():
    cfg = GridConfig(grid_size=4, wall_enabled=True)
    cells = cfg.free_cells()
    for me, a in product(cells, range(5)):
        seen = {grid_step(EnvState((me, other)), (a, b), cfg).next_state.positions[0]
                for other in cells for b in range(5)}
        assert len(seen) == 1


def test_coupled_separation_after_step():
    cfg = GridConfig(grid_size=4, wall_enabled=False, coupling_mode="Coupled", collision_radius=1.0)
    cells = cfg.free_cells()
    for p0, p1 in product(cells, repeat=2):
        if math.dist(p0, p1) <= 1:
            continue
        for acts in product(range(5), repeat=2):
            pos = grid_step(EnvState((p0, p1)), acts, cfg).next_state.positions
            assert math.dist(*pos) > 1


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=60, max_size=60),
       st.sampled_from(["TransitionIndependent", "Coupled"]), st.integers(4, 7))
def test_episodes_terminate_with_known_rewards(actions, mode, n):
    cfg = GridConfig(grid_size=n, coupling_mode=mode, max_steps=30)
    env = GridEnv(cfg)
    env.reset()
    steps = 0
    for acts in actions:
        out = env.step(acts)
        steps += 1
        assert out.reward in (cfg.step_reward, cfg.goal_reward)
        assert out.local_observations == out.next_state.positions
        for p in out.next_state.positions:
            assert cfg.in_bounds(p) and not cfg.is_wall(p)
        if out.done:
            break
    assert env.state.done and steps <= cfg.max_steps


def test_custom_layout_is_respected():
    cfg = replace(GridConfig(grid_size=5, wall_enabled=False), start_positions=((1, 1), (3, 3)))
    assert grid_reset(cfg).positions == ((1, 1), (3, 3))
