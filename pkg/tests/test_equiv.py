import json
from fractions import Fraction as F

import pytest
from hypothesis import given, strategies as st

from delaylab.delay import DelayConfig
from delaylab.env_core import GridConfig, TinyMdpSpec
from delaylab.equiv import (DomainMode, EnumerationLimitError, TabularPolicy, TrajectoryRecord, Verdict,
                            average_return, check_additivity, check_augmented_sufficiency,
                            check_cold_start_inclusion, check_distribution_equivalence, check_mixed_reduction,
                            delay_config, dirac, discounted_return, enumerate_distribution, first_divergence,
                            monte_carlo_returns, replay, replay_isomorphism, replay_sweep, write_report)

from conftest import tiny_spec


# -- policies -----------------------------------------------------------------------


def test_random_rows_are_distributions():
    pol = TabularPolicy.random(5, 3)
    for key in ("a", "b", "0,0|RRS"):
        row = pol.row(1, key)
        assert sum(row) == 1 and all(p > 0 for p in row)
    assert pol.row(1, "a") == TabularPolicy.random(5, 3).row(1, "a")


def test_explicit_rows_validated():
    with pytest.raises(ValueError):
        TabularPolicy(2, {(0, "k"): (F(1, 2), F(1, 3))})
    with pytest.raises(KeyError):
        TabularPolicy(2).row(0, "missing")


@given(st.integers(0, 50), st.floats(0, 1, exclude_max=True))
def test_sampling_follows_row_boundaries(seed, u):
    pol = TabularPolicy.random(4, seed, DomainMode.AUGMENTED)

    class View:
        key = "1,2|UD"

    a = pol.sample(0, View(), u)
    row = pol.row(0, "1,2|UD")
    lo = float(sum(row[:a]))
    hi = float(sum(row[: a + 1]))
    assert lo <= u < hi or (a == 3 and u >= lo)


# -- replay -------------------------------------------------------------------------


def test_zero_delay_isomorphism_trivial(grid6):
    res = replay_isomorphism(grid6, TabularPolicy.random(5, 0), (0, 0), seed=1)
    assert res and len(res.first) == len(res.second)


def test_grid_isomorphism_k03(grid6):
    v = replay_sweep(grid6, (0, 3), 10, range(3), 5)
    assert v, v.detail


def test_coupled_grid_isomorphism_with_augmented_policies():
    cfg = GridConfig(grid_size=6, coupling_mode="Coupled", collision_radius=1.0)
    v = replay_sweep(cfg, (0, 3), 10, range(3), 5, DomainMode.AUGMENTED)
    assert v, v.detail


def test_cold_start_rejected_for_isomorphism(grid6):
    with pytest.raises(ValueError):
        replay_isomorphism(grid6, TabularPolicy.random(5, 0), (0, 3), init_mode="ColdStart")


def test_lifo_corruption_reports_first_divergence(grid6):
    res = replay_isomorphism(grid6, TabularPolicy.random(5, 1), (0, 3), seed=0, discipline="lifo")
    assert not res
    t, name = res.verdict.divergence
    # the earliest executed-action mismatch is where the two records first differ
    execs = [(a.actions, b.actions) for a, b in zip(res.first.steps, res.second.steps)]
    first_bad = next(i for i, (x, y) in enumerate(execs) if x != y)
    assert t <= first_bad
    assert name in ("action", "history[1]")
    assert res.verdict.witness["t"] == t


def test_first_divergence_fields():
    from delaylab.delay import TraceStep

    def rec(*steps, final=None):
        return TrajectoryRecord([TraceStep(*s) for s in steps], final, (), [[], []])

    a = rec((0, (1,), (0,), -1), (1, (1,), (1,), -1), final=2)
    assert first_divergence(a, a) is None
    assert first_divergence(a, rec((0, (1,), (0,), -1), (1, (2,), (1,), -1), final=2)) == (1, "action")
    assert first_divergence(a, rec((0, (1,), (0,), -1), (1, (1,), (1,), 5), final=2)) == (1, "reward")
    assert first_divergence(a, rec((9, (1,), (0,), -1), (1, (1,), (1,), -1), final=2)) == (0, "state")
    assert first_divergence(a, rec((0, (1,), (0,), -1), final=1)) == (1, "length")
    assert first_divergence(a, rec((0, (1,), (0,), -1), (1, (1,), (1,), -1), final=3)) == (2, "state")


def test_replay_records_are_consistent(grid6):
    rec = replay(grid6, TabularPolicy.random(5, 2), delay_config((1, 2), "AD"), seed=3)
    rec.validate()
    for log in rec.decisions:
        assert [d for d, _, _ in log][:3] == sorted(d for d, _, _ in log)[:3]
    assert json.dumps(rec.to_dict())


# -- enumeration --------------------------------------------------------------------


def test_deterministic_spec_single_trajectory():
    det = TinyMdpSpec(2, (1, 1), (((F(0), F(1)),), ((F(1), F(0)),)), ((0, 0), (1, 1)), ((F(1),), (F(2),)),
                      (F(1), F(0)), 3)
    pol = TabularPolicy((1, 1), seed=0)
    dist = enumerate_distribution(det, pol, (0, 0))
    assert len(dist) == 1 and dist.total() == 1
    (states, _, _, rewards), = dist.probs
    assert states == (0, 1, 0, 1) and rewards == (1, 2, 1)


@pytest.mark.parametrize("seed", range(4))
def test_od_equals_warm_ad_as_rationals(spec, seed):
    pol = TabularPolicy.random((2, 2), seed)
    v = check_distribution_equivalence(spec, pol, (1, 1))
    assert v, v.detail
    od = enumerate_distribution(spec, pol, (1, 1), "OD")
    assert od.exact and od.total() == 1 and all(isinstance(p, F) for p in od.probs.values())


def test_cold_start_distribution_differs(spec):
    pol = TabularPolicy.random((2, 2), 0)
    od = enumerate_distribution(spec, pol, (1, 1), "OD")
    cold = enumerate_distribution(spec, pol, (1, 1), "AD", "ColdStart")
    assert cold.total() == 1
    assert od != cold


def test_expected_returns_equal_for_every_functional(spec):
    pol = TabularPolicy.random((2, 2), 5)
    od = enumerate_distribution(spec, pol, (1, 1), "OD").expected_returns()
    ad = enumerate_distribution(spec, pol, (1, 1), "AD").expected_returns()
    assert od == ad and set(od) == {"discounted", "total", "average"}


def test_return_functionals():
    assert discounted_return([F(1), F(1), F(1)], F(1, 2)) == F(7, 4)
    assert average_return([F(1), F(2)]) == F(3, 2)
    assert average_return([]) == 0


def test_monte_carlo_within_three_standard_errors(spec):
    pol = TabularPolicy.random((2, 2), 1)
    exact = enumerate_distribution(spec, pol, (1, 1), "OD").expected_returns(F(9, 10))
    mc = monte_carlo_returns(spec, pol, DelayConfig((1, 1), ("AD", "AD")), 100_000, seed=0, gamma=0.9)
    for name, (mean, se) in mc.items():
        assert abs(mean - float(exact[name])) <= 3 * se, name


def test_enumeration_guard(spec):
    with pytest.raises(EnumerationLimitError):
        enumerate_distribution(spec, TabularPolicy.random((2, 2), 0), (1, 1), max_nodes=10)


# -- corollaries ----------------------------------------------------------------------


def test_mixed_identity(spec):
    assert check_mixed_reduction(spec, ("OD", "OD"), (1, 1), TabularPolicy.random((2, 2), 0))


def test_mixed_tiny_distributions_equal():
    v = check_mixed_reduction(tiny_spec(), ("OD", "AD"), (1, 2), TabularPolicy.random((2, 2), 1))
    assert v, v.detail


def test_mixed_grid_replay(grid4):
    v = check_mixed_reduction(grid4, ("AD", "AD"), (0, 3), TabularPolicy.random(5, 2), range(50))
    assert v, v.detail


def test_additivity_tiny(spec):
    v = check_additivity(spec, ((1, 1), (0, 2)), TabularPolicy.random((2, 2), 4), range(5))
    assert v, v.detail


def test_cold_start_inclusion_zero_delay(grid4):
    res = check_cold_start_inclusion(grid4, (0, 0), n_policies=5)
    assert res.passed and not res.witness_found


def test_cold_start_inclusion_with_witness(grid6):
    res = check_cold_start_inclusion(grid6, (0, 3), n_policies=50)
    assert res.emulation.passed, res.emulation.detail
    assert res.witness_found
    assert res.witness["od_first_action"] == 3 and res.witness["cold_prefixes_all_default"]


def test_sufficiency_zero_delay_trivial(grid4):
    assert check_augmented_sufficiency(grid4, (0, 0), horizon=4)


def test_sufficiency_boundary_small():
    ti = GridConfig(grid_size=4, wall_enabled=False)
    co = GridConfig(grid_size=4, wall_enabled=False, coupling_mode="Coupled", collision_radius=1.0)
    assert check_augmented_sufficiency(ti, (0, 2), horizon=4)
    bad = check_augmented_sufficiency(co, (0, 2), horizon=4)
    assert not bad and bad.n_violations >= 1
    w = bad.as_verdict(expect=False)
    assert w.passed and w.witness["history_a"] != w.witness["history_b"]


def test_report_is_machine_readable(tmp_path):
    path = tmp_path / "r.json"
    doc = write_report([Verdict("a", True, "ok"), Verdict("b", False, "bad", (3, "action"))], path, {"x": 1})
    loaded = json.loads(path.read_text())
    assert loaded == json.loads(json.dumps(doc)) and not loaded["passed"]
    assert loaded["checks"][1]["divergence"] == {"t": 3, "field": "action"}


def test_dirac():
    assert dirac(1, 3) == (0, 1, 0)
