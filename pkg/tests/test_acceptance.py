"""Acceptance criteria 1-8, each printing one PASS/FAIL line.

Learning criteria use the 10,000-episode desk presets. "Final greedy return"
is the mean of the last 10 evaluation points (the final 100 episodes, one
smoothing window), averaged over the seeds listed in each test.
"""

import functools
import statistics
import time

import pytest

from delaylab.config import learner_configs, load_config
from delaylab.delay import DelayConfig
from delaylab.env_core import GridConfig, make_env
from delaylab.equiv import (TabularPolicy, check_additivity, check_augmented_sufficiency,
                            check_distribution_equivalence, check_mixed_reduction, replay_sweep)
from delaylab.harness import load_qtables, main, transfer
from delaylab.learn import LearnerConfig, run_training
from delaylab.streams import RandomStreams

from conftest import CRITERIA, tiny_spec
from test_learn import KeyedBehavior

GRID6 = GridConfig(grid_size=6, wall_enabled=True)


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n} {'PASS' if ok else 'FAIL'}: {detail}"
    CRITERIA[n] = line
    print(line)


def final_return(curve) -> float:
    tail = [v for _, v in curve[-10:]]
    return statistics.fmean(tail)


@functools.cache
def trained(preset: str, label: str, seed: int):
    cfg = load_config(preset)
    arm = cfg.arm(label)
    t0 = time.perf_counter()
    res = run_training(lambda: make_env(cfg.env), arm.delay, learner_configs(cfg, arm), cfg.episodes, seed=seed,
                       eval_every=cfg.eval_every)
    return res, time.perf_counter() - t0


class GuidedBehavior(KeyedBehavior):
    """Greedy on fixed Q-tables, with a keyed uniform move 20% of the time."""

    def __init__(self, qtables, seed=0, noise=0.2):
        super().__init__(seed)
        self.qtables, self.noise = qtables, noise

    def act(self, agent, view):
        if view.effective_time == 0:
            self.episode[agent] = self.episode.get(agent, -1) + 1
        u = RandomStreams(self.seed, self.episode[agent]).agent(agent, view.effective_time)
        if u < self.noise:
            return min(int(u / self.noise * self.n), self.n - 1)
        return self.qtables[agent].greedy(view.key)


def sequences(grid, dcfg, variant, episodes=40, behavior=None):
    res = run_training(lambda: make_env(grid), dcfg, [LearnerConfig(variant=variant)] * 2, episodes, seed=0,
                       eval_every=0, behavior=behavior or KeyedBehavior(0), log=True)
    return res.learners


def test_criterion_1_trajectory_isomorphism():
    t0 = time.perf_counter()
    v = replay_sweep(GRID6, (0, 3), 100, range(10), 5, horizon=50)
    dt = time.perf_counter() - t0
    ok = v.passed and dt < 10
    record(1, ok, f"{v.detail}; {dt:.1f}s")
    assert v.passed, v.detail
    assert dt < 10


def test_criterion_2_distribution_equivalence():
    t0 = time.perf_counter()
    spec = tiny_spec(horizon=3)
    v = check_distribution_equivalence(spec, TabularPolicy.random((2, 2), 0), (1, 1))
    dt = time.perf_counter() - t0
    record(2, v.passed and dt < 5, f"{v.detail}; {dt:.1f}s")
    assert v.passed, v.detail
    assert dt < 5


def test_criterion_3_mixed_and_additive():
    t0 = time.perf_counter()
    # horizon 4 so agent 0 (k=2) decides past its initialization regime
    mixed = check_mixed_reduction(tiny_spec(horizon=4), ("OD", "AD"), (2, 3), TabularPolicy.random((2, 2), 1))
    pol = TabularPolicy.random(5, 3)
    adds = [check_additivity(GRID6, (split, split), pol, range(10)) for split in ((1, 1), (1, 2), (2, 1))]
    dt = time.perf_counter() - t0
    ok = mixed.passed and all(adds) and dt < 30
    record(3, ok, f"mixed: {mixed.detail}; stacked: {sum(map(bool, adds))}/3 splits identical; {dt:.1f}s")
    assert mixed.passed, mixed.detail
    assert all(adds), [a.detail for a in adds if not a]
    assert dt < 30


def test_criterion_4_realignment():
    t0 = time.perf_counter()
    od = sequences(GRID6, DelayConfig((0, 3)), "ODBaseline")
    ad = sequences(GRID6, DelayConfig((0, 3), ("AD", "AD")), "ADRealigned")
    naive = sequences(GRID6, DelayConfig((0, 3), ("AD", "AD")), "ADNaive")
    dt = time.perf_counter() - t0
    sig = lambda lr: [u.signature() for u in lr.updates]  # noqa: E731
    equal = all(sig(a) == sig(b) for a, b in zip(od, ad))
    differs = sig(naive[1]) != sig(od[1])
    offsets = {u.action_time - u.reward_time for u in naive[1].updates}
    ok = equal and differs and offsets == {3} and dt < 10
    record(4, ok, f"{len(od[1].updates)} updates equal={equal}; naive differs={differs}, offsets={sorted(offsets)}; "
                  f"{dt:.1f}s")
    assert equal and differs and offsets == {3}
    assert dt < 10


def test_criterion_5_warm_vs_cold():
    results = {label: trained("fig4_warm_cold", label, 0) for label in ("OD-Warm", "AD-Warm", "AD-Cold")}
    finals = {label: final_return(res.curve) for label, (res, _) in results.items()}
    times = {label: dt for label, (_, dt) in results.items()}
    expect = {"OD-Warm": -1.0, "AD-Warm": -1.0, "AD-Cold": -4.0}
    within = all(abs(finals[k] - expect[k]) <= 0.5 for k in expect)
    fast = sum(times.values()) < 60
    record(5, within and fast, ", ".join(f"{k}={finals[k]:.2f} ({times[k]:.0f}s)" for k in expect))
    assert within, finals
    assert fast, times


def test_criterion_6_reward_delay_ordering():
    grid = load_config("fig2_reward_delay").env
    # random moves almost never reach the joint goal on this grid, so the logged
    # runs follow a noisy version of the trained OD policy instead
    tables = trained("fig2_reward_delay", "OD", 0)[0].qtables
    run = lambda dcfg, variant: sequences(grid, dcfg, variant, 100, GuidedBehavior(tables))  # noqa: E731
    base = run(DelayConfig((0, 3)), "ODBaseline")
    aligned = run(DelayConfig((0, 3), reward_delay=3), "ODRewardAligned")
    flushed = run(DelayConfig((0, 3), reward_delay=3), "ODRewardFlushed")
    naive = run(DelayConfig((0, 3), ("AD", "AD")), "ADNaive")
    trunc = run(DelayConfig((0, 3), reward_delay=3), "ODRewardTruncated")
    sig = lambda lr: [u.signature() for u in lr[1].updates]  # noqa: E731
    aligned_eq = sig(aligned) == sig(base)
    flushed_eq = sig(flushed) == sig(naive)
    goal_updates = sum(u.reward == 10 for u in base[1].updates)
    trunc_goal = sum(u.reward == 10 for u in trunc[1].updates)

    labels = ("OD", "OD-RewardAligned", "OD-RewardFlushed", "AD-Naive", "OD-RewardTruncated")
    finals = {lb: statistics.fmean(final_return(trained("fig2_reward_delay", lb, s)[0].curve) for s in range(3))
              for lb in labels}
    f = finals
    ordering = (abs(f["OD-RewardAligned"] - f["OD"]) <= 0.5
                and f["OD-RewardAligned"] > f["OD-RewardFlushed"]
                and abs(f["OD-RewardFlushed"] - f["AD-Naive"]) <= 0.5
                and min(f["OD-RewardFlushed"], f["AD-Naive"]) > f["OD-RewardTruncated"])
    ok = aligned_eq and flushed_eq and goal_updates > 0 and trunc_goal == 0 and ordering
    record(6, ok, f"aligned==baseline updates {aligned_eq}, flushed==naive updates {flushed_eq}, "
                  f"truncated goal updates {trunc_goal} (baseline {goal_updates}); finals "
                  + ", ".join(f"{k}={v:.2f}" for k, v in finals.items()))
    assert aligned_eq and flushed_eq
    assert goal_updates > 0 and trunc_goal == 0
    assert ordering, finals


def test_criterion_7_sufficiency_boundary():
    t0 = time.perf_counter()
    ti = check_augmented_sufficiency(GridConfig(grid_size=4, wall_enabled=False), (0, 2), 6)
    co = check_augmented_sufficiency(GridConfig(grid_size=4, wall_enabled=False, coupling_mode="Coupled",
                                                collision_radius=1.0), (0, 2), 6)
    dt = time.perf_counter() - t0
    ok = ti.holds and ti.n_violations == 0 and co.n_violations >= 1 and dt < 60
    record(7, ok, f"TI violations={ti.n_violations} over {ti.groups} groups, coupled violations={co.n_violations}; "
                  f"{dt:.1f}s")
    assert ti.n_violations == 0 and co.n_violations >= 1
    assert dt < 60


def test_criterion_8_zero_shot_transfer(tmp_path):
    assert main(["train", "--config", "transfer_7x7", "--out", str(tmp_path)]) == 0
    cfg = load_config("transfer_7x7")
    tables, header = load_qtables(tmp_path / "transfer_7x7/qtables/OD_seed0.json")
    warm = transfer(cfg, tables, header, ["AD", "AD"], "WarmStart")
    cold = transfer(cfg, tables, header, ["AD", "AD"], "ColdStart")
    n = len(warm.returns)
    ok = n == 300 and warm.mean == warm.source_return and cold.mean == warm.source_return - 3
    record(8, ok, f"OD={warm.source_return}, AD-Warm mean={warm.mean}, AD-Cold mean={cold.mean} over {n} episodes")
    assert n == 300
    assert warm.mean == warm.source_return
    assert cold.mean == warm.source_return - 3


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
