"""Mechanical checks that delay regimes induce the same trajectories.

Two tools do the work:

* **Replay** runs two wrapped systems under common random numbers. Policy
  draws are keyed by ``(agent, effective time)``, so when two regimes realize
  the same process they produce bitwise-identical trajectories, and the first
  mismatch is reported as ``(t, field)``.
* **Enumeration** walks every branch of the wrapped system (initial state,
  policy choices, transitions) and multiplies exact rational factors, which
  yields the full trajectory law of a tiny MDP.

Policies are tables from a history key (or augmented-state key) to a
probability row. The map between the regimes is the identity on that table,
so the same object is handed to both sides.
"""

from __future__ import annotations

import hashlib
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .delay import (AgentView, DelayConfig, DelayWrapper, InitMode, ObservationActionHistory, Regime, TraceStep,
                    additive_compose, format_obs)
from .env_core import EnvState, GridConfig, GridEnv, StepOutcome, TinyMdpEnv, TinyMdpSpec, grid_step, make_env
from .streams import RandomStreams


class DomainMode(str, Enum):
    FULL_HISTORY = "FullHistory"
    AUGMENTED = "AugmentedState"


class EnumerationLimitError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# policies


def _random_weights(seed: int, agent: int, key: str, n: int) -> list[int]:
    digest = hashlib.blake2b(f"{seed}:{agent}:{key}".encode(), digest_size=max(n, 8)).digest()
    return [1 + digest[a] for a in range(n)]


def _random_row(seed: int, agent: int, key: str, n: int) -> tuple[Fraction, ...]:
    weights = _random_weights(seed, agent, key, n)
    total = sum(weights)
    return tuple(Fraction(w, total) for w in weights)


def dirac(action: int, n: int) -> tuple[Fraction, ...]:
    return tuple(Fraction(int(a == action)) for a in range(n))


class TabularPolicy:
    """Per-agent table of action distributions.

    Rows missing from ``rows`` are drawn lazily from a keyed hash of
    ``(seed, agent, key)`` when ``seed`` is set, so a "random tabular policy"
    is fully determined by its seed and never needs materializing upfront.
    """

    def __init__(self, n_actions: int | Sequence[int], rows: dict | None = None,
                 domain_mode: DomainMode | str = DomainMode.FULL_HISTORY, seed: int | None = None):
        self.n_actions = n_actions
        self.domain_mode = DomainMode(domain_mode)
        self.seed = seed
        self.rows: dict[tuple[int, str], tuple] = {}
        self._cum: dict[tuple[int, str], list[float]] = {}
        for (agent, key), row in (rows or {}).items():
            self.set_row(agent, key, row)

    @classmethod
    def random(cls, n_actions, seed: int, domain_mode=DomainMode.FULL_HISTORY) -> "TabularPolicy":
        return cls(n_actions, domain_mode=domain_mode, seed=seed)

    def actions_for(self, agent: int) -> int:
        n = self.n_actions
        return n if isinstance(n, int) else n[agent]

    def set_row(self, agent: int, key: str, row: Sequence) -> None:
        row = tuple(Fraction(p) if isinstance(p, (int, str)) else p for p in row)
        if len(row) != self.actions_for(agent):
            raise ValueError(f"row for {key!r} has {len(row)} entries, expected {self.actions_for(agent)}")
        total = sum(row)
        if any(p < 0 for p in row) or (total != 1 if all(isinstance(p, Fraction) for p in row)
                                       else abs(total - 1) > 1e-12):
            raise ValueError(f"row for {key!r} is not a probability vector")
        self.rows[(agent, key)] = row
        self._cum.pop((agent, key), None)

    def key(self, view: AgentView) -> str:
        return view.history_key if self.domain_mode is DomainMode.FULL_HISTORY else view.key

    def row(self, agent: int, key: str) -> tuple:
        row = self.rows.get((agent, key))
        if row is None:
            if self.seed is None:
                raise KeyError(f"policy has no row for agent {agent}, key {key!r}")
            row = self.rows[(agent, key)] = _random_row(self.seed, agent, key, self.actions_for(agent))
        return row

    def row_for(self, agent: int, view: AgentView) -> tuple:
        return self.row(agent, self.key(view))

    def sample(self, agent: int, view: AgentView, u: float) -> int:
        k = (agent, self.key(view))
        cum = self._cum.get(k)
        if cum is None:
            row = self.rows.get(k)
            if row is None and self.seed is not None:
                # integer weights give the same boundaries as the rational row
                weights = _random_weights(self.seed, agent, k[1], self.actions_for(agent))
                total, acc, cum = sum(weights), 0, []
                for w in weights:
                    acc += w
                    cum.append(acc / total)
            else:
                acc, cum = Fraction(0), []
                for p in self.row(*k):
                    acc += p
                    cum.append(float(acc))
            cum[-1] = 1.0
            self._cum[k] = cum
        for a, c in enumerate(cum):
            if u < c:
                return a
        return len(cum) - 1


class ColdStartEmulator:
    """OD policy that plays the default action for ``t < k_i`` and defers to ``inner`` afterwards."""

    def __init__(self, inner, delays: Sequence[int], default_action: int, n_actions: int):
        self.inner = inner
        self.delays = tuple(delays)
        self.default_action = default_action
        self.n_actions = n_actions

    def row_for(self, agent: int, view: AgentView) -> tuple:
        if view.effective_time < self.delays[agent]:
            return dirac(self.default_action, self.n_actions)
        return self.inner.row_for(agent, view)

    def sample(self, agent: int, view: AgentView, u: float) -> int:
        if view.effective_time < self.delays[agent]:
            return self.default_action
        return self.inner.sample(agent, view, u)


class OpeningMovePolicy:
    """Plays ``action`` at effective time 0 for ``agent``, otherwise defers to ``inner``."""

    def __init__(self, inner, agent: int, action: int, n_actions: int):
        self.inner, self.agent, self.action, self.n_actions = inner, agent, action, n_actions

    def row_for(self, agent: int, view: AgentView) -> tuple:
        if agent == self.agent and view.effective_time == 0:
            return dirac(self.action, self.n_actions)
        return self.inner.row_for(agent, view)

    def sample(self, agent: int, view: AgentView, u: float) -> int:
        if agent == self.agent and view.effective_time == 0:
            return self.action
        return self.inner.sample(agent, view, u)


class SampledPolicy:
    """Draws from a table policy with the agent stream keyed by effective time."""

    def __init__(self, policy, streams: RandomStreams | None):
        self.policy = policy
        self.streams = streams

    def act(self, agent: int, view: AgentView) -> int:
        u = 0.0 if self.streams is None else self.streams.agent(agent, view.effective_time)
        return self.policy.sample(agent, view, u)


# ---------------------------------------------------------------------------
# trajectories and verdicts


@dataclass
class TrajectoryRecord:
    """Per-step ``(s_t, a_t, o_t, r_t)`` plus the terminal state and per-agent decision logs."""

    steps: list[TraceStep]
    final_state: object
    final_observations: tuple
    decisions: list[list[tuple[int, int, str]]]

    def __len__(self) -> int:
        return len(self.steps)

    def validate(self) -> None:
        for log in self.decisions:
            times = [eff for _, eff, _ in log]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise AssertionError("effective times must be strictly increasing")

    def executed(self, agent: int) -> list[int]:
        return [s.actions[agent] for s in self.steps]

    def to_dict(self) -> dict:
        return {
            "steps": [{"state": _jsonable(s.state), "actions": list(s.actions),
                       "observations": _jsonable(s.observations), "reward": _jsonable(s.reward)}
                      for s in self.steps],
            "final_state": _jsonable(self.final_state),
        }


def _jsonable(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (tuple, list)):
        return [_jsonable(v) for v in x]
    return x


_FIELDS = ("state", "action", "observation", "reward")


def first_divergence(a: TrajectoryRecord, b: TrajectoryRecord) -> tuple[int, str] | None:
    """Earliest ``(t, field)`` at which two records differ, or ``None``."""
    found: list[tuple[int, int, str]] = []
    for t, (x, y) in enumerate(zip(a.steps, b.steps)):
        pairs = (x.state, y.state), (x.actions, y.actions), (x.observations, y.observations), (x.reward, y.reward)
        for rank, (name, (u, v)) in enumerate(zip(_FIELDS, pairs)):
            if u != v:
                found.append((t, rank, name))
                break
        if found:
            break
    n = min(len(a.steps), len(b.steps))
    if not found:
        if len(a.steps) != len(b.steps):
            found.append((n, 4, "length"))
        elif a.final_state != b.final_state:
            found.append((n, 0, "state"))
        elif a.final_observations != b.final_observations:
            found.append((n, 2, "observation"))
    for i, (la, lb) in enumerate(zip(a.decisions, b.decisions)):
        for (_, ea, ha), (_, eb, hb) in zip(la, lb):
            if ea != eb or ha != hb:
                found.append((min(ea, eb), 5, f"history[{i}]"))
                break
    if not found:
        return None
    t, _, name = min(found)
    return t, name


@dataclass
class Verdict:
    check: str
    passed: bool
    detail: str = ""
    divergence: tuple[int, str] | None = None
    witness: dict | None = None

    def __bool__(self) -> bool:
        return self.passed

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.divergence is not None:
            d["divergence"] = {"t": self.divergence[0], "field": self.divergence[1]}
        return d


def write_report(verdicts: Iterable[Verdict], path: str | Path, header: dict | None = None) -> dict:
    verdicts = list(verdicts)
    doc = {
        **(header or {}),
        "passed": all(v.passed for v in verdicts),
        "checks": [v.to_dict() for v in verdicts],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return doc


# ---------------------------------------------------------------------------
# replay


def _factory(target) -> Callable:
    if isinstance(target, (GridConfig, TinyMdpSpec)):
        return lambda: make_env(target)
    return target


def delay_config(k: Sequence[int], regimes: Regime | str | Sequence = Regime.OD,
                 init_mode: InitMode | str = InitMode.WARM) -> DelayConfig:
    k = tuple(k)
    if isinstance(regimes, (str, Regime)):
        regimes = (Regime(regimes),) * len(k)
    return DelayConfig(k, tuple(regimes), init_mode=InitMode(init_mode))


def replay(target, policy, dcfg: DelayConfig, seed: int = 0, episode: int = 0, horizon: int | None = None,
           discipline: str = "fifo") -> TrajectoryRecord:
    """Run one recorded episode with ``policy`` sampled under common random numbers."""
    streams = RandomStreams(seed, episode)
    w = DelayWrapper(_factory(target)(), dcfg, streams, discipline=discipline, record=True)
    pol = SampledPolicy(policy, streams)
    views = w.reset(pol if dcfg.needs_warm_policy() else None)
    while not w.done and (horizon is None or w.t < horizon):
        views = w.step([pol.act(i, v) for i, v in enumerate(views)]).views
    state, obs = w.final_state()
    rec = TrajectoryRecord(w.trace, state, obs, w.decisions)
    rec.validate()
    return rec


@dataclass
class ReplayResult:
    verdict: Verdict
    first: TrajectoryRecord
    second: TrajectoryRecord

    def __bool__(self) -> bool:
        return self.verdict.passed


def replay_compare(target, policy, dcfg_a: DelayConfig, dcfg_b: DelayConfig, seed: int = 0,
                   horizon: int | None = None, check: str = "replay", discipline_b: str = "fifo",
                   policy_b=None) -> ReplayResult:
    a = replay(target, policy, dcfg_a, seed, horizon=horizon)
    b = replay(target, policy_b or policy, dcfg_b, seed, horizon=horizon, discipline=discipline_b)
    div = first_divergence(a, b)
    if div is None:
        return ReplayResult(Verdict(check, True, f"identical over {len(a)} steps (seed {seed})"), a, b)
    t, name = div
    witness = {"seed": seed, "t": t, "field": name,
               "first": a.to_dict()["steps"][t:t + 1], "second": b.to_dict()["steps"][t:t + 1]}
    return ReplayResult(Verdict(check, False, f"first divergence at t={t} in {name} (seed {seed})", div, witness),
                        a, b)


def replay_isomorphism(target, policy, k: Sequence[int], horizon: int | None = None, seed: int = 0,
                       init_mode: InitMode | str = InitMode.WARM, discipline: str = "fifo") -> ReplayResult:
    """OD versus AD(WarmStart) under common random numbers, same policy table on both sides.

    ``discipline='lifo'`` corrupts the AD action buffer, which must surface as
    a divergence.
    """
    if InitMode(init_mode) is InitMode.COLD:
        raise ValueError("the isomorphism is only claimed for WarmStart; use check_cold_start_inclusion")
    od = delay_config(k, Regime.OD)
    ad = delay_config(k, Regime.AD, InitMode.WARM)
    return replay_compare(target, policy, od, ad, seed, horizon, "isomorphism", discipline)


def replay_sweep(target, k: Sequence[int], n_policies: int, seeds: Iterable[int], n_actions: int,
                 domain_mode=DomainMode.FULL_HISTORY, horizon: int | None = None, policy_seed: int = 0,
                 discipline: str = "fifo") -> Verdict:
    """Isomorphism over ``n_policies`` random tables times ``seeds``; stops at the first failure."""
    seeds = list(seeds)
    runs = 0
    for p in range(n_policies):
        pol = TabularPolicy.random(n_actions, policy_seed + p, domain_mode)
        for s in seeds:
            res = replay_isomorphism(target, pol, k, horizon, s, discipline=discipline)
            runs += 1
            if not res:
                v = res.verdict
                v.detail = f"policy {policy_seed + p}: {v.detail}"
                return v
    return Verdict("isomorphism", True, f"{runs} policy/seed pairs identical")


# ---------------------------------------------------------------------------
# exact enumeration


class _Branch(Exception):
    def __init__(self, row):
        self.row = row


class _Chooser:
    """Replays a fixed prefix of branch choices; raises :class:`_Branch` past its end."""

    def __init__(self, prefix: list[int]):
        self.prefix = prefix
        self.pos = 0
        self.prob = Fraction(1)

    def choose(self, row) -> int:
        if self.pos == len(self.prefix):
            raise _Branch(row)
        i = self.prefix[self.pos]
        self.pos += 1
        self.prob *= row[i]
        return i


class _ChoiceTinyEnv(TinyMdpEnv):
    def __init__(self, spec: TinyMdpSpec, chooser: _Chooser):
        super().__init__(spec)
        self.chooser = chooser

    def reset(self, env_sample=0.0) -> tuple:
        self.state = self.chooser.choose(self.spec.initial)
        self.t = 0
        return self.spec.observations[self.state]

    def step(self, actions, env_sample=0.0):
        spec = self.spec
        j = spec.joint_index(actions)
        nxt = self.chooser.choose(spec.transitions[self.state][j])
        reward = spec.rewards[self.state][j]
        self.state = nxt
        self.t += 1
        return StepOutcome(nxt, spec.observations[nxt], reward, self.t >= spec.horizon)


class _ChoicePolicy:
    def __init__(self, policy, chooser: _Chooser):
        self.policy, self.chooser = policy, chooser

    def act(self, agent: int, view: AgentView) -> int:
        return self.chooser.choose(self.policy.row_for(agent, view))


@dataclass
class TrajectoryDistribution:
    """Trajectory key ``(states, joint actions, observations, rewards)`` to probability."""

    probs: dict = field(default_factory=dict)
    exact: bool = True

    def total(self):
        return sum(self.probs.values(), Fraction(0))

    def __len__(self) -> int:
        return len(self.probs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrajectoryDistribution):
            return NotImplemented
        if self.exact and other.exact:
            return self.probs == other.probs
        keys = self.probs.keys() | other.probs.keys()
        return all(abs(self.probs.get(k, 0) - other.probs.get(k, 0)) <= 1e-12 for k in keys)

    def diff(self, other: "TrajectoryDistribution") -> list:
        keys = sorted(self.probs.keys() | other.probs.keys(), key=repr)
        return [(k, self.probs.get(k, 0), other.probs.get(k, 0)) for k in keys
                if self.probs.get(k, 0) != other.probs.get(k, 0)]

    def expectation(self, fn: Callable[[tuple], object]):
        return sum((p * fn(k) for k, p in self.probs.items()), Fraction(0))

    def expected_returns(self, gamma=Fraction(9, 10)) -> dict:
        return {
            "discounted": self.expectation(lambda k: discounted_return(k[3], gamma)),
            "total": self.expectation(lambda k: sum(k[3], Fraction(0))),
            "average": self.expectation(lambda k: average_return(k[3])),
        }


def discounted_return(rewards: Sequence, gamma) -> object:
    acc, g = Fraction(0) if not isinstance(gamma, float) else 0.0, 1
    for r in rewards:
        acc += g * r
        g *= gamma
    return acc


def average_return(rewards: Sequence):
    if not rewards:
        return Fraction(0)
    total = sum(rewards, Fraction(0))
    return total / len(rewards) if isinstance(total, Fraction) else total / len(rewards)


def enumeration_bound(spec: TinyMdpSpec, horizon: int | None = None) -> int:
    t = horizon or spec.horizon
    joint = 1
    for a in spec.action_counts:
        joint *= a
    n_obs = len(set(spec.observations))
    return (spec.state_count * joint * n_obs) ** t


def enumerate_distribution(spec, policy, k: Sequence[int] | DelayConfig, regime=Regime.OD,
                           init_mode: InitMode | str = InitMode.WARM, horizon: int | None = None,
                           max_nodes: int = 10**7) -> TrajectoryDistribution:
    """Exact trajectory law of the wrapped system.

    Every branch point (initial state, each policy draw, each transition) is
    expanded in turn and the branch probabilities multiplied, so the factor
    order follows the wrapper's own buffer mechanics for ``regime``.
    """
    dcfg = k if isinstance(k, DelayConfig) else delay_config(k, regime, init_mode)
    if isinstance(spec, TinyMdpSpec) and enumeration_bound(spec, horizon) > max_nodes:
        raise EnumerationLimitError(f"enumeration bound {enumeration_bound(spec, horizon)} exceeds {max_nodes}")
    exact = True
    dist: dict = defaultdict(Fraction)
    stack: list[list[int]] = [[]]
    nodes = 0
    while stack:
        prefix = stack.pop()
        nodes += 1
        if nodes > max_nodes:
            raise EnumerationLimitError(f"more than {max_nodes} enumeration nodes")
        chooser = _Chooser(prefix)
        env = _ChoiceTinyEnv(spec, chooser) if isinstance(spec, TinyMdpSpec) else GridEnv(spec)
        w = DelayWrapper(env, dcfg, None, record=True)
        pol = _ChoicePolicy(policy, chooser)
        try:
            views = w.reset(pol if dcfg.needs_warm_policy() else None)
            while not w.done and (horizon is None or w.t < horizon):
                views = w.step([pol.act(i, v) for i, v in enumerate(views)]).views
        except _Branch as br:
            for i in reversed(range(len(br.row))):
                if br.row[i] != 0:
                    stack.append(prefix + [i])
            continue
        if not isinstance(chooser.prob, Fraction):
            exact = False
        state, obs = w.final_state()
        key = (tuple(s.state for s in w.trace) + (state,),
               tuple(s.actions for s in w.trace),
               tuple(s.observations for s in w.trace) + (obs,),
               tuple(s.reward for s in w.trace))
        dist[key] += chooser.prob
    return TrajectoryDistribution(dict(dist), exact)


def check_distribution_equivalence(spec: TinyMdpSpec, policy, k: Sequence[int],
                                   gamma=Fraction(9, 10)) -> Verdict:
    od = enumerate_distribution(spec, policy, k, Regime.OD)
    ad = enumerate_distribution(spec, policy, k, Regime.AD, InitMode.WARM)
    if od.total() != 1 or ad.total() != 1:
        return Verdict("enumeration", False, f"masses {od.total()} / {ad.total()} do not sum to 1")
    if od != ad:
        d = od.diff(ad)
        return Verdict("enumeration", False, f"{len(d)} trajectories differ",
                       witness={"trajectory": repr(d[0][0]), "od": str(d[0][1]), "ad": str(d[0][2])})
    ro, ra = od.expected_returns(gamma), ad.expected_returns(gamma)
    if ro != ra:
        return Verdict("enumeration", False, f"expected returns differ: {ro} vs {ra}")
    summary = ", ".join(f"{name}={value}" for name, value in ro.items())
    return Verdict("enumeration", True, f"{len(od)} trajectories equal as rationals; {summary}")


def monte_carlo_returns(spec: TinyMdpSpec, policy, dcfg: DelayConfig, episodes: int, seed: int = 0,
                        gamma: float = 0.9) -> dict:
    """Seeded simulation estimate (mean, standard error) of each return functional."""
    import statistics

    factory = _factory(spec)
    samples = {"discounted": [], "total": [], "average": []}
    base = RandomStreams(seed)
    w = DelayWrapper(factory(), dcfg)
    for e in range(episodes):
        streams = base.for_episode(e)
        w.streams = streams
        pol = SampledPolicy(policy, streams)
        views = w.reset(pol if dcfg.needs_warm_policy() else None)
        rewards = []
        while not w.done:
            res = w.step([pol.act(i, v) for i, v in enumerate(views)])
            rewards.append(float(res.reward))
            views = res.views
        samples["discounted"].append(float(discounted_return(rewards, gamma)))
        samples["total"].append(sum(rewards))
        samples["average"].append(sum(rewards) / len(rewards))
    n = max(episodes, 1)
    return {name: (statistics.fmean(v), statistics.pstdev(v) / n ** 0.5) for name, v in samples.items()}


# ---------------------------------------------------------------------------
# corollary checks


def check_mixed_reduction(target, regimes: Sequence[Regime | str], k: Sequence[int], policy,
                          seeds: Iterable[int] = (0,), horizon: int | None = None) -> Verdict:
    """Mixed per-agent regimes (AD agents warm-started) versus pure OD with the same delays.

    Tiny MDP specs are compared by enumeration, anything else by replay.
    """
    mixed = delay_config(k, tuple(Regime(r) for r in regimes), InitMode.WARM)
    pure = delay_config(k, Regime.OD)
    label = "mixed"
    if isinstance(target, TinyMdpSpec):
        a = enumerate_distribution(target, policy, mixed, horizon=horizon)
        b = enumerate_distribution(target, policy, pure, horizon=horizon)
        if a == b and a.total() == 1:
            return Verdict(label, True, f"{len(a)} trajectories equal as rationals")
        return Verdict(label, False, f"{len(a.diff(b))} trajectories differ")
    seeds = list(seeds)
    for s in seeds:
        res = replay_compare(target, policy, pure, mixed, s, horizon, label)
        if not res:
            return res.verdict
    return Verdict(label, True, f"replay identical across {len(seeds)} seeds")


def check_additivity(target, splits: Sequence[tuple[int, int]], policy, seeds: Iterable[int] = (0,),
                     horizon: int | None = None) -> Verdict:
    """Stacked ``(k_a, k_o)`` delays versus pure OD with ``K = k_a + k_o``."""
    stacked = DelayConfig(simultaneous=tuple(splits))
    pure = additive_compose(stacked)
    label = "additivity"
    seeds = list(seeds)
    for s in seeds:
        res = replay_compare(target, policy, pure, stacked, s, horizon, label)
        if not res:
            res.verdict.detail = f"splits {list(splits)}: {res.verdict.detail}"
            return res.verdict
    return Verdict(label, True, f"splits {list(splits)} identical to K={pure.delays} across {len(seeds)} seeds")


@dataclass
class InclusionVerdict:
    emulation: Verdict
    witness_found: bool
    witness: dict | None
    expected_witness: bool

    @property
    def passed(self) -> bool:
        return self.emulation.passed and self.witness_found == self.expected_witness

    def __bool__(self) -> bool:
        return self.passed

    def as_verdict(self) -> Verdict:
        detail = f"{self.emulation.detail}; witness {'found' if self.witness_found else 'not found'}"
        return Verdict("cold-start", self.passed, detail, self.emulation.divergence, self.witness)


def check_cold_start_inclusion(target, k: Sequence[int], n_policies: int = 50, seed: int = 0,
                               horizon: int | None = None, domain_mode=DomainMode.AUGMENTED) -> InclusionVerdict:
    """ColdStart-AD behaviour is reproducible under OD, but not the other way round.

    (a) every random ColdStart-AD table is emulated by the OD policy that
    plays the default action while ``t < k_i`` and then copies the table;
    (b) an OD policy opening with a non-default action for a delayed agent
    executes something no ColdStart-AD policy can, since the cold buffer
    forces the first ``k_i`` executed actions to the default.
    """
    factory = _factory(target)
    env = factory()
    n_actions = len(env.action_letters) if isinstance(env, GridEnv) else env.n_actions
    default = env.default_action
    cold = delay_config(k, Regime.AD, InitMode.COLD)
    od = delay_config(k, Regime.OD)
    emulation = Verdict("cold-start", True, f"{n_policies} ColdStart-AD policies emulated under OD")
    for p in range(n_policies):
        pol = TabularPolicy.random(n_actions, seed + p, domain_mode)
        res = replay_compare(factory, pol, cold, od, seed + p, horizon, "cold-start",
                             policy_b=ColdStartEmulator(pol, k, default, n_actions))
        if not res:
            emulation = res.verdict
            break

    delayed = [i for i, ki in enumerate(k) if ki > 0]
    if not delayed:
        return InclusionVerdict(emulation, False, None, False)
    i = delayed[0]
    move = 3 if n_actions > 3 and default != 3 else next(a for a in range(n_actions) if a != default)
    opener = OpeningMovePolicy(TabularPolicy.random(n_actions, seed, domain_mode), i, move, n_actions)
    od_rec = replay(factory, opener, od, seed, horizon=horizon)
    forced = []
    for p in range(n_policies):
        rec = replay(factory, opener if p == 0 else TabularPolicy.random(n_actions, seed + p, domain_mode),
                     cold, seed + p, horizon=horizon)
        forced.append(rec.executed(i)[:k[i]])
    prefix_ok = all(all(a == default for a in f) for f in forced)
    found = od_rec.executed(i)[0] == move and prefix_ok
    witness = {"agent": i, "od_first_action": od_rec.executed(i)[0],
               "cold_prefixes_all_default": prefix_ok, "default_action": default, "k": k[i]}
    return InclusionVerdict(emulation, found, witness, True)


# ---------------------------------------------------------------------------
# augmented-state sufficiency


@dataclass
class SufficiencyVerdict:
    holds: bool
    groups: int
    violations: list = field(default_factory=list)
    n_violations: int = 0

    def __bool__(self) -> bool:
        return self.holds

    def as_verdict(self, expect: bool = True) -> Verdict:
        detail = f"{self.groups} (augmented state, action) groups, {self.n_violations} violating histories"
        w = None
        if self.violations:
            aug, a, h1, d1, h2, d2 = self.violations[0]
            w = {"augmented": aug, "action": a, "history_a": h1, "next_obs_a": d1, "history_b": h2, "next_obs_b": d2}
        return Verdict("sufficiency", self.holds == expect, detail, None, w)


def check_augmented_sufficiency(cfg: GridConfig, k: Sequence[int], horizon: int = 6,
                                actions: Sequence[int] = (0, 1, 2, 3), other_actions: Sequence[int] = (0, 1, 2, 3, 4),
                                max_nodes: int = 2_000_000, max_violations: int = 20) -> SufficiencyVerdict:
    """Is the next delivered local observation a function of (augmented state, action) alone?

    For each agent ``j`` in turn, ``j`` plays uniformly over ``actions`` while
    the other agent plays uniformly over ``other_actions``; termination is
    ignored. Exact forward propagation yields, for every reachable history
    ``h_t`` and action ``a_t``, the law of the observation that enters the next
    augmented state. Histories sharing an augmented key must share that law.
    """
    if len(k) != 2:
        raise ValueError("the grid world has exactly two agents")
    letters = GridEnv.action_letters
    default = GridEnv.default_action
    # (focal agent, augmented key, action) -> (first history seen, its law)
    reference: dict[tuple[str, int], tuple[str, dict]] = {}
    violations: list = []
    n_bad = 0
    share = Fraction(1, len(other_actions))
    moves: dict = {}
    # longest delay first so the reported witness comes from a delayed agent
    for j in sorted(range(2), key=lambda i: -k[i]):
        kj = k[j]
        o = 1 - j
        start = cfg.start_positions
        # focal record (observations, actions) -> law of the other agent's position
        nodes: dict[tuple, dict] = {((start[j],), ()): {start[o]: Fraction(1)}}
        for t in range(horizon):
            nxt: dict[tuple, dict] = defaultdict(lambda: defaultdict(Fraction))
            # pooled over records sharing a history: the agent cannot tell them apart
            laws: dict[tuple[str, int], dict] = defaultdict(lambda: defaultdict(Fraction))
            masses: dict[str, Fraction] = defaultdict(Fraction)
            augs: dict[str, str] = {}
            for (obs, acts), others in nodes.items():
                hkey = _history_for(obs, acts, t, kj).key(letters)
                augs[hkey] = f"{j}:" + _augmented_key(obs, acts, t, kj, letters, default)
                me = obs[-1]
                masses[hkey] += sum(others.values())
                for a in actions:
                    law = laws[(hkey, a)]
                    for po, p in others.items():
                        for b in other_actions:
                            key = (me, po, a, b, j)
                            hit = moves.get(key)
                            if hit is None:
                                joint = (a, b) if j == 0 else (b, a)
                                pos = (me, po) if j == 0 else (po, me)
                                out = grid_step(EnvState(pos, 0, False), joint, cfg).local_observations
                                hit = moves[key] = (out[j], out[o])
                            oj, po2 = hit
                            obs2 = obs + (oj,)
                            law[obs2[max(0, t + 1 - kj)]] += p * share
                            nxt[(obs2, acts + (a,))][po2] += p * share / len(actions)
            for (hkey, a), law in laws.items():
                aug = augs[hkey]
                normal = {format_obs(v): q / masses[hkey] for v, q in law.items()}
                ref = reference.setdefault((aug, a), (hkey, normal))
                if ref[1] != normal:
                    n_bad += 1
                    if len(violations) < max_violations:
                        violations.append((aug, letters[a], ref[0], _fmt_law(ref[1]), hkey, _fmt_law(normal)))
            if sum(len(v) for v in nxt.values()) > max_nodes:
                raise EnumerationLimitError(f"node count exceeds {max_nodes}")
            nodes = nxt
    return SufficiencyVerdict(n_bad == 0, len(reference), violations, n_bad)


def _history_for(obs: tuple, acts: tuple, t: int, k: int) -> ObservationActionHistory:
    if t < k:
        return ObservationActionHistory((obs[0],), acts, t, padded=True)
    return ObservationActionHistory(obs[: t - k + 1], acts, t)


def _augmented_key(obs: tuple, acts: tuple, t: int, k: int, letters: str, default: int) -> str:
    if t < k:
        front, pending = obs[0], (default,) * (k - t) + acts
    else:
        front, pending = obs[t - k], acts[t - k:]
    return format_obs(front) + "|" + "".join(letters[a] for a in pending)


def _fmt_law(law: dict) -> dict:
    return {k: str(v) for k, v in sorted(law.items())}


__all__ = [
    "DomainMode", "EnumerationLimitError", "TabularPolicy", "ColdStartEmulator", "OpeningMovePolicy",
    "SampledPolicy", "dirac", "TrajectoryRecord", "first_divergence", "Verdict", "write_report",
    "delay_config", "replay", "ReplayResult", "replay_compare", "replay_isomorphism", "replay_sweep",
    "TrajectoryDistribution", "enumerate_distribution", "enumeration_bound", "check_distribution_equivalence",
    "discounted_return", "average_return", "monte_carlo_returns", "check_mixed_reduction", "check_additivity",
    "InclusionVerdict", "check_cold_start_inclusion", "SufficiencyVerdict", "check_augmented_sufficiency",
]
