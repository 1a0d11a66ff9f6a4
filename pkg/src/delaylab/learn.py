"""Independent tabular learners over augmented states.

Each agent owns a :class:`QTable` keyed by its augmented-state key. The
variant decides which transition tuple each TD update consumes:

* ``ODBaseline``: the decision made now, paired with the immediate reward.
* ``ADNaive``: the decision made now, paired with the reward of the action
  executing now (decided ``k`` steps earlier).
* ``ADRealigned``: transition tuples wait ``k`` steps in a
  :class:`TransitionBuffer` until their own reward arrives.
* ``SarsaRealigned``: as above, bootstrapping on the buffered next decision.
* ``ODRewardTruncated`` / ``ODRewardFlushed`` / ``ODRewardAligned``: OD agents
  whose reward stream is delayed; see :meth:`AgentLearner.observe`.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

from .delay import AgentView, DelayConfig, DelayWrapper, FlushItem, InitMode, Regime, WrapperStep, format_obs
from .streams import RandomStreams


class Variant(str, Enum):
    OD_BASELINE = "ODBaseline"
    AD_NAIVE = "ADNaive"
    AD_REALIGNED = "ADRealigned"
    SARSA_REALIGNED = "SarsaRealigned"
    OD_REWARD_TRUNCATED = "ODRewardTruncated"
    OD_REWARD_FLUSHED = "ODRewardFlushed"
    OD_REWARD_ALIGNED = "ODRewardAligned"

    @property
    def action_delayed(self) -> bool:
        return self in (Variant.AD_NAIVE, Variant.AD_REALIGNED, Variant.SARSA_REALIGNED)

    @property
    def uses_delayed_reward(self) -> bool:
        return self in (Variant.OD_REWARD_TRUNCATED, Variant.OD_REWARD_FLUSHED, Variant.OD_REWARD_ALIGNED)


class VariantMismatchError(ValueError):
    pass


class QTable:
    """Per-agent action values; unseen keys read as ``default``."""

    def __init__(self, n_actions: int, default: float = 0.0):
        self.n_actions = n_actions
        self.default = default
        self.table: dict[str, list[float]] = {}
        self._blank = (default,) * n_actions

    def values(self, key: str) -> Sequence[float]:
        return self.table.get(key, self._blank)

    def row(self, key: str) -> list[float]:
        row = self.table.get(key)
        if row is None:
            row = self.table[key] = [self.default] * self.n_actions
        return row

    def max_value(self, key: str) -> float:
        row = self.table.get(key)
        return self.default if row is None else max(row)

    def greedy(self, key: str) -> int:
        row = self.table.get(key)
        if row is None:
            return 0
        return row.index(max(row))

    def __len__(self) -> int:
        return len(self.table)

    def __eq__(self, other) -> bool:
        return isinstance(other, QTable) and self.n_actions == other.n_actions and self.table == other.table

    def copy(self) -> "QTable":
        q = QTable(self.n_actions, self.default)
        q.table = {k: list(v) for k, v in self.table.items()}
        return q


@dataclass(frozen=True)
class ExplorationSchedule:
    epsilon_start: float = 1.0
    epsilon_min: float = 0.05
    decay_fraction: float = 0.2

    def __call__(self, episode: int, total: int) -> float:
        span = self.decay_fraction * total
        frac = 1.0 if span <= 0 else min(1.0, episode / span)
        return self.epsilon_start + (self.epsilon_min - self.epsilon_start) * frac


@dataclass(frozen=True)
class LearnerConfig:
    alpha: float = 0.1
    gamma: float = 0.99
    schedule: ExplorationSchedule = field(default_factory=ExplorationSchedule)
    variant: Variant = Variant.OD_BASELINE
    tie_break: str = "lowest"
    n_actions: int = 4

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.tie_break not in ("lowest", "random"):
            raise ValueError(f"unknown tie_break {self.tie_break!r}")
        if self.n_actions < 1:
            raise ValueError("n_actions must be positive")


def select_action(q: QTable, s_key: str, epsilon: float, unit_sample: float,
                  tie_sample: float | None = None, tie_break: str = "lowest") -> int:
    """Epsilon-greedy choice driven by one uniform.

    ``unit_sample < epsilon`` explores and the rescaled sample ``u / epsilon``
    picks the action by inverse CDF; otherwise the greedy action is taken with
    ties broken by lowest index (or by ``tie_sample`` when ``tie_break='random'``).
    """
    n = q.n_actions
    if unit_sample < epsilon:
        return min(int(unit_sample / epsilon * n), n - 1)
    values = q.values(s_key)
    best = max(values)
    if tie_break == "random" and tie_sample is not None:
        ties = [a for a, v in enumerate(values) if v == best]
        return ties[min(int(tie_sample * len(ties)), len(ties) - 1)]
    return values.index(best)


def td_update_od(q: QTable, s_key: str, action: int, reward: float, next_key: str, done: bool,
                 cfg: LearnerConfig) -> float:
    row = q.row(s_key)
    target = reward if done else reward + cfg.gamma * q.max_value(next_key)
    row[action] += cfg.alpha * (target - row[action])
    return row[action]


def td_update_ad_naive(q: QTable, s_key: str, action: int, reward: float, next_key: str, done: bool,
                       cfg: LearnerConfig) -> float:
    # same arithmetic; the credit error lives in which tuple the caller feeds in
    return td_update_od(q, s_key, action, reward, next_key, done, cfg)


@dataclass
class Transition:
    key: str
    action: int
    next_key: str
    effective_time: int
    q_version: int = 0
    reward: float | None = None


class TransitionBuffer:
    """FIFO of transition tuples waiting for the reward of their own action."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._q: deque[Transition] = deque()

    def push(self, tr: Transition) -> None:
        self._q.append(tr)

    def due(self) -> bool:
        return len(self._q) > self.capacity

    def pop(self) -> Transition:
        return self._q.popleft()

    def front(self) -> Transition:
        return self._q[0]

    def clear(self) -> list[Transition]:
        rest = list(self._q)
        self._q.clear()
        return rest

    def __len__(self) -> int:
        return len(self._q)

    def __getitem__(self, i) -> Transition:
        return self._q[i]


def td_update_ad_realigned(q: QTable, tb: TransitionBuffer, reward: float, done: bool,
                           cfg: LearnerConfig) -> tuple[Transition, float] | None:
    """Pop the tuple whose action produced ``reward`` and apply the TD update to it.

    Returns ``None`` while the buffer still holds at most ``capacity`` tuples
    (the reward belongs to an action the learner never decided).
    """
    if not tb.due():
        return None
    tr = tb.pop()
    return tr, td_update_od(q, tr.key, tr.action, reward, tr.next_key, done, cfg)


def sarsa_update_realigned(q: QTable, tr: Transition, reward: float, next_action: int | None,
                           cfg: LearnerConfig, done: bool = False) -> float:
    row = q.row(tr.key)
    if done or next_action is None:
        target = reward
    else:
        target = reward + cfg.gamma * q.values(tr.next_key)[next_action]
    row[tr.action] += cfg.alpha * (target - row[tr.action])
    return row[tr.action]


@dataclass(frozen=True)
class UpdateRecord:
    key: str
    action: int
    reward: float
    next_key: str
    done: bool
    action_time: int
    reward_time: int
    value: float

    def signature(self) -> tuple:
        return (self.key, self.action, self.reward, self.next_key, self.done)


@dataclass(frozen=True)
class DriftRecord:
    """Q version that sampled the bootstrap action vs the version evaluating it."""

    sampled_version: int
    evaluated_version: int


class AgentLearner:
    """One agent's tabular learner for a fixed variant and delay split."""

    def __init__(self, agent: int, cfg: LearnerConfig, k_a: int, k_o: int, reward_delay: int = 0,
                 letters: str = "UDLRS", behavior=None, log: bool = False):
        v = cfg.variant
        if v.action_delayed and k_o > 0:
            raise VariantMismatchError(f"{v.value} needs an action-delayed or undelayed agent, got k_o={k_o}")
        if not v.action_delayed and k_a > 0:
            raise VariantMismatchError(f"{v.value} needs an observation-delayed or undelayed agent, got k_a={k_a}")
        if v is Variant.OD_BASELINE and reward_delay > 0:
            raise VariantMismatchError("ODBaseline expects immediate rewards; pick an ODReward* variant")
        self.agent = agent
        self.cfg = cfg
        self.k_a, self.k_o = k_a, k_o
        self.reward_delay = reward_delay if k_o > 0 else 0
        self.letters = letters
        self.behavior = behavior
        self.log = log
        self.q = QTable(cfg.n_actions)
        self.updates: list[UpdateRecord] = []
        self.drift: list[DriftRecord] = []
        self.n_updates = 0
        self._tb = TransitionBuffer(k_a if v.action_delayed else self.reward_delay)
        self._warm: list[tuple[AgentView, int]] = []
        self._view: AgentView | None = None
        self._action: int | None = None
        self._decision_version = 0
        self._n = 0

    # -- acting ------------------------------------------------------------
    def act(self, view: AgentView, epsilon: float, streams: RandomStreams | None) -> int:
        if self.behavior is not None:
            a = self.behavior.act(self.agent, view)
        else:
            u = 0.0 if streams is None else streams.agent(self.agent, view.effective_time)
            tie = None
            if streams is not None and self.cfg.tie_break == "random":
                tie = streams.tie(self.agent, view.effective_time)
            a = select_action(self.q, view.key, epsilon, u, tie, self.cfg.tie_break)
        if view.decision_time < 0:
            self._warm.append((view, a))
        else:
            self._view, self._action = view, a
        self._decision_version = self.n_updates
        return a

    # -- episode protocol --------------------------------------------------
    def start_episode(self, first_view: AgentView) -> None:
        """Called after the wrapper reset; ``first_view`` is the post-reset view."""
        self._tb.clear()
        self._n = 0
        warm = self._warm
        self._warm = []
        if self.cfg.variant in (Variant.AD_REALIGNED, Variant.SARSA_REALIGNED):
            keys = [v.key for v, _ in warm] + [first_view.key]
            for j, (v, a) in enumerate(warm):
                self._tb.push(Transition(v.key, a, keys[j + 1], v.effective_time, self.n_updates))

    def _apply(self, key, action, reward, next_key, done, action_time, reward_time) -> None:
        value = td_update_od(self.q, key, action, reward, next_key, done, self.cfg)
        self.n_updates += 1
        if self.log:
            self.updates.append(UpdateRecord(key, action, reward, next_key, done, action_time, reward_time, value))

    def observe(self, res: WrapperStep) -> None:
        """Consume one wrapper step for the decision made just before it."""
        i = self.agent
        n = self._n
        self._n += 1
        new = res.views[i]
        tr = Transition(self._view.key, self._action, new.key, self._view.effective_time, self._decision_version)
        v = self.cfg.variant
        if v in (Variant.OD_BASELINE, Variant.AD_NAIVE):
            self._apply(tr.key, tr.action, res.reward, tr.next_key, res.done, tr.effective_time, n)
        elif v is Variant.AD_REALIGNED:
            self._tb.push(tr)
            if self._tb.due():
                old = self._tb.pop()
                self._apply(old.key, old.action, res.reward, old.next_key, res.done, old.effective_time, n)
            if res.done:
                # decisions still pending never take effect
                self._tb.clear()
        elif v is Variant.SARSA_REALIGNED:
            self._sarsa_step(tr, n, res.reward, res.done)
        else:
            item = res.info["delivered"][i] if self.reward_delay else FlushItem(new.obs, res.reward, res.done)
            # an undelayed reward stream makes all three treatments the baseline
            if v is Variant.OD_REWARD_ALIGNED:
                self._tb.push(tr)
                if item is not None:
                    old = self._tb.pop()
                    self._apply(old.key, old.action, item.reward, old.next_key, item.done,
                                old.effective_time, old.effective_time)
            elif item is not None:
                done = res.done if v is Variant.OD_REWARD_TRUNCATED else (item.done and self.reward_delay == 0)
                self._apply(tr.key, tr.action, item.reward, tr.next_key, done, tr.effective_time,
                            n - self.reward_delay)
        self._view = new

    def _sarsa_step(self, tr: Transition, n: int, reward: float, done: bool) -> None:
        tb = self._tb
        tb.push(tr)
        for j in range(len(tb)):
            if tb[j].effective_time == n:
                tb[j].reward = reward
                break
        while len(tb) and tb.front().reward is not None:
            if len(tb) > 1 and not done:
                nxt = tb[1]
                front = tb.pop()
                value = sarsa_update_realigned(self.q, front, front.reward, nxt.action, self.cfg)
                self.drift.append(DriftRecord(nxt.q_version, self.n_updates))
            elif done:
                front = tb.pop()
                value = sarsa_update_realigned(self.q, front, front.reward, None, self.cfg, done=True)
                tb.clear()
            else:
                break
            self.n_updates += 1
            if self.log:
                self.updates.append(UpdateRecord(front.key, front.action, front.reward, front.next_key,
                                                 done and not len(tb), front.effective_time,
                                                 front.effective_time, value))

    def end_episode(self, flush: list[FlushItem] | None, epsilon: float = 0.0,
                    streams: RandomStreams | None = None) -> int:
        """Apply the terminal treatment; returns the number of flush updates."""
        v = self.cfg.variant
        if not v.uses_delayed_reward or not self.reward_delay:
            self._tb.clear()
            return 0
        flush = flush or []
        count = 0
        if v is Variant.OD_REWARD_ALIGNED:
            for item in flush:
                old = self._tb.pop()
                self._apply(old.key, old.action, item.reward, old.next_key, item.done,
                            old.effective_time, old.effective_time)
                count += 1
        elif v is Variant.OD_REWARD_FLUSHED:
            # keep deciding on unseen states so delayed rewards pair like naive AD tuples
            view = self._view
            for j, item in enumerate(flush):
                a = self.act(AgentView(self.agent, view.obs, view.actions, view.effective_time,
                                       view.decision_time, view.key), epsilon, streams)
                acts = view.actions[1:] + (a,)
                key = format_obs(item.observation) + "|" + "".join(self.letters[x] for x in acts)
                nxt = AgentView(self.agent, item.observation, acts, view.effective_time + 1,
                                view.decision_time + 1, key)
                last = j == len(flush) - 1
                self._apply(view.key, a, item.reward, key, last, view.effective_time,
                            view.effective_time - self.reward_delay)
                view = nxt
                count += 1
        self._tb.clear()
        return count


def check_pairing(dcfg: DelayConfig, configs: Sequence[LearnerConfig]) -> None:
    if len(configs) != dcfg.n_agents:
        raise VariantMismatchError(f"need {dcfg.n_agents} learner configs, got {len(configs)}")
    for i, ((ka, ko), c) in enumerate(zip(dcfg.split(), configs)):
        if c.variant.action_delayed and ko > 0:
            raise VariantMismatchError(f"agent {i}: {c.variant.value} requires an AD wrapper")
        if not c.variant.action_delayed and ka > 0:
            raise VariantMismatchError(f"agent {i}: {c.variant.value} requires an OD wrapper")


@dataclass
class TrainingResult:
    curve: list[tuple[int, float]]
    qtables: list[QTable]
    learners: list[AgentLearner]

    @property
    def final_return(self) -> float | None:
        return self.curve[-1][1] if self.curve else None


class GreedyPolicy:
    def __init__(self, qtables: Sequence[QTable]):
        self.qtables = qtables

    def act(self, agent: int, view: AgentView) -> int:
        return self.qtables[agent].greedy(view.key)


def greedy_return(env_factory: Callable, dcfg: DelayConfig, qtables: Sequence[QTable],
                  max_steps: int | None = None) -> float:
    """Undiscounted return of one greedy episode under ``dcfg``."""
    w = DelayWrapper(env_factory(), dcfg)
    pol = GreedyPolicy(qtables)
    views = w.reset(pol if dcfg.needs_warm_policy() else None)
    total = 0.0
    while not w.done and (max_steps is None or w.t < max_steps):
        res = w.step([pol.act(i, v) for i, v in enumerate(views)])
        total += res.reward
        views = res.views
    return total


class _LearnerPolicy:
    def __init__(self, learners, epsilon, streams):
        self.learners, self.epsilon, self.streams = learners, epsilon, streams

    def act(self, agent, view):
        return self.learners[agent].act(view, self.epsilon, self.streams)


def run_episode_learning(wrapper: DelayWrapper, learners: Sequence[AgentLearner], epsilon: float,
                         streams: RandomStreams | None) -> tuple[float, int]:
    pol = _LearnerPolicy(learners, epsilon, streams)
    views = wrapper.reset(pol if wrapper.dcfg.needs_warm_policy() else None)
    for lr, v in zip(learners, views):
        lr.start_episode(v)
    total = 0.0
    while not wrapper.done:
        actions = [lr.act(v, epsilon, streams) for lr, v in zip(learners, views)]
        res = wrapper.step(actions)
        for lr in learners:
            lr.observe(res)
        total += res.reward
        views = res.views
    flush = wrapper.terminal_flush()
    for lr, items in zip(learners, flush):
        lr.end_episode(items, epsilon, streams)
    return total, wrapper.t


def run_training(env_factory: Callable, dcfg: DelayConfig, configs: Sequence[LearnerConfig], episodes: int,
                 seed: int = 0, eval_every: int = 10, behavior=None, log: bool = False,
                 eval_dcfg: DelayConfig | None = None) -> TrainingResult:
    """Train independent per-agent learners; greedy-evaluate every ``eval_every`` episodes.

    ``behavior`` replaces epsilon-greedy acting with a fixed policy while the
    learners still update, which makes update sequences comparable across
    regimes under common random numbers.
    """
    check_pairing(dcfg, configs)
    env = env_factory()
    letters = env.action_letters
    learners = [AgentLearner(i, c, ka, ko, rd, letters, behavior, log)
                for i, (c, (ka, ko), rd) in enumerate(zip(configs, dcfg.split(), dcfg.reward_delays()))]
    wrapper = DelayWrapper(env, dcfg)
    base = RandomStreams(seed)
    sched = configs[0].schedule
    curve: list[tuple[int, float]] = []
    for e in range(episodes):
        streams = base.for_episode(e)
        wrapper.streams = streams
        run_episode_learning(wrapper, learners, sched(e, episodes), streams)
        if eval_every and (e + 1) % eval_every == 0:
            curve.append((e + 1, greedy_return(env_factory, eval_dcfg or dcfg, [lr.q for lr in learners])))
    return TrainingResult(curve, [lr.q for lr in learners], learners)


__all__ = [
    "Variant", "VariantMismatchError", "QTable", "ExplorationSchedule", "LearnerConfig", "select_action",
    "td_update_od", "td_update_ad_naive", "td_update_ad_realigned", "sarsa_update_realigned",
    "Transition", "TransitionBuffer", "UpdateRecord", "DriftRecord", "AgentLearner", "check_pairing",
    "TrainingResult", "GreedyPolicy", "greedy_return", "run_episode_learning", "run_training",
]
