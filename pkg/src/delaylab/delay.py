"""Observation/action delay wrapper with warm or cold buffer initialization.

Every agent carries an action delay ``k_a`` and an observation delay ``k_o``.
Plain OD is ``(0, k)``, plain AD is ``(k, 0)`` and simultaneous delays use
both. Per agent the wrapper keeps

* a pending FIFO of ``k_a`` decided-but-not-yet-executed actions,
* a FIFO of the last ``k_o`` executed actions (history context for OD),
* a FIFO of the last ``k_o + 1`` local observations,
* for OD agents, an optional reward pipeline of length ``reward_delay``.

The augmented view offered to agent ``i`` is the front observation plus the
executed and pending actions, oldest first. For the stacked form this is
exactly the pure-OD view with ``K = k_a + k_o``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Protocol, Sequence

from .streams import ENV, RandomStreams


class Regime(str, Enum):
    OD = "OD"
    AD = "AD"


class InitMode(str, Enum):
    WARM = "WarmStart"
    COLD = "ColdStart"


class DelayError(RuntimeError):
    pass


def format_obs(obs) -> str:
    if type(obs) is tuple and len(obs) == 2:
        return f"{obs[0]},{obs[1]}"
    if isinstance(obs, tuple):
        return ",".join(str(v) for v in obs)
    return str(obs)


@dataclass(frozen=True)
class DelayConfig:
    delays: tuple[int, ...] | None = None
    regimes: tuple[Regime, ...] | None = None
    simultaneous: tuple[tuple[int, int], ...] | None = None
    reward_delay: int = 0
    init_mode: InitMode = InitMode.WARM
    default_action: int | str | None = None

    def __post_init__(self):
        set_ = object.__setattr__
        if self.simultaneous is not None:
            sim = tuple((int(ka), int(ko)) for ka, ko in self.simultaneous)
            if any(ka < 0 or ko < 0 for ka, ko in sim):
                raise ValueError("simultaneous delays must be non-negative")
            set_(self, "simultaneous", sim)
            sums = tuple(ka + ko for ka, ko in sim)
            if self.delays is not None and tuple(self.delays) != sums:
                raise ValueError("delays must equal k_a + k_o when simultaneous delays are given")
            if self.regimes is not None:
                raise ValueError("simultaneous delays and per-agent regimes are mutually exclusive")
            set_(self, "delays", sums)
        elif self.delays is None:
            set_(self, "delays", (0, 3))
        delays = tuple(int(k) for k in self.delays)
        if any(k < 0 for k in delays):
            raise ValueError(f"delays must be non-negative, got {delays}")
        set_(self, "delays", delays)
        regimes = self.regimes
        if regimes is None:
            regimes = (Regime.OD,) * len(delays)
        regimes = tuple(Regime(r) for r in regimes)
        if len(regimes) != len(delays):
            raise ValueError("regimes and delays must have one entry per agent")
        set_(self, "regimes", regimes)
        set_(self, "init_mode", InitMode(self.init_mode))
        if self.reward_delay < 0:
            raise ValueError("reward_delay must be non-negative")

    @property
    def n_agents(self) -> int:
        return len(self.delays)

    def split(self) -> tuple[tuple[int, int], ...]:
        """Per-agent ``(k_a, k_o)``."""
        if self.simultaneous is not None:
            return self.simultaneous
        return tuple((k, 0) if r is Regime.AD else (0, k) for k, r in zip(self.delays, self.regimes))

    def reward_delays(self) -> tuple[int, ...]:
        # reward pipeline lives on the observation-delayed side only
        return tuple(self.reward_delay if ko > 0 else 0 for _, ko in self.split())

    def needs_warm_policy(self) -> bool:
        return self.init_mode is InitMode.WARM and any(ka > 0 for ka, _ in self.split())

    def with_regimes(self, regimes: Sequence[Regime | str]) -> "DelayConfig":
        return DelayConfig(self.delays, tuple(regimes), None, self.reward_delay, self.init_mode, self.default_action)

    def with_init(self, mode: InitMode | str) -> "DelayConfig":
        return DelayConfig(self.delays, self.regimes, self.simultaneous, self.reward_delay, InitMode(mode),
                           self.default_action)


def additive_compose(dcfg: DelayConfig) -> DelayConfig:
    """Collapse simultaneous ``(k_a, k_o)`` delays into pure OD with ``K = k_a + k_o``."""
    if dcfg.simultaneous is None:
        raise ValueError("additive_compose needs simultaneous (k_a, k_o) entries")
    ks = tuple(ka + ko for ka, ko in dcfg.simultaneous)
    return DelayConfig(ks, (Regime.OD,) * len(ks), None, dcfg.reward_delay, dcfg.init_mode, dcfg.default_action)


class ActionBuffer:
    """Fixed-length action queue. ``discipline='lifo'`` exists only for mutation tests."""

    def __init__(self, length: int, discipline: str = "fifo"):
        if length < 0:
            raise ValueError("buffer length must be non-negative")
        if discipline not in ("fifo", "lifo"):
            raise ValueError(f"unknown buffer discipline {discipline!r}")
        self.length = length
        self.discipline = discipline
        self._q: deque = deque(maxlen=length or None)

    def fill(self, action) -> None:
        self._q.clear()
        self._q.extend([action] * self.length)

    def push(self, action) -> None:
        """Enqueue, evicting the oldest entry when the buffer is full."""
        if self.length:
            self._q.append(action)

    def shift(self, action):
        """Dequeue the action due now and enqueue ``action``."""
        if not self.length:
            return action
        old = self._q.popleft() if self.discipline == "fifo" else self._q.pop()
        self._q.append(action)
        return old

    def __len__(self) -> int:
        return len(self._q)

    def __iter__(self):
        return iter(self._q)

    def contents(self) -> tuple:
        return tuple(self._q)


class ObservationBuffer:
    """Holds the last ``k + 1`` observations; the front one is ``k`` steps old."""

    def __init__(self, k: int):
        self._q: deque = deque(maxlen=k + 1)

    def fill(self, obs) -> None:
        self._q.clear()
        self._q.extend([obs] * self._q.maxlen)

    def push(self, obs) -> None:
        self._q.append(obs)

    @property
    def front(self):
        return self._q[0]

    @property
    def newest(self):
        return self._q[-1]

    def contents(self) -> tuple:
        return tuple(self._q)


@dataclass(frozen=True)
class FlushItem:
    observation: object
    reward: float
    done: bool


class RewardBuffer:
    """Delays rewards by ``length`` steps; each entry carries the state it belongs to."""

    def __init__(self, length: int):
        self.length = length
        self._q: deque[FlushItem] = deque()

    def clear(self) -> None:
        self._q.clear()

    def push(self, item: FlushItem) -> FlushItem | None:
        if self.length == 0:
            return item
        self._q.append(item)
        if len(self._q) > self.length:
            return self._q.popleft()
        return None

    def drain(self) -> list[FlushItem]:
        out = list(self._q)
        self._q.clear()
        return out

    def __len__(self) -> int:
        return len(self._q)


@dataclass(frozen=True)
class ObservationActionHistory:
    """``(o_{0:t-k}, a_{0:t-1})`` for the action effective at time ``t``.

    ``padded`` marks the initialization regime ``t < k`` where the only
    observation available is the initial information ``o_0``.
    """

    observations: tuple
    actions: tuple
    effective_time: int | None = None
    padded: bool = False

    def __post_init__(self):
        if self.effective_time is None:
            object.__setattr__(self, "effective_time", len(self.actions))

    def key(self, letters: str = "UDLRS") -> str:
        obs = ";".join(format_obs(o) for o in self.observations)
        acts = "".join(letters[a] for a in self.actions)
        return f"{'I0:' if self.padded else ''}{obs}#{acts}"


@dataclass(frozen=True)
class AugmentedState:
    last_observation: object
    pending_actions: tuple

    def key(self, letters: str = "UDLRS") -> str:
        return format_obs(self.last_observation) + "|" + "".join(letters[a] for a in self.pending_actions)


def parse_key(key: str, letters: str = "UDLRS") -> AugmentedState:
    obs, _, acts = key.partition("|")
    parts = obs.split(",")
    o = tuple(int(p) for p in parts) if len(parts) > 1 else int(parts[0])
    return AugmentedState(o, tuple(letters.index(c) for c in acts))


class InitializationRegimeError(ValueError):
    pass


def history_project(history: ObservationActionHistory, k: int, default_action: int | None = None) -> AugmentedState:
    """Minimal augmented state ``(o_{t-k}, a_{t-k:t-1})`` of a history.

    For ``t < k`` the history is in its initialization regime; the I_0-padded
    form ``(o_0, [default]*(k-t) + a_{0:t-1})`` is returned when
    ``default_action`` is given, otherwise :class:`InitializationRegimeError`.
    """
    t = history.effective_time
    if t >= k:
        return AugmentedState(history.observations[t - k], tuple(history.actions[t - k:t]))
    if default_action is None:
        raise InitializationRegimeError(f"effective time {t} < delay {k}")
    return AugmentedState(history.observations[0], (default_action,) * (k - t) + tuple(history.actions[:t]))


class AgentView:
    """What agent ``i`` may use for its next decision. Built from its own buffers only."""

    __slots__ = ("agent", "obs", "actions", "effective_time", "decision_time", "key", "_wrapper")

    def __init__(self, agent, obs, actions, effective_time, decision_time, key, wrapper=None):
        self.agent = agent
        self.obs = obs
        self.actions = actions
        self.effective_time = effective_time
        self.decision_time = decision_time
        self.key = key
        self._wrapper = wrapper

    @property
    def augmented(self) -> AugmentedState:
        return AugmentedState(self.obs, self.actions)

    @property
    def history(self) -> ObservationActionHistory:
        return self._wrapper._history(self.agent, self.effective_time)

    @property
    def history_key(self) -> str:
        return self._wrapper._history_key(self.agent, self.effective_time)

    def __repr__(self):
        return f"AgentView(agent={self.agent}, t={self.effective_time}, key={self.key!r})"


class Policy(Protocol):
    def act(self, agent: int, view: AgentView) -> int: ...


@dataclass
class WrapperStep:
    views: list[AgentView]
    reward: float
    rewards: list[float | None]
    done: bool
    executed: tuple
    info: dict = field(default_factory=dict)


@dataclass
class TraceStep:
    state: object
    actions: tuple
    observations: tuple
    reward: float


class _AgentBuffers:
    __slots__ = ("ka", "ko", "pending", "executed", "obs", "rewards", "true_obs", "effective_actions",
                 "obs_text", "act_text")

    def __init__(self, ka, ko, reward_delay, discipline):
        self.ka, self.ko = ka, ko
        self.pending = ActionBuffer(ka, discipline)
        self.executed = ActionBuffer(ko)
        self.obs = ObservationBuffer(ko)
        self.rewards = RewardBuffer(reward_delay)
        self.true_obs: list = []
        self.effective_actions: list = []
        # formatted copies so history keys are plain joins
        self.obs_text: list[str] = []
        self.act_text: list[str] = []


class DelayWrapper:
    """Delay wrapper around a stateful multi-agent environment.

    ``env`` needs ``reset(env_sample)``, ``step(actions, env_sample)``,
    ``snapshot()``, ``n_agents``, ``default_action`` and ``action_letters``.
    """

    def __init__(self, env, dcfg: DelayConfig, streams: RandomStreams | None = None, *,
                 discipline: str = "fifo", record: bool = False):
        if dcfg.n_agents != env.n_agents:
            raise ValueError(f"delay config has {dcfg.n_agents} agents, environment has {env.n_agents}")
        self.env = env
        self.dcfg = dcfg
        self.streams = streams
        self.record = record
        self.letters = env.action_letters
        self.default_action = resolve_action(dcfg.default_action, self.letters, env.default_action)
        rdelays = dcfg.reward_delays()
        self._agents = [_AgentBuffers(ka, ko, rd, discipline) for (ka, ko), rd in zip(dcfg.split(), rdelays)]
        self.t = 0
        self.done = False
        self._flushed = False
        self._started = False
        self.trace: list[TraceStep] = []
        self.decisions: list[list[tuple[int, int, str]]] = [[] for _ in self._agents]
        self.views: list[AgentView] = []
        self._obs_keys: dict = {}

    @property
    def n_agents(self) -> int:
        return len(self._agents)

    def effective_time(self, i: int) -> int:
        return self.t + self._agents[i].ka

    def _env_sample(self, owner: int, index: int) -> float:
        return 0.0 if self.streams is None else self.streams.uniform(ENV, owner, index)

    def _view(self, i: int, effective_time: int, decision_time: int) -> AgentView:
        b = self._agents[i]
        acts = (*b.executed._q, *b.pending._q)
        obs = b.obs._q[0]
        okey = self._obs_keys.get(obs)
        if okey is None:
            okey = self._obs_keys[obs] = format_obs(obs) + "|"
        letters = self.letters
        key = okey + "".join([letters[a] for a in acts]) if acts else okey
        return AgentView(i, obs, acts, effective_time, decision_time, key, self)

    def _history(self, i: int, t: int) -> ObservationActionHistory:
        b = self._agents[i]
        k = b.ka + b.ko
        acts = tuple(b.effective_actions[:t])
        if t < k:
            return ObservationActionHistory((b.true_obs[0],), acts, t, padded=True)
        return ObservationActionHistory(tuple(b.true_obs[: t - k + 1]), acts, t)

    def _history_key(self, i: int, t: int) -> str:
        """Same string as ``self._history(i, t).key(letters)``, built from cached text."""
        if not self.record:
            return self._history(i, t).key(self.letters)
        b = self._agents[i]
        k = b.ka + b.ko
        acts = "".join(b.act_text[:t])
        if t < k:
            return f"I0:{b.obs_text[0]}#{acts}"
        return ";".join(b.obs_text[: t - k + 1]) + "#" + acts

    def _log_decision(self, i: int, action: int, effective_time: int) -> None:
        b = self._agents[i]
        b.effective_actions.append(action)
        if self.record:
            b.act_text.append(self.letters[action])
            self.decisions[i].append((effective_time - b.ka, effective_time, self._history_key(i, effective_time)))

    def reset(self, warm_policy: Policy | None = None) -> list[AgentView]:
        obs0 = self.env.reset(self._env_sample(1, 0))
        self.t = 0
        self.done = False
        self._flushed = False
        self._started = True
        self.trace = []
        self.decisions = [[] for _ in self._agents]
        d = self.default_action
        for b, o in zip(self._agents, obs0):
            b.obs.fill(o)
            b.executed.fill(d)
            b.pending.fill(d)
            b.rewards.clear()
            b.true_obs = [o]
            b.effective_actions = []
            b.obs_text = [format_obs(o)] if self.record else []
            b.act_text = []
        self._obs_now = tuple(obs0)
        self._state_now = self.env.snapshot()
        warm = self.dcfg.init_mode is InitMode.WARM
        if self.dcfg.needs_warm_policy():
            if warm_policy is None:
                raise DelayError("WarmStart with action-delayed agents needs a warm_policy")
            # agent i is queried k_a(i) times; rollout step j decides the action effective at j
            for j in range(max(b.ka for b in self._agents)):
                for i, b in enumerate(self._agents):
                    if j < b.ka:
                        a = warm_policy.act(i, self._view(i, j, j - b.ka))
                        self._log_decision(i, a, j)
                        b.pending.push(a)
        elif not warm:
            for i, b in enumerate(self._agents):
                for j in range(b.ka):
                    self._log_decision(i, d, j)
        self.views = [self._view(i, b.ka, 0) for i, b in enumerate(self._agents)]
        return self.views

    def step(self, selected: Sequence[int]) -> WrapperStep:
        if not self._started:
            raise DelayError("call reset() before step()")
        if self.done:
            raise DelayError("step() called after the episode finished")
        executed = []
        for i, (b, a) in enumerate(zip(self._agents, selected)):
            self._log_decision(i, a, self.t + b.ka)
            ex = b.pending.shift(a)
            b.executed.push(ex)
            executed.append(ex)
        executed = tuple(executed)
        out = self.env.step(executed, self._env_sample(0, self.t))
        if self.record:
            self.trace.append(TraceStep(self._state_now, executed, self._obs_now, out.reward))
        self.t += 1
        self.done = out.done
        rewards, delivered = [], []
        for b, o in zip(self._agents, out.local_observations):
            b.obs.push(o)
            b.true_obs.append(o)
            if self.record:
                b.obs_text.append(format_obs(o))
            if b.rewards.length:
                item = b.rewards.push(FlushItem(o, out.reward, out.done))
                delivered.append(item)
                rewards.append(None if item is None else item.reward)
            else:
                delivered.append(None)
                rewards.append(out.reward)
        self._obs_now = tuple(out.local_observations)
        self._state_now = self.env.snapshot()
        self.views = [self._view(i, self.t + b.ka, self.t) for i, b in enumerate(self._agents)]
        return WrapperStep(self.views, out.reward, rewards, out.done, executed, {"delivered": delivered})

    def final_state(self) -> tuple:
        return self._state_now, self._obs_now

    def terminal_flush(self) -> list[list[FlushItem]]:
        """Drain every agent's reward pipeline, oldest first, after the episode ended."""
        if not self.done:
            raise DelayError("terminal_flush() before the episode finished")
        if self._flushed:
            raise DelayError("terminal_flush() called twice")
        self._flushed = True
        return [b.rewards.drain() for b in self._agents]

    def buffers(self, i: int) -> dict:
        """Agent ``i``'s private buffers, for inspection."""
        b = self._agents[i]
        return {
            "pending": b.pending.contents(),
            "executed": b.executed.contents(),
            "observations": b.obs.contents(),
            "rewards": len(b.rewards),
        }


def resolve_action(action, letters: str, fallback: int) -> int:
    if action is None:
        return fallback
    if isinstance(action, str):
        if action not in letters:
            raise ValueError(f"unknown action {action!r}; expected one of {letters!r}")
        return letters.index(action)
    return int(action)


class FunctionPolicy:
    """Adapts ``fn(agent, view) -> action``."""

    def __init__(self, fn: Callable[[int, AgentView], int]):
        self.fn = fn

    def act(self, agent: int, view: AgentView) -> int:
        return self.fn(agent, view)


class ScriptedPolicy:
    """Plays ``script[agent][effective_time]`` and the last entry afterwards."""

    def __init__(self, script: Sequence[Sequence[int]]):
        self.script = [list(s) for s in script]

    def act(self, agent: int, view: AgentView) -> int:
        s = self.script[agent]
        t = view.effective_time
        return s[t] if t < len(s) else s[-1]


def run_episode(wrapper: DelayWrapper, policy: Policy, max_steps: int | None = None) -> list[WrapperStep]:
    views = wrapper.reset(policy if wrapper.dcfg.needs_warm_policy() else None)
    steps = []
    while not wrapper.done and (max_steps is None or wrapper.t < max_steps):
        res = wrapper.step([policy.act(i, v) for i, v in enumerate(views)])
        steps.append(res)
        views = res.views
    return steps


def constant_policy(action: int) -> FunctionPolicy:
    return FunctionPolicy(lambda agent, view: action)


__all__ = [
    "Regime", "InitMode", "DelayConfig", "DelayError", "additive_compose", "ActionBuffer",
    "ObservationBuffer", "RewardBuffer", "FlushItem", "ObservationActionHistory", "AugmentedState",
    "history_project", "InitializationRegimeError", "AgentView", "Policy", "WrapperStep",
    "TraceStep", "DelayWrapper", "FunctionPolicy", "ScriptedPolicy", "run_episode",
    "constant_policy", "format_obs", "parse_key", "resolve_action",
]
