"""TOML experiment configuration and the shipped presets.

A config names an environment (``[grid]`` or ``[tiny_mdp]``), default
``[delay]`` and ``[learner]`` sections, and one or more ``[[arms]]``. Each arm
is a regime/variant combination trained under the same settings, which is
how a figure's curves (OD, AD-Warm, AD-Cold, ...) are produced together.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .delay import DelayConfig, InitMode, Regime
from .env_core import Coupling, GridConfig, TinyMdpSpec
from .learn import ExplorationSchedule, LearnerConfig, Variant

PRESETS = ("fig3a_independent", "fig3b_coupled", "fig4_warm_cold", "fig2_reward_delay", "transfer_7x7",
           "tiny_mdp")

CHECKS = ("isomorphism", "enumeration", "mixed", "additivity", "cold-start", "sufficiency")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Arm:
    label: str
    variants: tuple[Variant, ...]
    delay: DelayConfig

    @property
    def variant_label(self) -> str:
        names = {v.value for v in self.variants}
        return names.pop() if len(names) == 1 else "+".join(v.value for v in self.variants)


@dataclass(frozen=True)
class VerifySettings:
    checks: tuple[str, ...] = CHECKS
    policies: int = 100
    seeds: int = 10
    delays: tuple[int, ...] = (0, 3)
    mixed_regimes: tuple[str, ...] = ("OD", "AD")
    mixed_delays: tuple[int, ...] = (2, 3)
    mixed_grid_seeds: int = 50
    additive_splits: tuple[tuple[int, int], ...] = ((1, 1), (1, 2), (2, 1))
    cold_policies: int = 50
    sufficiency_grid: int = 4
    sufficiency_delays: tuple[int, ...] = (0, 2)
    sufficiency_horizon: int = 6
    tiny_delays: tuple[int, ...] = (1, 1)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    env: GridConfig | TinyMdpSpec
    arms: tuple[Arm, ...]
    learner: LearnerConfig
    episodes: int
    full_episodes: int
    seeds: tuple[int, ...]
    eval_every: int = 10
    eval_episodes: int = 300
    verify: VerifySettings = field(default_factory=VerifySettings)
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)

    @property
    def env_hash(self) -> str:
        """Hash of the environment section only; Q-tables transfer between configs sharing it."""
        section = self.raw.get("grid", self.raw.get("tiny_mdp", {}))
        return config_hash(section)

    def episodes_for(self, full: bool) -> int:
        return self.full_episodes if full else self.episodes

    def arm(self, label: str) -> Arm:
        for a in self.arms:
            if a.label == label:
                return a
        raise ConfigError(f"no arm named {label!r}; have {[a.label for a in self.arms]}")


def config_hash(doc: dict) -> str:
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _grid(sec: dict) -> GridConfig:
    known = {"grid_size", "wall_enabled", "bottleneck_gap", "collision_radius", "coupling_mode", "start_positions",
             "target_positions", "max_steps", "step_reward", "goal_reward", "wall_column"}
    extra = set(sec) - known
    if extra:
        raise ConfigError(f"unknown [grid] keys: {sorted(extra)}")
    kw = dict(sec)
    if "coupling_mode" in kw:
        kw["coupling_mode"] = Coupling(kw["coupling_mode"])
    for key in ("bottleneck_gap",):
        if key in kw:
            kw[key] = tuple(kw[key])
    for key in ("start_positions", "target_positions"):
        if key in kw:
            kw[key] = tuple(tuple(c) for c in kw[key])
    return GridConfig(**kw)


def _learner(sec: dict) -> LearnerConfig:
    sched = ExplorationSchedule(float(sec.get("epsilon_start", 1.0)), float(sec.get("epsilon_min", 0.05)),
                                float(sec.get("decay_fraction", 0.2)))
    return LearnerConfig(alpha=float(sec.get("alpha", 0.1)), gamma=float(sec.get("gamma", 0.99)), schedule=sched,
                         variant=Variant(sec.get("variant", "ODBaseline")),
                         tie_break=sec.get("tie_break", "lowest"), n_actions=int(sec.get("n_actions", 4)))


def _arm(sec: dict, defaults: dict, n_agents: int) -> Arm:
    merged = {**defaults, **sec}
    label = merged.get("label")
    if not label:
        raise ConfigError("every [[arms]] entry needs a label")
    variants = merged.get("variant", "ODBaseline")
    if isinstance(variants, str):
        variants = [variants] * n_agents
    try:
        variants = tuple(Variant(v) for v in variants)
        if "simultaneous" in merged:
            delay = DelayConfig(simultaneous=tuple(tuple(p) for p in merged["simultaneous"]),
                                reward_delay=int(merged.get("reward_delay", 0)),
                                init_mode=InitMode(merged.get("init_mode", "WarmStart")),
                                default_action=merged.get("default_action"))
        else:
            regimes = merged.get("regimes", "OD")
            if isinstance(regimes, str):
                regimes = [regimes] * n_agents
            delay = DelayConfig(tuple(merged.get("delays", (0, 3))), tuple(Regime(r) for r in regimes),
                                reward_delay=int(merged.get("reward_delay", 0)),
                                init_mode=InitMode(merged.get("init_mode", "WarmStart")),
                                default_action=merged.get("default_action"))
    except ValueError as exc:
        raise ConfigError(f"arm {label!r}: {exc}") from exc
    if len(variants) != n_agents or delay.n_agents != n_agents:
        raise ConfigError(f"arm {label!r}: need one variant and delay per agent ({n_agents})")
    for i, (v, (ka, ko)) in enumerate(zip(variants, delay.split())):
        if v.action_delayed and ko > 0 or (not v.action_delayed and ka > 0):
            raise ConfigError(f"arm {label!r}: agent {i} variant {v.value} does not match its delay regime")
    return Arm(label, variants, delay)


def parse_config(doc: dict) -> ExperimentConfig:
    exp = doc.get("experiment", {})
    name = exp.get("name")
    if not name:
        raise ConfigError("[experiment] needs a name")
    if ("grid" in doc) == ("tiny_mdp" in doc):
        raise ConfigError("exactly one of [grid] and [tiny_mdp] is required")
    try:
        env = _grid(doc["grid"]) if "grid" in doc else TinyMdpSpec.from_dict(doc["tiny_mdp"])
        learner = _learner(doc.get("learner", {}))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid environment or learner section: {exc}") from exc
    n_agents = 2 if isinstance(env, GridConfig) else env.n_agents
    defaults = dict(doc.get("delay", {}))
    arms_doc = doc.get("arms") or [{"label": "default"}]
    arms = tuple(_arm(a, defaults, n_agents) for a in arms_doc)
    if len({a.label for a in arms}) != len(arms):
        raise ConfigError("arm labels must be unique")
    episodes = int(exp.get("episodes", 1000))
    seeds = tuple(int(s) for s in exp.get("seeds", [0]))
    if episodes < 0 or not seeds:
        raise ConfigError("episodes must be non-negative and seeds non-empty")
    vsec = dict(doc.get("verify", {}))
    for key in ("delays", "mixed_regimes", "mixed_delays", "sufficiency_delays", "tiny_delays", "checks"):
        if key in vsec:
            vsec[key] = tuple(vsec[key])
    if "additive_splits" in vsec:
        vsec["additive_splits"] = tuple(tuple(p) for p in vsec["additive_splits"])
    try:
        verify = VerifySettings(**vsec)
    except TypeError as exc:
        raise ConfigError(f"invalid [verify] section: {exc}") from exc
    unknown = set(verify.checks) - set(CHECKS)
    if unknown:
        raise ConfigError(f"unknown checks {sorted(unknown)}; choose from {list(CHECKS)}")
    return ExperimentConfig(
        name=name, env=env, arms=arms, learner=learner, episodes=episodes,
        full_episodes=int(exp.get("full_episodes", episodes)), seeds=seeds,
        eval_every=int(exp.get("eval_every", 10)), eval_episodes=int(exp.get("eval_episodes", 300)),
        verify=verify, raw=doc,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    """Load a TOML file, or a shipped preset when ``path`` is a preset name."""
    p = Path(path)
    if not p.exists() and str(path) in PRESETS:
        text = preset_text(str(path))
    else:
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc)


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}")
    return resources.files("delaylab").joinpath("presets", f"{name}.toml").read_text()


def learner_configs(cfg: ExperimentConfig, arm: Arm) -> list[LearnerConfig]:
    return [LearnerConfig(**{**asdict(cfg.learner), "schedule": cfg.learner.schedule, "variant": v})
            for v in arm.variants]


__all__ = [
    "PRESETS", "CHECKS", "ConfigError", "Arm", "VerifySettings", "ExperimentConfig", "config_hash",
    "parse_config", "load_config", "preset_text", "learner_configs",
]
