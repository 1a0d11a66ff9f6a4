"""Keyed uniform streams for common-random-number replay.

A draw is addressed by ``(stream, index)``: agent decisions use the agent's
stream indexed by the *effective* time of the decided action, environment
noise uses the environment stream indexed by step. Two runs sharing a seed
therefore consume identical numbers for identical logical events, whatever
order they happen in.
"""

from __future__ import annotations

import numpy as np

AGENT = 0
ENV = 1
TIE = 2

_BLOCK = 64


class RandomStreams:
    def __init__(self, seed: int, episode: int = 0):
        if seed < 0 or episode < 0:
            raise ValueError("seed and episode must be non-negative")
        self.seed = int(seed)
        self.episode = int(episode)
        self._blocks: dict[tuple[int, int, int], list[float]] = {}

    def for_episode(self, episode: int) -> "RandomStreams":
        return RandomStreams(self.seed, episode)

    def uniform(self, kind: int, owner: int, index: int) -> float:
        if index < 0:
            raise ValueError(f"stream index must be non-negative, got {index}")
        b, off = divmod(index, _BLOCK)
        key = (kind, owner, b)
        block = self._blocks.get(key)
        if block is None:
            ss = np.random.SeedSequence([self.seed, self.episode, kind, owner, b])
            block = np.random.default_rng(ss).random(_BLOCK).tolist()
            self._blocks[key] = block
        return block[off]

    def agent(self, agent: int, effective_time: int) -> float:
        return self.uniform(AGENT, agent, effective_time)

    def env(self, step: int) -> float:
        return self.uniform(ENV, 0, step)

    def tie(self, agent: int, effective_time: int) -> float:
        return self.uniform(TIE, agent, effective_time)
