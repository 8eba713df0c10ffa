"""Seeded, independent random streams.

Every stream is a Philox generator keyed by ``(seed, stream_id)`` through
``SeedSequence.spawn_key``, so the arrival stream and each storage unit's
service stream are independent and identical across schedulers that share a
seed (common random numbers for paired comparisons).
"""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

Seed = Union[int, Sequence[int]]

ARRIVAL_STREAM = 0
TIE_STREAM = 1
SERVICE_STREAM_BASE = 2


def make_generator(seed: Seed, stream_id: int) -> np.random.Generator:
    entropy = list(seed) if isinstance(seed, (tuple, list)) else int(seed)
    ss = np.random.SeedSequence(entropy, spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.Philox(ss))


class ExpStream:
    """Exponential variates with a fixed rate, drawn in blocks."""

    __slots__ = ("_gen", "_scale", "_block", "_buf", "_i")

    def __init__(self, gen: np.random.Generator, rate: float, block: int = 4096):
        self._gen = gen
        self._scale = 1.0 / rate
        self._block = block
        self._buf: list[float] = []
        self._i = 0

    def __call__(self) -> float:
        if self._i >= len(self._buf):
            self._buf = self._gen.standard_exponential(self._block).tolist()
            self._i = 0
        x = self._buf[self._i]
        self._i += 1
        return x * self._scale


class UniformStream:
    """Uniform choices for randomized tie-breaking."""

    __slots__ = ("_gen", "_buf", "_i")

    def __init__(self, gen: np.random.Generator, block: int = 4096):
        self._gen = gen
        self._buf: list[float] = []
        self._i = 0

    def choice_index(self, n: int) -> int:
        if self._i >= len(self._buf):
            self._buf = self._gen.random(4096).tolist()
            self._i = 0
        u = self._buf[self._i]
        self._i += 1
        return min(int(u * n), n - 1)
