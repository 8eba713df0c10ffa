"""State labels of the blocking-one Markov chain.

Below 2r packet requests the state is just the count. At even counts
2r + 2m the chain splits into a *perfect* state (all 2r units usable) and a
*good* state (one unit idle because it already served packet 1 of the
head-of-line request). Odd counts 2r + 2m + 1 carry no tag.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np


class Kind(enum.IntEnum):
    LOW = 0
    PERFECT = 1
    GOOD = 2
    ODD = 3


class ChainState(NamedTuple):
    kind: Kind
    index: int

    def packet_count(self, r: int) -> int:
        if self.kind is Kind.LOW:
            return self.index
        if self.kind is Kind.ODD:
            return 2 * r + 2 * self.index + 1
        return 2 * r + 2 * self.index

    @property
    def level(self) -> int | None:
        """Level m of a perfect/good/odd state, None for low states."""
        return None if self.kind is Kind.LOW else self.index

    def __repr__(self) -> str:
        return f"{self.kind.name.capitalize()}({self.index})"


def Low(l: int) -> ChainState:
    return ChainState(Kind.LOW, l)


def Perfect(m: int) -> ChainState:
    return ChainState(Kind.PERFECT, m)


def Good(m: int) -> ChainState:
    return ChainState(Kind.GOOD, m)


def Odd(m: int) -> ChainState:
    return ChainState(Kind.ODD, m)


def state_order(r: int, levels: int) -> list[ChainState]:
    """Canonical ordering: Low(0..2r-1), then (Perfect, Good, Odd) per level."""
    states = [Low(l) for l in range(2 * r)]
    for m in range(levels):
        states.extend((Perfect(m), Good(m), Odd(m)))
    return states


def classify(r: int, packets: int, blocked_idle: bool) -> ChainState:
    """Map a simulator snapshot to its chain state.

    ``blocked_idle`` is True when some unit is idle while requests wait,
    which under blocking-one scheduling is exactly the good-state condition.
    """
    n = 2 * r
    if packets < n:
        return Low(packets)
    extra = packets - n
    if extra % 2:
        return Odd(extra // 2)
    return Good(extra // 2) if blocked_idle else Perfect(extra // 2)


@dataclass(frozen=True)
class StationaryDistribution:
    """Probability mass per chain state, in a fixed state order."""

    states: tuple[ChainState, ...]
    probs: np.ndarray
    tail_mass: float = 0.0

    @classmethod
    def from_pairs(cls, states: Sequence[ChainState], probs, tail_mass: float = 0.0):
        probs = np.asarray(probs, dtype=float)
        if len(states) != probs.shape[0]:
            raise ValueError("states and probs differ in length")
        return cls(tuple(states), probs, float(tail_mass))

    def __getitem__(self, state: ChainState) -> float:
        return float(self.probs[self.states.index(state)])

    def as_dict(self) -> dict[ChainState, float]:
        return dict(zip(self.states, self.probs.tolist()))
