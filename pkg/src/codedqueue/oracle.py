"""Ground truth by brute force: explicit truncated generators and direct solves.

Nothing here reuses the iterative BoS recursion. The generator is assembled
from the transition rules of the chain alone, then ``pi Q = 0`` is solved
with one balance equation replaced by normalization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from codedqueue.config import (
    InvalidConfig,
    ShapeMismatch,
    SingularSystem,
    SystemConfig,
)
from codedqueue.states import (
    ChainState,
    Good,
    Kind,
    Low,
    Odd,
    Perfect,
    StationaryDistribution,
    state_order,
)

RESIDUAL_TOL = 1e-10
DENSE_LIMIT = 2000

Edge = tuple[ChainState, ChainState, float]


@dataclass(frozen=True)
class GeneratorMatrix:
    """A CTMC generator over an ordered state list.

    ``rates`` is a dense array for small chains and a CSR matrix otherwise.
    """

    states: tuple[ChainState, ...]
    rates: np.ndarray | sp.csr_matrix

    @property
    def size(self) -> int:
        return len(self.states)

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.rates)

    def dense(self) -> np.ndarray:
        return self.rates.toarray() if self.is_sparse else self.rates

    def rate(self, src: ChainState, dst: ChainState) -> float:
        i, j = self.states.index(src), self.states.index(dst)
        return float(self.rates[i, j])

    def edges(self) -> set[tuple[ChainState, ChainState]]:
        """Off-diagonal pairs with a positive rate."""
        coo = sp.coo_matrix(self.rates)
        return {
            (self.states[i], self.states[j])
            for i, j, v in zip(coo.row, coo.col, coo.data)
            if i != j and v > 0
        }


def _assemble(states: list[ChainState], edges: Iterable[Edge], sparse: bool | None) -> GeneratorMatrix:
    index = {s: i for i, s in enumerate(states)}
    rows, cols, vals = [], [], []
    for src, dst, rate in edges:
        if rate == 0 or dst not in index:
            continue
        rows.append(index[src])
        cols.append(index[dst])
        vals.append(rate)
    n = len(states)
    Q = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    Q = Q - sp.diags(np.asarray(Q.sum(axis=1)).ravel())
    if sparse is None:
        sparse = n > DENSE_LIMIT
    return GeneratorMatrix(tuple(states), Q.tocsr() if sparse else Q.toarray())


def bos_edges(config: SystemConfig, levels: int) -> list[Edge]:
    """Transition list of the blocking-one chain, truncated after ``levels`` levels.

    Arrivals out of the last level point past the state set and are dropped
    by the assembler, which reflects the chain at the boundary.
    """
    r, lam, mu = config.r, config.lam, config.mu
    n = 2 * r
    edges: list[Edge] = []
    for l in range(n):
        if l + 2 < n:
            up = Low(l + 2)
        elif l == n - 2:
            up = Perfect(0)
        else:
            up = Odd(0)
        edges.append((Low(l), up, lam))
        if l > 0:
            edges.append((Low(l), Low(l - 1), l * mu))
    for m in range(levels):
        down = Odd(m - 1) if m > 0 else Low(n - 1)
        edges += [
            (Perfect(m), Perfect(m + 1), lam),
            (Good(m), Good(m + 1), lam),
            (Odd(m), Odd(m + 1), lam),
            (Perfect(m), down, n * mu),
            (Good(m), down, (n - 1) * mu),
            (Odd(m), Perfect(m), (n - 1) * mu),
            (Odd(m), Good(m), mu),
        ]
    return edges


def build_generator(config: SystemConfig, levels: int, *, sparse: bool | None = None) -> GeneratorMatrix:
    if int(levels) != levels or levels < 1:
        raise InvalidConfig(f"levels must be a positive integer, got {levels!r}")
    levels = int(levels)
    return _assemble(state_order(config.r, levels), bos_edges(config, levels), sparse)


def birth_death_generator(
    servers: int, lam: float, mu: float, size: int, *, sparse: bool | None = None
) -> GeneratorMatrix:
    """M/M/c generator on counts 0 .. size-1 (arrivals dropped at the top)."""
    if servers < 1 or size < 1:
        raise InvalidConfig("servers and size must be >= 1")
    states = [Low(i) for i in range(size)]
    edges: list[Edge] = []
    for i in range(size):
        edges.append((Low(i), Low(i + 1), lam))
        if i > 0:
            edges.append((Low(i), Low(i - 1), min(i, servers) * mu))
    return _assemble(states, edges, sparse)


def solve_stationary_direct(gen: GeneratorMatrix, residual_tol: float = RESIDUAL_TOL) -> StationaryDistribution:
    n = gen.size
    if n == 1:
        return StationaryDistribution.from_pairs(gen.states, [1.0])
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        if gen.is_sparse:
            # A dense normalisation row wrecks the LU fill; pin pi[0] = 1
            # instead so the band structure survives, then rescale.
            keep = np.ones(n)
            keep[0] = 0.0
            A = (sp.diags(keep) @ gen.rates.T.tocsr() + sp.csr_matrix(([1.0], ([0], [0])), shape=(n, n)))
            e0 = np.zeros(n)
            e0[0] = 1.0
            pi = spla.spsolve(A.tocsc(), e0)
            pi = pi / pi.sum()
        else:
            A = gen.rates.T.copy()
            A[n - 1, :] = 1.0
            pi = np.linalg.solve(A, b)
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(pi)):
        raise SingularSystem("direct solve returned non-finite values")
    res = generator_residual(gen, pi)
    if res > residual_tol or abs(pi.sum() - 1.0) > residual_tol:
        raise SingularSystem(f"residual {res:.3e} exceeds {residual_tol:.1e}")
    return StationaryDistribution.from_pairs(gen.states, pi)


def generator_residual(gen: GeneratorMatrix, pi) -> float:
    """Infinity norm of pi Q."""
    pi = np.asarray(pi, dtype=float)
    return float(np.max(np.abs(gen.rates.T @ pi)))


def compare_distributions(
    a: StationaryDistribution, b: StationaryDistribution
) -> tuple[float, ChainState]:
    """Max-norm gap between two distributions and the state where it occurs."""
    if a.states != b.states:
        raise ShapeMismatch(
            f"state sets differ ({len(a.states)} vs {len(b.states)} states)"
        )
    diff = np.abs(a.probs - b.probs)
    i = int(np.argmax(diff))
    return float(diff[i]), a.states[i]


def solve_bos_direct(config: SystemConfig, levels: int) -> StationaryDistribution:
    return solve_stationary_direct(build_generator(config, levels))


__all__ = [
    "GeneratorMatrix",
    "Kind",
    "StationaryDistribution",
    "birth_death_generator",
    "bos_edges",
    "build_generator",
    "compare_distributions",
    "generator_residual",
    "solve_bos_direct",
    "solve_stationary_direct",
]
