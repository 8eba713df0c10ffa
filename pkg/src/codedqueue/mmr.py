"""Stationary analysis of the replication system.

Each of the two packet pools is an M/M/r queue fed by one packet request
per content request, so both pools share the same per-branch arrival rate
``lam``. Packet-level statistics are identical across pools by symmetry,
so one representative branch is analysed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from codedqueue.config import SystemConfig, UnstableSystem

DEFAULT_TOL = 1e-12


@dataclass(frozen=True)
class MmrDistribution:
    """pi_0 .. pi_M of one M/M/r branch, plus the closed-form tail beyond M."""

    probs: np.ndarray
    rho: float
    truncation_index: int
    tail_mass: float
    r: int
    mu: float

    def pi(self, m: int) -> float:
        """Probability of m packets, using the geometric tail past M."""
        if m <= self.truncation_index:
            return float(self.probs[m])
        return float(self.probs[self.r] * self.rho ** (m - self.r))

    @property
    def total_mass(self) -> float:
        return float(self.probs.sum()) + self.tail_mass


def mmr_stationary(config: SystemConfig, tol: float = DEFAULT_TOL) -> MmrDistribution:
    r, lam, mu = config.r, config.lam, config.mu
    if not tol > 0:
        raise ValueError("tol must be positive")
    if lam >= r * mu:
        raise UnstableSystem(f"lambda={lam} >= r*mu={r * mu}: M/M/r branch is unstable")
    rho = lam / (r * mu)
    offered = r * rho

    # term_m = (r rho)^m / m!, built incrementally to stay finite for large r
    terms = np.empty(r + 1)
    terms[0] = 1.0
    for m in range(1, r + 1):
        terms[m] = terms[m - 1] * offered / m
    pi0 = 1.0 / (terms[:r].sum() + terms[r] / (1.0 - rho))
    pi_r = terms[r] * pi0

    # smallest M >= r with rho^(M-r) pi_r / (1 - rho) < tol
    M = r
    if pi_r > 0:
        head = pi_r / (1.0 - rho)
        if head >= tol:
            M = r + int(np.ceil(np.log(tol / head) / np.log(rho)))
            while M > r and rho ** (M - 1 - r) * head < tol:
                M -= 1
            while rho ** (M - r) * head >= tol:
                M += 1

    probs = np.empty(M + 1)
    probs[: r + 1] = terms * pi0
    if M > r:
        probs[r + 1 :] = pi_r * rho ** np.arange(1, M - r + 1)
    tail = pi_r * rho ** (M - r + 1) / (1.0 - rho)
    return MmrDistribution(probs, rho, M, float(tail), r, mu)


def mmr_mean_packets(dist: MmrDistribution) -> float:
    """E[N] for one branch, with the tail beyond M summed in closed form."""
    M, r, rho = dist.truncation_index, dist.r, dist.rho
    body = float(np.dot(np.arange(M + 1), dist.probs))
    pi_r = dist.probs[r]
    K = M - r + 1
    if pi_r == 0.0:
        return body
    rk = rho**K
    tail = pi_r * (r * rk / (1.0 - rho) + rk * (K * (1.0 - rho) + rho) / (1.0 - rho) ** 2)
    return body + float(tail)


def mmr_mean_packet_delay(dist: MmrDistribution, lam: float) -> float:
    """Mean packet sojourn time by Little's law, E[N] / lam."""
    if lam == 0:
        raise ZeroDivisionError("packet delay is undefined at lambda = 0")
    return mmr_mean_packets(dist) / lam
