"""Exact analysis of the coded system under blocking-one scheduling (BoS).

The low states 0 .. 2r-1 follow from a one-term recursion in pi_0; pi_0
itself comes from a closed form in the coefficient eta. Above 2r the
perfect/good/odd masses are generated level by level from cut equations,
which is forward-stable inside the capacity region (checked against the
direct generator solve in the tests).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from codedqueue.config import (
    NumericalBreakdown,
    SystemConfig,
    UnstableSystem,
    check_mu,
    check_r,
)
from codedqueue.states import ChainState, Kind, StationaryDistribution, state_order

DEFAULT_TOL = 1e-12
NEGATIVE_SLACK = 1e-12


def bos_capacity(r: int, mu: float = 1.0) -> float:
    """Supremum of the supportable content arrival rate (open bound)."""
    r = check_r(r)
    mu = check_mu(mu)
    return r * mu * (1.0 - 1.0 / (8 * r * r - 4 * r + 1))


def capacity_loss_fraction(r: int) -> float:
    r = check_r(r)
    return 1.0 / (8 * r * r - 4 * r + 1)


@dataclass(frozen=True)
class BosCoefficients:
    eta: float
    gamma_p: float
    gamma_g: float
    beta_p: float
    beta_g: float
    a: tuple[float, ...]


def bos_coefficients(config: SystemConfig) -> BosCoefficients:
    r, lam, mu = config.r, config.lam, config.mu
    n = 2 * r
    eta = lam / (n * mu) + lam * (n - 1) * mu / (n * mu) ** 2 + lam * mu / ((n - 1) * mu * n * mu)
    gamma_p = n * mu * (lam + (n - 1) * mu) / mu + (lam + n * mu)
    gamma_g = -(n - 1) * mu * (lam + n * mu) / (n * mu) - (n - 1) * (lam + (n - 1) * mu)
    beta_p = lam * (lam + (n - 1) * mu) / mu
    beta_g = -lam * (lam + n * mu) / (n * mu)
    a = [1.0, lam / mu]
    for l in range(2, n):
        a.append(lam / (l * mu) * (a[l - 1] + a[l - 2]))
    return BosCoefficients(eta, gamma_p, gamma_g, beta_p, beta_g, tuple(a))


@dataclass(frozen=True)
class BosDistribution:
    """Stationary masses of the chain, truncated after ``levels`` (p, g, odd) triples.

    ``pi_odd[m]`` is the mass of the odd state with 2r + 2m + 1 packets.
    ``tail_mass`` is the geometric extrapolation of the dropped levels.
    """

    r: int
    pi_low: np.ndarray
    pi_perfect: np.ndarray
    pi_good: np.ndarray
    pi_odd: np.ndarray
    tail_mass: float
    tail_ratio: float

    @property
    def levels(self) -> int:
        return len(self.pi_perfect)

    @property
    def pi0(self) -> float:
        return float(self.pi_low[0])

    @property
    def level_mass(self) -> np.ndarray:
        return self.pi_perfect + self.pi_good + self.pi_odd

    @property
    def total_mass(self) -> float:
        return float(self.pi_low.sum() + self.level_mass.sum()) + self.tail_mass

    def prob(self, state: ChainState) -> float:
        kind, i = state
        if kind is Kind.LOW:
            return float(self.pi_low[i])
        if i >= self.levels:
            return 0.0
        arr = {Kind.PERFECT: self.pi_perfect, Kind.GOOD: self.pi_good, Kind.ODD: self.pi_odd}[kind]
        return float(arr[i])

    def to_stationary(self, levels: int | None = None) -> StationaryDistribution:
        """Lay the masses out in the oracle's state order, zero-padding missing levels."""
        levels = self.levels if levels is None else levels
        states = state_order(self.r, levels)
        return StationaryDistribution.from_pairs(
            states, [self.prob(s) for s in states], self.tail_mass
        )


def bos_stationary(
    config: SystemConfig,
    tol: float = DEFAULT_TOL,
    *,
    coefficients: BosCoefficients | None = None,
    max_levels: int = 10_000_000,
) -> BosDistribution:
    """Iterative stationary distribution of the BoS chain.

    Levels are generated until the combined mass of one (perfect, good, odd)
    triple drops below ``tol``. ``coefficients`` overrides the computed
    coefficients (used to exercise the validation failure path).
    """
    r, lam, mu = config.r, config.lam, config.mu
    if not tol > 0:
        raise ValueError("tol must be positive")
    cap = bos_capacity(r, mu)
    if lam >= cap:
        raise UnstableSystem(f"lambda={lam} is not below the BoS capacity {cap}")
    c = bos_coefficients(config) if coefficients is None else coefficients
    if 1.0 - c.eta <= 0:
        raise UnstableSystem(f"1 - eta = {1.0 - c.eta} <= 0")

    n = 2 * r
    a = np.asarray(c.a, dtype=float)
    pi0 = (1.0 - c.eta) / ((1.0 - c.eta) * a[: n - 1].sum() + lam * a[n - 2] / (n * mu) + a[n - 1])
    low = a * pi0
    _check_nonnegative(low, "low states")

    gp, gg, bp, bg = c.gamma_p, c.gamma_g, c.beta_p, c.beta_g
    odd_rate = lam / (n * mu)
    s = low[n - 1] + low[n - 2]
    p = (bp * s + lam * low[n - 2]) / gp
    g = (bg * s + lam * low[n - 2]) / gg
    prev_odd = float(low[n - 1])
    P: list[float] = []
    G: list[float] = []
    O: list[float] = []
    while True:
        o = odd_rate * (p + g + prev_odd)
        if p < -NEGATIVE_SLACK or g < -NEGATIVE_SLACK or o < -NEGATIVE_SLACK:
            raise NumericalBreakdown(
                f"negative iterate at level {len(P)}: perfect={p}, good={g}, odd={o}"
            )
        P.append(p)
        G.append(g)
        O.append(o)
        if p + g + o < tol:
            break
        if len(P) >= max_levels:
            raise NumericalBreakdown(f"level mass still {p + g + o} after {max_levels} levels")
        s = p + g + o
        rhs = lam * p - (n - 1) * lam * g
        p, g = (bp * s + rhs) / gp, (bg * s + rhs) / gg
        prev_odd = o

    P_arr, G_arr, O_arr = np.array(P), np.array(G), np.array(O)
    mass = P_arr + G_arr + O_arr
    tail, ratio = 0.0, 0.0
    if len(mass) >= 2 and mass[-2] > 0 and mass[-1] > 0:
        ratio = float(mass[-1] / mass[-2])
        if ratio >= 1.0:
            raise NumericalBreakdown(f"level masses not decaying (ratio {ratio})")
        tail = float(mass[-1] * ratio / (1.0 - ratio))
    return BosDistribution(r, low, P_arr, G_arr, O_arr, tail, ratio)


def _check_nonnegative(values: np.ndarray, what: str) -> None:
    if (values < -NEGATIVE_SLACK).any():
        raise NumericalBreakdown(f"negative mass in {what}: min {values.min()}")


def bos_mean_packets(dist: BosDistribution) -> float:
    """E[N] over the retained states."""
    r = dist.r
    m = np.arange(dist.levels)
    body = np.dot(np.arange(2 * r), dist.pi_low)
    body += np.dot(2 * r + 2 * m, dist.pi_perfect + dist.pi_good)
    body += np.dot(2 * r + 2 * m + 1, dist.pi_odd)
    return float(body)


def bos_mean_packet_delay(dist: BosDistribution, config: SystemConfig) -> float:
    """Mean packet sojourn time, E[N] / (2 lam); packet requests arrive at rate 2 lam."""
    if config.lam == 0:
        raise ZeroDivisionError("packet delay is undefined at lambda = 0")
    return bos_mean_packets(dist) / (2.0 * config.lam)


def bos_packet_delay_error_bound(dist: BosDistribution, config: SystemConfig) -> float:
    """Upper estimate of the delay contribution of the truncated levels.

    Assumes dropped level masses continue geometrically with the last
    observed ratio and charges each at its odd (largest) packet count.
    """
    if config.lam == 0:
        raise ZeroDivisionError("packet delay is undefined at lambda = 0")
    theta = dist.tail_ratio
    if dist.tail_mass == 0.0 or theta == 0.0:
        return 0.0
    last = float(dist.level_mass[-1])
    top = 2 * dist.r + 2 * (dist.levels - 1) + 1
    weighted = last * (top * theta / (1 - theta) + 2 * theta / (1 - theta) ** 2)
    return weighted / (2.0 * config.lam)


def lemma_offset(r: int, mu: float = 1.0) -> float:
    """Request-minus-packet delay offset assuming packet 2 always waits Exp((2r-1) mu)."""
    r = check_r(r)
    mu = check_mu(mu)
    return (
        (2 * r - 1) / (2 * r - 2) / (2 * mu)
        - 1.0 / ((2 * r - 2) * (2 * r - 1) * 2 * r * mu)
        - 1.0 / (2 * (2 * r - 1) * mu)
    )


def bos_mean_request_delay(packet_delay: float, config: SystemConfig) -> float:
    return packet_delay + lemma_offset(config.r, config.mu)


def bos_request_offset_exact(dist: BosDistribution, config: SystemConfig) -> float:
    """Request-minus-packet offset accounting for arrivals that find two idle units.

    An arrival that sees at most 2r - 2 packets (probability q, by PASTA)
    starts both packets at once, contributing E[max] - E[mean] = 1/(2 mu);
    every other request sees packet 2 wait an Exp((2r-1) mu) time after
    packet 1 starts, contributing ``lemma_offset``.
    """
    q = float(dist.pi_low[: 2 * config.r - 1].sum())
    return q / (2.0 * config.mu) + (1.0 - q) * lemma_offset(config.r, config.mu)


def delay_gain(d_uncoded: float, d_coded: float) -> float:
    """Relative packet-delay reduction of coding; negative when coding is worse."""
    if d_uncoded == 0:
        raise ZeroDivisionError("delay gain is undefined for a zero uncoded delay")
    if d_uncoded < 0:
        raise ValueError(f"uncoded delay must be positive, got {d_uncoded}")
    return (d_uncoded - d_coded) / d_uncoded


def max_service_expectation(r: int, mu: float = 1.0) -> float:
    """E[max(S1, S2 + tau)] with S1, S2 ~ Exp(mu) and tau ~ Exp((2r-1) mu)."""
    r = check_r(r)
    mu = check_mu(mu)
    return 1.0 / mu + (2 * r - 1) / (2 * r - 2) / (2 * mu) - 1.0 / ((2 * r - 2) * (2 * r - 1) * 2 * r * mu)


def max_service_density(r: int, mu: float, z):
    """Density of max(S1, S2 + tau); accepts scalars or arrays, zero for z < 0."""
    r = check_r(r)
    mu = check_mu(mu)
    z = np.asarray(z, dtype=float)
    c = (2 * r - 1) / (2 * r - 2)
    zz = np.maximum(z, 0.0)
    f = (
        c * mu * np.exp(-mu * zz)
        - (2 * r - 1) * mu / (2 * r - 2) * np.exp(-(2 * r - 1) * mu * zz)
        + mu * np.exp(-mu * zz)
        - c * 2 * mu * np.exp(-2 * mu * zz)
        + 2 * r * mu / (2 * r - 2) * np.exp(-2 * r * mu * zz)
    )
    f = np.where(z < 0, 0.0, f)
    return float(f) if f.ndim == 0 else f


@dataclass(frozen=True)
class DelayReport:
    mean_packet_delay: float
    mean_request_delay: float
    source: str
    ci_halfwidth_packet: float = 0.0
    ci_halfwidth_request: float = 0.0
    n_samples: int = 0


def bos_delay_report(config: SystemConfig, tol: float = DEFAULT_TOL) -> DelayReport:
    dist = bos_stationary(config, tol)
    d = bos_mean_packet_delay(dist, config)
    return DelayReport(d, bos_mean_request_delay(d, config), "analytic")


def cut_residuals(dist: BosDistribution, config: SystemConfig) -> dict[str, float]:
    """Max absolute violation of each family of flow-balance cuts.

    type1: count cuts just below each odd state; type2: count cuts just
    below each (p, g) pair; type3: the (p, g) pair as a set; perfect/good:
    single-state balance; low: count cuts inside the low block.
    """
    r, lam, mu = config.r, config.lam, config.mu
    n = 2 * r
    lo, P, G, O = dist.pi_low, dist.pi_perfect, dist.pi_good, dist.pi_odd
    M = dist.levels
    odd_prev = np.concatenate(([lo[n - 1]], O[:-1]))
    pg_prev_sum = np.concatenate(([0.0], (P + G)[:-1]))

    type1 = n * mu * O - lam * (P + G + odd_prev)

    t2_first = (lo[n - 2] + lo[n - 1]) * lam - (n * mu * P[0] + (n - 1) * mu * G[0])
    t2_rest = (P + G + O)[:-1] * lam - (n * mu * P[1:] + (n - 1) * mu * G[1:])
    type2 = np.concatenate(([t2_first], t2_rest))

    inflow3 = lam * pg_prev_sum + n * mu * O
    inflow3[0] = lam * lo[n - 2] + n * mu * O[0]
    type3 = P * (lam + n * mu) + G * (lam + (n - 1) * mu) - inflow3

    p_in = lam * np.concatenate(([lo[n - 2]], P[:-1])) + (n - 1) * mu * O
    perfect = P * (lam + n * mu) - p_in
    g_in = lam * np.concatenate(([0.0], G[:-1])) + mu * O
    good = G * (lam + (n - 1) * mu) - g_in

    padded = np.concatenate(([0.0, 0.0], lo))
    l = np.arange(1, n)
    low = l * mu * lo[1:] - lam * (padded[l + 1] + padded[l])

    def worst(x):
        return float(np.max(np.abs(x))) if len(x) else 0.0

    if M == 0:
        return {"low": worst(low)}
    return {
        "low": worst(low),
        "type1": worst(type1),
        "type2": worst(type2),
        "type3": worst(type3),
        "perfect": worst(perfect),
        "good": worst(good),
    }


def corrupt_coefficients(
    config: SystemConfig, edit: Callable[[BosCoefficients], BosCoefficients]
) -> BosCoefficients:
    """Coefficients with a deliberate edit applied; a hook for negative-path checks."""
    return edit(bos_coefficients(config))


__all__ = [
    "BosCoefficients",
    "BosDistribution",
    "DelayReport",
    "bos_capacity",
    "bos_coefficients",
    "bos_mean_packet_delay",
    "bos_mean_request_delay",
    "bos_packet_delay_error_bound",
    "bos_request_offset_exact",
    "bos_stationary",
    "capacity_loss_fraction",
    "cut_residuals",
    "delay_gain",
    "lemma_offset",
    "max_service_density",
    "max_service_expectation",
]
