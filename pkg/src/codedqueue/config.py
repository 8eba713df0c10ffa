"""System parameters and the error types shared by every analysis."""

from __future__ import annotations

from dataclasses import dataclass


class InvalidConfig(ValueError):
    """Raised for parameters outside the model (r < 2, mu <= 0, lambda < 0, ...)."""


class UnstableSystem(ValueError):
    """Raised when the arrival rate is not strictly inside the capacity region."""


class NumericalBreakdown(ArithmeticError):
    """Raised when an iterative computation produces an invalid (negative) mass."""


class SingularSystem(ArithmeticError):
    """Raised when a direct stationary solve fails or misses its residual target."""


class ShapeMismatch(ValueError):
    """Raised when two distributions are not indexed by the same states."""


@dataclass(frozen=True)
class SystemConfig:
    """The triple (r, lambda, mu).

    ``lam`` is the content-request arrival rate. Each request spawns k = 2
    packet requests, and the system has n = 2r storage units.
    """

    r: int
    lam: float
    mu: float = 1.0

    def __post_init__(self) -> None:
        if isinstance(self.r, bool) or int(self.r) != self.r:
            raise InvalidConfig(f"r must be an integer, got {self.r!r}")
        object.__setattr__(self, "r", int(self.r))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "mu", float(self.mu))
        if self.r < 2:
            raise InvalidConfig(f"r must be >= 2, got {self.r}")
        if not self.mu > 0:
            raise InvalidConfig(f"mu must be > 0, got {self.mu}")
        if not self.lam >= 0:
            raise InvalidConfig(f"lambda must be >= 0, got {self.lam}")

    @property
    def n(self) -> int:
        return 2 * self.r

    @property
    def k(self) -> int:
        return 2

    def with_lam(self, lam: float) -> "SystemConfig":
        return SystemConfig(self.r, lam, self.mu)


def check_r(r: int) -> int:
    if isinstance(r, bool) or int(r) != r or r < 2:
        raise InvalidConfig(f"r must be an integer >= 2, got {r!r}")
    return int(r)


def check_mu(mu: float) -> float:
    if not mu > 0:
        raise InvalidConfig(f"mu must be > 0, got {mu}")
    return float(mu)
