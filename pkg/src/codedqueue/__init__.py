"""Latency analysis of coded storage versus replication for a single two-packet content."""

from codedqueue.config import (
    InvalidConfig,
    NumericalBreakdown,
    ShapeMismatch,
    SingularSystem,
    SystemConfig,
    UnstableSystem,
)
from codedqueue.states import ChainState, Kind
from codedqueue.mmr import MmrDistribution, mmr_mean_packet_delay, mmr_stationary
from codedqueue.bos import (
    BosCoefficients,
    BosDistribution,
    DelayReport,
    bos_capacity,
    bos_coefficients,
    bos_mean_packet_delay,
    bos_mean_request_delay,
    bos_packet_delay_error_bound,
    bos_request_offset_exact,
    bos_stationary,
    delay_gain,
    max_service_density,
    max_service_expectation,
)
from codedqueue.oracle import (
    GeneratorMatrix,
    StationaryDistribution,
    birth_death_generator,
    build_generator,
    compare_distributions,
    solve_stationary_direct,
)

__version__ = "0.1.0"

__all__ = [
    "BosCoefficients",
    "BosDistribution",
    "ChainState",
    "DelayReport",
    "GeneratorMatrix",
    "InvalidConfig",
    "Kind",
    "MmrDistribution",
    "NumericalBreakdown",
    "ShapeMismatch",
    "SingularSystem",
    "StationaryDistribution",
    "SystemConfig",
    "UnstableSystem",
    "birth_death_generator",
    "bos_capacity",
    "bos_coefficients",
    "bos_mean_packet_delay",
    "bos_mean_request_delay",
    "bos_packet_delay_error_bound",
    "bos_request_offset_exact",
    "bos_stationary",
    "build_generator",
    "compare_distributions",
    "delay_gain",
    "max_service_density",
    "max_service_expectation",
    "mmr_mean_packet_delay",
    "mmr_stationary",
    "solve_stationary_direct",
]
