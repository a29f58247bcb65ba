"""Analytic throughput model for a PoW chain with exponential block intervals.

With mean block interval ``tau`` and propagation latency ``tau_fork``, a block
is orphaned with probability ``1 - exp(-tau_fork / tau)``; capacity is
``G(tau) = C / tau * exp(-tau_fork / tau)``, maximized at ``tau = tau_fork``.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

BITCOIN_TAU = 600.0
BITCOIN_TAU_FORK = 12.0
BITCOIN_C_TXS = 4286.0


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class CapacityParams:
    tau: float = BITCOIN_TAU
    tau_fork: float = BITCOIN_TAU_FORK
    c_txs: float = BITCOIN_C_TXS
    block_size_mb: float = 1.0

    def check(self) -> None:
        if not self.tau > 0:
            raise CapacityError("tau must be > 0")
        if not self.tau_fork >= 0:
            raise CapacityError("tau_fork must be >= 0")
        if not self.c_txs > 0:
            raise CapacityError("c_txs must be > 0")


@dataclass(frozen=True)
class ScalingFactors:
    base_tps: float
    block_size_ratio: float
    interval_ratio: float
    domain_count: int

    def check(self) -> None:
        for name in ("base_tps", "block_size_ratio", "interval_ratio", "domain_count"):
            if not getattr(self, name) > 0:
                raise CapacityError(f"{name} must be > 0")


def fork_probability(params: CapacityParams) -> float:
    params.check()
    return -math.expm1(-params.tau_fork / params.tau)


def fork_probability_approx(params: CapacityParams) -> float:
    """First-order approximation ``tau_fork / tau``."""
    params.check()
    return params.tau_fork / params.tau


def unfork_probability(params: CapacityParams) -> float:
    params.check()
    return math.exp(-params.tau_fork / params.tau)


def capacity_tps(params: CapacityParams) -> float:
    params.check()
    return params.c_txs / params.tau * math.exp(-params.tau_fork / params.tau)


def _numeric_argmax(tau_fork: float) -> float:
    # maximize log G over log tau; the objective is smooth and unimodal there
    def neg_log_g(log_tau: float) -> float:
        tau = math.exp(log_tau)
        return log_tau + tau_fork / tau

    centre = math.log(tau_fork)
    res = minimize_scalar(
        neg_log_g,
        bounds=(centre - 10.0, centre + 10.0),
        method="bounded",
        options={"xatol": 1e-12, "maxiter": 500},
    )
    return math.exp(res.x)


def optimal_tau(params: CapacityParams, check_numeric: bool = True) -> float:
    """Block interval maximizing G; equals ``tau_fork``.

    The closed form is cross-checked with a bounded scalar search.
    """
    if not params.tau_fork > 0:
        raise CapacityError("no interior optimum")
    if check_numeric:
        numeric = _numeric_argmax(params.tau_fork)
        if abs(numeric - params.tau_fork) > 1e-6 * params.tau_fork:
            raise AssertionError(f"numeric optimum {numeric} disagrees with tau_fork {params.tau_fork}")
    return params.tau_fork


def optimal_tau_numeric(params: CapacityParams) -> float:
    if not params.tau_fork > 0:
        raise CapacityError("no interior optimum")
    return _numeric_argmax(params.tau_fork)


def max_capacity_tps(params: CapacityParams) -> float:
    """``G(tau_fork) = C / (e * tau_fork)``."""
    if not params.tau_fork > 0:
        raise CapacityError("no interior optimum")
    return params.c_txs * math.exp(-1.0) / params.tau_fork


def infer_c_from_tps(tps: float, tau: float, tau_fork: float) -> float:
    """Transactions per block needed to reach ``tps`` at the given interval."""
    if not (tps > 0 and tau > 0 and tau_fork > 0):
        raise CapacityError("tps, tau and tau_fork must be > 0")
    return tps * tau * math.exp(tau_fork / tau)


def scaled_capacity(factors: ScalingFactors) -> float:
    """Throughput multiplied by block-size, interval and domain-count ratios."""
    factors.check()
    return factors.base_tps * factors.block_size_ratio * factors.interval_ratio * factors.domain_count


def fork_adjusted_capacity(
    params: CapacityParams,
    domain_count: int,
    tau_fork_of_size: Callable[[float], float] | None = None,
) -> float:
    """Extension: per-domain G(tau) including fork losses, times ``domain_count``.

    ``tau_fork_of_size`` maps block size in MB to propagation latency; when
    omitted, ``params.tau_fork`` is used unchanged.
    """
    if domain_count < 1:
        raise CapacityError("domain_count must be >= 1")
    if tau_fork_of_size is not None:
        params = CapacityParams(params.tau, tau_fork_of_size(params.block_size_mb), params.c_txs, params.block_size_mb)
    return domain_count * capacity_tps(params)


def tau_sweep(lo: float, hi: float, step: float) -> np.ndarray:
    """Inclusive grid ``lo, lo + step, ...`` up to ``hi``."""
    if not (lo > 0 and hi >= lo and step > 0):
        raise CapacityError("sweep needs 0 < lo <= hi and step > 0")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)
