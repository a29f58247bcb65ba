"""Monte Carlo estimates of the tamper-resistance-improvement ratios.

Hash rates are i.i.d. Pareto(alpha) on (1, inf). For one population:

* ``A``  max hash rate over the merged single-domain system
* ``A'`` sum of the top X% rates of the merged system
* ``B``  sum over domains of each domain's max rate
* ``B'`` sum over domains of each domain's top X% rates
* ``R = B / A`` and ``R' = B' / A'``

Selection counts are ``ceil(X/100 * size)``. Sums use ``math.fsum`` so the
orderings ``B >= A`` and ``B' <= A'`` survive floating point exactly.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np


class MonteCarloError(ValueError):
    pass


class FailureMode(str, enum.Enum):
    EXCLUDE_FROM_B_ONLY = "exclude_from_B_only"
    EXCLUDE_FROM_BOTH = "exclude_from_both"


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_pareto(alpha: float, count: int, seed=None) -> np.ndarray:
    """Inverse-CDF draws ``u ** (-1/alpha)`` with ``u`` uniform on (0, 1]."""
    if not alpha > 0:
        raise MonteCarloError("alpha must be > 0")
    u = 1.0 - _rng(seed).random(count)
    return u ** (-1.0 / alpha)


def pareto_cdf(h, alpha: float):
    h = np.asarray(h, dtype=float)
    return np.where(h > 1.0, 1.0 - h ** (-alpha), 0.0)


def top_count(percent: float, size: int) -> int:
    """``ceil(percent/100 * size)`` computed without float round-off."""
    return math.ceil(Fraction(str(percent)) * size / 100)


@dataclass(frozen=True)
class HashRatePopulation:
    rates: np.ndarray
    domain_sizes: tuple[int, ...]
    alpha: float = float("nan")

    def __post_init__(self):
        if sum(self.domain_sizes) != len(self.rates):
            raise MonteCarloError("domain sizes do not add up to the number of rates")
        if any(s < 1 for s in self.domain_sizes):
            raise MonteCarloError("every domain needs at least one node")

    @classmethod
    def from_domains(cls, domains: Sequence[Sequence[float]], alpha: float = float("nan")) -> HashRatePopulation:
        rates = np.concatenate([np.asarray(d, dtype=float) for d in domains])
        return cls(rates, tuple(len(d) for d in domains), alpha)

    @classmethod
    def sample_uniform(cls, n: int, m: int, alpha: float, seed=None) -> HashRatePopulation:
        if n % m:
            raise MonteCarloError("N must be divisible by m")
        return cls(sample_pareto(alpha, n, seed), (n // m,) * m, alpha)

    @property
    def m(self) -> int:
        return len(self.domain_sizes)

    @property
    def n(self) -> int:
        return len(self.rates)

    def domains(self) -> list[np.ndarray]:
        return np.split(self.rates, np.cumsum(self.domain_sizes)[:-1])


@dataclass(frozen=True)
class MonteCarloSample:
    A: float
    A_prime: float
    B: float
    B_prime: float

    @property
    def R(self) -> float:
        return self.B / self.A

    @property
    def R_prime(self) -> float:
        return self.B_prime / self.A_prime


def _top_sum(values: np.ndarray, k: int) -> float:
    if k >= len(values):
        return math.fsum(values)
    return math.fsum(np.partition(values, len(values) - k)[len(values) - k :])


def compute_sample(
    population: HashRatePopulation,
    top_x_percent: float,
    failed_domains: Iterable[int] = (),
    failure_mode: FailureMode | str = FailureMode.EXCLUDE_FROM_BOTH,
) -> MonteCarloSample:
    mode = FailureMode(failure_mode)
    failed = set(int(d) for d in failed_domains)
    if any(not 0 <= d < population.m for d in failed):
        raise MonteCarloError("failed domain out of range")
    if len(failed) >= population.m:
        raise MonteCarloError("empty system")
    if not 0 < top_x_percent <= 100:
        raise MonteCarloError("top_x_percent must be in (0, 100]")

    sizes = set(population.domain_sizes)
    if len(sizes) == 1:
        matrix = population.rates.reshape(population.m, -1)
        alive = np.ones(population.m, dtype=bool)
        alive[list(failed)] = False
        live = matrix[alive]
        maxima = live.max(axis=1)
        k_dom = top_count(top_x_percent, matrix.shape[1])
        per_domain_top = np.sort(live, axis=1)[:, matrix.shape[1] - k_dom :]
        b = math.fsum(maxima)
        b_prime = math.fsum(per_domain_top.ravel())
        pool = live.ravel() if mode is FailureMode.EXCLUDE_FROM_BOTH else population.rates
    else:
        domains = population.domains()
        live_domains = [dom for i, dom in enumerate(domains) if i not in failed]
        b = math.fsum(float(dom.max()) for dom in live_domains)
        b_prime = math.fsum(
            math.fsum(np.sort(dom)[len(dom) - top_count(top_x_percent, len(dom)) :]) for dom in live_domains
        )
        pool = np.concatenate(live_domains) if mode is FailureMode.EXCLUDE_FROM_BOTH else population.rates
    a = float(pool.max())
    a_prime = _top_sum(pool, top_count(top_x_percent, len(pool)))
    return MonteCarloSample(a, a_prime, b, b_prime)


@dataclass(frozen=True)
class McConfig:
    N: int = 10_000
    m: int = 10
    alpha: float = 2.0
    top_x_percent: float = 10.0
    trials: int = 1_000
    failed_domains: int = 0
    failure_mode: FailureMode = FailureMode.EXCLUDE_FROM_BOTH
    seed: int = 0
    bin_width: float = 0.1

    def problems(self) -> list[str]:
        out = []
        if self.N < 1 or self.m < 1:
            out.append("N and m must be >= 1")
        elif self.N % self.m:
            out.append(f"N={self.N} is not divisible by m={self.m}")
        if not self.alpha > 0:
            out.append("alpha must be > 0")
        if not 0 < self.top_x_percent <= 100:
            out.append("top_x_percent must be in (0, 100]")
        if self.trials < 1:
            out.append("trials must be >= 1")
        if not 0 <= self.failed_domains < max(self.m, 1):
            out.append(f"failed_domains must satisfy 0 <= f < m (f={self.failed_domains}, m={self.m})")
        if not self.bin_width > 0:
            out.append("bin_width must be > 0")
        return out

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise MonteCarloError("; ".join(problems))


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(trial,)))


def run_trial(config: McConfig, trial: int) -> tuple[MonteCarloSample, tuple[int, ...]]:
    rng = trial_rng(config.seed, trial)
    population = HashRatePopulation.sample_uniform(config.N, config.m, config.alpha, rng)
    failed: tuple[int, ...] = ()
    if config.failed_domains:
        failed = tuple(sorted(int(d) for d in rng.choice(config.m, size=config.failed_domains, replace=False)))
    return compute_sample(population, config.top_x_percent, failed, config.failure_mode), failed


@dataclass(frozen=True)
class Histogram:
    bin_width: float
    edges: np.ndarray
    density: np.ndarray

    @property
    def mode_bin(self) -> float:
        return float(self.edges[int(np.argmax(self.density))])

    def to_csv(self) -> str:
        lines = ["bin_left,density"]
        lines.extend(f"{left!r},{d!r}" for left, d in zip(self.edges[:-1].tolist(), self.density.tolist()))
        return "\n".join(lines) + "\n"


def histogram(values: np.ndarray, bin_width: float = 0.1) -> Histogram:
    """Probability-density histogram on the grid ``k * bin_width``."""
    values = np.asarray(values, dtype=float)
    lo = math.floor(values.min() / bin_width)
    hi = math.floor(values.max() / bin_width) + 1
    edges = np.arange(lo, hi + 1) * bin_width
    density, _ = np.histogram(values, bins=edges, density=True)
    return Histogram(bin_width, edges, density)


@dataclass(frozen=True)
class DistributionSummary:
    count: int
    mean: float
    median: float
    variance: float
    minimum: float
    maximum: float
    mode_bin: float
    histogram: Histogram = field(repr=False)

    @classmethod
    def of(cls, values: np.ndarray, bin_width: float) -> DistributionSummary:
        hist = histogram(values, bin_width)
        return cls(
            count=len(values),
            mean=float(np.mean(values)),
            median=float(np.median(values)),
            variance=float(np.var(values, ddof=1)) if len(values) > 1 else 0.0,
            minimum=float(np.min(values)),
            maximum=float(np.max(values)),
            mode_bin=hist.mode_bin,
            histogram=hist,
        )

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean": self.mean,
            "median": self.median,
            "variance": self.variance,
            "min": self.minimum,
            "max": self.maximum,
            "mode_bin": self.mode_bin,
        }


@dataclass(frozen=True)
class McResult:
    config: McConfig
    A: np.ndarray
    A_prime: np.ndarray
    B: np.ndarray
    B_prime: np.ndarray
    failed: tuple[tuple[int, ...], ...]

    @property
    def R(self) -> np.ndarray:
        return self.B / self.A

    @property
    def R_prime(self) -> np.ndarray:
        return self.B_prime / self.A_prime

    def summary_R(self) -> DistributionSummary:
        return DistributionSummary.of(self.R, self.config.bin_width)

    def summary_R_prime(self) -> DistributionSummary:
        return DistributionSummary.of(self.R_prime, self.config.bin_width)

    def samples(self):
        for i in range(len(self.A)):
            yield MonteCarloSample(float(self.A[i]), float(self.A_prime[i]), float(self.B[i]), float(self.B_prime[i]))

    def summary(self) -> dict:
        c = self.config
        r_prime = self.R_prime
        return {
            "N": c.N,
            "m": c.m,
            "alpha": c.alpha,
            "top_x_percent": c.top_x_percent,
            "trials": c.trials,
            "failed_domains": c.failed_domains,
            "failure_mode": c.failure_mode.value,
            "seed": c.seed,
            "R": self.summary_R().to_dict(),
            "R_prime": self.summary_R_prime().to_dict(),
            "fraction_R_ge_1": float(np.mean(self.R >= 1.0)),
            "fraction_R_prime_le_1": float(np.mean(r_prime <= 1.0)),
        }


def run_monte_carlo(config: McConfig, workers: int = 1) -> McResult:
    """Run ``config.trials`` independent trials.

    Each trial draws from its own generator keyed by ``(seed, trial)``, so the
    output does not depend on ``workers``.
    """
    config = replace(config, failure_mode=FailureMode(config.failure_mode))
    config.validate()
    out = np.empty((config.trials, 4))
    failed: list[tuple[int, ...]] = [()] * config.trials

    def work(indices: range) -> None:
        for i in indices:
            s, f = run_trial(config, i)
            out[i] = (s.A, s.A_prime, s.B, s.B_prime)
            failed[i] = f

    workers = max(1, int(workers))
    if workers == 1:
        work(range(config.trials))
    else:
        step = math.ceil(config.trials / workers)
        chunks = [range(lo, min(lo + step, config.trials)) for lo in range(0, config.trials, step)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, chunks))
    return McResult(config, out[:, 0].copy(), out[:, 1].copy(), out[:, 2].copy(), out[:, 3].copy(), tuple(failed))


def run_failure_sweep(config: McConfig, f_values: Iterable[int], workers: int = 1) -> dict[int, McResult]:
    results = {}
    for f in f_values:
        if not 0 <= f < config.m:
            raise MonteCarloError(f"f={f} must satisfy 0 <= f < m={config.m}")
        results[f] = run_monte_carlo(replace(config, failed_domains=f), workers=workers)
    return results
