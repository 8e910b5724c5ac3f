"""Closed-form scenario-optimization certificates.

Everything here is a pure function of its arguments.  The two scenario
programs used by the toolkit are scalar (one decision variable): the
certified gap is a sample maximum and the certified safety value is a
sample minimum, so ``dimension`` is 1 everywhere except when the bound is
evaluated on its own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Literal

import numpy as np

_CONFIDENCE_TOL = 1e-12


def _check_probability(name: str, value: float) -> None:
    if not (0.0 <= value <= 1.0) or math.isnan(value):
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")


def violation_bound(n: int, d: int, epsilon: float) -> float:
    """Upper bound on P^N[V(x*_N) > epsilon] for a d-dimensional scenario program.

    Evaluates the binomial tail ``sum_{i<d} C(N, i) eps^i (1 - eps)^(N - i)``
    term by term in log space so that N in the millions does not overflow.
    """
    if int(n) != n or int(d) != d:
        raise ValueError("n and d must be integers")
    n, d = int(n), int(d)
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if n < d:
        raise ValueError(f"need at least d={d} samples for a unique scenario solution, got N={n}")
    _check_probability("epsilon", epsilon)

    if epsilon == 0.0:
        # only the i = 0 term survives
        return 1.0
    if epsilon == 1.0:
        return 0.0

    log_eps = math.log(epsilon)
    log_keep = math.log1p(-epsilon)
    lgn = math.lgamma(n + 1)
    logs = [
        lgn - math.lgamma(i + 1) - math.lgamma(n - i + 1) + i * log_eps + (n - i) * log_keep
        for i in range(d)
    ]
    top = max(logs)
    total = math.exp(top) * math.fsum(math.exp(t - top) for t in logs)
    return min(1.0, max(0.0, total))


def confidence_scalar(n: int, epsilon: float) -> float:
    """Confidence ``1 - (1 - eps)^N`` attached to a scalar (d = 1) scenario solution."""
    if int(n) != n or n < 1:
        raise ValueError(f"N must be a positive integer, got {n!r}")
    return 1.0 - violation_bound(n, 1, epsilon)


def required_samples(epsilon: float, beta: float) -> int:
    """Smallest N with (1 - epsilon)^N <= beta."""
    if not (0.0 < epsilon < 1.0):
        raise ValueError(f"epsilon must lie strictly inside (0, 1), got {epsilon!r}")
    if not (0.0 < beta < 1.0):
        raise ValueError(f"beta must lie strictly inside (0, 1), got {beta!r}")
    log_keep = math.log1p(-epsilon)
    n = max(1, math.ceil(math.log(beta) / log_keep))
    # guard the ceil against rounding on either side
    while n > 1 and (n - 1) * log_keep <= math.log(beta):
        n -= 1
    while n * log_keep > math.log(beta):
        n += 1
    return n


@dataclass(frozen=True)
class Certificate:
    """Scenario certificate: with probability ``confidence`` the violation
    probability of the scenario solution is at most ``epsilon``."""

    sample_count: int
    epsilon: float
    confidence: float
    dimension: int = 1

    def __post_init__(self) -> None:
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        _check_probability("epsilon", self.epsilon)
        _check_probability("confidence", self.confidence)
        expected = 1.0 - violation_bound(self.sample_count, self.dimension, self.epsilon)
        if abs(expected - self.confidence) > _CONFIDENCE_TOL:
            raise ValueError(
                f"confidence {self.confidence!r} inconsistent with N={self.sample_count}, "
                f"d={self.dimension}, eps={self.epsilon} (expected {expected!r})"
            )

    @classmethod
    def issue(cls, sample_count: int, epsilon: float, dimension: int = 1) -> "Certificate":
        if dimension == 1:
            conf = confidence_scalar(sample_count, epsilon)
        else:
            conf = 1.0 - violation_bound(sample_count, dimension, epsilon)
        return cls(int(sample_count), float(epsilon), conf, int(dimension))

    @property
    def probability(self) -> float:
        return 1.0 - self.epsilon

    def statement(self) -> str:
        """Short human-readable form, e.g. ``>=99% with >=95% confidence``."""
        prob = _fmt_percent(self.probability * 100.0)
        conf = _fmt_percent(math.floor(self.confidence * 1000.0 + 1e-9) / 10.0)
        return f"≥{prob}% with ≥{conf}% confidence"

    def to_dict(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "epsilon": self.epsilon,
            "confidence": self.confidence,
            "dimension": self.dimension,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Certificate":
        return cls(
            int(data["sample_count"]),
            float(data["epsilon"]),
            float(data["confidence"]),
            int(data.get("dimension", 1)),
        )


def _fmt_percent(value: float) -> str:
    text = f"{value:.4f}".rstrip("0").rstrip(".")
    return text


@dataclass
class EmpiricalDistribution:
    """Sorted sample of scalar values (gaps or safety values)."""

    values: np.ndarray
    source_seed: int = 0
    _sorted: bool = field(default=False, repr=False)

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=float).ravel()
        if arr.size == 0:
            raise ValueError("an empirical distribution needs at least one value")
        if np.isnan(arr).any():
            raise ValueError("NaN in empirical distribution")
        self.values = np.sort(arr)
        self._sorted = True

    @classmethod
    def of(cls, values: Iterable[float], source_seed: int = 0) -> "EmpiricalDistribution":
        return cls(np.fromiter(values, dtype=float), source_seed)

    def __len__(self) -> int:
        return int(self.values.size)


Direction = Literal["above", "below"]
Tail = Literal["upper", "lower"]


def empirical_violation(dist: EmpiricalDistribution, threshold: float, direction: Direction) -> float:
    """Fraction of values strictly above (or strictly below) ``threshold``."""
    values = dist.values
    if values.size == 0:
        raise ValueError("empty distribution")
    if direction == "above":
        count = values.size - np.searchsorted(values, threshold, side="right")
    elif direction == "below":
        count = np.searchsorted(values, threshold, side="left")
    else:
        raise ValueError(f"direction must be 'above' or 'below', got {direction!r}")
    return float(count) / values.size


def empirical_cutoff(dist: EmpiricalDistribution, epsilon: float, tail: Tail) -> float:
    """Nearest-rank quantile: the (1 - eps) quantile for the upper tail,
    the eps quantile for the lower tail."""
    values = dist.values
    m = values.size
    if m == 0:
        raise ValueError("empty distribution")
    if not (0.0 < epsilon < 1.0):
        raise ValueError(f"epsilon must lie strictly inside (0, 1), got {epsilon!r}")
    if tail == "upper":
        rank = math.ceil((1.0 - epsilon) * m - 1e-9)
    elif tail == "lower":
        rank = math.ceil(epsilon * m - 1e-9)
    else:
        raise ValueError(f"tail must be 'upper' or 'lower', got {tail!r}")
    rank = min(max(rank, 1), m)
    return float(values[rank - 1])
