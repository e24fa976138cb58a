"""Finite-support offspring distributions on the non-negative integers.

An offspring law is given by a ``{value: probability}`` map with finite
support. It knows its exact power moments, centered absolute moments and
cumulants, and can draw single offspring counts or whole-generation totals.
"""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from .errors import ParameterError

MAX_CUMULANT_ORDER = 12

# Generation totals use counts dotted with the support; keep the worst-case
# total inside int64 so the dot product cannot wrap.
_INT64_SAFE = 2**62


class OffspringLaw:
    """Probability law of a single offspring count, with finite support.

    Parameters
    ----------
    pmf : mapping of non-negative int to probability. Probabilities must be
        non-negative and sum to 1 within 1e-9; they are renormalized to sum
        to 1 exactly. Zero-probability entries are dropped. The mean must be
        positive (the law may be deterministic, but not all mass at zero).
    """

    def __init__(self, pmf: Mapping[int, float]):
        if not pmf:
            raise ParameterError("offspring law needs at least one atom")
        values = []
        probs = []
        for value, prob in sorted(pmf.items()):
            if not isinstance(value, (int, np.integer)) or value < 0:
                raise ParameterError(f"offspring value {value!r} is not a non-negative integer")
            prob = float(prob)
            if prob < 0.0 or not math.isfinite(prob):
                raise ParameterError(f"probability {prob!r} for value {value} is invalid")
            if prob > 0.0:
                values.append(int(value))
                probs.append(prob)
        if not values:
            raise ParameterError("offspring law has no positive-probability atom")
        total = math.fsum(probs)
        if abs(total - 1.0) > 1e-12:
            raise ParameterError(f"probabilities sum to {total!r}, not 1")
        self.values = np.asarray(values, dtype=np.int64)
        self.probs = np.asarray(probs, dtype=np.float64) / total
        self._cdf = np.cumsum(self.probs)
        self._cdf[-1] = 1.0
        self._mean = float(self.values @ self.probs)
        if self._mean <= 0.0:
            raise ParameterError("offspring mean must be positive")

    @property
    def mean(self) -> float:
        return self._mean

    @property
    def log_mean(self) -> float:
        return math.log(self._mean)

    @property
    def max_support(self) -> int:
        return int(self.values[-1])

    @property
    def is_deterministic(self) -> bool:
        return len(self.values) == 1

    def moment(self, p: float) -> float:
        """E[X^p] for real p >= 0, with 0^0 = 1 and 0^p = 0 for p > 0."""
        if p < 0:
            raise ParameterError("moment order must be >= 0")
        if p == 0:
            return 1.0
        powers = np.where(self.values > 0, np.power(self.values, float(p), dtype=np.float64), 0.0)
        return float(powers @ self.probs)

    def centered_abs_moment(self, p: float) -> float:
        """E|X/mean - 1|^p, the normalized centered absolute moment."""
        if p <= 0:
            raise ParameterError("centered moment order must be positive")
        dev = np.abs(self.values / self._mean - 1.0)
        return float(np.power(dev, float(p)) @ self.probs)

    def raw_moments(self, k_max: int) -> np.ndarray:
        """Exact integer-order moments E[X^k] for k = 1..k_max."""
        if k_max < 1:
            raise ParameterError("k_max must be >= 1")
        vals = self.values.astype(np.float64)
        return np.array([float(np.power(vals, k) @ self.probs) for k in range(1, k_max + 1)])

    def cumulants(self, k_max: int) -> np.ndarray:
        """Cumulants kappa_1..kappa_k_max, k_max <= 12.

        Uses the standard recursion
        kappa_n = mu'_n - sum_{j<n} C(n-1, j-1) kappa_j mu'_{n-j}.
        """
        if not 1 <= k_max <= MAX_CUMULANT_ORDER:
            raise ParameterError(f"cumulant order must be in 1..{MAX_CUMULANT_ORDER}")
        mu = self.raw_moments(k_max)
        kappa = np.zeros(k_max)
        for n in range(1, k_max + 1):
            acc = mu[n - 1]
            for j in range(1, n):
                acc -= math.comb(n - 1, j - 1) * kappa[j - 1] * mu[n - j - 1]
            kappa[n - 1] = acc
        return kappa

    def sample(self, rng: np.random.Generator) -> int:
        """One draw via the cumulative table."""
        return int(self.values[np.searchsorted(self._cdf, rng.random())])

    def sample_array(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """A batch of iid draws via the cumulative table."""
        return self.values[np.searchsorted(self._cdf, rng.random(size))]

    def sample_total(self, rng: np.random.Generator, z: int) -> int:
        """Total offspring of z independent individuals.

        Draws the multinomial category counts of the z offspring and dots
        them with the support, which has exactly the law of the sum of z
        iid draws (no distributional approximation).
        """
        if z < 0:
            raise ParameterError("population size must be >= 0")
        if z == 0:
            return 0
        if z * self.max_support >= _INT64_SAFE:
            raise ParameterError(f"population {z} too large for exact totals")
        counts = rng.multinomial(z, self.probs)
        return int(counts @ self.values)

    def as_mapping(self) -> dict[int, float]:
        return {int(v): float(p) for v, p in zip(self.values, self.probs)}

    def __eq__(self, other) -> bool:
        if not isinstance(other, OffspringLaw):
            return NotImplemented
        return (
            self.values.shape == other.values.shape
            and bool(np.all(self.values == other.values))
            and bool(np.all(self.probs == other.probs))
        )

    def __hash__(self):
        return hash((self.values.tobytes(), self.probs.tobytes()))

    def __repr__(self) -> str:
        atoms = ", ".join(f"{v}: {p:g}" for v, p in self.as_mapping().items())
        return f"OffspringLaw({{{atoms}}})"
