"""
Equal-measure partition of the seed space.

Each coordinate of a seed z ~ N(0, sigma^2 I) is bucketed by |z_j| against the
half-normal quantiles tau_1 < ... < tau_{k-1}, giving m = k^d_tilde blocks of
equal Gaussian measure. Intervals are half-open, [tau_{i-1}, tau_i), so every
seed belongs to exactly one block.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.special import erf

from .errors import PrecisionError, SupportOverflowError

logger = logging.getLogger(__name__)

DEFAULT_MAX_SUPPORT = 1 << 20
QUANTILE_TOLERANCE = 1e-12
QUANTILE_ITERATIONS = 64
EQUAL_MEASURE_TOLERANCE = 1e-10
# Upper end of the bisection bracket, in units of sigma.
BRACKET_SIGMAS = 40.0


def half_normal_cdf(t: NDArray[np.float64], sigma: float) -> NDArray[np.float64]:
    """P(|Z| <= t) for Z ~ N(0, sigma^2); zero for negative t."""
    t = np.asarray(t, dtype=np.float64)
    return np.where(t > 0, erf(np.maximum(t, 0.0) / (sigma * math.sqrt(2.0))), 0.0)


def half_normal_quantile(p: NDArray[np.float64], sigma: float) -> NDArray[np.float64]:
    """
    Invert half_normal_cdf by vectorized bisection.

    Args:
        p: Probabilities in [0, 1)
        sigma: Standard deviation of the underlying Gaussian

    Returns:
        Array of t with P(|Z| <= t) = p
    """
    p = np.asarray(p, dtype=np.float64)
    lo = np.zeros_like(p)
    hi = np.full_like(p, BRACKET_SIGMAS * sigma)
    for _ in range(QUANTILE_ITERATIONS):
        mid = 0.5 * (lo + hi)
        below = half_normal_cdf(mid, sigma) < p
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return np.where(p <= 0, 0.0, 0.5 * (lo + hi))


@dataclass(frozen=True)
class BlockPartition:
    """Per-coordinate half-normal quantile grid with m = k^d_tilde blocks."""

    k: int
    d_tilde: int
    sigma: float
    thresholds: Tuple[float, ...]
    max_support: int = field(default=DEFAULT_MAX_SUPPORT, compare=False)

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be at least 1, got {self.k}")
        if self.d_tilde < 1:
            raise ValueError(f"d_tilde must be positive, got {self.d_tilde}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("sigma must be a positive finite number")
        if len(self.thresholds) != self.k - 1:
            raise ValueError(f"Expected {self.k - 1} thresholds, got {len(self.thresholds)}")
        if self.k ** self.d_tilde > self.max_support:
            raise SupportOverflowError(
                f"k^d_tilde = {self.k}^{self.d_tilde} exceeds the maximum support {self.max_support}"
            )

        taus = np.asarray(self.thresholds, dtype=np.float64)
        if not np.all(np.isfinite(taus)) or np.any(taus <= 0):
            raise ValueError("Thresholds must be positive and finite")
        if np.any(np.diff(taus) <= 0):
            raise ValueError("Thresholds must be strictly increasing")
        cdf = np.concatenate([[0.0], half_normal_cdf(taus, self.sigma), [1.0]])
        deviation = np.max(np.abs(np.diff(cdf) - 1.0 / self.k))
        if deviation > EQUAL_MEASURE_TOLERANCE:
            raise PrecisionError(
                f"Blocks deviate from equal measure by {deviation:.3e} (k={self.k})"
            )

    @property
    def m(self) -> int:
        """Number of blocks, k^d_tilde."""
        return self.k ** self.d_tilde

    @property
    def taus(self) -> NDArray[np.float64]:
        return np.asarray(self.thresholds, dtype=np.float64)

    @property
    def min_gap(self) -> float:
        """Smallest distance between consecutive boundaries tau_0=0, tau_1, ..."""
        if self.k == 1:
            return math.inf
        return float(np.min(np.diff(np.concatenate([[0.0], self.taus]))))

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "d_tilde": self.d_tilde,
            "sigma": self.sigma,
            "thresholds": [float(t) for t in self.thresholds],
        }

    @classmethod
    def from_dict(cls, data: dict, max_support: int = DEFAULT_MAX_SUPPORT) -> "BlockPartition":
        return cls(
            k=int(data["k"]),
            d_tilde=int(data["d_tilde"]),
            sigma=float(data["sigma"]),
            thresholds=tuple(float(t) for t in data["thresholds"]),
            max_support=max_support,
        )

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Path) -> "BlockPartition":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Partition file not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


def compute_thresholds(
    k: int, sigma: float, d_tilde: int = 1, max_support: int = DEFAULT_MAX_SUPPORT
) -> BlockPartition:
    """
    Build the partition whose thresholds solve P(|Z| <= tau_i) = i / k.

    Raises:
        ValueError: If k < 1
        PrecisionError: If adjacent quantiles cannot be told apart
        SupportOverflowError: If k^d_tilde exceeds max_support
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if not (math.isfinite(sigma) and sigma > 0):
        raise ValueError("sigma must be a positive finite number")
    if k ** d_tilde > max_support:
        raise SupportOverflowError(
            f"k^d_tilde = {k}^{d_tilde} exceeds the maximum support {max_support}"
        )

    levels = np.arange(1, k) / k
    taus = half_normal_quantile(levels, sigma)
    gaps = np.diff(np.concatenate([[0.0], taus]))
    if gaps.size and np.min(gaps) <= QUANTILE_TOLERANCE:
        raise PrecisionError(
            f"Quantiles for k={k} are numerically indistinguishable (gap {np.min(gaps):.3e})"
        )
    return BlockPartition(
        k=k,
        d_tilde=d_tilde,
        sigma=sigma,
        thresholds=tuple(float(t) for t in taus),
        max_support=max_support,
    )


def block_tuples(seeds: NDArray[np.float64], part: BlockPartition) -> NDArray[np.int64]:
    """Interval index in [1, k] of every |z_j|, shape (..., d_tilde)."""
    seeds = np.asarray(seeds, dtype=np.float64)
    if seeds.shape[-1] != part.d_tilde:
        raise ValueError(f"Seeds have width {seeds.shape[-1]}, partition expects {part.d_tilde}")
    return np.searchsorted(part.taus, np.abs(seeds), side="right").astype(np.int64) + 1


def block_tuple(z: NDArray[np.float64], part: BlockPartition) -> Tuple[int, ...]:
    """Block tuple (i_1, ..., i_d_tilde) of a single seed."""
    return tuple(int(i) for i in block_tuples(z, part))


def _radix(part: BlockPartition) -> NDArray[np.int64]:
    return part.k ** np.arange(part.d_tilde, dtype=np.int64)


def block_indices(tuples: NDArray[np.int64], part: BlockPartition) -> NDArray[np.int64]:
    """Mixed-radix index 1 + sum_j (i_j - 1) k^(j-1) of every tuple."""
    tuples = np.asarray(tuples, dtype=np.int64)
    if tuples.shape[-1] != part.d_tilde:
        raise ValueError(f"Tuples have width {tuples.shape[-1]}, partition expects {part.d_tilde}")
    if tuples.size and (tuples.min() < 1 or tuples.max() > part.k):
        raise ValueError(f"Tuple entries must lie in [1, {part.k}]")
    return 1 + (tuples - 1) @ _radix(part)


def block_index(block: Sequence[int], part: BlockPartition) -> int:
    """Index in [1, m] of a single block tuple."""
    return int(block_indices(np.asarray(block, dtype=np.int64), part))


def decode_blocks(indices: NDArray[np.int64], part: BlockPartition) -> NDArray[np.int64]:
    """Inverse of block_indices."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 1 or indices.max() > part.m):
        raise ValueError(f"Block index must lie in [1, {part.m}]")
    offsets = (indices - 1)[..., None] // _radix(part)
    return offsets % part.k + 1


def decode_block(index: int, part: BlockPartition) -> Tuple[int, ...]:
    return tuple(int(i) for i in decode_blocks(np.asarray(index), part))


def sample_within_blocks(
    rng: np.random.Generator, blocks: NDArray[np.int64], part: BlockPartition
) -> NDArray[np.float64]:
    """
    Draw one seed from the conditional distribution of nu inside each block.

    Magnitudes are sampled uniformly in CDF space over [tau_{i-1}, tau_i) and
    inverted; signs are independent fair coins. Magnitudes are clamped into the
    half-open interval so the seed always decodes to its block.
    """
    tuples = decode_blocks(blocks, part)
    probabilities = rng.uniform((tuples - 1) / part.k, tuples / part.k)
    magnitudes = half_normal_quantile(probabilities, part.sigma)

    edges = np.concatenate([[0.0], part.taus, [np.inf]])
    lower = edges[tuples - 1]
    upper = edges[tuples]
    magnitudes = np.maximum(magnitudes, lower)
    magnitudes = np.where(magnitudes >= upper, np.nextafter(upper, 0.0), magnitudes)

    signs = rng.integers(0, 2, size=tuples.shape) * 2 - 1
    return signs * magnitudes


def sample_within_block(
    rng: np.random.Generator, block: int, part: BlockPartition
) -> NDArray[np.float64]:
    """Single-block form of sample_within_blocks."""
    return sample_within_blocks(rng, np.asarray([block]), part)[0]


def verify_equipartition(part: BlockPartition, n: int, rng: np.random.Generator) -> float:
    """
    Empirical check that every block carries mass 1/m.

    Returns:
        max_b |freq_b - 1/m| over n seeds drawn from nu

    Raises:
        ValueError: If n < 10 m
    """
    if n < 10 * part.m:
        raise ValueError(f"Need at least 10 m = {10 * part.m} samples, got {n}")
    seeds = rng.normal(0.0, part.sigma, size=(n, part.d_tilde))
    indices = block_indices(block_tuples(seeds, part), part)
    frequencies = np.bincount(indices - 1, minlength=part.m) / n
    deviation = float(np.max(np.abs(frequencies - 1.0 / part.m)))
    logger.debug("Equipartition deviation for k=%d, m=%d: %.5f", part.k, part.m, deviation)
    return deviation
