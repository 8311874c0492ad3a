"""
Memorizing generator G(z) = x*_{ind(z)} (*) z and the support-size formula.

The generator stores m = k^d_tilde clean images, one per block of the seed
partition. A seed selects the image of its block and is then spliced back into
it, so the non-spliced part of G(nu) takes at most m values while the codes
recovered by the encoder are exactly the seeds.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from . import noise_channel
from .distributions import (
    DimensionSpec,
    ImageSource,
    read_image_file,
    sample_seeds,
    write_image_file,
)
from .errors import ShapeMismatchError, SupportOverflowError
from .partition import BlockPartition, block_indices, block_tuples

logger = logging.getLogger(__name__)

PARTITION_FILE = "partition.json"
SPEC_FILE = "spec.json"
MEMORY_FILE = "memorized.bin"


@dataclass(frozen=True)
class TheoremBudget:
    """Discriminator capacity and regularity constants entering the support size."""

    p: int
    Delta: float = 1.0
    L: float = 1.0
    L_phi: float = 1.0
    epsilon: float = 0.1

    def __post_init__(self) -> None:
        if self.p < 1:
            raise ValueError(f"Capacity p must be a positive integer, got {self.p}")
        if self.Delta < 1:
            raise ValueError(f"Delta must be at least 1, got {self.Delta}")
        for name in ("L", "L_phi", "epsilon"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive finite number, got {value}")


def theorem_support_size(budget: TheoremBudget) -> int:
    """
    m = p Delta^2 log^2(p Delta L L_phi / epsilon) / epsilon^2, natural log,
    rounded up and clamped to at least 1.

    Raises:
        SupportOverflowError: If the value is not finite
    """
    log_term = math.log(budget.p * budget.Delta * budget.L * budget.L_phi / budget.epsilon)
    value = budget.p * budget.Delta**2 * log_term**2 / budget.epsilon**2
    if not math.isfinite(value):
        raise SupportOverflowError(f"Support size overflows for budget {budget}")
    # Absorb rounding noise when the exact value is an integer.
    return max(1, math.ceil(value - 1e-9 * value))


def smallest_k_for_support(m_target: int, d_tilde: int) -> int:
    """Smallest k with k^d_tilde >= m_target."""
    if m_target < 1:
        raise ValueError("m_target must be positive")
    k = max(1, int(math.floor(m_target ** (1.0 / d_tilde))))
    while k**d_tilde < m_target:
        k += 1
    while k > 1 and (k - 1) ** d_tilde >= m_target:
        k -= 1
    return k


@dataclass(frozen=True, eq=False)
class MemorizingGenerator:
    """Partition plus the m memorized clean images x*_1..x*_m (row t-1 = block t)."""

    partition: BlockPartition
    memorized: NDArray[np.float64]
    spec: DimensionSpec

    def __post_init__(self) -> None:
        if self.partition.d_tilde != self.spec.d_tilde:
            raise ValueError("Partition and spec disagree on d_tilde")
        if self.partition.sigma != self.spec.sigma:
            raise ValueError("Partition and spec disagree on sigma")
        if self.memorized.shape != (self.partition.m, self.spec.d):
            raise ShapeMismatchError(
                f"Expected {self.partition.m} memorized images of dimension {self.spec.d}, "
                f"got array of shape {self.memorized.shape}"
            )
        if not np.all(np.isfinite(self.memorized)):
            raise ValueError("Memorized images must be finite")

    @property
    def m(self) -> int:
        return self.partition.m


def build_generator(
    rng: np.random.Generator,
    partition: BlockPartition,
    source: ImageSource,
    spec: DimensionSpec,
) -> MemorizingGenerator:
    """Draw m independent clean images from mu_tilde and memorize them."""
    memorized = source.sample(rng, partition.m)
    logger.debug("Built generator with m=%d memorized images", partition.m)
    return MemorizingGenerator(partition=partition, memorized=memorized, spec=spec)


def seed_blocks(gen: MemorizingGenerator, seeds: NDArray[np.float64]) -> NDArray[np.int64]:
    """ind(z) in [1, m] for every seed row."""
    return block_indices(block_tuples(seeds, gen.partition), gen.partition)


def generate_batch(gen: MemorizingGenerator, seeds: NDArray[np.float64]) -> NDArray[np.float64]:
    """G applied row-wise to seeds of shape (n, d_tilde)."""
    seeds = np.asarray(seeds, dtype=np.float64)
    chosen = gen.memorized[seed_blocks(gen, seeds) - 1]
    return noise_channel.splice_batch(chosen, seeds, gen.spec)


def generate(gen: MemorizingGenerator, z: NDArray[np.float64]) -> NDArray[np.float64]:
    """G(z) = x*_{ind(z)} (*) z."""
    return generate_batch(gen, np.asarray(z, dtype=np.float64)[None, :])[0]


def support_census(gen: MemorizingGenerator, n_samples: int, rng: np.random.Generator) -> int:
    """
    Count distinct non-spliced output patterns over n_samples draws of G(nu).

    The count can never exceed m.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    seeds = sample_seeds(rng, gen.spec, n_samples)
    outputs = generate_batch(gen, seeds)[:, noise_channel.clean_index(gen.spec)]
    return int(np.unique(outputs, axis=0).shape[0])


def save_generator(gen: MemorizingGenerator, directory: Path) -> Path:
    """Write partition JSON, spec JSON and the memorized images (flat binary)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    gen.partition.save(directory / PARTITION_FILE)
    (directory / SPEC_FILE).write_text(json.dumps(gen.spec.to_dict(), indent=2), encoding="utf-8")
    write_image_file(directory / MEMORY_FILE, gen.memorized)
    return directory


def load_generator(directory: Path) -> MemorizingGenerator:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Generator directory not found: {directory}")
    spec_path = directory / SPEC_FILE
    if not spec_path.exists():
        raise FileNotFoundError(f"Generator spec not found: {spec_path}")
    spec = DimensionSpec.from_dict(json.loads(spec_path.read_text(encoding="utf-8")))
    partition = BlockPartition.load(directory / PARTITION_FILE)
    memorized = read_image_file(directory / MEMORY_FILE, expected_d=spec.d)
    return MemorizingGenerator(partition=partition, memorized=memorized, spec=spec)

