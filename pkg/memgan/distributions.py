"""
Seed, clean-image and noised-image distributions.

The seed distribution nu is a spherical zero-mean Gaussian over R^d_tilde. The
clean image distribution mu_tilde is either a synthetic smooth random-cosine
field or a user-supplied file of vectors. The noised image distribution mu
splices an independent seed into every clean image.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from . import noise_channel
from .errors import ShapeMismatchError, SourceExhaustedError

logger = logging.getLogger(__name__)

SeedVector = NDArray[np.float64]
ImageVector = NDArray[np.float64]

SYNTHETIC = "synthetic"
FILE_BACKED = "file-backed"


@dataclass(frozen=True)
class DimensionSpec:
    """Image dimension d, code dimension d_tilde and seed standard deviation."""

    d: int
    d_tilde: int
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if int(self.d) != self.d or int(self.d_tilde) != self.d_tilde:
            raise ValueError("Dimensions must be integers")
        if self.d_tilde < 1:
            raise ValueError(f"d_tilde must be positive, got {self.d_tilde}")
        if self.d_tilde >= self.d:
            raise ValueError(
                f"d_tilde must be strictly smaller than d (d={self.d}, d_tilde={self.d_tilde})"
            )
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be a positive finite number, got {self.sigma}")

    @property
    def stride(self) -> int:
        """Spacing floor(d / d_tilde) between spliced coordinates."""
        return self.d // self.d_tilde

    def to_dict(self) -> dict:
        return {"d": self.d, "d_tilde": self.d_tilde, "sigma": self.sigma}

    @classmethod
    def from_dict(cls, data: dict) -> "DimensionSpec":
        return cls(d=int(data["d"]), d_tilde=int(data["d_tilde"]), sigma=float(data["sigma"]))


@dataclass(frozen=True)
class CleanImageModel:
    """Parameters of the clean image distribution mu_tilde."""

    basis_count: int = 6
    frequency_cap: int = 4
    amplitude: float = 1.0
    mode: str = SYNTHETIC
    path: Optional[str] = None

    def __post_init__(self) -> None:
        if self.basis_count < 0:
            raise ValueError("basis_count cannot be negative")
        if self.frequency_cap < 1:
            raise ValueError("frequency_cap must be at least 1")
        if not (math.isfinite(self.amplitude) and self.amplitude > 0):
            raise ValueError("amplitude must be a positive finite number")
        if self.mode not in (SYNTHETIC, FILE_BACKED):
            raise ValueError(f"Unknown image model mode: {self.mode!r}")
        if self.mode == FILE_BACKED and not self.path:
            raise ValueError("File-backed image model requires a path")


class ImageSource:
    """Draws clean images; subclasses decide where they come from."""

    def __init__(self, model: CleanImageModel, spec: DimensionSpec) -> None:
        self.model = model
        self.spec = spec

    def sample(self, rng: np.random.Generator, n: int) -> NDArray[np.float64]:
        raise NotImplementedError

    def fork(self, parts: int, records_each: int) -> List["ImageSource"]:
        """Sources for concurrent tasks; a source without read state serves them all."""
        return [self] * parts


class SyntheticImageSource(ImageSource):
    """Sum of random low-frequency cosine profiles, clamped to the amplitude."""

    def sample(self, rng: np.random.Generator, n: int) -> NDArray[np.float64]:
        d = self.spec.d
        basis = self.model.basis_count
        if basis == 0:
            return np.zeros((n, d))

        frequencies = rng.integers(1, self.model.frequency_cap + 1, size=(n, basis))
        phases = rng.uniform(0.0, 2.0 * math.pi, size=(n, basis))
        scale = self.model.amplitude / math.sqrt(basis)
        coefficients = rng.normal(0.0, scale, size=(n, basis))

        grid = (np.arange(d) + 0.5) / d
        profiles = np.cos(
            math.pi * frequencies[:, :, None] * grid[None, None, :] + phases[:, :, None]
        )
        images = np.einsum("nb,nbd->nd", coefficients, profiles)
        return np.clip(images, -self.model.amplitude, self.model.amplitude)


class FileImageSource(ImageSource):
    """
    Reads records sequentially from a flat little-endian float64 file.

    The file sits next to a JSON sidecar ``<path>.json`` holding
    ``{"count": N, "d": d}``. The read cursor is the only mutable state, so a
    source must not be shared between concurrent tasks; use fork to give each
    task a reader of its own.
    """

    def __init__(
        self,
        model: CleanImageModel,
        spec: DimensionSpec,
        images: Optional[NDArray[np.float64]] = None,
    ) -> None:
        super().__init__(model, spec)
        if images is None:
            images = read_image_file(Path(model.path or ""), expected_d=spec.d)
        self.images = images
        self.cursor = 0

    @property
    def remaining(self) -> int:
        return self.images.shape[0] - self.cursor

    def sample(self, rng: np.random.Generator, n: int) -> NDArray[np.float64]:
        if n > self.remaining:
            raise SourceExhaustedError(
                f"Image file {self.model.path} has {self.remaining} records left, {n} requested"
            )
        batch = self.images[self.cursor : self.cursor + n].copy()
        self.cursor += n
        return batch

    def fork(self, parts: int, records_each: int) -> List["ImageSource"]:
        """
        Readers over consecutive disjoint runs of records_each records, one per
        task in task order. This source advances past all of them.

        Raises:
            ValueError: If parts or records_each is negative
            SourceExhaustedError: If fewer than parts * records_each records remain
        """
        if parts < 0 or records_each < 0:
            raise ValueError("parts and records_each cannot be negative")
        total = parts * records_each
        if total > self.remaining:
            raise SourceExhaustedError(
                f"Image file {self.model.path} has {self.remaining} records left, "
                f"{parts} tasks need {records_each} each"
            )
        start = self.cursor
        self.cursor += total
        return [
            FileImageSource(
                self.model,
                self.spec,
                self.images[start + i * records_each : start + (i + 1) * records_each],
            )
            for i in range(parts)
        ]


def open_image_source(model: CleanImageModel, spec: DimensionSpec) -> ImageSource:
    """Create the image source matching the model's mode."""
    if model.mode == FILE_BACKED:
        return FileImageSource(model, spec)
    return SyntheticImageSource(model, spec)


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_image_file(path: Path, images: NDArray[np.float64]) -> Path:
    """Write images (N x d) as row-major little-endian float64 plus sidecar."""
    images = np.ascontiguousarray(images, dtype="<f8")
    if images.ndim != 2:
        raise ShapeMismatchError("Images must be a 2-D array (count x d)")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    images.tofile(path)
    _sidecar(path).write_text(
        json.dumps({"count": int(images.shape[0]), "d": int(images.shape[1])}), encoding="utf-8"
    )
    return path


def read_image_file(path: Path, expected_d: Optional[int] = None) -> NDArray[np.float64]:
    """
    Load a flat binary image file.

    Raises:
        FileNotFoundError: If the data file or its sidecar is missing
        ShapeMismatchError: If the record length differs from expected_d or the
            byte size does not match the sidecar
    """
    path = Path(path)
    sidecar = _sidecar(path)
    if not path.exists():
        raise FileNotFoundError(f"Image file not found: {path}")
    if not sidecar.exists():
        raise FileNotFoundError(f"Image sidecar not found: {sidecar}")

    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    count, d = int(meta["count"]), int(meta["d"])
    if expected_d is not None and d != expected_d:
        raise ShapeMismatchError(f"Image file records have length {d}, expected {expected_d}")

    data = np.fromfile(path, dtype="<f8")
    if data.size != count * d:
        raise ShapeMismatchError(
            f"Image file holds {data.size} values, sidecar declares {count} x {d}"
        )
    return data.reshape(count, d).astype(np.float64)


def sample_seeds(rng: np.random.Generator, spec: DimensionSpec, n: int) -> NDArray[np.float64]:
    """Draw n i.i.d. seeds from nu = N(0, sigma^2 I), shape (n, d_tilde)."""
    return rng.normal(0.0, spec.sigma, size=(n, spec.d_tilde))


def sample_seed(rng: np.random.Generator, spec: DimensionSpec) -> SeedVector:
    """Draw a single seed from nu."""
    return sample_seeds(rng, spec, 1)[0]


def sample_clean_image(rng: np.random.Generator, source: ImageSource) -> ImageVector:
    """Draw one clean image from mu_tilde."""
    return source.sample(rng, 1)[0]


def sample_noised_images(
    rng: np.random.Generator, source: ImageSource, spec: DimensionSpec, n: int
) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Draw n noised images x = x_tilde (*) z with x_tilde and z independent.

    Returns:
        Tuple (X, Z). Z is returned for test oracles only; the adversary sees
        codes exclusively through the encoder.
    """
    clean = source.sample(rng, n)
    seeds = sample_seeds(rng, spec, n)
    return noise_channel.splice_batch(clean, seeds, spec), seeds


def sample_noised_image(
    rng: np.random.Generator, source: ImageSource, spec: DimensionSpec
) -> Tuple[ImageVector, SeedVector]:
    """Single-sample form of sample_noised_images."""
    images, seeds = sample_noised_images(rng, source, spec, 1)
    return images[0], seeds[0]
