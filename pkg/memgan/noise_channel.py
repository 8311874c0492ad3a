"""
Splice operator and the noise-extracting encoder.

Positions are 1-based in the public interface: the spliced positions are
j * floor(d / d_tilde) for j = 1..d_tilde. Array code uses the 0-based
`spliced_index` helper.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, List

import numpy as np
from numpy.typing import NDArray

from .errors import ShapeMismatchError
from .relu_network import Activation, ReluNetwork, SparseLayer

if TYPE_CHECKING:
    from .distributions import DimensionSpec


def spliced_positions(spec: "DimensionSpec") -> List[int]:
    """
    Return the 1-based positions overwritten by the seed.

    Only j = 1..d_tilde are used, so when d_tilde does not divide d the trailing
    coordinates are left untouched (d=7, d_tilde=2 -> [3, 6]).
    """
    stride = spec.d // spec.d_tilde
    return [j * stride for j in range(1, spec.d_tilde + 1)]


def spliced_index(spec: "DimensionSpec") -> NDArray[np.int64]:
    """0-based array form of spliced_positions."""
    return np.asarray(spliced_positions(spec), dtype=np.int64) - 1


def clean_index(spec: "DimensionSpec") -> NDArray[np.int64]:
    """0-based indices of the coordinates splice never touches."""
    mask = np.ones(spec.d, dtype=bool)
    mask[spliced_index(spec)] = False
    return np.flatnonzero(mask)


def _check_width(array: NDArray[np.float64], width: int, name: str) -> None:
    if array.shape[-1] != width:
        raise ShapeMismatchError(f"{name} has width {array.shape[-1]}, expected {width}")


def splice_batch(
    clean: NDArray[np.float64], seeds: NDArray[np.float64], spec: "DimensionSpec"
) -> NDArray[np.float64]:
    """Row-wise splice of seeds (n, d_tilde) into images (n, d)."""
    clean = np.asarray(clean, dtype=np.float64)
    seeds = np.asarray(seeds, dtype=np.float64)
    _check_width(clean, spec.d, "Image")
    _check_width(seeds, spec.d_tilde, "Seed")
    if clean.shape[:-1] != seeds.shape[:-1]:
        raise ShapeMismatchError(
            f"Image batch {clean.shape[:-1]} and seed batch {seeds.shape[:-1]} differ"
        )
    noised = clean.copy()
    noised[..., spliced_index(spec)] = seeds
    return noised


def splice(
    x_tilde: NDArray[np.float64], z: NDArray[np.float64], spec: "DimensionSpec"
) -> NDArray[np.float64]:
    """x = x_tilde (*) z: copy of x_tilde with the spliced positions set to z."""
    return splice_batch(x_tilde, z, spec)


def encode_batch(images: NDArray[np.float64], spec: "DimensionSpec") -> NDArray[np.float64]:
    """Extract the spliced coordinates of every row."""
    images = np.asarray(images, dtype=np.float64)
    _check_width(images, spec.d, "Image")
    return images[..., spliced_index(spec)].copy()


def encode(x: NDArray[np.float64], spec: "DimensionSpec") -> NDArray[np.float64]:
    """E(x): the code is the noise read back from the spliced positions."""
    return encode_batch(x, spec)


def encoder_as_network(spec: "DimensionSpec") -> ReluNetwork:
    """
    The encoder as a one-layer linear network: output i is wired to input
    position i * floor(d / d_tilde) by a single edge of weight 1.
    """
    layer = SparseLayer.from_triplets(
        rows=spec.d_tilde,
        cols=spec.d,
        triplets=[(i, int(col), 1.0) for i, col in enumerate(spliced_index(spec))],
        activation=Activation.IDENTITY,
    )
    return ReluNetwork(input_dim=spec.d, output_dim=spec.d_tilde, layers=(layer,))
