"""
Sparse layered ReLU networks.

A network is an ordered list of layers, each an affine map stored as
(row, col, value) triplets followed by a ReLU or identity activation. Inference
uses scipy CSR matrices; activations that are mostly zeros (one-hot block
indicators) are multiplied in sparse form as well.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy import sparse

from .errors import ShapeMismatchError

# Activations below this density are multiplied as sparse matrices.
SPARSE_ACTIVATION_DENSITY = 0.1

Triplet = Tuple[int, int, float]


class Activation(str, Enum):
    RELU = "relu"
    IDENTITY = "identity"


@dataclass(frozen=True, eq=False)
class SparseLayer:
    """One affine layer y = act(W a + b) with W held as sparse triplets."""

    rows: int
    cols: int
    row_index: NDArray[np.int64]
    col_index: NDArray[np.int64]
    values: NDArray[np.float64]
    bias: NDArray[np.float64]
    activation: Activation = Activation.RELU

    def __post_init__(self) -> None:
        if self.rows < 0 or self.cols < 0:
            raise ValueError("Layer dimensions cannot be negative")
        if not (len(self.row_index) == len(self.col_index) == len(self.values)):
            raise ValueError("Triplet arrays must have equal length")
        if self.bias.shape != (self.rows,):
            raise ShapeMismatchError(f"Bias has shape {self.bias.shape}, expected ({self.rows},)")
        if len(self.values):
            if self.row_index.min() < 0 or self.row_index.max() >= self.rows:
                raise ValueError("Triplet row index out of range")
            if self.col_index.min() < 0 or self.col_index.max() >= self.cols:
                raise ValueError("Triplet column index out of range")
            keys = self.row_index * max(self.cols, 1) + self.col_index
            if np.unique(keys).size != keys.size:
                raise ValueError("Duplicate (row, col) pairs in layer triplets")
        if not np.all(np.isfinite(self.values)) or not np.all(np.isfinite(self.bias)):
            raise ValueError("Layer weights and biases must be finite")

    @classmethod
    def from_triplets(
        cls,
        rows: int,
        cols: int,
        triplets: Iterable[Triplet],
        bias: Optional[Sequence[float]] = None,
        activation: Activation = Activation.RELU,
    ) -> "SparseLayer":
        triplets = list(triplets)
        if triplets:
            r, c, v = zip(*triplets)
        else:
            r, c, v = (), (), ()
        return cls(
            rows=rows,
            cols=cols,
            row_index=np.asarray(r, dtype=np.int64),
            col_index=np.asarray(c, dtype=np.int64),
            values=np.asarray(v, dtype=np.float64),
            bias=np.zeros(rows) if bias is None else np.asarray(bias, dtype=np.float64),
            activation=Activation(activation),
        )

    @classmethod
    def from_matrix(
        cls, matrix: sparse.spmatrix, bias: NDArray[np.float64], activation: Activation
    ) -> "SparseLayer":
        coo = sparse.coo_matrix(matrix)
        coo.sum_duplicates()
        keep = coo.data != 0
        return cls(
            rows=coo.shape[0],
            cols=coo.shape[1],
            row_index=coo.row[keep].astype(np.int64),
            col_index=coo.col[keep].astype(np.int64),
            values=coo.data[keep].astype(np.float64),
            bias=np.asarray(bias, dtype=np.float64),
            activation=Activation(activation),
        )

    @cached_property
    def matrix(self) -> sparse.csr_matrix:
        return sparse.csr_matrix(
            (self.values, (self.row_index, self.col_index)), shape=(self.rows, self.cols)
        )

    @property
    def nonzero_weights(self) -> int:
        return int(np.count_nonzero(self.values))

    @property
    def nonzero_biases(self) -> int:
        return int(np.count_nonzero(self.bias))

    def apply(self, activations: NDArray[np.float64]) -> NDArray[np.float64]:
        """Evaluate the layer on a batch of shape (n, cols)."""
        if activations.size and np.count_nonzero(activations) < (
            SPARSE_ACTIVATION_DENSITY * activations.size
        ):
            pre = (sparse.csr_matrix(activations) @ self.matrix.T).toarray()
        else:
            pre = np.asarray(self.matrix @ activations.T).T
        pre = pre + self.bias
        if self.activation is Activation.RELU:
            return np.maximum(pre, 0.0)
        return pre

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "triplets": [
                [int(r), int(c), float(v)]
                for r, c, v in zip(self.row_index, self.col_index, self.values)
            ],
            "bias": [float(b) for b in self.bias],
            "activation": self.activation.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SparseLayer":
        return cls.from_triplets(
            rows=int(data["rows"]),
            cols=int(data["cols"]),
            triplets=[(int(r), int(c), float(v)) for r, c, v in data["triplets"]],
            bias=[float(b) for b in data["bias"]],
            activation=Activation(data["activation"]),
        )


@dataclass(frozen=True, eq=False)
class ReluNetwork:
    """Layered sparse computation graph from input_dim to output_dim."""

    input_dim: int
    output_dim: int
    layers: Tuple[SparseLayer, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        width = self.input_dim
        for position, layer in enumerate(self.layers):
            if layer.cols != width:
                raise ShapeMismatchError(
                    f"Layer {position} expects {layer.cols} inputs, previous width is {width}"
                )
            width = layer.rows
        if width != self.output_dim:
            raise ShapeMismatchError(
                f"Network ends with width {width}, declared output_dim is {self.output_dim}"
            )

    @classmethod
    def from_layers(cls, layers: Sequence[SparseLayer]) -> "ReluNetwork":
        if not layers:
            raise ValueError("Cannot infer dimensions of an empty layer list")
        return cls(input_dim=layers[0].cols, output_dim=layers[-1].rows, layers=tuple(layers))

    @classmethod
    def identity(cls, dim: int) -> "ReluNetwork":
        layer = SparseLayer.from_triplets(
            dim, dim, [(i, i, 1.0) for i in range(dim)], activation=Activation.IDENTITY
        )
        return cls(input_dim=dim, output_dim=dim, layers=(layer,))

    def then(self, other: "ReluNetwork") -> "ReluNetwork":
        """Sequential composition: feed this network's output into other."""
        if other.input_dim != self.output_dim:
            raise ShapeMismatchError(
                f"Cannot chain output width {self.output_dim} into input width {other.input_dim}"
            )
        return ReluNetwork(self.input_dim, other.output_dim, self.layers + other.layers)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReluNetwork":
        return cls(
            input_dim=int(data["input_dim"]),
            output_dim=int(data["output_dim"]),
            layers=tuple(SparseLayer.from_dict(layer) for layer in data["layers"]),
        )

    def save(self, path: Path) -> Path:
        """Write the network as JSON; floats use shortest round-trip repr."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict()), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Path) -> "ReluNetwork":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Network file not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


def forward(net: ReluNetwork, inputs: NDArray[np.float64]) -> NDArray[np.float64]:
    """
    Evaluate the network on one input vector or a batch of row vectors.

    Raises:
        ShapeMismatchError: If the input width differs from net.input_dim
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    single = inputs.ndim == 1
    batch = inputs[None, :] if single else inputs
    if batch.ndim != 2 or batch.shape[1] != net.input_dim:
        raise ShapeMismatchError(
            f"Network expects inputs of width {net.input_dim}, got shape {inputs.shape}"
        )
    activations = batch
    for layer in net.layers:
        activations = layer.apply(activations)
    return activations[0] if single else activations


def nonzero_weights(net: ReluNetwork) -> int:
    """Count non-zero weight triplets across all layers (biases excluded)."""
    return sum(layer.nonzero_weights for layer in net.layers)


def nonzero_biases(net: ReluNetwork) -> int:
    return sum(layer.nonzero_biases for layer in net.layers)


def fuse_linear(first: SparseLayer, second: SparseLayer) -> SparseLayer:
    """
    Compose an identity-activation layer with the layer that follows it.

    act2(W2 (W1 a + b1) + b2) = act2((W2 W1) a + (W2 b1 + b2)).
    """
    if first.activation is not Activation.IDENTITY:
        raise ValueError("Only an identity-activation layer can be fused forward")
    if second.cols != first.rows:
        raise ShapeMismatchError("Layers to fuse do not chain")
    matrix = second.matrix @ first.matrix
    bias = second.matrix @ first.bias + second.bias
    return SparseLayer.from_matrix(matrix, bias, second.activation)


def with_carry(layer: SparseLayer, carry: int) -> SparseLayer:
    """
    Extend a layer with `carry` pass-through units appended after its inputs
    and outputs (weight 1, bias 0).

    Values carried through a ReLU layer must be non-negative; callers carry
    positive and negative parts separately.
    """
    rows = np.concatenate([layer.row_index, layer.rows + np.arange(carry)])
    cols = np.concatenate([layer.col_index, layer.cols + np.arange(carry)])
    values = np.concatenate([layer.values, np.ones(carry)])
    return SparseLayer(
        rows=layer.rows + carry,
        cols=layer.cols + carry,
        row_index=rows.astype(np.int64),
        col_index=cols.astype(np.int64),
        values=values,
        bias=np.concatenate([layer.bias, np.zeros(carry)]),
        activation=layer.activation,
    )


def describe(net: ReluNetwork) -> List[dict]:
    """Per-layer shape and weight counts, used in compile reports."""
    return [
        {
            "rows": layer.rows,
            "cols": layer.cols,
            "activation": layer.activation.value,
            "nonzero_weights": layer.nonzero_weights,
            "nonzero_biases": layer.nonzero_biases,
        }
        for layer in net.layers
    ]
