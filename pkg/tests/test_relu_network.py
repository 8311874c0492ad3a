"""
Tests for sparse layered ReLU networks.
"""

import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import sparse

sys.path.insert(0, str(Path(__file__).parent.parent))

from memgan.errors import ShapeMismatchError
from memgan.relu_network import (
    Activation,
    ReluNetwork,
    SparseLayer,
    describe,
    forward,
    fuse_linear,
    nonzero_weights,
    with_carry,
)


def _random_layer(rng, rows, cols, activation=Activation.RELU, density=0.5):
    matrix = sparse.random(rows, cols, density=density, random_state=rng, data_rvs=rng.standard_normal)
    return SparseLayer.from_matrix(matrix, rng.normal(size=rows), activation)


class TestSparseLayer:
    """Tests for layer construction and evaluation."""

    def test_relu_unit(self):
        """Test a single ReLU unit clips negative input."""
        layer = SparseLayer.from_triplets(1, 1, [(0, 0, 1.0)])
        net = ReluNetwork.from_layers([layer])
        assert forward(net, np.array([-5.0]))[0] == 0.0
        assert forward(net, np.array([2.0]))[0] == 2.0

    def test_duplicate_triplets_rejected(self):
        """Test two weights on the same (row, col) edge are rejected."""
        with pytest.raises(ValueError, match="Duplicate"):
            SparseLayer.from_triplets(2, 2, [(0, 1, 1.0), (0, 1, 2.0)])

    def test_out_of_range_index_rejected(self):
        """Test a triplet outside the layer shape is rejected."""
        with pytest.raises(ValueError):
            SparseLayer.from_triplets(2, 2, [(2, 0, 1.0)])

    def test_non_finite_weight_rejected(self):
        """Test NaN and inf weights are rejected."""
        with pytest.raises(ValueError, match="finite"):
            SparseLayer.from_triplets(1, 1, [(0, 0, float("nan"))])
        with pytest.raises(ValueError, match="finite"):
            SparseLayer.from_triplets(1, 1, [(0, 0, 1.0)], bias=[float("inf")])

    def test_sparse_and_dense_paths_agree(self):
        """Test mostly-zero activations give the same result as dense ones."""
        rng = np.random.default_rng(0)
        layer = _random_layer(rng, 30, 200, Activation.IDENTITY)
        inputs = np.zeros((50, 200))
        inputs[np.arange(50), rng.integers(0, 200, size=50)] = 1.0

        dense = np.asarray(layer.matrix.toarray() @ inputs.T).T + layer.bias
        assert np.allclose(layer.apply(inputs), dense, atol=1e-12)


class TestReluNetwork:
    """Tests for network composition and serialization."""

    def test_identity_network(self):
        """Test the identity network returns its input."""
        x = np.random.default_rng(1).normal(size=(10, 4))
        assert np.array_equal(forward(ReluNetwork.identity(4), x), x)

    def test_empty_network_has_no_weights(self):
        """Test a network with no layers counts zero weights."""
        net = ReluNetwork(input_dim=3, output_dim=3)
        assert nonzero_weights(net) == 0
        assert np.array_equal(forward(net, np.ones(3)), np.ones(3))

    def test_layer_chaining_checked(self):
        """Test mismatched consecutive layers raise ShapeMismatchError."""
        first = SparseLayer.from_triplets(3, 2, [(0, 0, 1.0)])
        second = SparseLayer.from_triplets(1, 4, [(0, 0, 1.0)])
        with pytest.raises(ShapeMismatchError):
            ReluNetwork.from_layers([first, second])

    def test_then_checks_widths(self):
        """Test composing networks of incompatible widths."""
        with pytest.raises(ShapeMismatchError):
            ReluNetwork.identity(3).then(ReluNetwork.identity(4))

    def test_forward_input_width_checked(self):
        """Test forward rejects inputs of the wrong width."""
        with pytest.raises(ShapeMismatchError):
            forward(ReluNetwork.identity(3), np.ones(4))

    def test_save_load_bitwise(self, tmp_path):
        """Test a reloaded network evaluates bitwise identically."""
        rng = np.random.default_rng(2)
        net = ReluNetwork.from_layers(
            [_random_layer(rng, 12, 6), _random_layer(rng, 3, 12, Activation.IDENTITY)]
        )
        loaded = ReluNetwork.load(net.save(tmp_path / "net.json"))
        inputs = rng.normal(size=(100, 6))

        assert np.array_equal(forward(loaded, inputs), forward(net, inputs))
        assert describe(loaded) == describe(net)

    def test_load_missing_file(self, tmp_path):
        """Test loading a missing file raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            ReluNetwork.load(tmp_path / "missing.json")


class TestLayerAlgebra:
    """Tests for fuse_linear and with_carry."""

    def test_fuse_matches_composition(self):
        """Test a fused layer computes the same map as the two layers."""
        rng = np.random.default_rng(3)
        first = _random_layer(rng, 8, 5, Activation.IDENTITY)
        second = _random_layer(rng, 4, 8)
        inputs = rng.normal(size=(200, 5))

        two = forward(ReluNetwork.from_layers([first, second]), inputs)
        fused = forward(ReluNetwork.from_layers([fuse_linear(first, second)]), inputs)
        assert np.allclose(fused, two, atol=1e-12)

    def test_fuse_requires_identity_first(self):
        """Test a ReLU layer cannot be fused forward."""
        rng = np.random.default_rng(4)
        with pytest.raises(ValueError, match="identity"):
            fuse_linear(_random_layer(rng, 3, 3), _random_layer(rng, 3, 3))

    def test_carry_passes_values_through(self):
        """Test carried non-negative values are unchanged by a ReLU layer."""
        rng = np.random.default_rng(5)
        layer = with_carry(_random_layer(rng, 4, 3), 2)
        inputs = np.abs(rng.normal(size=(20, 5)))
        outputs = forward(ReluNetwork.from_layers([layer]), inputs)

        assert layer.rows == 6 and layer.cols == 5
        assert np.array_equal(outputs[:, 4:], inputs[:, 3:])
