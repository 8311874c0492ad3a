"""
Tests for the equal-measure seed partition.
"""

import itertools
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from memgan.errors import PrecisionError, SupportOverflowError
from memgan.partition import (
    BlockPartition,
    block_index,
    block_indices,
    block_tuple,
    block_tuples,
    compute_thresholds,
    decode_block,
    half_normal_cdf,
    sample_within_block,
    sample_within_blocks,
    verify_equipartition,
)


class TestThresholds:
    """Tests for compute_thresholds."""

    def test_single_block(self):
        """Test k=1 yields no thresholds and m=1."""
        part = compute_thresholds(1, 1.0)
        assert part.thresholds == ()
        assert part.m == 1

    def test_median_of_half_normal(self):
        """Test k=2 gives the half-normal median."""
        part = compute_thresholds(2, 1.0)
        assert part.thresholds[0] == pytest.approx(0.674490, abs=1e-6)

    def test_quartiles(self):
        """Test k=4 thresholds."""
        part = compute_thresholds(4, 1.0)
        assert part.thresholds == pytest.approx((0.318639, 0.674490, 1.150349), abs=1e-6)

    def test_thresholds_scale_with_sigma(self):
        """Test thresholds are proportional to sigma."""
        unit = compute_thresholds(8, 1.0)
        scaled = compute_thresholds(8, 2.5)
        assert np.allclose(scaled.taus, 2.5 * unit.taus, rtol=1e-10)

    def test_cdf_at_thresholds(self):
        """Test P(|Z| <= tau_i) = i/k to 1e-10."""
        part = compute_thresholds(16, 1.3)
        levels = half_normal_cdf(part.taus, 1.3)
        assert np.allclose(levels, np.arange(1, 16) / 16, atol=1e-10)

    def test_invalid_k(self):
        """Test k=0 is rejected."""
        with pytest.raises(ValueError):
            compute_thresholds(0, 1.0)

    def test_support_overflow(self):
        """Test k^d_tilde above the maximum support raises SupportOverflowError."""
        with pytest.raises(SupportOverflowError):
            compute_thresholds(4, 1.0, d_tilde=11)

    def test_unequal_blocks_rejected(self):
        """Test a hand-built partition with unequal blocks raises PrecisionError."""
        with pytest.raises(PrecisionError):
            BlockPartition(k=2, d_tilde=1, sigma=1.0, thresholds=(0.7,))

    def test_save_load(self, tmp_path):
        """Test partition JSON round trip."""
        part = compute_thresholds(4, 1.0, d_tilde=3)
        assert BlockPartition.load(part.save(tmp_path / "part.json")) == part


class TestBlockIndex:
    """Tests for block tuples and mixed-radix indices."""

    def setup_method(self):
        """Set up k=2, d_tilde=2 partition."""
        self.part = compute_thresholds(2, 1.0, d_tilde=2)

    def test_block_tuple_example(self):
        """Test z = (0.1, -1.0) falls in block (1, 2)."""
        assert block_tuple(np.array([0.1, -1.0]), self.part) == (1, 2)

    def test_zero_seed(self):
        """Test z = 0 falls in the first interval of every coordinate."""
        assert block_tuple(np.zeros(2), self.part) == (1, 1)

    def test_threshold_belongs_to_upper_interval(self):
        """Test |z_j| = tau exactly is assigned to the upper interval."""
        tau = self.part.thresholds[0]
        assert block_tuple(np.array([tau, -tau]), self.part) == (2, 2)

    def test_index_examples(self):
        """Test mixed-radix indices for k=2 and k=3."""
        assert block_index((1, 1), self.part) == 1
        assert block_index((2, 1), self.part) == 2
        assert block_index((1, 2), self.part) == 3
        assert block_index((2, 2), self.part) == 4
        assert block_index((3, 2), compute_thresholds(3, 1.0, d_tilde=2)) == 6

    def test_index_is_bijection(self):
        """Test indices cover 1..m exactly once and decode back."""
        part = compute_thresholds(3, 1.0, d_tilde=3)
        tuples = np.array(list(itertools.product(range(1, 4), repeat=3)))
        indices = block_indices(tuples, part)

        assert sorted(indices.tolist()) == list(range(1, part.m + 1))
        for tup, index in zip(tuples, indices):
            assert decode_block(int(index), part) == tuple(tup)

    def test_scale_equivariance(self):
        """Test block_tuple(z; sigma) equals block_tuple(c z; c sigma)."""
        seeds = np.random.default_rng(12).normal(size=(10_000, 3))
        for k in (2, 5, 8):
            base = compute_thresholds(k, 1.0, d_tilde=3)
            expected = block_tuples(seeds, base)
            for c in (0.25, 2.5, 40.0):
                scaled = compute_thresholds(k, c, d_tilde=3)
                assert np.array_equal(block_tuples(c * seeds, scaled), expected), (k, c)

    def test_out_of_range_tuple_rejected(self):
        """Test tuple entries outside [1, k] are rejected."""
        with pytest.raises(ValueError):
            block_index((0, 1), self.part)
        with pytest.raises(ValueError):
            block_index((3, 1), self.part)


class TestSampleWithinBlock:
    """Tests for conditional sampling inside a block."""

    def test_single_block_example(self):
        """Test k=2 block 1 yields |z| < tau."""
        part = compute_thresholds(2, 1.0)
        rng = np.random.default_rng(0)
        for _ in range(100):
            z = sample_within_block(rng, 1, part)
            assert abs(z[0]) < part.thresholds[0]

    def test_samples_decode_to_their_block(self):
        """Test 10^5 conditional samples all map back to their block."""
        part = compute_thresholds(4, 1.0, d_tilde=3)
        rng = np.random.default_rng(1)
        blocks = rng.integers(1, part.m + 1, size=100_000)
        seeds = sample_within_blocks(rng, blocks, part)

        assert np.array_equal(block_indices(block_tuples(seeds, part), part), blocks)

    def test_uniform_blocks_reproduce_seed_distribution(self):
        """Test pooling uniformly chosen blocks recovers N(0, sigma^2) moments."""
        part = compute_thresholds(4, 1.0, d_tilde=2)
        rng = np.random.default_rng(2)
        seeds = sample_within_blocks(rng, rng.integers(1, part.m + 1, size=100_000), part)

        assert np.all(np.abs(seeds.mean(axis=0)) < 0.02)
        assert np.all(np.abs(seeds.var(axis=0) - 1.0) < 0.02)


class TestEquipartition:
    """Tests for verify_equipartition."""

    def test_sixteen_blocks(self):
        """Test k=4, d_tilde=2 deviation with 10^6 seeds."""
        part = compute_thresholds(4, 1.0, d_tilde=2)
        assert verify_equipartition(part, 1_000_000, np.random.default_rng(3)) <= 0.003

    def test_single_block_has_no_deviation(self):
        """Test k=1 deviation is exactly 0."""
        part = compute_thresholds(1, 1.0, d_tilde=2)
        assert verify_equipartition(part, 100, np.random.default_rng(4)) == 0.0

    def test_too_few_samples(self):
        """Test n < 10 m is rejected."""
        part = compute_thresholds(4, 1.0, d_tilde=2)
        with pytest.raises(ValueError, match="at least"):
            verify_equipartition(part, 159, np.random.default_rng(5))
