"""
Tests for seed, clean-image and noised-image distributions.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from memgan.distributions import (
    FILE_BACKED,
    CleanImageModel,
    DimensionSpec,
    open_image_source,
    read_image_file,
    sample_clean_image,
    sample_noised_image,
    sample_noised_images,
    sample_seed,
    sample_seeds,
    write_image_file,
)
from memgan.errors import ShapeMismatchError, SourceExhaustedError
from memgan.noise_channel import clean_index, encode, encode_batch, spliced_index


class TestDimensionSpec:
    """Validation of DimensionSpec."""

    def test_zero_sigma_rejected(self):
        """Test sigma = 0 is rejected at construction."""
        with pytest.raises(ValueError, match="sigma"):
            DimensionSpec(d=4, d_tilde=1, sigma=0.0)

    def test_d_tilde_must_be_smaller_than_d(self):
        """Test d_tilde >= d is rejected."""
        with pytest.raises(ValueError, match="strictly smaller"):
            DimensionSpec(d=4, d_tilde=4)

    def test_round_trip_dict(self):
        """Test to_dict / from_dict."""
        spec = DimensionSpec(d=32, d_tilde=4, sigma=0.5)
        assert DimensionSpec.from_dict(spec.to_dict()) == spec
        assert spec.stride == 8


class TestSeeds:
    """Tests for the Gaussian seed distribution."""

    def test_moments(self):
        """Test per-coordinate mean and variance over 10^5 draws."""
        spec = DimensionSpec(d=16, d_tilde=8, sigma=1.0)
        seeds = sample_seeds(np.random.default_rng(1), spec, 100_000)

        assert seeds.shape == (100_000, 8)
        assert np.all(np.abs(seeds.mean(axis=0)) <= 0.02)
        variances = seeds.var(axis=0)
        assert np.all((variances >= 0.97) & (variances <= 1.03))

    def test_same_seed_same_draw(self):
        """Test determinism for a fixed stream seed."""
        spec = DimensionSpec(d=8, d_tilde=2)
        first = sample_seed(np.random.default_rng(42), spec)
        second = sample_seed(np.random.default_rng(42), spec)
        assert np.array_equal(first, second)


class TestCleanImages:
    """Tests for the synthetic and file-backed clean image sources."""

    def setup_method(self):
        """Set up a default spec."""
        self.spec = DimensionSpec(d=32, d_tilde=4)

    def test_synthetic_clamped_to_amplitude(self):
        """Test synthetic images stay inside [-amplitude, amplitude]."""
        source = open_image_source(CleanImageModel(amplitude=1.0, basis_count=12), self.spec)
        images = source.sample(np.random.default_rng(0), 2000)

        assert images.shape == (2000, 32)
        assert images.min() >= -1.0
        assert images.max() <= 1.0

    def test_zero_basis_gives_zero_image(self):
        """Test basis_count = 0 yields the zero vector."""
        source = open_image_source(CleanImageModel(basis_count=0), self.spec)
        image = sample_clean_image(np.random.default_rng(0), source)
        assert np.array_equal(image, np.zeros(32))

    def test_file_backed_record_length_mismatch(self, tmp_path):
        """Test a file with records of the wrong length raises ShapeMismatchError."""
        path = write_image_file(tmp_path / "images.bin", np.ones((10, 5)))
        model = CleanImageModel(mode=FILE_BACKED, path=str(path))

        with pytest.raises(ShapeMismatchError):
            open_image_source(model, DimensionSpec(d=6, d_tilde=2))

    def test_file_backed_reads_in_order_then_exhausts(self, tmp_path):
        """Test records are served sequentially until the file runs out."""
        records = np.arange(18, dtype=float).reshape(3, 6)
        path = write_image_file(tmp_path / "images.bin", records)
        source = open_image_source(CleanImageModel(mode=FILE_BACKED, path=str(path)), DimensionSpec(d=6, d_tilde=2))
        rng = np.random.default_rng(0)

        assert np.array_equal(source.sample(rng, 2), records[:2])
        assert np.array_equal(source.sample(rng, 1), records[2:])
        with pytest.raises(SourceExhaustedError):
            source.sample(rng, 1)

    def test_file_backed_fork_gives_disjoint_readers(self, tmp_path):
        """Test forked readers cover consecutive runs of records in task order."""
        records = np.arange(60, dtype=float).reshape(10, 6)
        path = write_image_file(tmp_path / "images.bin", records)
        source = open_image_source(CleanImageModel(mode=FILE_BACKED, path=str(path)), DimensionSpec(d=6, d_tilde=2))
        rng = np.random.default_rng(0)
        source.sample(rng, 1)

        first, second = source.fork(2, 3)

        assert np.array_equal(second.sample(rng, 3), records[4:7])
        assert np.array_equal(first.sample(rng, 2), records[1:3])
        assert np.array_equal(source.sample(rng, 1), records[7:8])
        with pytest.raises(SourceExhaustedError):
            first.sample(rng, 2)
        with pytest.raises(SourceExhaustedError):
            source.fork(2, 2)

    def test_synthetic_fork_shares_source(self):
        """Test a synthetic source serves every task itself."""
        source = open_image_source(CleanImageModel(), self.spec)
        assert all(part is source for part in source.fork(3, 100))

    def test_image_file_round_trip_and_missing_file(self, tmp_path):
        """Test write/read round trip and the missing-file error."""
        images = np.random.default_rng(3).normal(size=(7, 6))
        path = write_image_file(tmp_path / "x.bin", images)

        assert np.array_equal(read_image_file(path, expected_d=6), images)
        with pytest.raises(FileNotFoundError):
            read_image_file(tmp_path / "missing.bin")

    def test_file_backed_requires_path(self):
        """Test a file-backed model without a path is rejected."""
        with pytest.raises(ValueError, match="path"):
            CleanImageModel(mode=FILE_BACKED)


class TestNoisedImages:
    """Tests for the noised image distribution."""

    def setup_method(self):
        """Set up spec and synthetic source."""
        self.spec = DimensionSpec(d=6, d_tilde=2)
        self.source = open_image_source(CleanImageModel(), self.spec)

    def test_encode_recovers_seed(self):
        """Test encode(x) equals the returned seed bitwise."""
        x, z = sample_noised_image(np.random.default_rng(9), self.source, self.spec)
        assert np.array_equal(encode(x, self.spec), z)

    def test_only_spliced_coordinates_change(self):
        """Test x differs from the clean image only at the spliced positions."""
        images, _ = sample_noised_images(np.random.default_rng(5), self.source, self.spec, 200)
        clean = self.source.sample(np.random.default_rng(5), 200)

        keep = clean_index(self.spec)
        assert np.array_equal(images[:, keep], clean[:, keep])
        changed = images != clean
        assert np.all(changed.sum(axis=1) == 2)
        assert np.all(changed[:, spliced_index(self.spec)])

    def test_spliced_variance_matches_sigma(self):
        """Test pooled spliced coordinates have variance sigma^2 within 5%."""
        spec = DimensionSpec(d=6, d_tilde=2, sigma=2.0)
        source = open_image_source(CleanImageModel(), spec)
        images, _ = sample_noised_images(np.random.default_rng(11), source, spec, 10_000)

        pooled = encode_batch(images, spec).ravel()
        assert abs(pooled.var() / 4.0 - 1.0) <= 0.05

    def test_spliced_and_clean_coordinates_uncorrelated(self):
        """Test a spliced coordinate is uncorrelated with the clean image."""
        n = 100_000
        images, _ = sample_noised_images(np.random.default_rng(21), self.source, self.spec, n)
        clean = self.source.sample(np.random.default_rng(21), n)

        spliced = images[:, spliced_index(self.spec)[0]]
        correlation = np.corrcoef(spliced, clean[:, 0])[0, 1]
        assert abs(correlation) <= 4.0 / np.sqrt(n)
