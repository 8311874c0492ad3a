"""
Tests for the experiment drivers.
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from memgan.adversary import Discriminator, MeasuringFunction, fake_pair_sampler, real_pair_sampler
from memgan.config import config_from_dict
from memgan.distributions import CleanImageModel, DimensionSpec, open_image_source
from memgan.generator import build_generator
from memgan.harness import (
    NonCollidingSet,
    birthday_approximation,
    birthday_collision_probability,
    birthday_support_estimate,
    check_noncolliding_identity,
    compare_finite_sample,
    run_birthday_experiment,
    run_birthday_sweep,
    run_collapse_experiment,
    run_concentration_experiment,
    run_finite_sample_experiment,
    run_noncolliding_experiment,
    sample_noncolliding,
    stratified_means_across_generators,
    theorem_summary,
)
from memgan.partition import block_indices, block_tuples, compute_thresholds
from memgan.reporting import build_report, dumps

SMALL = {
    "spec": {"d": 8, "d_tilde": 2},
    "k_grid": [2, 4],
    "discriminator": {"hidden": [8]},
    "training": {"steps": 20, "batch_size": 32, "restarts": 1},
    "evaluation": {"n_real": 200, "n_fake": 200, "census_samples": 500},
    "concentration": {"d_tilde": 2, "k_grid": [2, 4], "trials": 30, "sets_per_generator": 2},
    "finite_sample": {"k": 2, "factor": 10},
    "birthday": {"k": 4, "sample_sizes": [2, 5, 10], "trials": 50},
    "noncolliding": {"k_grid": [2], "n_sets": 100, "n_direct": 500},
}


def _generator(d, d_tilde, k, seed=0):
    spec = DimensionSpec(d=d, d_tilde=d_tilde)
    source = open_image_source(CleanImageModel(), spec)
    return build_generator(np.random.default_rng(seed), compute_thresholds(k, 1.0, d_tilde=d_tilde), source, spec)


def _desk_config(**sections):
    """Default desk-scale config with shorter training."""
    data = {"training": {"steps": 300, "restarts": 2}, "evaluation": {"n_real": 5000, "n_fake": 5000}}
    data.update(sections)
    return config_from_dict(data)


class TestNonColliding:
    """Tests for non-colliding sets and the stratified estimator."""

    def test_one_seed_per_block(self):
        """Test a sampled set has one seed in each block, in block order."""
        part = compute_thresholds(2, 1.0, d_tilde=2)
        rng = np.random.default_rng(0)
        for _ in range(20):
            T = sample_noncolliding(rng, part)
            assert len(T) == 4
            assert np.array_equal(block_indices(block_tuples(T.seeds, part), part), [1, 2, 3, 4])

    def test_misordered_set_rejected(self):
        """Test seeds out of block order are rejected."""
        part = compute_thresholds(2, 1.0, d_tilde=2)
        T = sample_noncolliding(np.random.default_rng(1), part)
        with pytest.raises(ValueError):
            NonCollidingSet(seeds=T.seeds[::-1].copy(), partition=part)

    def test_constant_discriminator_identity_exact(self):
        """Test a zero discriminator gives equal estimators and zero difference."""
        gen = _generator(6, 2, 2)
        check = check_noncolliding_identity(Discriminator.zeros([8, 4, 1]), gen, 100, 1000, np.random.default_rng(2))
        assert check.stratified_mean == check.direct_mean == 0.0
        assert check.z_score == 0.0

    def test_untrained_discriminator_identity(self):
        """Test stratified and direct estimates agree within 3 standard errors."""
        gen = _generator(16, 4, 2)
        D = Discriminator.initialize(np.random.default_rng(3), [20, 16, 1], init_scale=1.0)
        check = check_noncolliding_identity(D, gen, 500, 8000, np.random.default_rng(4))
        assert abs(check.z_score) <= 3.0

    def test_minimum_sizes(self):
        """Test n_sets and n_direct below 100 are rejected."""
        gen = _generator(6, 2, 2)
        with pytest.raises(ValueError):
            check_noncolliding_identity(Discriminator.zeros([8, 1]), gen, 99, 1000, np.random.default_rng(5))

    def test_identical_generators_have_no_spread(self):
        """Test redrawing with the same seed reproduces the same stratified mean."""
        spec = DimensionSpec(d=6, d_tilde=2)
        part = compute_thresholds(2, 1.0, d_tilde=2)
        source = open_image_source(CleanImageModel(), spec)
        D = Discriminator.initialize(np.random.default_rng(6), [8, 4, 1], init_scale=1.0)
        sets = [sample_noncolliding(np.random.default_rng(7), part) for _ in range(3)]
        redraws = [np.random.default_rng(7) for _ in range(3)]
        means = stratified_means_across_generators(D, part, source, spec, redraws, sets, MeasuringFunction())

        assert means.std() == 0.0
        assert np.all(np.abs(means) <= 1.0)


class TestBirthday:
    """Tests for the birthday collision test."""

    def setup_method(self):
        """Set up an m=256 generator."""
        self.gen = _generator(16, 4, 4)

    def test_closed_form(self):
        """Test the closed form and its approximation for m=256, s=40."""
        assert birthday_collision_probability(256, 40) == pytest.approx(0.953, abs=0.05)
        assert birthday_approximation(256, 40) == pytest.approx(0.953, abs=0.001)
        assert birthday_collision_probability(4, 5) == 1.0

    def test_collision_frequency(self):
        """Test 400 trials of s=40 against 0.953."""
        freq = run_birthday_experiment(self.gen, 40, 400, np.random.default_rng(0))
        assert freq == pytest.approx(0.953, abs=0.05)

    def test_pair_collision_frequency(self):
        """Test s=2 collides with probability about 1/m."""
        trials = 2000
        freq = run_birthday_experiment(self.gen, 2, trials, np.random.default_rng(1))
        p = 1 / 256
        assert abs(freq - p) <= 3 * math.sqrt(p * (1 - p) / trials)

    def test_pigeonhole(self):
        """Test s > m always collides."""
        assert run_birthday_experiment(_generator(6, 2, 2), 5, 20, np.random.default_rng(2)) == 1.0

    def test_invalid_arguments(self):
        """Test s < 2 and trials < 1 are rejected."""
        with pytest.raises(ValueError):
            run_birthday_experiment(self.gen, 1, 10, np.random.default_rng(3))
        with pytest.raises(ValueError):
            run_birthday_experiment(self.gen, 10, 0, np.random.default_rng(3))

    def test_support_estimate(self):
        """Test the support implied by the half-collision sample size."""
        estimate = birthday_support_estimate([10, 20], [0.1, 0.6])
        assert estimate["s_half"] == 20
        assert estimate["support_s2"] == 400
        assert birthday_support_estimate([10], [0.2])["s_half"] is None


class TestFiniteSample:
    """Tests for the finite-sample comparison."""

    def test_sets_smaller_than_m_rejected(self):
        """Test |S| < m is rejected."""
        gen = _generator(6, 2, 2)
        spec = gen.spec
        real = real_pair_sampler(open_image_source(CleanImageModel(), spec), spec)
        fake = fake_pair_sampler(gen)
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="at least m"):
            compare_finite_sample(
                Discriminator.zeros([8, 1]), real(rng, 3), fake(rng, 10), 4, real, fake, 200, rng, MeasuringFunction()
            )


@pytest.mark.integration
class TestExperimentDrivers:
    """Small end-to-end runs of every experiment."""

    def setup_method(self):
        """Set up the small configuration."""
        self.cfg = config_from_dict(SMALL)

    def test_collapse_report(self):
        """Test collapse rows carry census, encoder and compiled weight counts."""
        report = run_collapse_experiment(self.cfg)
        assert [row["k"] for row in report["rows"]] == [2, 4]
        for row in report["rows"]:
            assert "error" not in row
            assert row["support_census"] <= row["m"]
            assert row["encoder_weights"] == 2
            assert row["compiled_weights"] <= row["predicted_bound"]
            assert row["compiled_disagreement"] <= self.cfg.compile_delta
            assert row["train_eval_std_err"] >= 0
            assert 0 <= row["compiled_disagreement_std_err"] <= 0.5 / math.sqrt(500)
        assert report["capacity_p"] == 10 * 8 + 8 + 8 + 1
        assert report["theorem"]["m_target"] >= 1

    def test_collapse_is_deterministic(self):
        """Test two runs with the same seed give byte-identical reports."""
        first = dumps(build_report(run_collapse_experiment(self.cfg), self.cfg.to_dict()))
        second = dumps(build_report(run_collapse_experiment(self.cfg), self.cfg.to_dict()))
        assert first == second

    def test_threads_do_not_change_reports(self):
        """Test the birthday sweep is identical with 1 and 3 threads."""
        serial = run_birthday_sweep(self.cfg)
        parallel = run_birthday_sweep(config_from_dict({**SMALL, "threads": 3}))
        assert dumps(serial) == dumps(parallel)

    def test_concentration_report(self):
        """Test concentration rows and the predicted ratio."""
        report = run_concentration_experiment(self.cfg)
        assert [row["m"] for row in report["rows"]] == [4, 16]
        assert report["ratios"][0]["predicted_ratio"] == pytest.approx(0.5)

    def test_concentration_redraws_follow_master_seed(self):
        """Test generator redraws repeat for one master seed and change with another."""
        first = run_concentration_experiment(self.cfg)["rows"]
        second = run_concentration_experiment(self.cfg)["rows"]
        other = run_concentration_experiment(config_from_dict({**SMALL, "master_seed": 1}))["rows"]

        assert dumps({"rows": first}) == dumps({"rows": second})
        assert [row["mean"] for row in other] != [row["mean"] for row in first]

    def test_finite_sample_report(self):
        """Test the finite-sample row uses |S| = factor * m."""
        row = run_finite_sample_experiment(self.cfg)["rows"][0]
        assert row["set_size"] == 40
        assert row["difference"] >= 0

    def test_noncolliding_report(self):
        """Test the noncolliding row has both discriminators."""
        row = run_noncolliding_experiment(self.cfg)["rows"][0]
        assert "untrained_z_score" in row and "trained_z_score" in row

    def test_theorem_summary_with_fixed_lipschitz(self):
        """Test an explicit Lipschitz constant is used as given."""
        cfg = config_from_dict({**SMALL, "budget": {"epsilon": 0.25, "lipschitz": 1.0}})
        summary = theorem_summary(cfg, cfg.spec)
        assert summary["L"] == 1.0
        assert summary["p"] == 97
        assert summary["k_for_target"] ** 2 >= summary["m_target"]


@pytest.mark.slow
class TestDeskScale:
    """Desk-scale trend checks on the default dimensions."""

    def test_collapse_trend(self):
        """Test the best gap shrinks as m grows from 16 to 4096."""
        cfg = config_from_dict({})
        report = run_collapse_experiment(cfg)
        rows = report["rows"]
        gaps = [row["gap"] for row in rows]

        assert report["trend"]["monotone_non_increasing"]
        assert gaps[-1] <= max(0.5 * gaps[0], 2 * rows[-1]["std_err"])
        for row in rows:
            assert row["support_census"] <= row["m"]
            assert row["encoder_weights"] == 4

    def test_noncolliding_identity_trained(self):
        """Test the stratified identity for untrained and trained D at m = 16 and 256."""
        for row in run_noncolliding_experiment(_desk_config())["rows"]:
            assert abs(row["untrained_z_score"]) <= 3.0
            assert abs(row["trained_z_score"]) <= 3.0

    def test_concentration_scaling(self):
        """Test the spread at m=1024 is at most 0.7 of the spread at m=256."""
        report = run_concentration_experiment(_desk_config())
        assert report["ratios"][0]["std_ratio"] <= 0.7

    def test_finite_sample_matches_population(self):
        """Test the objective on S and T of size 10 m matches fresh samples at m=256."""
        row = run_finite_sample_experiment(_desk_config())["rows"][0]
        assert row["m"] == 256
        assert row["difference"] <= 3 * row["combined_std_err"]
