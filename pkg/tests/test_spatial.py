"""Checkerboard partitioning and kernel interpolation."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from satsink.spatial import (
    OFFSETS,
    CheckerboardSplit,
    RbfInterpolator,
    checkerboard_assign,
    checkerboard_experiment,
    rbf_checkerboard_experiment,
    rbf_predict,
    tune_sigma,
)


class TestCheckerboardAssign:
    def test_origin_cell_is_black(self):
        assert checkerboard_assign(0.5, 0.5, 1.0) == 0

    def test_adjacent_cell_alternates(self):
        assert checkerboard_assign(0.5, 1.5, 1.0) == 1

    def test_four_by_four_lattice_against_hand_table(self):
        lat = 0.25 + 0.5 * np.arange(4)
        lon = 0.25 + 0.5 * np.arange(4)
        lat_g, lon_g = np.meshgrid(lat, lon, indexing="ij")
        base = checkerboard_assign(lat_g, lon_g, 1.0, "base")
        both = checkerboard_assign(lat_g, lon_g, 1.0, "both")
        base_expected = np.array([
            [0, 0, 1, 1],
            [0, 0, 1, 1],
            [1, 1, 0, 0],
            [1, 1, 0, 0],
        ])
        both_expected = np.array([
            [0, 1, 1, 0],
            [1, 0, 0, 1],
            [1, 0, 0, 1],
            [0, 1, 1, 0],
        ])
        assert np.array_equal(base, base_expected)
        assert np.array_equal(both, both_expected)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            checkerboard_assign(0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            checkerboard_assign(0.0, 0.0, 1.0, "diagonal")

    @settings(max_examples=60, deadline=None)
    @given(i=st.integers(-40, 40), j=st.integers(-40, 40),
           offset=st.sampled_from(OFFSETS))
    def test_parity_structure(self, i, j, offset):
        # rational cell-center coordinates, never on a boundary
        delta = 0.5
        lat = (i + 0.5) * delta
        lon = (j + 0.5) * delta
        here = checkerboard_assign(lat, lon, delta, offset)
        up = checkerboard_assign(lat + delta, lon, delta, offset)
        up2 = checkerboard_assign(lat + 2 * delta, lon, delta, offset)
        assert here != up
        assert here == up2


class TestCheckerboardExperiment:
    def test_delta_larger_than_domain_is_skipped(self):
        rng = np.random.default_rng(0)
        x = rng.random((50, 4))
        y = rng.random(50)
        lat = rng.uniform(30, 38, 50)
        lon = rng.uniform(-100, -92, 50)
        (res,) = checkerboard_experiment(x, y, lat, lon, deltas=[50.0],
                                         lambdas=[1.0])
        assert res.offset_r2 == {}
        assert set(res.skipped) == set(OFFSETS)

    def test_autocorrelated_task_degrades_with_delta(self, spatial_bundle):
        sp = spatial_bundle["spatial"]
        results = checkerboard_experiment(sp["x"], sp["y"], sp["lat"],
                                          sp["lon"],
                                          deltas=spatial_bundle["deltas"])
        means = np.array([r.mean_r2 for r in results])
        assert np.all(np.diff(means) <= 0.05)  # nonincreasing within slack
        assert means[-1] < means[0]
        for r in results:
            assert len(r.offset_r2) == 4
            assert r.min_r2 < r.max_r2

    def test_spatially_independent_task_is_flat(self, spatial_bundle):
        ct = spatial_bundle["control"]
        results = checkerboard_experiment(ct["x"], ct["y"], ct["lat"],
                                          ct["lon"],
                                          deltas=spatial_bundle["deltas"])
        means = [r.mean_r2 for r in results]
        assert max(means) - min(means) < 0.05

    def test_misaligned_inputs_rejected(self):
        with pytest.raises(ValueError):
            checkerboard_experiment(np.ones((5, 2)), np.ones(5),
                                    np.ones(4), np.ones(5))


class TestRbfPredict:
    def test_single_training_point_reproduces_label(self):
        interp = RbfInterpolator(np.array([[3.0, 4.0]]), np.array([2.5]), 0.7)
        queries = np.array([[3.0, 4.0], [10.0, -5.0], [100.0, 100.0]])
        assert np.abs(rbf_predict(interp, queries) - 2.5).max() < 1e-12

    def test_huge_bandwidth_predicts_training_mean(self):
        rng = np.random.default_rng(1)
        locs = rng.uniform(0, 10, (40, 2))
        y = rng.random(40)
        interp = RbfInterpolator(locs, y, 1e6)
        preds = rbf_predict(interp, rng.uniform(0, 10, (25, 2)))
        assert np.abs(preds - y.mean()).max() < 1e-9

    def test_three_point_hand_computation(self):
        locs = np.array([[0.0, 0.0], [0.0, 1.0], [0.0, 2.0]])
        y = np.array([0.0, 1.0, 4.0])
        interp = RbfInterpolator(locs, y, 1.0)
        got = rbf_predict(interp, np.array([[0.0, 1.0]]))[0]
        w_far = math.exp(-0.5)
        expected = (0.0 * w_far + 1.0 + 4.0 * w_far) / (1.0 + 2.0 * w_far)
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(
            oracles.rbf_point(locs, y, 1.0, (0.0, 1.0)), abs=1e-12)

    def test_tiny_bandwidth_converges_to_nearest_neighbor(self):
        locs = np.array([[0.0, 0.0], [0.0, 1.0], [2.0, 5.0]])
        y = np.array([7.0, -3.0, 11.0])
        min_gap = 1.0
        interp = RbfInterpolator(locs, y, 1e-3 * min_gap)
        preds = rbf_predict(interp, np.array([[0.1, 0.1], [1.9, 4.8]]))
        assert preds[0] == pytest.approx(7.0, abs=1e-9)
        assert preds[1] == pytest.approx(11.0, abs=1e-9)

    def test_far_queries_survive_stabilization(self):
        interp = RbfInterpolator(np.array([[0.0, 0.0], [1.0, 1.0]]),
                                 np.array([1.0, 3.0]), 0.05)
        preds = rbf_predict(interp, np.array([[500.0, 500.0]]))
        assert np.isfinite(preds).all()
        assert 1.0 <= preds[0] <= 3.0

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_convex_hull_bound(self, seed):
        rng = np.random.default_rng(seed)
        locs = rng.uniform(-5, 5, (12, 2))
        y = rng.standard_normal(12)
        interp = RbfInterpolator(locs, y, float(rng.uniform(0.01, 3.0)))
        preds = rbf_predict(interp, rng.uniform(-20, 20, (30, 2)))
        assert np.all(preds >= y.min() - 1e-12)
        assert np.all(preds <= y.max() + 1e-12)

    def test_bad_construction(self):
        with pytest.raises(ValueError):
            RbfInterpolator(np.zeros((0, 2)), np.zeros(0), 1.0)
        with pytest.raises(ValueError):
            RbfInterpolator(np.zeros((3, 2)), np.zeros(3), -1.0)


def _random_splits(lat, lon, y, k=4):
    out = []
    for s in range(k):
        mask = np.random.default_rng(100 + s).random(len(y)) < 0.5
        out.append((np.column_stack([lat[mask], lon[mask]]), y[mask],
                    np.column_stack([lat[~mask], lon[~mask]]), y[~mask]))
    return out


@pytest.fixture(scope="module")
def scatter():
    rng = np.random.default_rng(7)
    n = 1500
    return rng.uniform(0, 8, n), rng.uniform(0, 8, n)


class TestTuneSigma:
    def test_high_frequency_field_prefers_small_sigma(self, scatter):
        lat, lon = scatter
        y = (np.sin(2 * np.pi * lon / 1.3) > 0).astype(float)
        sigmas = [0.05, 0.2, 0.8, 3.2]
        sigma, scores = tune_sigma(_random_splits(lat, lon, y), sigmas)
        assert sigma <= 0.2
        assert max(scores[:2]) > max(scores[2:]) + 0.2

    def test_smooth_field_prefers_larger_sigma_over_tiny(self, scatter):
        lat, lon = scatter
        rng = np.random.default_rng(3)
        y = 0.1 * lat + 0.05 * lon + 0.02 * rng.standard_normal(len(lat))
        sigma, scores = tune_sigma(_random_splits(lat, lon, y),
                                   [0.05, 0.2, 0.8, 3.2])
        assert sigma > 0.05
        assert scores[1] > scores[0]

    def test_constant_labels_surface_zero_variance_error(self, scatter):
        lat, lon = scatter
        y = np.full(len(lat), 2.0)
        with pytest.raises(ValueError, match="variance"):
            tune_sigma(_random_splits(lat, lon, y), [0.1, 1.0])

    def test_empty_grid_rejected(self, scatter):
        lat, lon = scatter
        with pytest.raises(ValueError):
            tune_sigma(_random_splits(lat, lon, lat + lon), [])


class TestSameSampleComparability:
    def test_rbf_experiment_uses_identical_splits(self, spatial_bundle):
        """Both experiments must score the exact same train/validation sets."""
        sp = spatial_bundle["spatial"]
        deltas = spatial_bundle["deltas"][:2]
        ridge_res = checkerboard_experiment(sp["x"], sp["y"], sp["lat"],
                                            sp["lon"], deltas=deltas)
        rbf_res = rbf_checkerboard_experiment(sp["y"], sp["lat"], sp["lon"],
                                              deltas=deltas,
                                              sigmas=[0.3, 1.0])
        for rr, br in zip(ridge_res, rbf_res):
            assert rr.delta == br.delta
            assert set(rr.offset_r2) == set(br.offset_r2)
        # the split itself is a pure function of (locations, delta, offset)
        for offset in OFFSETS:
            split = CheckerboardSplit(deltas[0], offset)
            a = split.colors(sp["lat"], sp["lon"])
            b = split.colors(sp["lat"], sp["lon"])
            assert np.array_equal(a, b)
