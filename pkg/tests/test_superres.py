"""Sub-image score maps, smoothing, block pooling, within-image skill."""

import numpy as np
import pytest

import oracles
import satsink as ss
from satsink.features import build_bank, featurize_corpus, featurize_image
from satsink.grid import Image, band_dominance_subgrid
from satsink.ridge import train_model
from satsink.superres import (
    default_bandwidth,
    gaussian_smooth,
    pool_to_subgrid,
    superres_map,
    within_image_r2,
)


@pytest.fixture(scope="module")
def toy_pipeline():
    """Tiny trained head over an 8-image corpus (8x8 images, K=4).

    The whitening is fit on a wider patch draw and the bank sliced down to
    two patches, so the K=4 example is not dominated by the cancellation
    noise a rank-2 covariance would inject.
    """
    imgs, labels = ss.synth_corpus(ss.SyntheticTask(seed=41), 8, hw=8)
    wide = build_bank(imgs, k=64, m=3, rng_seed=3)
    bank = ss.PatchBank(
        patch_width=wide.patch_width, n_bands=wide.n_bands, n_features=4,
        raw_patches=wide.raw_patches[:2], mean=wide.mean, whiten=wide.whiten,
        eps=wide.eps, rng_seed=wide.rng_seed)
    table = featurize_corpus(imgs, bank, precision="f64")
    model = train_model(table.values, labels, lam=0.5,
                        fingerprint=bank.fingerprint)
    return imgs, bank, table, model


class TestSuperresMap:
    def test_constant_image_gives_constant_map(self, toy_pipeline):
        imgs, bank, _, model = toy_pipeline
        const = Image(pixels=np.full((8, 8, 3), 0.5),
                      location=imgs[0].location)
        score = superres_map(const, bank, model)
        assert np.ptp(score) < 1e-10
        feats = featurize_image(const, bank)
        assert score[0, 0] == pytest.approx(
            float(model.scores(feats[None, :])[0]), abs=1e-10)

    def test_map_mean_equals_preclip_prediction(self, toy_pipeline):
        imgs, bank, table, model = toy_pipeline
        for i, img in enumerate(imgs):
            score = superres_map(img, bank, model)
            expected = float(model.scores(table.values[i:i + 1])[0])
            assert score.mean() == pytest.approx(expected, abs=1e-8)

    def test_matches_position_loop_oracle(self, toy_pipeline):
        imgs, bank, _, model = toy_pipeline
        got = superres_map(imgs[3], bank, model)
        expected = oracles.superres_scores(imgs[3].pixels, bank, model)
        assert np.abs(got - expected).max() < 1e-10

    def test_fingerprint_mismatch_rejected(self, toy_pipeline):
        imgs, bank, table, model = toy_pipeline
        other = build_bank(imgs, k=4, m=3, rng_seed=99)
        with pytest.raises(ValueError, match="different bank"):
            superres_map(imgs[0], other, model)


class TestGaussianSmooth:
    def test_zero_bandwidth_is_identity(self):
        arr = np.random.default_rng(0).random((9, 9))
        assert np.array_equal(gaussian_smooth(arr, 0.0), arr)

    def test_impulse_kernel_normalized_and_symmetric(self):
        arr = np.zeros((21, 21))
        arr[10, 10] = 1.0
        out = gaussian_smooth(arr, 1.5)
        assert out.sum() == pytest.approx(1.0, abs=1e-10)
        assert np.abs(out - out[::-1, :]).max() < 1e-12
        assert np.abs(out - out[:, ::-1]).max() < 1e-12

    def test_constant_map_unchanged(self):
        out = gaussian_smooth(np.full((7, 11), 3.25), 2.0)
        assert np.abs(out - 3.25).max() < 1e-12

    def test_mean_preserved_by_reflect_padding(self):
        arr = np.random.default_rng(1).random((15, 12))
        out = gaussian_smooth(arr, 2.5)
        assert out.mean() == pytest.approx(arr.mean(), abs=1e-8)

    def test_negative_bandwidth_rejected(self):
        with pytest.raises(ValueError):
            gaussian_smooth(np.zeros((3, 3)), -1.0)


class TestPoolToSubgrid:
    def test_factor_one_returns_parent(self):
        arr = np.random.default_rng(2).random((14, 14))
        sub = pool_to_subgrid(arr, 1)
        assert sub.values.shape == (1, 1)
        assert sub.values[0, 0] == pytest.approx(arr.mean(), abs=1e-12)
        assert sub.parent == pytest.approx(arr.mean(), abs=1e-12)

    def test_split_constant_map_recovers_halves(self):
        arr = np.empty((10, 10))
        arr[:, :5] = 2.0
        arr[:, 5:] = -1.0
        sub = pool_to_subgrid(arr, 2)
        assert np.allclose(sub.values[:, 0], 2.0, atol=1e-12)
        assert np.allclose(sub.values[:, 1], -1.0, atol=1e-12)

    @pytest.mark.parametrize("factor", [2, 4, 8, 16])
    def test_area_weighted_mean_identity(self, factor):
        arr = np.random.default_rng(3).random((62, 62))
        sub = pool_to_subgrid(arr, factor)
        assert sub.area_weighted_mean() == pytest.approx(arr.mean(), abs=1e-8)
        assert sub.row_sizes.max() - sub.row_sizes.min() <= 1

    def test_smoothing_does_not_change_parent(self):
        arr = np.random.default_rng(4).random((30, 30))
        sub = pool_to_subgrid(arr, 4, smooth_bandwidth=default_bandwidth(30, 4))
        assert sub.parent == pytest.approx(arr.mean(), abs=1e-12)
        # smoothed blocks still pool near the parent (reflect keeps the mean)
        assert sub.area_weighted_mean() == pytest.approx(arr.mean(), abs=1e-6)

    def test_factor_exceeding_map_rejected(self):
        with pytest.raises(ValueError):
            pool_to_subgrid(np.zeros((6, 6)), 7)


class TestWithinImageR2:
    def test_perfect_prediction(self):
        truth = np.random.default_rng(5).random((4, 4))
        assert within_image_r2(truth, truth) == pytest.approx(1.0)

    def test_constant_prediction_scores_zero(self):
        truth = np.random.default_rng(6).random((4, 4))
        assert within_image_r2(np.full((4, 4), 9.9), truth) == pytest.approx(0.0)

    def test_offset_invariance(self):
        rng = np.random.default_rng(7)
        truth = rng.random((4, 4))
        pred = truth + 5.0  # constant bias removed by demeaning
        assert within_image_r2(pred, truth) == pytest.approx(1.0)

    def test_zero_truth_variance_rejected(self):
        with pytest.raises(ValueError):
            within_image_r2(np.zeros((3, 3)), np.ones((3, 3)))


class TestEndToEndSkill:
    def test_within_image_skill_and_monotone_information_loss(
            self, linear_bundle, trained_head):
        """Coarser sub-grids are easier: R2 at F=16 <= R2 at F=2 + slack."""
        bank = linear_bundle["bank"]
        model, _ = trained_head
        images = [linear_bundle["images"][i]
                  for i in linear_bundle["trainval_2k"][:60]]
        means = {}
        for factor in (2, 16):
            scores = []
            for img in images:
                smap = superres_map(img, bank, model)
                truth = band_dominance_subgrid(img.pixels, factor)
                if truth.std() == 0:
                    continue
                sub = pool_to_subgrid(smap, factor)
                scores.append(within_image_r2(sub.values, truth))
            means[factor] = float(np.mean(scores))
        assert means[16] <= means[2] + 0.05
        assert means[2] > 0.3
