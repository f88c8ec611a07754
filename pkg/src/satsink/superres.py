"""Sub-image prediction maps from un-pooled activations and trained weights.

Because features are averages of activation maps and the head is linear,
the image-level (pre-clip) score decomposes exactly into a mean over
per-position scores. Pooling those scores into F x F blocks yields
predictions finer than the labels ever were; smoothing is cosmetic and all
correctness identities hold on the unsmoothed path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .features import DEFAULT_TILE, PatchBank, _preactivation
from .grid import Image
from .ridge import RidgeModel


def superres_map(image: Image, bank: PatchBank, model: RidgeModel,
                 tile: int = DEFAULT_TILE) -> np.ndarray:
    """Per-position score map in transformed label space.

    The model's standardization folds into per-feature coefficients and a
    constant, so the map's mean equals the model's pre-clip image-level
    score exactly (up to float summation).
    """
    if model.n_features != bank.n_features:
        raise ValueError("model width does not match bank feature count")
    if model.bank_fingerprint is not None and \
            model.bank_fingerprint != bank.fingerprint:
        raise ValueError("model was trained on features from a different bank")

    coef = model.weights.copy()
    const = model.intercept
    if model.x_mean is not None:
        coef = coef / model.x_scale
        const = const - float(model.x_mean @ (model.weights / model.x_scale))
    half = bank.k_half
    c_pos, c_neg = coef[:half], coef[half:]

    h, w, _ = image.pixels.shape
    ho, wo = h - bank.patch_width + 1, w - bank.patch_width + 1
    flat = np.empty(ho * wo)
    for start, z in _preactivation(image, bank, tile):
        part = np.maximum(z + bank.bias, 0.0) @ c_pos
        part += np.maximum(bank.bias - z, 0.0) @ c_neg
        flat[start:start + z.shape[0]] = part + const
    return flat.reshape(ho, wo)


def gaussian_smooth(score_map: np.ndarray, bandwidth: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding; bandwidth 0 is identity."""
    if bandwidth < 0:
        raise ValueError(f"bandwidth must be nonnegative, got {bandwidth}")
    if bandwidth == 0:
        return np.asarray(score_map, dtype=np.float64).copy()
    return gaussian_filter(np.asarray(score_map, dtype=np.float64),
                           sigma=bandwidth, mode="reflect")


def default_bandwidth(map_side: int, factor: int) -> float:
    """Rule-of-thumb blur: a quarter of a block side."""
    return map_side / (4.0 * factor)


@dataclass
class SubgridPrediction:
    """F x F block scores plus the image-level parent they pool back into."""

    factor: int
    values: np.ndarray        # (F, F) transformed-space block means
    parent: float             # unsmoothed full-map mean (pre-clip score)
    row_sizes: np.ndarray
    col_sizes: np.ndarray

    def area_weighted_mean(self) -> float:
        w = np.outer(self.row_sizes, self.col_sizes).astype(np.float64)
        return float((self.values * w).sum() / w.sum())


def pool_to_subgrid(score_map: np.ndarray, factor: int,
                    smooth_bandwidth: float = 0.0) -> SubgridPrediction:
    """Block means of the (optionally smoothed) score map.

    Blocks are near-equal (side lengths differ by at most one); the exact
    block sizes are kept so the area-weighted mean reproduces the parent
    when no smoothing is applied. Factor 1 returns the image-level score.
    """
    score_map = np.asarray(score_map, dtype=np.float64)
    h, w = score_map.shape
    if factor < 1:
        raise ValueError("factor must be at least 1")
    if factor > min(h, w):
        raise ValueError(f"factor {factor} exceeds map side {min(h, w)}")
    parent = float(score_map.mean())
    pooled = gaussian_smooth(score_map, smooth_bandwidth)
    rows = np.array_split(np.arange(h), factor)
    cols = np.array_split(np.arange(w), factor)
    values = np.empty((factor, factor))
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            values[i, j] = pooled[np.ix_(r, c)].mean()
    return SubgridPrediction(
        factor=factor,
        values=values,
        parent=parent,
        row_sizes=np.array([len(r) for r in rows]),
        col_sizes=np.array([len(c) for c in cols]),
    )


def within_image_r2(predicted: np.ndarray, truth: np.ndarray) -> float:
    """R^2 of block predictions against block truths, image means removed.

    Both grids are demeaned by their own image-wide mean first, so only
    within-image variance counts. Raises on constant truth; callers skip
    such images in aggregates.
    """
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    t_dev = t - t.mean()
    sst = float((t_dev ** 2).sum())
    if sst == 0:
        raise ValueError("zero within-image truth variance")
    p_dev = p - p.mean()
    return 1.0 - float(((p_dev - t_dev) ** 2).sum()) / sst
