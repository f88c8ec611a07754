"""Second-sensor features and ridge with one penalty per feature block.

Low-light luminosity readings become 22 summary features per observation:
counts over 19 log-spaced brightness bins plus the minimum, mean, and
maximum. The fused regression penalizes each sensor's weights separately,
solved by rescaling each block by 1/sqrt(penalty) and running a single
unit-penalty ridge on the concatenation.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from . import ridge

LUMINOSITY_LO = 0.1
LUMINOSITY_HI = 500.0
N_BINS = 19

BIN_EDGES = np.logspace(np.log10(LUMINOSITY_LO), np.log10(LUMINOSITY_HI),
                        N_BINS + 1)

N_SENSOR_FEATURES = N_BINS + 3


def nightlights_features(values, drop_out_of_range: bool = False) -> np.ndarray:
    """22-vector of binned luminosity counts plus min, mean, max.

    Bin i covers [edge_i, edge_{i+1}); the last bin is closed above. Values
    outside [0.1, 500] are clamped into the end bins by default, or
    discarded entirely when ``drop_out_of_range`` is set (the summary stats
    then cover the surviving values only).
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("empty luminosity list")
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ValueError("luminosities must be finite and nonnegative")
    if drop_out_of_range:
        v = v[(v >= LUMINOSITY_LO) & (v <= LUMINOSITY_HI)]
        if v.size == 0:
            raise ValueError("no luminosities left inside the bin range")
    idx = np.searchsorted(BIN_EDGES, v, side="right") - 1
    idx = np.clip(idx, 0, N_BINS - 1)
    counts = np.bincount(idx, minlength=N_BINS).astype(np.float64)
    return np.concatenate([counts, [v.min(), v.mean(), v.max()]])


@dataclass
class BlockRidgeModel:
    """Fused head: per-sensor weights, penalties, and standardization."""

    weights_x: np.ndarray
    weights_z: np.ndarray
    lam_x: float
    lam_z: float
    intercept: float
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    z_mean: np.ndarray | None = None
    z_scale: np.ndarray | None = None

    def predict(self, x, z) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        if x.shape[1] != len(self.weights_x) or z.shape[1] != len(self.weights_z):
            raise ValueError("feature block widths do not match model")
        if self.x_mean is not None:
            x = (x - self.x_mean) / self.x_scale
            z = (z - self.z_mean) / self.z_scale
        return x @ self.weights_x + z @ self.weights_z + self.intercept


def fit_block_ridge(x, z, y, lam_x: float, lam_z: float,
                    standardize: bool = True) -> BlockRidgeModel:
    """Minimize 0.5*SSE + 0.5*lam_x*||b||^2 + 0.5*lam_z*||g||^2.

    Each block is standardized on its own columns (so the two penalties are
    comparable across sensors of different natural scales), scaled by
    1/sqrt(lam), and solved as one ridge at unit penalty; weights are
    unscaled back afterwards. The intercept stays unpenalized.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(z) or len(x) != len(y):
        raise ValueError("feature blocks and labels must have equal row counts")
    if lam_x <= 0 or lam_z <= 0:
        raise ValueError("block penalties must be positive")

    xm = xs = zm = zs = None
    if standardize:
        x, xm, xs = ridge.standardize_columns(x)
        z, zm, zs = ridge.standardize_columns(z)
    sx, sz = 1.0 / np.sqrt(lam_x), 1.0 / np.sqrt(lam_z)
    stacked = np.hstack([x * sx, z * sz])
    w, intercept = ridge.fit_ridge(stacked, y, 1.0)
    kx = x.shape[1]
    return BlockRidgeModel(
        weights_x=w[:kx] * sx,
        weights_z=w[kx:] * sz,
        lam_x=float(lam_x),
        lam_z=float(lam_z),
        intercept=float(intercept),
        x_mean=xm, x_scale=xs, z_mean=zm, z_scale=zs,
    )


@dataclass
class BlockCvReport:
    """Mean validation R^2 over the joint penalty grid."""

    lams_x: np.ndarray
    lams_z: np.ndarray
    mean_r2: np.ndarray  # (len(lams_x), len(lams_z))
    chosen: tuple

    @property
    def chosen_r2(self) -> float:
        return float(self.mean_r2[self.chosen])


def tune_block(x, z, y, lams_x, lams_z, folds: int = 5, rng_seed: int = 0,
               standardize: bool = True):
    """Exhaustive joint grid search by mean validation R^2.

    Ties break to the lexicographically smallest (lam_x, lam_z). Returns
    (lam_x_star, lam_z_star, BlockCvReport).
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    lams_x = np.asarray(lams_x, dtype=np.float64)
    lams_z = np.asarray(lams_z, dtype=np.float64)
    if lams_x.size == 0 or lams_z.size == 0:
        raise ValueError("penalty grids must be nonempty")
    n = len(y)
    if n < folds:
        raise ValueError(f"fewer rows ({n}) than folds ({folds})")

    assignments = ridge.kfold_assign(n, folds, rng_seed)
    scores = np.zeros((lams_x.size, lams_z.size))
    counts = np.zeros_like(scores)
    for f in range(folds):
        va = assignments == f
        tr = ~va
        yv = y[va]
        if np.sum((yv - yv.mean()) ** 2) == 0:
            continue
        for (i, lx), (j, lz) in product(enumerate(lams_x), enumerate(lams_z)):
            model = fit_block_ridge(x[tr], z[tr], y[tr], lx, lz, standardize)
            scores[i, j] += ridge.r_squared(yv, model.predict(x[va], z[va]))
            counts[i, j] += 1
    if counts.max() == 0:
        raise ValueError("every validation fold has zero label variance")
    mean_r2 = scores / counts
    flat = int(np.argmax(mean_r2))  # row-major argmax = lexicographic tie-break
    chosen = np.unravel_index(flat, mean_r2.shape)
    report = BlockCvReport(lams_x=lams_x, lams_z=lams_z, mean_r2=mean_r2,
                           chosen=(int(chosen[0]), int(chosen[1])))
    return float(lams_x[chosen[0]]), float(lams_z[chosen[1]]), report
