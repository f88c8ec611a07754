"""Checkerboard spatial cross-validation and Gaussian-kernel interpolation.

The checkerboard colors locations by the parity of their delta-sized square
in an axis-aligned lattice anchored at (0, 0), and replays each experiment
at four lattice offsets (none, half right, half up, both). The interpolation
baseline predicts a query as the kernel-weighted average of training labels
over geographic distance, and is always evaluated on the exact same splits
as the feature model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ridge

OFFSETS = ("base", "right", "up", "both")
_OFFSET_SHIFTS = {"base": (0.0, 0.0), "right": (0.5, 0.0),
                  "up": (0.0, 0.5), "both": (0.5, 0.5)}

DEFAULT_DELTAS = (0.5, 1.5, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0)


def checkerboard_assign(lat, lon, delta: float, offset: str = "base"):
    """Color 0 (black, even parity) or 1 (white) for each location.

    Black squares are the training side by convention. Boundary points fall
    to the lower/left square via the floor rule.
    """
    if delta <= 0:
        raise ValueError(f"square side must be positive, got {delta}")
    if offset not in _OFFSET_SHIFTS:
        raise ValueError(f"offset must be one of {OFFSETS}, got {offset!r}")
    fx, fy = _OFFSET_SHIFTS[offset]
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    parity = np.floor((lon - fx * delta) / delta) + np.floor((lat - fy * delta) / delta)
    return np.asarray(np.mod(parity, 2), dtype=np.int64)


@dataclass(frozen=True)
class CheckerboardSplit:
    """A delta-sized parity partition at one of the four lattice offsets."""

    delta: float
    offset: str = "base"

    def colors(self, lat, lon):
        return checkerboard_assign(lat, lon, self.delta, self.offset)

    def split(self, lat, lon):
        """(train_mask, val_mask): black squares train, white validate."""
        colors = self.colors(lat, lon)
        return colors == 0, colors == 1


@dataclass
class CheckerboardResult:
    """Outcome of one delta: a shared penalty and per-offset validation R^2."""

    delta: float
    lam: float
    offset_r2: dict
    skipped: tuple = ()

    @property
    def mean_r2(self) -> float:
        return float(np.mean(list(self.offset_r2.values())))

    @property
    def min_r2(self) -> float:
        return float(min(self.offset_r2.values()))

    @property
    def max_r2(self) -> float:
        return float(max(self.offset_r2.values()))


def checkerboard_experiment(features, labels, lats, lons, deltas=None,
                            lambdas=None, standardize: bool = True):
    """Train on black squares, validate on white, for every delta.

    For each delta one penalty is chosen to maximize the mean validation
    R^2 across the four offsets, then per-offset R^2 at that penalty is
    reported. Offsets where either color is empty (or validation labels are
    constant) are skipped; a delta with no usable offset yields a result
    whose ``offset_r2`` is empty and ``skipped`` lists all four offsets.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    lats = np.asarray(lats, dtype=np.float64)
    lons = np.asarray(lons, dtype=np.float64)
    if not (len(x) == len(y) == len(lats) == len(lons)):
        raise ValueError("features, labels, and locations must align")
    deltas = DEFAULT_DELTAS if deltas is None else deltas
    lambdas = np.asarray(ridge.DEFAULT_LAMBDAS if lambdas is None else lambdas,
                         dtype=np.float64)

    results = []
    for delta in deltas:
        per_offset = {}
        skipped = []
        for offset in OFFSETS:
            train, val = CheckerboardSplit(delta, offset).split(lats, lons)
            yv = y[val]
            if train.sum() == 0 or val.sum() == 0 or np.all(yv == yv[0]):
                skipped.append(offset)
                continue
            xt = x[train]
            mean = scale = None
            if standardize:
                xt, mean, scale = ridge.standardize_columns(xt)
            betas, intercepts = ridge.ridge_path(xt, y[train], lambdas)
            xv = x[val]
            if standardize:
                xv = (xv - mean) / scale
            preds = xv @ betas.T + intercepts
            sst = float(np.sum((yv - yv.mean()) ** 2))
            per_offset[offset] = 1.0 - np.sum((preds - yv[:, None]) ** 2,
                                              axis=0) / sst
        if not per_offset:
            results.append(CheckerboardResult(delta=float(delta), lam=np.nan,
                                              offset_r2={}, skipped=tuple(skipped)))
            continue
        mean_curve = np.mean(np.stack(list(per_offset.values())), axis=0)
        best = int(np.argmax(mean_curve))
        results.append(CheckerboardResult(
            delta=float(delta),
            lam=float(lambdas[best]),
            offset_r2={o: float(r2[best]) for o, r2 in per_offset.items()},
            skipped=tuple(skipped),
        ))
    return results


@dataclass
class RbfInterpolator:
    """Training scatter plus a Gaussian kernel bandwidth in degrees."""

    locations: np.ndarray  # (n, 2) as (lat, lon)
    labels: np.ndarray
    sigma: float

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=np.float64).reshape(-1, 2)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if len(self.locations) < 1:
            raise ValueError("need at least one training point")
        if len(self.labels) != len(self.locations):
            raise ValueError("one label per training location required")
        if self.sigma <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.sigma}")


def rbf_predict(interp: RbfInterpolator, query_locations, tile: int = 2048,
                cutoff_sigmas: float | None = None) -> np.ndarray:
    """Normalized kernel-weighted average of training labels per query.

    Weights are exp(-||q - t||^2 / (2 sigma^2)) in raw degrees. Each query
    row factors out its largest exponent before exponentiating, so weights
    never all underflow. ``cutoff_sigmas`` (8 is a sensible value) zeroes
    training points beyond that many bandwidths; it stays off by default
    because truncation changes results.
    """
    q = np.asarray(query_locations, dtype=np.float64).reshape(-1, 2)
    t = interp.locations
    y = interp.labels
    inv = 1.0 / (2.0 * interp.sigma ** 2)
    out = np.empty(len(q))
    for start in range(0, len(q), tile):
        qt = q[start:start + tile]
        d2 = ((qt[:, None, :] - t[None, :, :]) ** 2).sum(axis=2)
        logw = -d2 * inv
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        if cutoff_sigmas is not None:
            w[d2 > (cutoff_sigmas * interp.sigma) ** 2] = 0.0
        denom = w.sum(axis=1)
        if np.any(denom <= 0):
            raise AssertionError("all kernel weights vanished despite stabilization")
        out[start:start + tile] = (w @ y) / denom
    return out


def tune_sigma(splits, sigmas):
    """Bandwidth maximizing mean validation R^2 over offset splits.

    Args:
        splits: iterable of (train_locations, train_labels, val_locations,
            val_labels), one per checkerboard offset.
        sigmas: candidate bandwidths, ascending; ties break to the smallest.

    Returns:
        (sigma_star, mean_r2_per_sigma)
    """
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if sigmas.size == 0:
        raise ValueError("empty sigma grid")
    splits = list(splits)
    if not splits:
        raise ValueError("no validation splits supplied")
    scores = np.zeros(sigmas.size)
    for train_loc, train_y, val_loc, val_y in splits:
        val_y = np.asarray(val_y, dtype=np.float64)
        if val_y.size == 0:
            raise ValueError("empty validation set")
        for i, sigma in enumerate(sigmas):
            interp = RbfInterpolator(train_loc, train_y, float(sigma))
            scores[i] += ridge.r_squared(val_y, rbf_predict(interp, val_loc))
    scores /= len(splits)
    best = int(np.argmax(scores))
    return float(sigmas[best]), scores


def rbf_checkerboard_experiment(labels, lats, lons, deltas=None, sigmas=None):
    """Interpolation-only analogue of the checkerboard experiment.

    Splits are identical to the feature-model experiment for the same
    inputs; per delta, one bandwidth is tuned across the four offsets.
    Returns a list of CheckerboardResult with ``lam`` holding sigma*.
    """
    y = np.asarray(labels, dtype=np.float64)
    lats = np.asarray(lats, dtype=np.float64)
    lons = np.asarray(lons, dtype=np.float64)
    deltas = DEFAULT_DELTAS if deltas is None else deltas
    sigmas = np.asarray(
        np.logspace(-2, 1, 8) if sigmas is None else sigmas, dtype=np.float64)

    results = []
    for delta in deltas:
        splits, offsets_used, skipped = [], [], []
        for offset in OFFSETS:
            train, val = CheckerboardSplit(delta, offset).split(lats, lons)
            yv = y[val]
            if train.sum() == 0 or val.sum() == 0 or np.all(yv == yv[0]):
                skipped.append(offset)
                continue
            splits.append((np.column_stack([lats[train], lons[train]]), y[train],
                           np.column_stack([lats[val], lons[val]]), yv))
            offsets_used.append(offset)
        if not splits:
            results.append(CheckerboardResult(delta=float(delta), lam=np.nan,
                                              offset_r2={}, skipped=tuple(skipped)))
            continue
        sigma_star, _ = tune_sigma(splits, sigmas)
        per_offset = {}
        for offset, (tl, ty, vl, vy) in zip(offsets_used, splits):
            interp = RbfInterpolator(tl, ty, sigma_star)
            per_offset[offset] = ridge.r_squared(vy, rbf_predict(interp, vl))
        results.append(CheckerboardResult(
            delta=float(delta), lam=sigma_star, offset_r2=per_offset,
            skipped=tuple(skipped)))
    return results
