"""Cross-validated ridge regression heads over feature tables.

The solver centers features and labels on the training split and carries an
unpenalized intercept, so the penalty never fights the (strictly positive)
feature means. One eigendecomposition per training split is reused across
the whole lambda grid: primal (K x K) when K <= N, dual (N x N) otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .seeds import derive_seed

TRANSFORMS = ("identity", "log1p", "log")

DEFAULT_LAMBDAS = np.logspace(-4, 4, 12)


def transform_labels(y, kind: str) -> np.ndarray:
    """Forward label transform. log1p keeps zero labels; log needs y > 0."""
    y = np.asarray(y, dtype=np.float64)
    if kind == "identity":
        return y.copy()
    if kind == "log1p":
        bad = np.where(y < 0)[0]
        if bad.size:
            raise ValueError(f"log1p needs y >= 0; first offending row {bad[0]}")
        return np.log1p(y)
    if kind == "log":
        bad = np.where(y <= 0)[0]
        if bad.size:
            raise ValueError(f"log needs y > 0; first offending row {bad[0]}")
        return np.log(y)
    raise ValueError(f"unknown transform {kind!r}")


def inverse_transform(t, kind: str) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if kind == "identity":
        return t.copy()
    if kind == "log1p":
        return np.expm1(t)
    if kind == "log":
        return np.exp(t)
    raise ValueError(f"unknown transform {kind!r}")


def _shuffled_indices(n: int, rng) -> np.ndarray:
    """Fisher-Yates permutation using only integer draws (platform stable)."""
    idx = np.arange(n, dtype=np.int64)
    for i in range(n - 1):
        j = i + int(rng.integers(0, n - i))
        idx[i], idx[j] = idx[j], idx[i]
    return idx


def holdout_split(n: int, frac: float = 0.2, rng_seed: int = 0):
    """Disjoint, exhaustive (train+validation, test) index split."""
    if n < 2:
        raise ValueError("need at least two rows to split")
    if not (0.0 < frac < 1.0):
        raise ValueError(f"holdout fraction must be in (0, 1), got {frac}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(rng_seed)))
    idx = _shuffled_indices(n, rng)
    n_test = min(max(int(round(n * frac)), 1), n - 1)
    test = np.sort(idx[:n_test])
    trainval = np.sort(idx[n_test:])
    return trainval, test


def kfold_assign(n: int, folds: int = 5, rng_seed: int = 0) -> np.ndarray:
    """Random fold label per row; fold sizes differ by at most one."""
    if folds < 2:
        raise ValueError("need at least two folds")
    if n < folds:
        raise ValueError(f"cannot split {n} rows into {folds} folds")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(rng_seed)))
    idx = _shuffled_indices(n, rng)
    labels = np.empty(n, dtype=np.int64)
    sizes = np.full(folds, n // folds)
    sizes[: n % folds] += 1
    start = 0
    for f, size in enumerate(sizes):
        labels[idx[start:start + size]] = f
        start += size
    return labels


def standardize_columns(x):
    """Center and scale columns; constant columns get scale 1."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    return (x - mean) / scale, mean, scale


def _solve_path(xc, yc, lams):
    """Ridge weights for every lambda from one eigendecomposition.

    xc, yc must already be centered. Zero eigen-directions are dropped
    (pseudo-inverse behavior), which makes lambda = 0 the minimum-norm
    least squares solution.
    """
    n, k = xc.shape
    lams = np.asarray(lams, dtype=np.float64)
    betas = np.empty((len(lams), k))
    if k <= n:
        evals, vecs = np.linalg.eigh(xc.T @ xc)
        proj = vecs.T @ (xc.T @ yc)
        carrier = vecs
    else:
        evals, vecs = np.linalg.eigh(xc @ xc.T)
        proj = vecs.T @ yc
        carrier = xc.T @ vecs
    evals = np.clip(evals, 0.0, None)
    cutoff = evals[-1] * 1e-12 if evals[-1] > 0 else np.inf
    for i, lam in enumerate(lams):
        denom = evals + lam
        keep = denom > (cutoff if lam == 0 else 0.0)
        inv = np.zeros_like(denom)
        inv[keep] = 1.0 / denom[keep]
        betas[i] = carrier @ (inv * proj)
    return betas


def ridge_path(x, y, lams):
    """Fit the lambda ladder with internal centering.

    Returns:
        (betas, intercepts): (L, K) weights and length-L intercepts such
        that predictions are x @ beta + intercept.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise ValueError("non-finite values in regression inputs")
    if np.any(np.asarray(lams) < 0):
        raise ValueError("penalties must be nonnegative")
    xm = x.mean(axis=0)
    ym = y.mean()
    betas = _solve_path(x - xm, y - ym, lams)
    intercepts = ym - betas @ xm
    return betas, intercepts


def fit_ridge(x, y, lam: float):
    """Single-penalty ridge fit; returns (weights, intercept)."""
    betas, intercepts = ridge_path(x, y, [lam])
    return betas[0], float(intercepts[0])


def r_squared(y, yhat) -> float:
    """Fraction of variance explained, 1 - SSE/SST. May be negative."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.size < 2:
        raise ValueError("need two equal-length vectors of size >= 2")
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0:
        raise ValueError("labels have zero variance; R^2 undefined")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / sst


def weight_similarity(w_a, w_b) -> float:
    """Pearson correlation of two standardized weight vectors."""
    a = np.asarray(w_a, dtype=np.float64)
    b = np.asarray(w_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("weight vectors must have equal length")
    if a.std() == 0 or b.std() == 0:
        raise ValueError("zero-variance weight vector")
    a = (a - a.mean()) / a.std()
    b = (b - b.mean()) / b.std()
    return float(np.mean(a * b))


@dataclass
class RidgeModel:
    """A trained task head: weights plus everything needed to predict."""

    weights: np.ndarray
    intercept: float
    lam: float
    transform: str = "identity"
    clip_lo: float = -np.inf
    clip_hi: float = np.inf
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    bank_fingerprint: bytes | None = None

    @property
    def n_features(self) -> int:
        return len(self.weights)

    def scores(self, x) -> np.ndarray:
        """Pre-clip linear scores in transformed label space."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1] != self.n_features:
            raise ValueError(
                f"model expects {self.n_features} columns, got {x.shape[1]}"
            )
        if self.x_mean is not None:
            x = (x - self.x_mean) / self.x_scale
        return x @ self.weights + self.intercept


def train_model(x, y, lam: float, transform: str = "identity",
                standardize: bool = True, fingerprint: bytes | None = None,
                ) -> RidgeModel:
    """Fit one ridge head on (already holdout-free) training rows.

    Labels are transformed, clip bounds record the transformed training
    extrema, and standardization statistics come from these rows alone.
    """
    ty = transform_labels(y, transform)
    x = np.asarray(x, dtype=np.float64)
    mean = scale = None
    xs = x
    if standardize:
        xs, mean, scale = standardize_columns(x)
    weights, intercept = fit_ridge(xs, ty, lam)
    return RidgeModel(
        weights=weights,
        intercept=intercept,
        lam=float(lam),
        transform=transform,
        clip_lo=float(ty.min()),
        clip_hi=float(ty.max()),
        x_mean=mean,
        x_scale=scale,
        bank_fingerprint=fingerprint,
    )


def predict(model: RidgeModel, x) -> np.ndarray:
    """Predictions in original label space: clip in transformed space at the
    training extrema, then invert the label transform."""
    scores = model.scores(x)
    clipped = np.clip(scores, model.clip_lo, model.clip_hi)
    return inverse_transform(clipped, model.transform)


@dataclass
class CvReport:
    """Per-fold, per-lambda validation performance and the chosen penalty."""

    lambdas: np.ndarray
    fold_r2: np.ndarray          # (folds, L), NaN where a fold was degenerate
    mean_r2: np.ndarray          # (L,)
    chosen_index: int
    fold_assignments: np.ndarray
    boundary: bool = False
    degenerate_folds: tuple = ()
    fold_models: dict | None = None

    @property
    def chosen_lambda(self) -> float:
        return float(self.lambdas[self.chosen_index])

    @property
    def chosen_fold_r2(self) -> np.ndarray:
        return self.fold_r2[:, self.chosen_index]


def fit_fold(x, y, train_rows, lambdas, standardize: bool = True):
    """One cross-validation fold's fitting path.

    Reads only ``x[train_rows]`` and ``y[train_rows]``: standardization
    statistics and the ridge ladder both come from the training rows alone,
    so validation rows may hold anything (even NaN) without changing fits.

    Returns:
        dict with betas (L, K), intercepts (L,), mean, scale.
    """
    xt = np.asarray(x, dtype=np.float64)[train_rows]
    yt = np.asarray(y, dtype=np.float64)[train_rows]
    mean = scale = None
    if standardize:
        xt, mean, scale = standardize_columns(xt)
    betas, intercepts = ridge_path(xt, yt, lambdas)
    return {"betas": betas, "intercepts": intercepts,
            "mean": mean, "scale": scale}


def tune_lambda(x, y, lambdas=None, folds: int = 5, rng_seed: int = 0,
                standardize: bool = True, keep_fold_models: bool = False,
                ) -> CvReport:
    """Pick the penalty maximizing mean validation R^2 across folds.

    Standardization statistics and fits use only each fold's training rows;
    validation rows are never read before scoring. Ties break to the
    smallest lambda, and a winner on the grid edge sets ``boundary``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    lambdas = np.asarray(DEFAULT_LAMBDAS if lambdas is None else lambdas,
                         dtype=np.float64)
    if lambdas.size == 0:
        raise ValueError("empty lambda grid")
    if np.any(np.diff(lambdas) < 0):
        raise ValueError("lambda grid must be sorted ascending")
    n = len(y)
    if n < folds:
        raise ValueError(f"fewer rows ({n}) than folds ({folds})")

    assignments = kfold_assign(n, folds, rng_seed)
    fold_r2 = np.full((folds, lambdas.size), np.nan)
    degenerate = []
    fold_models = {} if keep_fold_models else None
    for f in range(folds):
        va = assignments == f
        tr = ~va
        fit = fit_fold(x, y, tr, lambdas, standardize)
        betas, intercepts = fit["betas"], fit["intercepts"]
        mean, scale = fit["mean"], fit["scale"]
        if keep_fold_models:
            fold_models[f] = fit
        yv = y[va]
        if np.sum((yv - yv.mean()) ** 2) == 0:
            degenerate.append(f)
            continue
        xv = x[va]
        if standardize:
            xv = (xv - mean) / scale
        preds = xv @ betas.T + intercepts
        sst = float(np.sum((yv - yv.mean()) ** 2))
        fold_r2[f] = 1.0 - np.sum((preds - yv[:, None]) ** 2, axis=0) / sst

    if len(degenerate) == folds:
        raise ValueError("every validation fold has zero label variance")
    with np.errstate(invalid="ignore"):
        mean_r2 = np.nanmean(fold_r2, axis=0)
    chosen = int(np.nanargmax(mean_r2))  # first max = smallest lambda on ties
    return CvReport(
        lambdas=lambdas,
        fold_r2=fold_r2,
        mean_r2=mean_r2,
        chosen_index=chosen,
        fold_assignments=assignments,
        boundary=chosen in (0, lambdas.size - 1),
        degenerate_folds=tuple(degenerate),
        fold_models=fold_models,
    )


@dataclass
class TaskReport:
    """End-to-end training diagnostics for one task."""

    cv: CvReport
    trainval_idx: np.ndarray
    test_idx: np.ndarray
    train_r2: float
    holdout_r2: float

    @property
    def val_r2_spread(self):
        at_chosen = self.cv.chosen_fold_r2
        return float(np.nanmin(at_chosen)), float(np.nanmax(at_chosen))


def train_task(x, y, lambdas=None, transform: str = "identity",
               folds: int = 5, holdout_frac: float = 0.2, rng_seed: int = 0,
               standardize: bool = True, fingerprint: bytes | None = None):
    """Full discipline: holdout split, k-fold tuning, refit at lambda*.

    The holdout rows are untouched until the final R^2 check. Returns
    (model, TaskReport) with R^2 figures in original label space.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    trainval, test = holdout_split(len(y), holdout_frac,
                                   derive_seed(rng_seed, "holdout"))
    ty = transform_labels(y, transform)
    cv = tune_lambda(x[trainval], ty[trainval], lambdas, folds,
                     derive_seed(rng_seed, "folds"), standardize)
    model = train_model(x[trainval], y[trainval], cv.chosen_lambda, transform,
                        standardize, fingerprint)
    report = TaskReport(
        cv=cv,
        trainval_idx=trainval,
        test_idx=test,
        train_r2=r_squared(y[trainval], predict(model, x[trainval])),
        holdout_r2=r_squared(y[test], predict(model, x[test])),
    )
    return model, report
