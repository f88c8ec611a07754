"""Random-patch featurization: whitened random convolutional features.

A PatchBank freezes K/2 randomly sampled image patches together with a ZCA
whitening transform and a unit bias. Features K/2..K-1 are the negated
counterparts of the first half, so only K/2 inner-product maps are ever
computed. Each image becomes a K-vector by convolving every (whitened)
patch over the (whitened) image, applying ReLU, and average-pooling the
resulting activation map.
"""

from __future__ import annotations

import hashlib
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .grid import Image

BANK_MAGIC = b"MSKB"
BANK_VERSION = 1

# Tile of convolution positions processed per matmul. Part of the summation
# order, so a fixed default keeps f64 outputs bitwise reproducible. Sized so
# a tile of one big bank's activations stays cache-friendly.
DEFAULT_TILE = 512


def _im2col(pixels: np.ndarray, m: int):
    """All m x m x S sub-images of an image as rows of a 2D array.

    Rows are ordered by position (row-major) and each row flattens its
    sub-image in (row, col, band) order, matching flattened patches.
    """
    h, w, _ = pixels.shape
    if h < m or w < m:
        raise ValueError(f"image {h}x{w} smaller than patch width {m}")
    win = sliding_window_view(pixels, (m, m), axis=(0, 1))  # (ho, wo, S, m, m)
    ho, wo = win.shape[:2]
    cols = win.transpose(0, 1, 3, 4, 2).reshape(ho * wo, -1)
    return np.ascontiguousarray(cols, dtype=np.float64), ho, wo


def sample_patches(images, k_half: int, m: int, rng_seed: int = 0) -> np.ndarray:
    """Draw k_half patches uniformly over (image, top-left position) pairs.

    Every image must be at least m x m with a common band count. Returns a
    float64 array of shape (k_half, m, m, S).
    """
    if k_half < 1:
        raise ValueError("need at least one patch")
    if not images:
        raise ValueError("empty image pool")
    bands = images[0].pixels.shape[2]
    for img in images:
        h, w, s = img.pixels.shape
        if h < m or w < m:
            raise ValueError(f"image {h}x{w} smaller than patch width {m}")
        if s != bands:
            raise ValueError("mixed band counts in patch pool")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(rng_seed)))
    out = np.empty((k_half, m, m, bands))
    for p in range(k_half):
        img = images[int(rng.integers(0, len(images)))].pixels
        i = int(rng.integers(0, img.shape[0] - m + 1))
        j = int(rng.integers(0, img.shape[1] - m + 1))
        out[p] = img[i:i + m, j:j + m, :]
    return out


def fit_whitening(patches: np.ndarray, eps: float, relative: bool = False,
                  center: bool = True):
    """ZCA whitening of a patch sample.

    Computes the centering vector mu (zeros when ``center`` is off) and the
    symmetric map W = U (L + eps I)^(-1/2) U^T from the eigendecomposition
    U L U^T of the centered covariance, normalizing by the sample count.

    Args:
        patches: (n, ...) array; trailing axes are flattened.
        eps: regularizer added to every eigenvalue. Zero is accepted when
            the covariance is full rank.
        relative: interpret eps as a fraction of the largest eigenvalue.
        center: subtract the sample mean before whitening.

    Returns:
        (whiten, mu) with whiten of shape (d, d) and mu of shape (d,).
    """
    flat = np.asarray(patches, dtype=np.float64).reshape(len(patches), -1)
    n, d = flat.shape
    if n < 1:
        raise ValueError("need at least one patch to fit whitening")
    if not np.all(np.isfinite(flat)):
        raise ValueError("patches contain non-finite values")
    if eps < 0:
        raise ValueError(f"whitening regularizer must be nonnegative, got {eps}")

    mu = flat.mean(axis=0) if center else np.zeros(d)
    xc = flat - mu
    cov = xc.T @ xc / n
    lam, u = np.linalg.eigh(cov)
    lam = np.clip(lam, 0.0, None)
    top = float(lam[-1])
    eps_abs = eps * (top if top > 0 else 1.0) if relative else float(eps)
    if eps_abs == 0.0 and (top == 0.0 or lam[0] <= top * 1e-12):
        raise ValueError("covariance is rank deficient; use eps > 0")
    whiten = (u / np.sqrt(lam + eps_abs)) @ u.T
    return whiten, mu


@dataclass
class PatchBank:
    """Frozen featurizer: raw patches, whitening, and the unit bias.

    Derived fast-path arrays (the whitening folded into the patch matrix,
    plus per-feature offsets) are recomputed from the stored fields, so a
    bank built in memory and one loaded from disk behave identically.
    """

    patch_width: int
    n_bands: int
    n_features: int
    raw_patches: np.ndarray  # (K/2, M, M, S) float32
    mean: np.ndarray         # (d,) float64
    whiten: np.ndarray       # (d, d) float64
    eps: float
    rng_seed: int
    bias: float = 1.0
    _conv_weights: np.ndarray = field(init=False, repr=False)
    _conv_offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_features % 2 != 0 or self.n_features < 2:
            raise ValueError("feature count must be even and at least 2")
        d = self.patch_width ** 2 * self.n_bands
        if self.raw_patches.shape != (self.k_half, self.patch_width,
                                      self.patch_width, self.n_bands):
            raise ValueError("raw patch array shape mismatch")
        if self.mean.shape != (d,) or self.whiten.shape != (d, d):
            raise ValueError("whitening shape mismatch")
        flat = self.raw_patches.reshape(self.k_half, d).astype(np.float64)
        # z(s) = <W(s - mu), W(p - mu)> = s . q - mu . q with q = W^2 (p - mu);
        # the mu . q term folds into a per-feature offset.
        q = (flat - self.mean) @ self.whiten @ self.whiten
        object.__setattr__(self, "_conv_weights", q)
        object.__setattr__(self, "_conv_offsets", -(q @ self.mean))

    @property
    def k_half(self) -> int:
        return self.n_features // 2

    @property
    def patch_dim(self) -> int:
        return self.patch_width ** 2 * self.n_bands

    def tobytes(self) -> bytes:
        """Canonical little-endian serialization (also the file payload)."""
        head = BANK_MAGIC + struct.pack(
            "<HIIIdQ", BANK_VERSION, self.patch_width, self.n_bands,
            self.n_features, self.eps, self.rng_seed,
        )
        body = (
            self.mean.astype("<f8").tobytes()
            + np.ascontiguousarray(self.whiten, dtype="<f8").tobytes()
            + np.ascontiguousarray(self.raw_patches, dtype="<f4").tobytes()
        )
        return head + body

    @property
    def fingerprint(self) -> bytes:
        return hashlib.sha256(self.tobytes()).digest()


def build_bank(images, k: int = 8192, m: int = 3, eps: float = 1e-6,
               rng_seed: int = 0, center: bool = True) -> PatchBank:
    """Sample K/2 patches from the image pool and freeze the featurizer.

    ``eps`` is relative to the largest covariance eigenvalue. The image pool
    must be the training/validation imagery only; holdout images stay out.
    """
    if k % 2 != 0:
        raise ValueError(f"feature count must be even, got {k}")
    patches = sample_patches(images, k // 2, m, rng_seed)
    raw = patches.astype(np.float32)
    whiten, mu = fit_whitening(raw.astype(np.float64), eps, relative=True,
                               center=center)
    return PatchBank(
        patch_width=m,
        n_bands=raw.shape[3],
        n_features=k,
        raw_patches=raw,
        mean=mu,
        whiten=whiten,
        eps=float(eps),
        rng_seed=int(rng_seed),
    )


def activation_extent(image_hw, m: int):
    """Valid-convolution map shape (H - M + 1, W - M + 1)."""
    h, w = image_hw
    return h - m + 1, w - m + 1


def _preactivation(image: Image, bank: PatchBank, tile: int = DEFAULT_TILE):
    """Yield (start, z) tiles of the inner-product map, (tile, K/2) each."""
    cols, ho, wo = _im2col(image.pixels, bank.patch_width)
    n_pos = ho * wo
    for start in range(0, n_pos, tile):
        z = cols[start:start + tile] @ bank._conv_weights.T
        z += bank._conv_offsets
        yield start, z


def activation_map(image: Image, bank: PatchBank, k: int) -> np.ndarray:
    """Full ReLU activation map for feature k, stride 1, no padding."""
    if not (0 <= k < bank.n_features):
        raise ValueError(f"feature index {k} out of range [0, {bank.n_features})")
    if image.pixels.shape[2] != bank.n_bands:
        raise ValueError("image band count does not match bank")
    cols, ho, wo = _im2col(image.pixels, bank.patch_width)
    base = k % bank.k_half
    z = cols @ bank._conv_weights[base] + bank._conv_offsets[base]
    if k >= bank.k_half:
        z = -z
    return np.maximum(z + bank.bias, 0.0).reshape(ho, wo)


def featurize_image(image: Image, bank: PatchBank,
                    tile: int = DEFAULT_TILE) -> np.ndarray:
    """Average-pooled feature vector of length K (float64).

    Only the K/2 inner-product maps are computed; the second half reuses
    their negatives. Accumulation runs in float64 with a fixed tile order.
    """
    if image.pixels.shape[2] != bank.n_bands:
        raise ValueError("image band count does not match bank")
    acc_pos = np.zeros(bank.k_half)
    acc_neg = np.zeros(bank.k_half)
    n_pos = 0
    for _, z in _preactivation(image, bank, tile):
        n_pos += z.shape[0]
        z += bank.bias
        acc_pos += np.maximum(z, 0.0).sum(axis=0)
        z *= -1.0
        z += 2.0 * bank.bias  # relu(bias - z_inner) without a second temp
        np.maximum(z, 0.0, out=z)
        acc_neg += z.sum(axis=0)
    return np.concatenate([acc_pos, acc_neg]) / n_pos


@dataclass
class FeatureTable:
    """N x K pooled features with row locations and the producing bank's hash."""

    values: np.ndarray
    locations: list
    fingerprint: bytes
    precision: str = "f32"

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("feature values must be 2D")
        if len(self.locations) != self.values.shape[0]:
            raise ValueError("one location per feature row required")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def latlon(self) -> np.ndarray:
        return np.array([[c.lat, c.lon] for c in self.locations])


def featurize_corpus(images, bank: PatchBank, precision: str = "f32",
                     threads: int = 1, tile: int = DEFAULT_TILE) -> FeatureTable:
    """Featurize a corpus into a FeatureTable, rows in input order.

    Images are independent, so threading only changes scheduling, never
    values. Computation is float64 throughout; ``precision="f32"`` casts
    the finished table for storage.
    """
    if precision not in ("f32", "f64"):
        raise ValueError(f"precision must be f32 or f64, got {precision!r}")
    if not images:
        raise ValueError("empty corpus")
    bands = {img.pixels.shape[2] for img in images}
    if len(bands) != 1:
        raise ValueError(f"mixed band counts across images: {sorted(bands)}")
    if bands.pop() != bank.n_bands:
        raise ValueError("corpus band count does not match bank")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda im: featurize_image(im, bank, tile), images))
    else:
        rows = [featurize_image(im, bank, tile) for im in images]
    values = np.stack(rows)
    if precision == "f32":
        values = values.astype(np.float32)
    return FeatureTable(
        values=values,
        locations=[img.location for img in images],
        fingerprint=bank.fingerprint,
        precision=precision,
    )


def compression_ratio(image_hw, bands: int, k: int) -> float:
    """Stored-bytes ratio of 8-bit imagery to float32 features."""
    h, w = image_hw
    return (h * w * bands) / (k * 4)
