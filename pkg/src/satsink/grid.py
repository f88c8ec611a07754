"""Geographic grid, cell sampling, image coarsening, and synthetic corpora.

The grid tiles a lat/lon box with cells that are squares in physical (km)
space: every row has the same angular height, while the angular width of a
row's cells grows with |latitude| as 1/cos(lat). Rows are anchored at
``lat_min`` and columns at ``lon_min``; enumeration is row-major.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KM_PER_DEG = 111.32

# Label kinds for synthetic tasks.
KIND_SUBIMAGE_LINEAR = "subimage-linear"
KIND_SPATIAL = "spatially-autocorrelated"

_MAX_ABS_LAT = 85.0


@dataclass(frozen=True)
class CellId:
    """A grid cell identified by (row, col) with its centroid coordinates."""

    row: int
    col: int
    lat: float
    lon: float


class Grid:
    """Physical-square grid over a lat/lon box.

    Args:
        lat_min, lat_max, lon_min, lon_max: bounding box in degrees.
        cell_size_km: side of each cell in kilometers.

    Raises:
        ValueError: for degenerate bounds, |lat| >= 85 degrees, or bounds
            too small to hold a single cell.
    """

    def __init__(self, lat_min, lat_max, lon_min, lon_max, cell_size_km):
        if not all(map(math.isfinite, (lat_min, lat_max, lon_min, lon_max))):
            raise ValueError("grid bounds must be finite")
        if cell_size_km <= 0:
            raise ValueError(f"cell_size_km must be positive, got {cell_size_km}")
        if lat_max <= lat_min or lon_max <= lon_min:
            raise ValueError("degenerate bounds: box must have positive area")
        if max(abs(lat_min), abs(lat_max)) >= _MAX_ABS_LAT:
            raise ValueError(f"latitudes must satisfy |lat| < {_MAX_ABS_LAT}")

        self.lat_min = float(lat_min)
        self.lat_max = float(lat_max)
        self.lon_min = float(lon_min)
        self.lon_max = float(lon_max)
        self.cell_size_km = float(cell_size_km)

        self.cell_height_deg = cell_size_km / KM_PER_DEG
        # Tiny slack so exact multiples of the cell size are not lost to
        # float rounding.
        self.n_rows = int(
            math.floor((lat_max - lat_min) / self.cell_height_deg + 1e-9)
        )
        if self.n_rows < 1:
            raise ValueError("bounds smaller than one cell in latitude")

        centers = self.lat_min + (np.arange(self.n_rows) + 0.5) * self.cell_height_deg
        self.row_center_lat = centers
        self.row_width_deg = cell_size_km / (KM_PER_DEG * np.cos(np.radians(centers)))
        span = self.lon_max - self.lon_min
        self.row_ncols = np.floor(span / self.row_width_deg + 1e-9).astype(np.int64)
        if np.any(self.row_ncols < 1):
            raise ValueError("bounds smaller than one cell in longitude")
        self._row_offsets = np.concatenate([[0], np.cumsum(self.row_ncols)])

    @property
    def n_cells(self) -> int:
        return int(self._row_offsets[-1])

    def cell(self, row: int, col: int) -> CellId:
        if not (0 <= row < self.n_rows):
            raise ValueError(f"row {row} out of range [0, {self.n_rows})")
        if not (0 <= col < self.row_ncols[row]):
            raise ValueError(f"col {col} out of range for row {row}")
        lon = self.lon_min + (col + 0.5) * self.row_width_deg[row]
        return CellId(int(row), int(col), float(self.row_center_lat[row]), float(lon))

    def cells(self):
        """Yield every cell in deterministic row-major order."""
        for row in range(self.n_rows):
            for col in range(int(self.row_ncols[row])):
                yield self.cell(row, col)

    def cell_at(self, lat: float, lon: float) -> CellId:
        """Return the cell containing (lat, lon); boundary points go to the
        lower/left cell per the floor rule."""
        row = int(math.floor((lat - self.lat_min) / self.cell_height_deg))
        if not (0 <= row < self.n_rows):
            raise ValueError(f"latitude {lat} outside grid")
        col = int(math.floor((lon - self.lon_min) / self.row_width_deg[row]))
        if not (0 <= col < self.row_ncols[row]):
            raise ValueError(f"longitude {lon} outside grid row {row}")
        return self.cell(row, col)

    def flat_cell(self, index: int) -> CellId:
        """Cell for a flat row-major index in [0, n_cells)."""
        if not (0 <= index < self.n_cells):
            raise ValueError(f"flat index {index} out of range")
        row = int(np.searchsorted(self._row_offsets, index, side="right")) - 1
        return self.cell(row, index - int(self._row_offsets[row]))


def build_grid(bounds, cell_size_km) -> Grid:
    """Construct a Grid from (lat_min, lat_max, lon_min, lon_max) bounds."""
    lat_min, lat_max, lon_min, lon_max = bounds
    return Grid(lat_min, lat_max, lon_min, lon_max, cell_size_km)


def sample_cells(grid: Grid, n: int, weights=None, rng_seed: int = 0):
    """Sample n distinct cells from the grid.

    Uniform sampling uses an integer-only partial Fisher-Yates shuffle so the
    result is reproducible across platforms. Weighted sampling draws
    sequentially without replacement, removing each drawn cell's mass.

    Args:
        grid: the grid to sample from.
        n: number of cells, at most ``grid.n_cells``.
        weights: optional nonnegative per-cell weights in flat row-major
            order; must carry positive total mass.
        rng_seed: seed for the sampling stream.

    Returns:
        List of n distinct CellIds.
    """
    total = grid.n_cells
    if n < 0 or n > total:
        raise ValueError(f"cannot sample {n} of {total} cells")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(rng_seed)))

    if weights is None:
        pool = np.arange(total, dtype=np.int64)
        for i in range(n):
            j = i + int(rng.integers(0, total - i))
            pool[i], pool[j] = pool[j], pool[i]
        chosen = pool[:n]
    else:
        w = np.asarray(weights, dtype=np.float64).copy()
        if w.shape != (total,):
            raise ValueError(f"weights must have length {total}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if w.sum() <= 0:
            raise ValueError("weights sum to zero")
        chosen = np.empty(n, dtype=np.int64)
        for i in range(n):
            mass = w.sum()
            if mass <= 0:
                raise ValueError(
                    f"only {i} cells carry weight, cannot sample {n}"
                )
            cum = np.cumsum(w)
            idx = int(np.searchsorted(cum, rng.random() * mass, side="right"))
            idx = min(idx, total - 1)
            while w[idx] == 0:  # float edge landed on an exhausted cell
                idx += 1
            chosen[i] = idx
            w[idx] = 0.0
    return [grid.flat_cell(int(i)) for i in chosen]


@dataclass
class Image:
    """An H x W x S raster with intensities in [0, 1] tied to a grid cell."""

    pixels: np.ndarray
    location: CellId
    source: str = "synthetic"

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] < 1:
            raise ValueError(f"pixels must be H x W x S, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("pixel intensities must be finite")
        self.pixels = px

    @property
    def shape(self):
        return self.pixels.shape


def _overlap_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) matrix of fractional box-overlap weights."""
    if n_out > n_in:
        raise ValueError(f"target {n_out} larger than source {n_in}")
    w = np.zeros((n_out, n_in))
    step = n_in / n_out
    for o in range(n_out):
        lo, hi = o * step, (o + 1) * step
        i0, i1 = int(math.floor(lo)), int(math.ceil(hi))
        for i in range(i0, min(i1, n_in)):
            w[o, i] = min(hi, i + 1) - max(lo, i)
    return w / step


def coarsen(image: Image, target_hw) -> Image:
    """Area-weighted box downsampling of an image, per band.

    Each output pixel is the mean of the input pixels it covers, weighting
    partially covered pixels by their overlap fraction. When the target
    divides the source this reduces to exact block averaging.
    """
    if np.isscalar(target_hw):
        ht, wt = int(target_hw), int(target_hw)
    else:
        ht, wt = int(target_hw[0]), int(target_hw[1])
    h, w, _ = image.pixels.shape
    wr = _overlap_weights(h, ht)
    wc = _overlap_weights(w, wt)
    out = np.einsum("oi,ijs,pj->ops", wr, image.pixels, wc, optimize=True)
    out = np.clip(out, 0.0, 1.0)
    return Image(pixels=out, location=image.location, source=image.source)


@dataclass(frozen=True)
class SyntheticTask:
    """Recipe for a reproducible synthetic image/label corpus.

    kind "subimage-linear" labels each image with the exact fraction of
    pixels where band 1 strictly exceeds bands 0 and 2. kind
    "spatially-autocorrelated" labels each cell with a smooth function of
    its centroid plus Gaussian noise, and bakes the same signal into the
    imagery so image content carries the label.
    """

    seed: int
    kind: str = KIND_SUBIMAGE_LINEAR
    noise_sigma: float = 0.0
    field_scale_deg: float = 8.0

    def __post_init__(self):
        if self.kind not in (KIND_SUBIMAGE_LINEAR, KIND_SPATIAL):
            raise ValueError(f"unknown label kind {self.kind!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


def band_dominance_fraction(pixels: np.ndarray) -> float:
    """Fraction of pixels where band 1 strictly exceeds bands 0 and 2."""
    if pixels.shape[2] < 3:
        raise ValueError("band-dominance label needs at least 3 bands")
    dom = (pixels[:, :, 1] > pixels[:, :, 0]) & (pixels[:, :, 1] > pixels[:, :, 2])
    return float(dom.mean())


def band_dominance_subgrid(pixels: np.ndarray, factor: int) -> np.ndarray:
    """Per-block dominance fractions on an F x F near-equal partition."""
    dom = (
        (pixels[:, :, 1] > pixels[:, :, 0]) & (pixels[:, :, 1] > pixels[:, :, 2])
    ).astype(np.float64)
    rows = np.array_split(np.arange(dom.shape[0]), factor)
    cols = np.array_split(np.arange(dom.shape[1]), factor)
    out = np.empty((factor, factor))
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            out[i, j] = dom[np.ix_(r, c)].mean()
    return out


def smooth_spatial_signal(lat, lon, scale_deg: float = 8.0):
    """Smooth [0.15, 0.85]-valued field of location, used as the spatial
    label signal. Incommensurate wavelengths avoid degenerate symmetry."""
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    u = (
        0.55 * np.sin(2 * np.pi * lon / (2.0 * scale_deg))
        + 0.45 * np.cos(2 * np.pi * lat / (1.37 * scale_deg))
    )
    return 0.5 + 0.35 * np.clip(u, -1.0, 1.0)


def _bilinear_upsample(coarse: np.ndarray, hw: int) -> np.ndarray:
    """Upsample a small square field to hw x hw by bilinear interpolation."""
    m = coarse.shape[0]
    pos = (np.arange(hw) + 0.5) / hw * (m - 1)
    i0 = np.clip(np.floor(pos).astype(int), 0, m - 2)
    t = pos - i0
    rows = coarse[i0, :] * (1 - t)[:, None] + coarse[i0 + 1, :] * t[:, None]
    out = rows[:, i0] * (1 - t)[None, :] + rows[:, i0 + 1] * t[None, :]
    return out


def _render_image(rng, hw: int, bands: int, level: float, contrast: float):
    """Render pixels whose band-1 dominance tracks a smooth within-image
    field centered on ``level``. Quantized to 8-bit steps so PNG round-trips
    are lossless."""
    coarse = rng.standard_normal((4, 4))
    u = _bilinear_upsample(coarse, hw)
    u = u / max(1e-12, np.abs(u).max())
    # Dominance rate per pixel; level sets the image-wide rate. The pixel
    # noise is strong relative to the drive, so the rate is only partially
    # recoverable from local image structure.
    drive = np.clip(level + contrast * u, 0.02, 0.98)
    noise = rng.random((hw, hw, bands))
    px = 0.20 + 0.45 * noise
    px[:, :, 1] += 0.15 * drive
    for b in (0, 2):
        if b < bands:
            px[:, :, b] += 0.15 * (1.0 - drive)
    px = np.clip(px, 0.0, 1.0)
    return np.round(px * 255.0) / 255.0


def synth_corpus(task: SyntheticTask, n: int, hw: int = 64, bands: int = 3,
                 grid: Grid | None = None, cells=None):
    """Generate a deterministic corpus of n labeled images.

    Args:
        task: corpus recipe; regeneration with the same task is bit-identical.
        n: number of images, at least 1.
        hw: image side in pixels.
        bands: spectral bands; the dominance statistic needs at least 3.
        grid: optional grid to place images on; a default 10 x 10 degree grid
            is built when omitted.
        cells: optional pre-sampled cells (length n) overriding sampling.

    Returns:
        (images, labels) with labels as a float64 array of length n.
    """
    if n < 1:
        raise ValueError("corpus size must be at least 1")
    if hw < 1:
        raise ValueError("image side must be positive")
    if bands < 3:
        raise ValueError("synthetic corpora need at least 3 bands")
    if grid is None:
        grid = Grid(30.0, 40.0, -100.0, -90.0, cell_size_km=1.0)
    if cells is None:
        cells = sample_cells(grid, n, rng_seed=task.seed)
    elif len(cells) != n:
        raise ValueError("cells, when given, must have length n")

    root = np.random.SeedSequence([task.seed, 0x5EED])
    label_rng = np.random.Generator(np.random.PCG64(root))
    images, labels = [], np.empty(n)
    for i, cell in enumerate(cells):
        img_rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([task.seed, 1, i]))
        )
        if task.kind == KIND_SUBIMAGE_LINEAR:
            level = 0.1 + 0.8 * img_rng.random()
            px = _render_image(img_rng, hw, bands, level, contrast=0.45)
            labels[i] = band_dominance_fraction(px)
        else:
            level = smooth_spatial_signal(cell.lat, cell.lon, task.field_scale_deg)
            px = _render_image(img_rng, hw, bands, float(level), contrast=0.25)
            labels[i] = float(level) + task.noise_sigma * label_rng.standard_normal()
        images.append(Image(pixels=px, location=cell, source="synthetic"))
    return images, labels
