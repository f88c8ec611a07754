"""File formats: binary bank/feature/model containers, CSVs, and images.

Binary containers are little-endian with 4-byte magics ("MSKB" banks,
"MSKF" feature tables, "MSKM" models). Images travel as 8-bit PNG
(normalized by /255) or raw float64 .npy; synthetic corpora put both the
image files and a manifest CSV in one directory, with cell-indexed
filenames ``<row>_<col>.png``.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .features import BANK_MAGIC, BANK_VERSION, FeatureTable, PatchBank
from .grid import CellId, Image
from .ridge import RidgeModel, TRANSFORMS

FEATURES_MAGIC = b"MSKF"
FEATURES_VERSION = 1
MODEL_MAGIC = b"MSKM"
MODEL_VERSION = 1


# ---------------------------------------------------------------- banks

def write_bank(path, bank: PatchBank) -> None:
    Path(path).write_bytes(bank.tobytes())


def read_bank(path) -> PatchBank:
    buf = Path(path).read_bytes()
    if buf[:4] != BANK_MAGIC:
        raise ValueError(f"{path}: not a patch bank file")
    version, m, s, k, eps, seed = struct.unpack_from("<HIIIdQ", buf, 4)
    if version != BANK_VERSION:
        raise ValueError(f"{path}: unsupported bank version {version}")
    d = m * m * s
    off = 4 + struct.calcsize("<HIIIdQ")
    mu = np.frombuffer(buf, "<f8", d, off).copy()
    off += 8 * d
    whiten = np.frombuffer(buf, "<f8", d * d, off).reshape(d, d).copy()
    off += 8 * d * d
    raw = np.frombuffer(buf, "<f4", (k // 2) * d, off).reshape(k // 2, m, m, s).copy()
    return PatchBank(patch_width=m, n_bands=s, n_features=k, raw_patches=raw,
                     mean=mu, whiten=whiten, eps=eps, rng_seed=seed)


# ------------------------------------------------------------- features

def write_features(path, table: FeatureTable) -> None:
    n, k = table.values.shape
    head = FEATURES_MAGIC + struct.pack("<HQI", FEATURES_VERSION, n, k)
    head += table.fingerprint
    row_dtype = np.dtype([("lat", "<f8"), ("lon", "<f8"), ("x", "<f4", (k,))])
    rows = np.empty(n, dtype=row_dtype)
    rows["lat"] = [c.lat for c in table.locations]
    rows["lon"] = [c.lon for c in table.locations]
    rows["x"] = table.values.astype(np.float32)
    Path(path).write_bytes(head + rows.tobytes())


def read_features(path) -> FeatureTable:
    buf = Path(path).read_bytes()
    if buf[:4] != FEATURES_MAGIC:
        raise ValueError(f"{path}: not a feature table file")
    version, n, k = struct.unpack_from("<HQI", buf, 4)
    if version != FEATURES_VERSION:
        raise ValueError(f"{path}: unsupported feature table version {version}")
    off = 4 + struct.calcsize("<HQI")
    fingerprint = bytes(buf[off:off + 32])
    off += 32
    row_dtype = np.dtype([("lat", "<f8"), ("lon", "<f8"), ("x", "<f4", (k,))])
    rows = np.frombuffer(buf, row_dtype, n, off)
    locations = [CellId(-1, -1, float(lat), float(lon))
                 for lat, lon in zip(rows["lat"], rows["lon"])]
    return FeatureTable(values=rows["x"].copy(), locations=locations,
                        fingerprint=fingerprint, precision="f32")


def features_to_csv(path, table: FeatureTable) -> None:
    k = table.n_features
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lat", "lon"] + [f"x_{i}" for i in range(k)])
        for cell, row in zip(table.locations, table.values):
            writer.writerow([repr(cell.lat), repr(cell.lon)]
                            + [repr(float(v)) for v in row])


# --------------------------------------------------------------- models

def write_model(path, model: RidgeModel) -> None:
    k = model.n_features
    standardized = model.x_mean is not None
    fp = model.bank_fingerprint or b"\x00" * 32
    head = MODEL_MAGIC + struct.pack(
        "<HIdBBddB", MODEL_VERSION, k, model.lam,
        TRANSFORMS.index(model.transform), int(standardized),
        model.clip_lo, model.clip_hi, int(model.bank_fingerprint is not None),
    ) + fp
    body = b""
    if standardized:
        body += model.x_mean.astype("<f8").tobytes()
        body += model.x_scale.astype("<f8").tobytes()
    body += model.weights.astype("<f8").tobytes()
    body += struct.pack("<d", model.intercept)
    Path(path).write_bytes(head + body)


def read_model(path) -> RidgeModel:
    buf = Path(path).read_bytes()
    if buf[:4] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file")
    version, k, lam, t_idx, standardized, clip_lo, clip_hi, has_fp = \
        struct.unpack_from("<HIdBBddB", buf, 4)
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    off = 4 + struct.calcsize("<HIdBBddB")
    fp = bytes(buf[off:off + 32]) if has_fp else None
    off += 32
    mean = scale = None
    if standardized:
        mean = np.frombuffer(buf, "<f8", k, off).copy()
        off += 8 * k
        scale = np.frombuffer(buf, "<f8", k, off).copy()
        off += 8 * k
    weights = np.frombuffer(buf, "<f8", k, off).copy()
    off += 8 * k
    (intercept,) = struct.unpack_from("<d", buf, off)
    return RidgeModel(weights=weights, intercept=intercept, lam=lam,
                      transform=TRANSFORMS[t_idx], clip_lo=clip_lo,
                      clip_hi=clip_hi, x_mean=mean, x_scale=scale,
                      bank_fingerprint=fp)


# --------------------------------------------------------------- images

def image_filename(cell: CellId, fmt: str = "png") -> str:
    return f"{cell.row}_{cell.col}.{fmt}"


def save_image(image: Image, path) -> None:
    path = Path(path)
    if path.suffix == ".png":
        px = np.round(image.pixels * 255.0).astype(np.uint8)
        if px.shape[2] == 3:
            PILImage.fromarray(px, mode="RGB").save(path)
        elif px.shape[2] == 1:
            PILImage.fromarray(px[:, :, 0], mode="L").save(path)
        else:
            raise ValueError(f"PNG supports 1 or 3 bands, got {px.shape[2]}")
    elif path.suffix == ".npy":
        np.save(path, image.pixels)
    else:
        raise ValueError(f"unsupported image format {path.suffix!r}")


def load_image(path, location: CellId, source: str = "file") -> Image:
    path = Path(path)
    if path.suffix == ".png":
        with PILImage.open(path) as im:
            px = np.asarray(im, dtype=np.float64) / 255.0
        if px.ndim == 2:
            px = px[:, :, None]
    elif path.suffix == ".npy":
        px = np.load(path)
        if px.ndim == 2:
            px = px[:, :, None]
    else:
        raise ValueError(f"unsupported image format {path.suffix!r}")
    return Image(pixels=px, location=location, source=source)


# -------------------------------------------------------------- corpora

MANIFEST_NAME = "manifest.csv"
MANIFEST_HEADER = ["cell_row", "cell_col", "lat", "lon", "label"]


def write_corpus(dirpath, images, labels, fmt: str = "png") -> Path:
    """Write image files plus the manifest CSV; returns the manifest path."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    manifest = dirpath / MANIFEST_NAME
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for image, label in zip(images, labels):
            cell = image.location
            save_image(image, dirpath / image_filename(cell, fmt))
            writer.writerow([cell.row, cell.col, repr(cell.lat),
                             repr(cell.lon), repr(float(label))])
    return manifest


def read_corpus(dirpath):
    """Load (images, labels) from a corpus directory via its manifest."""
    dirpath = Path(dirpath)
    manifest = dirpath / MANIFEST_NAME
    if not manifest.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {dirpath}")
    images, labels = [], []
    with open(manifest, newline="") as fh:
        for rec in csv.DictReader(fh):
            cell = CellId(int(rec["cell_row"]), int(rec["cell_col"]),
                          float(rec["lat"]), float(rec["lon"]))
            path = dirpath / image_filename(cell)
            if not path.exists():
                path = path.with_suffix(".npy")
            try:
                images.append(load_image(path, cell))
            except Exception as exc:
                raise ValueError(f"unreadable image {path}: {exc}") from exc
            labels.append(float(rec["label"]))
    return images, np.asarray(labels)


# ----------------------------------------------------------------- CSVs

def read_labels_csv(path):
    """Read any CSV carrying lat, lon, and label columns."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        for need in ("lat", "lon", "label"):
            if need not in cols:
                raise ValueError(f"{path}: missing required column {need!r}")
        lat, lon, label = [], [], []
        for rec in reader:
            lat.append(float(rec["lat"]))
            lon.append(float(rec["lon"]))
            label.append(float(rec["label"]))
    return np.asarray(lat), np.asarray(lon), np.asarray(label)


def write_predictions_csv(path, latlon, predictions) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lat", "lon", "prediction"])
        for (lat, lon), pred in zip(latlon, predictions):
            writer.writerow([repr(float(lat)), repr(float(lon)),
                             repr(float(pred))])


def write_metrics_csv(path, metrics: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in metrics.items():
            writer.writerow([name, repr(float(value))])


def write_checkerboard_report(path, results) -> None:
    """Per-offset rows plus one summary row per delta (mean with min/max)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delta", "offset", "lambda", "r2", "r2_min", "r2_max"])
        for res in results:
            for offset, r2 in res.offset_r2.items():
                writer.writerow([repr(res.delta), offset, repr(res.lam),
                                 repr(r2), "", ""])
            if res.offset_r2:
                writer.writerow([repr(res.delta), "summary", repr(res.lam),
                                 repr(res.mean_r2), repr(res.min_r2),
                                 repr(res.max_r2)])
            else:
                writer.writerow([repr(res.delta), "skipped", "", "", "", ""])


def write_superres_csv(path, records) -> None:
    """records: iterables of (lat, lon, factor, block_row, block_col, value)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lat", "lon", "F", "block_row", "block_col", "value"])
        for lat, lon, factor, bi, bj, value in records:
            writer.writerow([repr(float(lat)), repr(float(lon)), int(factor),
                             int(bi), int(bj), repr(float(value))])


def write_pgm(path, array) -> None:
    """8-bit binary PGM dump of a 2D map, normalized to its own range."""
    arr = np.asarray(array, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    scaled = np.zeros_like(arr) if hi == lo else (arr - lo) / (hi - lo)
    px = np.round(scaled * 255).astype(np.uint8)
    h, w = px.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(px.tobytes())
