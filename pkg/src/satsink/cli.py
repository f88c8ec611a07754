"""Command-line pipeline: synth, featurize, train, predict, eval,
checkerboard, rbf, superres, fuse.

Every command resolves its parameters from defaults, then an optional flat
key=value --config file, then explicit flags, and writes the fully resolved
config beside its outputs so any run can be reproduced bit for bit. All
randomness flows from the single ``seed`` key through named sub-streams.

Exit codes: 0 success, 2 usage or config error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io, multisensor, ridge, spatial, superres
from .features import build_bank, compression_ratio, featurize_corpus
from .grid import Grid, SyntheticTask, synth_corpus
from .seeds import derive_seed

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _parse_floats(text):
    try:
        return [float(tok) for tok in str(text).split(",") if tok.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def _parse_ints(text):
    return [int(v) for v in _parse_floats(text)]


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


# Per-command parameter schema: key -> (converter, default).
_GRID_KEYS = {
    "lat_min": (float, 30.0),
    "lat_max": (float, 40.0),
    "lon_min": (float, -100.0),
    "lon_max": (float, -90.0),
    "cell_km": (float, 1.0),
}

SCHEMAS = {
    "synth": {
        "out": (str, None), "seed": (int, 0), "n": (int, 100),
        "hw": (int, 64), "bands": (int, 3),
        "kind": (str, "subimage-linear"), "noise": (float, 0.0),
        "field_scale": (float, 8.0), **_GRID_KEYS,
    },
    "featurize": {
        "out": (str, None), "images": (str, None), "seed": (int, 0),
        "k": (int, 8192), "m": (int, 3), "eps": (float, 1e-6),
        "precision": (str, "f32"), "threads": (int, os.cpu_count() or 1),
        "csv": (_parse_bool, False), "center": (_parse_bool, True),
    },
    "train": {
        "out": (str, None), "features": (str, None), "labels": (str, None),
        "seed": (int, 0), "transform": (str, "identity"),
        "folds": (int, 5), "holdout_frac": (float, 0.2),
        "lambdas": (_parse_floats, list(ridge.DEFAULT_LAMBDAS)),
        "standardize": (_parse_bool, True), **_GRID_KEYS,
    },
    "predict": {
        "out": (str, None), "features": (str, None), "model": (str, None),
        "seed": (int, 0),
    },
    "eval": {
        "out": (str, None), "features": (str, None), "labels": (str, None),
        "seed": (int, 0), "transform": (str, "identity"),
        "folds": (int, 5), "holdout_frac": (float, 0.2),
        "lambdas": (_parse_floats, list(ridge.DEFAULT_LAMBDAS)),
        "standardize": (_parse_bool, True), **_GRID_KEYS,
    },
    "checkerboard": {
        "out": (str, None), "features": (str, None), "labels": (str, None),
        "seed": (int, 0),
        "deltas": (_parse_floats, list(spatial.DEFAULT_DELTAS)),
        "lambdas": (_parse_floats, list(ridge.DEFAULT_LAMBDAS)),
        "standardize": (_parse_bool, True), **_GRID_KEYS,
    },
    "rbf": {
        "out": (str, None), "labels": (str, None), "seed": (int, 0),
        "deltas": (_parse_floats, list(spatial.DEFAULT_DELTAS)),
        "sigmas": (_parse_floats, list(np.logspace(-2, 1, 8))),
    },
    "superres": {
        "out": (str, None), "images": (str, None), "bank": (str, None),
        "model": (str, None), "seed": (int, 0),
        "factors": (_parse_ints, [2, 4, 8, 16]),
        "smooth_bw": (float, 0.0), "pgm": (_parse_bool, False),
        "threads": (int, os.cpu_count() or 1),
    },
    "fuse": {
        "out": (str, None), "features": (str, None), "sensor2": (str, None),
        "labels": (str, None), "seed": (int, 0),
        "sensor2_format": (str, "raw"),
        "lambdas1": (_parse_floats, [1e-2, 1.0, 1e2]),
        "lambdas2": (_parse_floats, [1e-2, 1.0, 1e2, 1e12]),
        "folds": (int, 5), "standardize": (_parse_bool, True), **_GRID_KEYS,
    },
}

_REQUIRED = {
    "synth": ("out",),
    "featurize": ("out", "images"),
    "train": ("out", "features", "labels"),
    "predict": ("out", "features", "model"),
    "eval": ("out", "features", "labels"),
    "checkerboard": ("out", "features", "labels"),
    "rbf": ("out", "labels"),
    "superres": ("out", "images", "bank", "model"),
    "fuse": ("out", "features", "sensor2", "labels"),
}


def _read_config_file(path):
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _resolve(command, config_path, flag_values):
    """defaults <- config file <- explicit flags, with type coercion."""
    schema = SCHEMAS[command]
    resolved = {key: default for key, (_, default) in schema.items()}
    if config_path:
        for key, raw in _read_config_file(config_path).items():
            if key == "command":
                continue
            if key not in schema:
                raise UsageError(f"unknown config key {key!r} for {command}")
            resolved[key] = schema[key][0](raw)
    for key, value in flag_values.items():
        if value is not None:
            conv = schema[key][0]
            resolved[key] = conv(value)
    for key in _REQUIRED[command]:
        if resolved[key] is None:
            raise UsageError(f"{command}: missing required parameter --{key.replace('_', '-')}")
    return resolved


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(repr(float(v)) if isinstance(v, float) or isinstance(v, np.floating)
                        else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_resolved(cfg, command, out_path):
    out_path = Path(out_path)
    if out_path.suffix:
        target = out_path.with_name(out_path.stem + ".config")
        out_path.parent.mkdir(parents=True, exist_ok=True)
    else:
        out_path.mkdir(parents=True, exist_ok=True)
        target = out_path / f"{command}.config"
    lines = [f"command={command}"]
    lines += [f"{key}={_format_value(cfg[key])}" for key in sorted(cfg)]
    target.write_text("\n".join(lines) + "\n")
    return target


def _grid_from(cfg) -> Grid:
    try:
        return Grid(cfg["lat_min"], cfg["lat_max"], cfg["lon_min"],
                    cfg["lon_max"], cfg["cell_km"])
    except ValueError as exc:
        raise UsageError(f"bad grid parameters: {exc}") from exc


def _join_features_labels(table, labels_path, grid: Grid):
    """Match feature rows to label rows through their containing grid cell."""
    lat, lon, label = io.read_labels_csv(labels_path)

    def keys(lats, lons, what):
        out = []
        for la, lo in zip(lats, lons):
            try:
                cell = grid.cell_at(float(la), float(lo))
            except ValueError as exc:
                raise DataError(f"{what} location ({la}, {lo}) "
                                f"outside the grid: {exc}") from exc
            out.append((cell.row, cell.col))
        return out

    latlon = table.latlon()
    feat_keys = keys(latlon[:, 0], latlon[:, 1], "feature")
    label_map = dict(zip(keys(lat, lon, "label"), label))
    unmatched = sorted(set(feat_keys) - set(label_map))
    if unmatched:
        head = ", ".join(map(str, unmatched[:10]))
        raise DataError(f"{len(unmatched)} feature cells have no label: {head}")
    y = np.array([label_map[key] for key in feat_keys])
    return y


def cmd_synth(cfg) -> int:
    if cfg["n"] < 1:
        raise UsageError(f"corpus size must be positive, got {cfg['n']}")
    task = SyntheticTask(seed=derive_seed(cfg["seed"], "corpus"),
                         kind=cfg["kind"], noise_sigma=cfg["noise"],
                         field_scale_deg=cfg["field_scale"])
    grid = _grid_from(cfg)
    images, labels = synth_corpus(task, cfg["n"], cfg["hw"], cfg["bands"],
                                  grid=grid)
    manifest = io.write_corpus(cfg["out"], images, labels)
    print(f"wrote {len(images)} images and {manifest}")
    return 0


def cmd_featurize(cfg) -> int:
    t0 = time.perf_counter()
    try:
        images, _ = io.read_corpus(cfg["images"])
    except (FileNotFoundError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    bank = build_bank(images, k=cfg["k"], m=cfg["m"], eps=cfg["eps"],
                      rng_seed=derive_seed(cfg["seed"], "patches"),
                      center=cfg["center"])
    table = featurize_corpus(images, bank, precision=cfg["precision"],
                             threads=cfg["threads"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    io.write_bank(out / "bank.mskb", bank)
    io.write_features(out / "features.mskf", table)
    if cfg["csv"]:
        io.features_to_csv(out / "features.csv", table)
    wall = time.perf_counter() - t0
    h, w, s = images[0].pixels.shape
    nbytes = (out / "features.mskf").stat().st_size
    ratio = compression_ratio((h, w), s, bank.n_features)
    print(f"N={table.n_rows} K={bank.n_features} M={bank.patch_width} "
          f"wall={wall:.2f}s bytes={nbytes} compression={ratio:.2f}x")
    return 0


def _load_features(path):
    try:
        return io.read_features(path)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc


def _run_training(cfg):
    table = _load_features(cfg["features"])
    grid = _grid_from(cfg)
    try:
        y = _join_features_labels(table, cfg["labels"], grid)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    x = table.values.astype(np.float64)
    model, report = ridge.train_task(
        x, y, lambdas=cfg["lambdas"], transform=cfg["transform"],
        folds=cfg["folds"], holdout_frac=cfg["holdout_frac"],
        rng_seed=cfg["seed"], standardize=cfg["standardize"],
        fingerprint=table.fingerprint)
    return table, y, model, report


def cmd_train(cfg) -> int:
    _, _, model, report = _run_training(cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    io.write_model(out / "model.mskm", model)
    with open(out / "cv_report.csv", "w", newline="") as fh:
        fh.write("lambda,mean_r2," +
                 ",".join(f"fold_{f}" for f in range(cfg["folds"])) + "\n")
        for i, lam in enumerate(report.cv.lambdas):
            row = [repr(float(lam)), repr(float(report.cv.mean_r2[i]))]
            row += [repr(float(v)) for v in report.cv.fold_r2[:, i]]
            fh.write(",".join(row) + "\n")
    lo, hi = report.val_r2_spread
    flag = " (boundary!)" if report.cv.boundary else ""
    print(f"lambda*={report.cv.chosen_lambda:g}{flag} "
          f"val_r2={np.nanmean(report.cv.chosen_fold_r2):.4f} "
          f"[{lo:.4f}, {hi:.4f}] holdout_r2={report.holdout_r2:.4f}")
    return 0


def cmd_eval(cfg) -> int:
    _, _, _, report = _run_training(cfg)
    lo, hi = report.val_r2_spread
    metrics = {
        "lambda": report.cv.chosen_lambda,
        "boundary": float(report.cv.boundary),
        "val_r2_mean": float(np.nanmean(report.cv.chosen_fold_r2)),
        "val_r2_min": lo,
        "val_r2_max": hi,
        "train_r2": report.train_r2,
        "holdout_r2": report.holdout_r2,
    }
    for f, r2 in enumerate(report.cv.chosen_fold_r2):
        metrics[f"val_r2_fold_{f}"] = float(r2)
    out = Path(cfg["out"])
    target = out if out.suffix else out / "metrics.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    io.write_metrics_csv(target, metrics)
    print(f"holdout_r2={report.holdout_r2:.4f} "
          f"val_r2=[{lo:.4f}, {hi:.4f}]")
    return 0


def cmd_predict(cfg) -> int:
    table = _load_features(cfg["features"])
    try:
        model = io.read_model(cfg["model"])
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    if model.bank_fingerprint is not None and \
            model.bank_fingerprint != table.fingerprint:
        raise DataError("model and feature table come from different banks")
    preds = ridge.predict(model, table.values.astype(np.float64))
    out = Path(cfg["out"])
    target = out if out.suffix else out / "predictions.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    io.write_predictions_csv(target, table.latlon(), preds)
    print(f"wrote {len(preds)} predictions to {target}")
    return 0


def cmd_checkerboard(cfg) -> int:
    table = _load_features(cfg["features"])
    grid = _grid_from(cfg)
    try:
        y = _join_features_labels(table, cfg["labels"], grid)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    latlon = table.latlon()
    results = spatial.checkerboard_experiment(
        table.values.astype(np.float64), y, latlon[:, 0], latlon[:, 1],
        deltas=cfg["deltas"], lambdas=cfg["lambdas"],
        standardize=cfg["standardize"])
    out = Path(cfg["out"])
    target = out if out.suffix else out / "checkerboard.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    io.write_checkerboard_report(target, results)
    print(f"wrote {sum(len(r.offset_r2) for r in results)} result rows to {target}")
    return 0


def cmd_rbf(cfg) -> int:
    try:
        lat, lon, y = io.read_labels_csv(cfg["labels"])
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    results = spatial.rbf_checkerboard_experiment(
        y, lat, lon, deltas=cfg["deltas"], sigmas=cfg["sigmas"])
    out = Path(cfg["out"])
    target = out if out.suffix else out / "rbf.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    io.write_checkerboard_report(target, results)
    print(f"wrote RBF report to {target}")
    return 0


def cmd_superres(cfg) -> int:
    try:
        images, _ = io.read_corpus(cfg["images"])
        bank = io.read_bank(cfg["bank"])
        model = io.read_model(cfg["model"])
    except (FileNotFoundError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    if model.bank_fingerprint is not None and \
            model.bank_fingerprint != bank.fingerprint:
        raise DataError("model was trained on a different bank")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    records = []
    if cfg["threads"] > 1:
        with ThreadPoolExecutor(max_workers=cfg["threads"]) as pool:
            score_maps = list(pool.map(
                lambda im: superres.superres_map(im, bank, model), images))
    else:
        score_maps = [superres.superres_map(im, bank, model) for im in images]
    for image, score in zip(images, score_maps):
        if cfg["pgm"]:
            pgm_dir = out / "pgm"
            pgm_dir.mkdir(exist_ok=True)
            cell = image.location
            io.write_pgm(pgm_dir / f"{cell.row}_{cell.col}.pgm", score)
        for factor in cfg["factors"]:
            sub = superres.pool_to_subgrid(score, factor, cfg["smooth_bw"])
            cell = image.location
            for bi in range(factor):
                for bj in range(factor):
                    records.append((cell.lat, cell.lon, factor, bi, bj,
                                    sub.values[bi, bj]))
    io.write_superres_csv(out / "superres.csv", records)
    print(f"wrote {len(records)} sub-grid values for {len(images)} images")
    return 0


def _load_sensor2(path, fmt, grid, table):
    """Second-sensor rows aligned to feature rows via grid cells."""
    import csv as _csv
    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        if header[:2] != ["lat", "lon"]:
            raise DataError(f"{path}: expected lat,lon leading columns")
        rows = [(float(r[0]), float(r[1]),
                 np.array([float(v) for v in r[2:]])) for r in reader]
    feats = {}
    for lat, lon, vec in rows:
        cell = grid.cell_at(lat, lon)
        if fmt == "raw":
            vec = multisensor.nightlights_features(vec)
        elif vec.size != multisensor.N_SENSOR_FEATURES:
            raise DataError(
                f"{path}: expected {multisensor.N_SENSOR_FEATURES} feature "
                f"columns, got {vec.size}")
        feats[(cell.row, cell.col)] = vec
    out = []
    for cell in table.locations:
        snapped = grid.cell_at(cell.lat, cell.lon)
        key = (snapped.row, snapped.col)
        if key not in feats:
            raise DataError(f"no second-sensor row for cell {key}")
        out.append(feats[key])
    return np.stack(out)


def cmd_fuse(cfg) -> int:
    if cfg["sensor2_format"] not in ("raw", "features"):
        raise UsageError("sensor2-format must be 'raw' or 'features'")
    table = _load_features(cfg["features"])
    grid = _grid_from(cfg)
    try:
        y = _join_features_labels(table, cfg["labels"], grid)
        z = _load_sensor2(cfg["sensor2"], cfg["sensor2_format"], grid, table)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    x = table.values.astype(np.float64)
    fold_seed = derive_seed(cfg["seed"], "folds")
    lam1, lam2, report = multisensor.tune_block(
        x, z, y, cfg["lambdas1"], cfg["lambdas2"], folds=cfg["folds"],
        rng_seed=fold_seed, standardize=cfg["standardize"])
    single = ridge.tune_lambda(x, y, sorted(set(cfg["lambdas1"])),
                               folds=cfg["folds"], rng_seed=fold_seed,
                               standardize=cfg["standardize"])
    metrics = {
        "lambda1": lam1,
        "lambda2": lam2,
        "fused_val_r2": report.chosen_r2,
        "single_val_r2": float(np.nanmax(single.mean_r2)),
    }
    out = Path(cfg["out"])
    target = out if out.suffix else out / "fuse_report.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    io.write_metrics_csv(target, metrics)
    print(f"lambda1={lam1:g} lambda2={lam2:g} "
          f"fused_r2={report.chosen_r2:.4f} single_r2={metrics['single_val_r2']:.4f}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "checkerboard": cmd_checkerboard,
    "rbf": cmd_rbf,
    "superres": cmd_superres,
    "fuse": cmd_fuse,
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="satsink",
        description="Task-agnostic image featurization with ridge heads")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, schema in SCHEMAS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None)
        for key in schema:
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    command = args.command
    flags = {key: getattr(args, key) for key in SCHEMAS[command]}
    try:
        cfg = _resolve(command, args.config, flags)
        _write_resolved(cfg, command, cfg["out"])
        return _COMMANDS[command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
