"""CSV ingestion with a JSON sidecar, and JSON reports.

A dataset on disk is ``name.csv`` with header ``t,<col>,<col>...`` plus an
optional ``name.json`` sidecar holding ``dt``, ``measured_indices``,
``n_states``, ``omega``, ``seed`` and ``rescale``.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from pathlib import Path

import numpy as np

from .dynamics import Dataset

log = logging.getLogger(__name__)

GRID_TOLERANCE = 1e-9


class DataFormatError(ValueError):
    """Malformed data file."""


def sidecar_path(csv_path):
    return Path(csv_path).with_suffix(".json")


def write_dataset_csv(data, path, names=None):
    """Write ``data`` as CSV plus sidecar; returns the CSV path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(names or data.names or [f"y{l + 1}" for l in range(data.Y.shape[1])])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + names)
        for ti, row in zip(data.t, data.Y):
            w.writerow([repr(float(ti))] + [repr(float(v)) for v in row])
    meta = {"dt": data.dt, "measured_indices": list(data.measured_indices),
            "n_states": data.n_states, "omega": data.omega, "seed": data.seed,
            "rescale": data.rescale}
    sidecar_path(path).write_text(json.dumps(meta, indent=2))
    return path


def read_dataset_csv(path, n_states=None, measured_indices=None):
    """Load a CSV dataset, applying the sidecar metadata when present.

    The time column is multiplied by ``rescale``. A grid whose steps differ
    by more than 1e-9 is rejected, as are NaN entries.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "t":
        raise DataFormatError(f"{path}: first column must be 't'")
    try:
        arr = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise DataFormatError(f"{path}: non-numeric entry ({exc})") from None
    if arr.ndim != 2 or arr.shape[1] != len(header):
        raise DataFormatError(f"{path}: ragged rows")
    bad = np.argwhere(np.isnan(arr))
    if bad.size:
        raise DataFormatError(f"{path}: NaN at data row {int(bad[0, 0])}")

    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
    else:
        warnings.warn(f"no sidecar next to {path}; using defaults", stacklevel=2)
        meta = {}
    L = arr.shape[1] - 1
    rescale = float(meta.get("rescale", 1.0))
    t = arr[:, 0] * rescale
    steps = np.diff(t)
    if steps.size and np.max(np.abs(steps - steps[0])) > GRID_TOLERANCE:
        raise DataFormatError(f"{path}: time grid is not uniform (tolerance {GRID_TOLERANCE})")
    if "dt" in meta and steps.size and abs(steps[0] - float(meta["dt"])) > GRID_TOLERANCE:
        log.warning("sidecar dt %s differs from the grid step %s", meta["dt"], steps[0])
    idx = measured_indices if measured_indices is not None else meta.get("measured_indices", range(L))
    D = n_states if n_states is not None else meta.get("n_states", L)
    return Dataset(t, arr[:, 1:], tuple(idx), int(D), omega=meta.get("omega"),
                   seed=meta.get("seed"), rescale=rescale, names=tuple(header[1:]))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2))
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def pool_from_report(report, library):
    """Candidate models listed in a sweep report."""
    from .library import CandidateModel

    return [CandidateModel(library, np.array(s["example_params"], dtype=float),
                           np.array(s["mask"], dtype=bool)) for s in report["structures"]]
