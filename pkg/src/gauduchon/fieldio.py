"""Field dumps, CSV slices, run reports and report comparison.

A dump ``name.bin`` holds the raw little-endian array in C order; the
companion ``name.hdr`` is a plain-text ``key = value`` header with the shape,
dtype and axis order needed to read it back.
"""
from __future__ import annotations

import csv
import json
import math
import re
from pathlib import Path

import numpy as np

REPORT_SCHEMA = "gauduchon-report/1"


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=+-]", "_", name)


def write_field(directory: Path, name: str, arr: np.ndarray, ndim: int) -> list[Path]:
    """Binary dump plus header and CSV cuts; returns the files written."""
    directory.mkdir(parents=True, exist_ok=True)
    stem = _safe_name(name)
    arr = np.ascontiguousarray(arr)
    dtype = np.dtype("<c16") if np.iscomplexobj(arr) else np.dtype("<f8")
    data = arr.astype(dtype, copy=False)
    axes = [f"x{a + 1}" for a in range(ndim)] + [f"c{k + 1}" for k in range(arr.ndim - ndim)]
    bin_path = directory / f"{stem}.bin"
    hdr_path = directory / f"{stem}.hdr"
    bin_path.write_bytes(data.tobytes(order="C"))
    hdr_path.write_text(
        f"name = {name}\n"
        f"dtype = {dtype.str}\n"
        f"shape = {' '.join(str(d) for d in arr.shape)}\n"
        f"axes = {' '.join(axes)}\n"
        f"order = C\n"
        f"grid_axes = {ndim}\n"
    )
    written = [bin_path, hdr_path] + _write_slices(directory, stem, data, ndim)
    return written


def read_field(bin_path: Path) -> np.ndarray:
    header = read_header(bin_path.with_suffix(".hdr"))
    shape = tuple(int(d) for d in header["shape"].split())
    return np.frombuffer(bin_path.read_bytes(), dtype=np.dtype(header["dtype"])).reshape(shape)


def read_header(path: Path) -> dict:
    out = {}
    for line in path.read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _fmt(x) -> str:
    return repr(float(x))


def _component_columns(values: np.ndarray) -> tuple[list[str], list[list[str]]]:
    """Flatten trailing component axes into real/imag columns."""
    flat = values.reshape(values.shape[0], -1) if values.ndim > 1 else values[:, None]
    ncomp = flat.shape[1]
    complex_ = np.iscomplexobj(flat)
    names = []
    for k in range(ncomp):
        tag = "value" if ncomp == 1 else f"c{k}"
        names += [f"{tag}_re", f"{tag}_im"] if complex_ else [tag]
    rows = []
    for row in flat:
        cells = []
        for v in row:
            cells += [_fmt(v.real), _fmt(v.imag)] if complex_ else [_fmt(v)]
        rows.append(cells)
    return names, rows


def _write_slices(directory: Path, stem: str, data: np.ndarray, ndim: int) -> list[Path]:
    res = data.shape[0]
    h = 1.0 / res
    zero = (0,) * (ndim - 1)
    # 1D: along x1 with every other grid index 0
    line = data[(slice(None),) + zero]
    names, rows = _component_columns(line)
    p1 = directory / f"{stem}.x1.csv"
    with p1.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x1"] + names)
        for i, cells in enumerate(rows):
            w.writerow([_fmt(i * h)] + cells)
    # 2D: (x1, x2) plane through the origin
    plane = data[(slice(None), slice(None)) + (0,) * (ndim - 2)]
    flat = plane.reshape((res * res,) + plane.shape[2:])
    names, rows = _component_columns(flat)
    p2 = directory / f"{stem}.x1x2.csv"
    with p2.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x1", "x2"] + names)
        for k, cells in enumerate(rows):
            i, j = divmod(k, res)
            w.writerow([_fmt(i * h), _fmt(j * h)] + cells)
    return [p1, p2]


CONVERGENCE_COLUMNS = ("label", "step", "t", "residual", "previous_residual", "damping", "min_eig",
                       "theta_min_eig", "gmres_applications")


def write_convergence(path: Path, history: list) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONVERGENCE_COLUMNS)
        for h in history:
            w.writerow([_cell(h.get(c, "")) for c in CONVERGENCE_COLUMNS])


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return _fmt(v)
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return str(obj)


def write_report(path: Path, report: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")


class SchemaError(ValueError):
    pass


def load_report(path: Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read report {path}: {exc}") from exc
    if not isinstance(data, dict) or data.get("schema") != REPORT_SCHEMA:
        raise SchemaError(f"{path} is not a {REPORT_SCHEMA} document")
    if not isinstance(data.get("metrics"), dict):
        raise SchemaError(f"{path} has no metrics table")
    return data


def compare_reports(report: dict, baseline: dict) -> list[dict]:
    """Metric-by-metric comparison; returns the violations (empty when equal within tolerance).

    Tolerances are absolute and come from the baseline's ``tolerances`` table
    (metrics without an entry must match exactly).  A metric counts as a
    violation only when |report - baseline| > tolerance.
    """
    rm, bm = report["metrics"], baseline["metrics"]
    if set(rm) != set(bm):
        missing = sorted(set(bm) - set(rm))
        extra = sorted(set(rm) - set(bm))
        raise SchemaError(f"metric sets differ (missing {missing}, unexpected {extra})")
    if report.get("scenario") != baseline.get("scenario"):
        raise SchemaError(f"scenario mismatch: {report.get('scenario')} vs {baseline.get('scenario')}")
    tols = baseline.get("tolerances", {})
    out = []
    for key in sorted(bm):
        a, b = rm[key], bm[key]
        tol = float(tols.get(key, 0.0))
        if isinstance(a, str) or isinstance(b, str):
            if a != b:
                out.append({"metric": key, "report": a, "baseline": b, "tolerance": tol})
            continue
        diff = abs(float(a) - float(b))
        if diff > tol or (math.isnan(diff) and not (math.isnan(float(a)) and math.isnan(float(b)))):
            out.append({"metric": key, "report": a, "baseline": b, "difference": diff, "tolerance": tol})
    return out
