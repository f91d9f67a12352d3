"""Deterministic file output: atomic writes, RFC-4180 CSV, JSON, panel files."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dgp import Panel


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.6g}"
    return str(v)


def csv_text(columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for r in rows:
        if len(r) != len(columns):
            raise ValueError(f"row has {len(r)} cells, header has {len(columns)}")
        w.writerow([format_cell(c) for c in r])
    return buf.getvalue()


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    atomic_write_text(path, csv_text(columns, rows))


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        r = list(csv.reader(fh))
    return r[0], r[1:]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def json_text(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path: str | Path, obj) -> None:
    atomic_write_text(path, json_text(obj))


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


PANEL_COLUMNS = ("unit", "t", "y", "x", "a")


def write_panel_csv(panel: Panel, path: str | Path) -> None:
    """Long format: one row per ``(unit, t)`` for ``t = 0..n_periods``.

    The confounder is never written; ``t0`` goes into a ``# t0=`` comment
    line before the header.
    """
    n, tt = panel.outcomes.shape
    rows = ((i, t, panel.outcomes[i, t], panel.covariates[i], panel.macro[t])
            for i in range(n) for t in range(tt))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    buf.write(f"# t0={panel.t0}\r\n")
    w.writerow(PANEL_COLUMNS)
    for r in rows:
        w.writerow([r[0], r[1], repr(float(r[2])), repr(float(r[3])), repr(float(r[4]))])
    atomic_write_text(path, buf.getvalue())


def load_panel_csv(path: str | Path, t0: int | None = None) -> Panel:
    """Inverse of :func:`write_panel_csv`; every ``(unit, t)`` cell is required."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    meta_t0 = None
    while lines and lines[0].startswith("#"):
        head = lines.pop(0)[1:].strip()
        if head.startswith("t0="):
            meta_t0 = int(head[3:])
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != PANEL_COLUMNS:
        raise ValueError(f"{path}: header must be {','.join(PANEL_COLUMNS)}")
    data = []
    for lineno, row in enumerate(reader, start=2):
        try:
            data.append((int(row[0]), int(row[1]), float(row[2]), float(row[3]), float(row[4])))
        except (ValueError, IndexError):
            raise ValueError(f"{path}:{lineno}: cannot parse {row!r}") from None
    if not data:
        raise ValueError(f"{path}: no rows")
    arr = np.array(data)
    units, ts = arr[:, 0].astype(int), arr[:, 1].astype(int)
    n, tt = units.max() + 1, ts.max() + 1
    if arr.shape[0] != n * tt:
        raise ValueError(f"{path}: panel is not rectangular ({arr.shape[0]} rows for {n} x {tt})")
    y = np.full((n, tt), np.nan)
    y[units, ts] = arr[:, 2]
    x = np.zeros(n)
    x[units] = arr[:, 3]
    a = np.zeros(tt)
    a[ts] = arr[:, 4]
    if np.isnan(y).any():
        raise ValueError(f"{path}: missing (unit, t) cells")
    t0 = t0 if t0 is not None else meta_t0
    if t0 is None:
        raise ValueError(f"{path}: t0 not given and no '# t0=' line")
    return Panel(outcomes=y, covariates=x, macro=a, t0=t0)
