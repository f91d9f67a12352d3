"""Monthly macro series from ``date,value`` CSV files and named stress paths."""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conformal import TransitionParams, fit_transition_density
from .dgp import PolicyPath, make_stress_path
from .tables import atomic_write_text

VALUE_RANGE = (0.0, 100.0)


class MacroDataError(ValueError):
    pass


class ParseError(MacroDataError):
    pass


class GapError(MacroDataError):
    pass


class DuplicateDateError(MacroDataError):
    pass


class RangeError(MacroDataError):
    pass


def _month(d: dt.date) -> tuple[int, int]:
    return d.year, d.month


def _next_month(y: int, m: int) -> tuple[int, int]:
    return (y + 1, 1) if m == 12 else (y, m + 1)


def _parse_month(text: str) -> dt.date:
    d = dt.date.fromisoformat(text.strip())
    return d.replace(day=1)


@dataclass
class MacroSeries:
    """Gap-free monthly series; ``dates`` are first-of-month stamps."""

    dates: tuple
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.dates = tuple(self.dates)
        self.values = np.asarray(self.values, dtype=float)
        if len(self.dates) != self.values.size:
            raise MacroDataError("dates and values differ in length")
        _validate(self.dates, self.values)

    def __len__(self) -> int:
        return self.values.size

    def index(self, date: dt.date | str) -> int:
        d = _parse_month(date) if isinstance(date, str) else date.replace(day=1)
        first = self.dates[0]
        k = (d.year - first.year) * 12 + d.month - first.month
        if not 0 <= k < len(self):
            raise MacroDataError(f"{d:%Y-%m} outside {first:%Y-%m}..{self.dates[-1]:%Y-%m}")
        return k

    def upto(self, date: dt.date | str) -> np.ndarray:
        """Values through ``date`` inclusive."""
        return self.values[:self.index(date) + 1]


def _validate(dates, values) -> None:
    for a, b in zip(dates, dates[1:]):
        if _month(a) == _month(b):
            raise DuplicateDateError(f"duplicate month {a:%Y-%m}")
        if _month(b) < _month(a):
            raise MacroDataError("dates must be increasing")
        expected = _next_month(*_month(a))
        if _month(b) != expected:
            raise GapError(f"missing month {expected[0]:04d}-{expected[1]:02d}")
    lo, hi = VALUE_RANGE
    bad = np.flatnonzero(~np.isfinite(values) | (values < lo) | (values > hi))
    if bad.size:
        k = int(bad[0])
        raise RangeError(f"value {values[k]} at {dates[k]:%Y-%m} outside [{lo:g}, {hi:g}]")


def load_macro_csv(path: str | Path, label: str | None = None) -> MacroSeries:
    """Read a two-column ``date,value`` file with a header row.

    Rows may come in any order; they are sorted before the gap and duplicate
    checks.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty file")
        if len(header) != 2:
            raise ParseError(f"{path}:1: expected a two-column header, got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            try:
                d = _parse_month(row[0])
                v = float(row[1])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: cannot parse {row!r} ({exc})") from None
            if not math.isfinite(v):
                raise RangeError(f"{path}:{lineno}: non-finite value")
            rows.append((d, v))
    if not rows:
        raise ParseError(f"{path}: no data rows")
    rows.sort(key=lambda r: r[0])
    return MacroSeries(tuple(r[0] for r in rows), np.array([r[1] for r in rows]),
                       label if label is not None else Path(path).stem)


def write_macro_csv(series: MacroSeries, path: str | Path) -> None:
    lines = ["date,value"] + [f"{d.isoformat()},{float(v)!r}"
                              for d, v in zip(series.dates, series.values)]
    atomic_write_text(path, "\r\n".join(lines) + "\r\n")


def fit_residual_scale(series: MacroSeries, upto: dt.date | str | None = None) -> TransitionParams:
    """AR(1) with intercept on levels, optionally on the history through ``upto``."""
    vals = series.values if upto is None else series.upto(upto)
    return fit_transition_density(vals)


KINDS = ("ksigma", "named_path", "realized_window")


@dataclass
class ScenarioSpec:
    """Scenario recipe.

    ``ksigma`` shifts the AR(1) continuation by ``k`` stationary std;
    ``named_path`` passes ``values`` through; ``realized_window`` slices
    the series from ``start`` (default: the month after the origin).
    """

    kind: str
    H: int
    k: float = 0.0
    values: tuple = ()
    start: str | None = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"scenario kind must be one of {KINDS}")
        if self.H < 1:
            raise ValueError("H must be >= 1")
        self.values = tuple(float(v) for v in self.values)
        if self.kind == "named_path" and len(self.values) != self.H:
            raise ValueError(f"named path has {len(self.values)} values, H = {self.H}")
        if self.kind == "ksigma" and self.k < 0:
            raise ValueError("k must be >= 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "H": self.H, "k": self.k, "values": list(self.values),
                "start": self.start, "label": self.label}

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        return cls(d["kind"], int(d["H"]), float(d.get("k", 0.0)), tuple(d.get("values", ())),
                   d.get("start"), d.get("label", ""))

    @classmethod
    def from_json(cls, path: str | Path) -> "ScenarioSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_scenario(series: MacroSeries, spec: ScenarioSpec, t0_date: dt.date | str) -> PolicyPath:
    """Policy path for the ``H`` months after ``t0_date``."""
    i0 = series.index(t0_date)
    label = spec.label or spec.kind
    if spec.kind == "named_path":
        return PolicyPath(spec.values, kind="named", label=label)
    if spec.kind == "realized_window":
        start = i0 + 1 if spec.start is None else series.index(spec.start)
        if start + spec.H > len(series):
            raise MacroDataError(f"realized window of {spec.H} months from "
                                 f"{series.dates[min(start, len(series) - 1)]:%Y-%m} passes the series end")
        return PolicyPath(series.values[start:start + spec.H].copy(), kind="realized", label=label)
    tp = fit_transition_density(series.values[:i0 + 1])
    path = make_stress_path(series.values[:i0 + 1], spec.k, spec.H, phi=tp.phi, sigma=tp.sigma,
                            intercept=tp.intercept)
    return PolicyPath(path.values, kind=path.kind, k_sigma=path.k_sigma, label=label)
