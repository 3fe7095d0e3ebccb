"""Surface-series CSV I/O and a synthetic factor-model surface generator."""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import FormatError, OrderError
from .numerics import make_rng
from .surface import (
    MONEYNESS,
    N_POINTS,
    TENOR_YEARS,
    TRADING_DAYS_PER_YEAR,
    SurfaceSeries,
    column_names,
    surface_index,
)

HEADER = ",".join(["date"] + column_names())
SYNTH_VOL_MIN = 0.01
SYNTH_VOL_MAX = 2.0


# ---------------------------------------------------------------------------
# CSV


def _comment_lines(comments: Iterable[str]) -> list[str]:
    return [f"# {c}\n" for c in comments]


def save_series(series: SurfaceSeries, path, comments: Iterable[str] = ()) -> None:
    """Write ``series`` as CSV; 17 significant digits keep the round trip lossless."""
    lines = _comment_lines(comments)
    lines.append(HEADER + "\n")
    vols = series.vols
    for d, row in zip(series.dates, vols):
        lines.append(d.isoformat() + "," + ",".join(f"{v:.17g}" for v in row) + "\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)


def load_series(path, units: str = "auto") -> SurfaceSeries:
    """Read a surface CSV.

    ``units`` is "fraction", "percent" or "auto"; auto treats the file as
    percent quotes when any vol is >= 5 (outside the fraction band).
    """
    if units not in ("auto", "fraction", "percent"):
        raise ValueError(f"unknown units {units!r}")
    text = Path(path).read_text(encoding="utf-8")
    dates: list[dt.date] = []
    rows: list[list[float]] = []
    header_seen = False
    prev = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not header_seen:
            if line != HEADER:
                ncols = len(line.split(","))
                raise FormatError(
                    f"header does not match the expected {N_POINTS + 1}-column layout (got {ncols} columns)",
                    lineno,
                )
            header_seen = True
            continue
        cells = line.split(",")
        if len(cells) != N_POINTS + 1:
            raise FormatError(f"expected {N_POINTS + 1} columns, got {len(cells)}", lineno)
        try:
            date = dt.date.fromisoformat(cells[0])
        except ValueError:
            raise FormatError(f"bad date {cells[0]!r}", lineno) from None
        try:
            vals = [float(c) for c in cells[1:]]
        except ValueError:
            raise FormatError("missing or non-numeric vol", lineno) from None
        if not all(math.isfinite(v) and v > 0 for v in vals):
            raise FormatError("vols must be finite and positive", lineno)
        if prev is not None and date <= prev:
            raise OrderError(f"line {lineno}: date {date} does not follow {prev}")
        prev = date
        dates.append(date)
        rows.append(vals)
    if not header_seen:
        raise FormatError("missing header", 1)
    vols = np.array(rows, dtype=np.float64).reshape(-1, N_POINTS)
    if units == "percent" or (units == "auto" and vols.size and vols.max() >= 5.0):
        vols = vols / 100.0
    return SurfaceSeries(dates, vols)


def save_spot(dates, spot, path, comments: Iterable[str] = ()) -> None:
    lines = _comment_lines(comments) + ["date,spot\n"]
    lines += [f"{d.isoformat()},{s:.17g}\n" for d, s in zip(dates, spot)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)


def load_spot(path) -> tuple[list[dt.date], np.ndarray]:
    dates, values = [], []
    header_seen = False
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not header_seen:
            if line != "date,spot":
                raise FormatError("expected header 'date,spot'", lineno)
            header_seen = True
            continue
        try:
            d, s = line.split(",")
            dates.append(dt.date.fromisoformat(d))
            values.append(float(s))
        except ValueError:
            raise FormatError("expected 'YYYY-MM-DD,price'", lineno) from None
    return dates, np.array(values)


# ---------------------------------------------------------------------------
# synthetic surfaces


@dataclass(frozen=True)
class AR1:
    mean: float
    persistence: float
    vol: float

    def __post_init__(self):
        if not -1.0 < self.persistence < 1.0:
            raise ValueError(f"AR(1) persistence must lie in (-1, 1), got {self.persistence}")
        if self.vol < 0:
            raise ValueError("AR(1) innovation vol must be non-negative")


@dataclass(frozen=True)
class SynthConfig:
    """Level/slope/curvature/term AR(1) factors plus i.i.d. observation noise.

    vol(m, tau) = level + slope*(m-1) + curvature*(m-1)**2 + term*sqrt(tau) + noise
    """

    n_days: int = 2520
    seed: int = 0
    start_date: str = "2009-11-05"
    level: AR1 = field(default_factory=lambda: AR1(0.18, 0.98, 0.006))
    slope: AR1 = field(default_factory=lambda: AR1(-0.35, 0.97, 0.01))
    curvature: AR1 = field(default_factory=lambda: AR1(0.6, 0.95, 0.03))
    term: AR1 = field(default_factory=lambda: AR1(0.02, 0.97, 0.002))
    noise: float = 0.001

    def __post_init__(self):
        if self.n_days < 0:
            raise ValueError("n_days must be non-negative")
        if self.noise < 0:
            raise ValueError("noise stdev must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        kw = dict(d)
        for name in ("level", "slope", "curvature", "term"):
            if name in kw and isinstance(kw[name], dict):
                kw[name] = AR1(**kw[name])
        return cls(**kw)

    @staticmethod
    def keys() -> set[str]:
        return {f.name for f in fields(SynthConfig)}


def business_dates(start, n: int, holidays=()) -> list[dt.date]:
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward", holidays=list(holidays))
    days = np.busday_offset(first, np.arange(n), roll="forward", holidays=list(holidays))
    return [d.item() for d in days]


def _ar1_path(rng, spec: AR1, n: int) -> np.ndarray:
    shocks = rng.standard_normal(n)
    x = np.empty(n)
    prev = spec.mean
    for t in range(n):
        prev = spec.mean + spec.persistence * (prev - spec.mean) + spec.vol * shocks[t]
        x[t] = prev
    return x


def generate_synthetic(cfg: SynthConfig) -> SurfaceSeries:
    rng = make_rng(cfg.seed)
    n = cfg.n_days
    level = _ar1_path(rng, cfg.level, n)
    slope = _ar1_path(rng, cfg.slope, n)
    curv = _ar1_path(rng, cfg.curvature, n)
    term = _ar1_path(rng, cfg.term, n)
    dm = np.tile(np.array(MONEYNESS) - 1.0, len(TENOR_YEARS))
    sqrt_tau = np.repeat(np.sqrt(TENOR_YEARS), len(MONEYNESS))
    vols = (level[:, None] + slope[:, None] * dm + curv[:, None] * dm**2 + term[:, None] * sqrt_tau)
    if cfg.noise > 0:
        vols = vols + cfg.noise * rng.standard_normal((n, N_POINTS))
    vols = np.clip(vols, SYNTH_VOL_MIN, SYNTH_VOL_MAX)
    return SurfaceSeries(business_dates(cfg.start_date, n), vols)


def simulate_underlying(series: SurfaceSeries, spot0: float = 100.0, rate: float = 0.0,
                        seed: int = 0) -> np.ndarray:
    """Lognormal index path whose day-t return uses the ATM 3m vol of day t."""
    atm = series.vols[:, surface_index(3, 1.00)]
    rng = make_rng(seed)
    z = rng.standard_normal(len(series))
    dt_year = 1.0 / TRADING_DAYS_PER_YEAR
    log_ret = (rate - 0.5 * atm**2) * dt_year + atm * math.sqrt(dt_year) * z
    log_ret[0] = 0.0
    return spot0 * np.exp(np.cumsum(log_ret))
