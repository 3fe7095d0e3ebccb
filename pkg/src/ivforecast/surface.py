"""The 5x9 smile-surface grid, dated surface series, HAR-style features and
no-arbitrage projection of total variance."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.optimize import nnls

from .errors import DimensionError, GridLookupError, LookAheadError, OrderError, WindowError

TENORS_MONTHS = (3, 6, 12, 18, 24)
MONEYNESS = (0.80, 0.90, 0.95, 0.975, 1.00, 1.025, 1.05, 1.10, 1.20)
N_TENORS = len(TENORS_MONTHS)
N_MONEYNESS = len(MONEYNESS)
N_POINTS = N_TENORS * N_MONEYNESS

MONTHS_PER_YEAR = 12
TRADING_DAYS_PER_YEAR = 252
WEEK_DAYS = 5
MONTH_DAYS = 22

VOL_CEILING = 5.0
_VOL_FLOOR = 1e-4

TENOR_YEARS = np.array(TENORS_MONTHS, dtype=np.float64) / MONTHS_PER_YEAR
LOG_MONEYNESS = np.log(np.array(MONEYNESS, dtype=np.float64))


def surface_index(tenor_months: float, moneyness: float) -> int:
    """Flat row-major index of a grid node."""
    try:
        i = TENORS_MONTHS.index(tenor_months)
    except ValueError:
        raise GridLookupError(f"tenor {tenor_months}m is not on the grid") from None
    for j, m in enumerate(MONEYNESS):
        if abs(m - moneyness) < 1e-9:
            return i * N_MONEYNESS + j
    raise GridLookupError(f"moneyness {moneyness} is not on the grid")


def column_names() -> list[str]:
    return [f"iv_{t}m_{m:.3f}" for t in TENORS_MONTHS for m in MONEYNESS]


def _as_date(d) -> dt.date:
    if isinstance(d, dt.datetime):
        return d.date()
    if isinstance(d, dt.date):
        return d
    if isinstance(d, np.datetime64):
        return d.astype("datetime64[D]").item()
    return dt.date.fromisoformat(str(d))


def _check_vols(vols: np.ndarray) -> None:
    if not np.all(np.isfinite(vols)):
        raise ValueError("surface vols must be finite")
    if np.any(vols <= 0) or np.any(vols >= VOL_CEILING):
        raise ValueError(f"surface vols must lie in (0, {VOL_CEILING})")


@dataclass(frozen=True)
class VolSurface:
    date: dt.date
    vols: np.ndarray  # (45,), row-major by tenor then moneyness

    def __post_init__(self):
        vols = np.array(self.vols, dtype=np.float64).reshape(-1)
        if vols.size != N_POINTS:
            raise DimensionError(f"a surface has {N_POINTS} points, got {vols.size}")
        _check_vols(vols)
        vols.setflags(write=False)
        object.__setattr__(self, "vols", vols)
        object.__setattr__(self, "date", _as_date(self.date))

    @property
    def grid(self) -> np.ndarray:
        """Vols as a (tenor, moneyness) matrix."""
        return self.vols.reshape(N_TENORS, N_MONEYNESS)

    def vol(self, tenor_months: float, moneyness: float) -> float:
        return float(self.vols[surface_index(tenor_months, moneyness)])

    def total_variance(self) -> np.ndarray:
        return self.grid**2 * TENOR_YEARS[:, None]


class SurfaceSeries:
    """Immutable, strictly date-ordered sequence of surfaces.

    Vol data is read through :meth:`window` / ``series[i]``; every read goes
    through :meth:`_read`, which subclasses may instrument.
    """

    def __init__(self, dates: Sequence, vols):
        dates = [_as_date(d) for d in dates]
        vols = np.array(vols, dtype=np.float64)
        if vols.size == 0:
            vols = vols.reshape(0, N_POINTS)
        if vols.ndim != 2 or vols.shape[1] != N_POINTS or vols.shape[0] != len(dates):
            raise DimensionError(f"expected ({len(dates)}, {N_POINTS}) vols, got {vols.shape}")
        _check_vols(vols)
        for k in range(1, len(dates)):
            if dates[k] <= dates[k - 1]:
                raise OrderError(f"dates not strictly increasing at position {k}: {dates[k - 1]} -> {dates[k]}")
        vols.setflags(write=False)
        self._dates = tuple(dates)
        self._vols = vols

    @classmethod
    def from_surfaces(cls, surfaces: Sequence[VolSurface]) -> "SurfaceSeries":
        return cls([s.date for s in surfaces], [s.vols for s in surfaces])

    def __len__(self) -> int:
        return len(self._dates)

    @property
    def dates(self) -> tuple[dt.date, ...]:
        return self._dates

    def _read(self, start: int, stop: int, limit: int | None = None, purpose: str = "data") -> np.ndarray:
        if limit is not None and stop > limit:
            raise LookAheadError(f"read of rows [{start}, {stop}) beyond as-of limit {limit}")
        return self._vols[start:stop]

    def window(self, start: int, stop: int) -> np.ndarray:
        """Vols of rows ``start..stop-1`` as a read-only (n, 45) array."""
        start, stop = _clip_range(start, stop, len(self))
        return self._read(start, stop)

    def realized(self, start: int, stop: int) -> np.ndarray:
        """Rows ``start..stop-1`` for scoring forecasts after the fact.

        Same data as :meth:`window`; the read is tagged ``purpose="score"``
        so access audits can tell evaluation from forecasting.
        """
        start, stop = _clip_range(start, stop, len(self))
        return self._read(start, stop, purpose="score")

    @property
    def vols(self) -> np.ndarray:
        return self.window(0, len(self))

    def __getitem__(self, i: int) -> VolSurface:
        i = _normalize_index(i, len(self))
        return VolSurface(self._dates[i], self._read(i, i + 1)[0])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SurfaceSeries):
            return NotImplemented
        return self._dates == other._dates and np.array_equal(self._vols, other._vols)

    def as_of(self, limit: int) -> "SeriesView":
        """View exposing only rows with index < ``limit``."""
        return SeriesView(self, limit)

    def slice(self, start: int, stop: int) -> "SurfaceSeries":
        start, stop = _clip_range(start, stop, len(self))
        return SurfaceSeries(self._dates[start:stop], self._read(start, stop))

    def map_vols(self, vols: np.ndarray) -> "SurfaceSeries":
        """Same dates, new vols."""
        return SurfaceSeries(self._dates, vols)


class SeriesView:
    """Read-only prefix of a series; reads at or past ``limit`` raise LookAheadError."""

    def __init__(self, base: SurfaceSeries, limit: int):
        self._base = base
        self.limit = max(0, min(int(limit), len(base)))

    def __len__(self) -> int:
        return self.limit

    @property
    def dates(self) -> tuple[dt.date, ...]:
        return self._base.dates[: self.limit]

    def window(self, start: int, stop: int) -> np.ndarray:
        if stop > self.limit:
            raise LookAheadError(f"read of rows up to {stop} beyond as-of limit {self.limit}")
        start, stop = _clip_range(start, stop, self.limit)
        return self._base._read(start, stop, limit=self.limit)

    def __getitem__(self, i: int) -> VolSurface:
        if i >= self.limit:
            raise LookAheadError(f"row {i} beyond as-of limit {self.limit}")
        i = _normalize_index(i, self.limit)
        return VolSurface(self._base.dates[i], self._base._read(i, i + 1, limit=self.limit)[0])

    def as_of(self, limit: int) -> "SeriesView":
        return SeriesView(self._base, min(limit, self.limit))


def _normalize_index(i: int, n: int) -> int:
    if i < 0:
        i += n
    if not 0 <= i < n:
        raise IndexError(f"row {i} out of range for length {n}")
    return i


def _clip_range(start: int, stop: int, n: int) -> tuple[int, int]:
    if start < 0 or stop < start:
        raise IndexError(f"bad row range [{start}, {stop})")
    return start, min(stop, n)


# ---------------------------------------------------------------------------
# features


def _contiguous(dates: Sequence[dt.date], holidays) -> bool:
    d = np.array(dates, dtype="datetime64[D]")
    gaps = np.busday_count(d[:-1], d[1:], holidays=list(holidays))
    return bool(np.all(gaps == 1))


def build_features(series, t: int, *, raw_monthly: bool = False, check_calendar: bool = True,
                   holidays=()) -> np.ndarray:
    """Daily, weekly and monthly feature surfaces at row ``t`` as a (3, 45) matrix.

    Weekly and monthly rows are per-point means over the 5 and 22 rows ending
    at ``t`` (inclusive). ``raw_monthly`` divides the 22-row sum by 5 instead.
    With ``check_calendar`` the 22 rows must be consecutive business days.
    """
    if t < MONTH_DAYS - 1:
        raise WindowError(f"row {t} has fewer than {MONTH_DAYS} observations of history")
    block = series.window(t - MONTH_DAYS + 1, t + 1)
    if block.shape[0] != MONTH_DAYS:
        raise WindowError(f"row {t} is past the end of the series")
    if check_calendar and not _contiguous(series.dates[t - MONTH_DAYS + 1: t + 1], holidays):
        raise WindowError(f"the {MONTH_DAYS}-day window ending at row {t} skips a business day")
    monthly = block.sum(axis=0) / (WEEK_DAYS if raw_monthly else MONTH_DAYS)
    return np.stack([block[-1], block[-WEEK_DAYS:].mean(axis=0), monthly])


def feature_matrix(vols: np.ndarray, raw_monthly: bool = False) -> np.ndarray:
    """Features for every row of an (n, 45) block that has 21 prior rows.

    Returns an (n - 21, 3, 45) array whose entry k belongs to row k + 21,
    computed exactly as :func:`build_features` does (no calendar check).
    """
    vols = np.asarray(vols, dtype=np.float64)
    out = np.empty((max(vols.shape[0] - MONTH_DAYS + 1, 0), 3, N_POINTS))
    divisor = WEEK_DAYS if raw_monthly else MONTH_DAYS
    for k, t in enumerate(range(MONTH_DAYS - 1, vols.shape[0])):
        block = vols[t - MONTH_DAYS + 1: t + 1]
        out[k, 0] = block[-1]
        out[k, 1] = block[-WEEK_DAYS:].mean(axis=0)
        out[k, 2] = block.sum(axis=0) / divisor
    return out


# ---------------------------------------------------------------------------
# no-arbitrage projection


@lru_cache(maxsize=None)
def _constraint_matrix() -> np.ndarray:
    """Rows a with a . w >= 0 encoding calendar monotonicity and smile convexity.

    ``w`` is total variance flattened row-major. Rows are unit-normalized.
    """
    rows = []
    for j in range(N_MONEYNESS):
        for i in range(N_TENORS - 1):
            a = np.zeros(N_POINTS)
            a[(i + 1) * N_MONEYNESS + j] = 1.0
            a[i * N_MONEYNESS + j] = -1.0
            rows.append(a)
    x = LOG_MONEYNESS
    for i in range(N_TENORS):
        for k in range(1, N_MONEYNESS - 1):
            hl, hr = x[k] - x[k - 1], x[k + 1] - x[k]
            a = np.zeros(N_POINTS)
            # slope(right) - slope(left) >= 0
            a[i * N_MONEYNESS + k - 1] = 1.0 / hl
            a[i * N_MONEYNESS + k] = -1.0 / hl - 1.0 / hr
            a[i * N_MONEYNESS + k + 1] = 1.0 / hr
            rows.append(a)
    a = np.array(rows)
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def arbitrage_violations(total_variance: np.ndarray) -> np.ndarray:
    """Constraint residuals (negative = violation) for a (5, 9) total-variance grid."""
    return _constraint_matrix() @ np.asarray(total_variance, dtype=np.float64).reshape(-1)


def project_total_variance(w: np.ndarray) -> np.ndarray:
    """Euclidean projection of total variance onto the calendar/convexity cone.

    Uses the Moreau decomposition: the residual lies in the polar cone
    ``{-A^T lam : lam >= 0}``, found by non-negative least squares.
    """
    w0 = np.asarray(w, dtype=np.float64).reshape(-1)
    a = _constraint_matrix()
    if np.all(a @ w0 >= 0):
        return w0.reshape(N_TENORS, N_MONEYNESS).copy()
    lam, _ = nnls(a.T, -w0, maxiter=50 * N_POINTS)
    return (w0 + a.T @ lam).reshape(N_TENORS, N_MONEYNESS)


def noarb_project(surface: VolSurface) -> VolSurface:
    """Nearest surface (in total variance) with nondecreasing term structure per
    moneyness column and convex smile in log-moneyness per tenor row."""
    w = project_total_variance(surface.total_variance())
    tau = TENOR_YEARS[:, None]
    w = np.clip(w, _VOL_FLOOR**2 * tau, (VOL_CEILING - 1e-9) ** 2 * tau)
    return VolSurface(surface.date, np.sqrt(w / tau).reshape(-1))


def noarb_project_series(series: SurfaceSeries) -> SurfaceSeries:
    return SurfaceSeries.from_surfaces([noarb_project(s) for s in series])
