"""Calendar and butterfly call spreads: payoffs, pricing off a surface, and a
forecast-driven daily backtest with trailing exits."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import simulate_underlying
from .errors import AlignmentError, GridLookupError
from .pricing import OptionSpec, bs_price
from .surface import (
    MONEYNESS,
    MONTHS_PER_YEAR,
    TENOR_YEARS,
    TENORS_MONTHS,
    TRADING_DAYS_PER_YEAR,
    SurfaceSeries,
    VolSurface,
    surface_index,
)

_STRIKE_RTOL = 8 * np.finfo(float).eps


@dataclass(frozen=True)
class CalendarSpread:
    """Short the near call, long the far call at one strike (``direction="long"``)."""

    strike: float
    c1: float  # short-tenor premium
    c2: float  # long-tenor premium
    short_tenor: int = 3  # months
    long_tenor: int = 6
    direction: str = "long"
    entry_date: dt.date | None = None
    quantity: float = 1.0
    kind: str = "call"

    def __post_init__(self):
        _check_direction(self.direction)
        if not self.strike > 0:
            raise ValueError("strike must be positive")
        if not self.long_tenor > self.short_tenor > 0:
            raise ValueError("long-leg tenor must exceed short-leg tenor")
        if not self.c2 > self.c1:
            raise ValueError(f"far premium must exceed near premium at entry (C1={self.c1}, C2={self.c2})")

    @property
    def sign(self) -> float:
        return 1.0 if self.direction == "long" else -1.0

    @property
    def expiry_years(self) -> float:
        return self.short_tenor / MONTHS_PER_YEAR

    def legs(self) -> list[tuple[float, int, float]]:
        """(strike, tenor months, signed long-direction quantity) per leg."""
        return [(self.strike, self.short_tenor, -1.0), (self.strike, self.long_tenor, 1.0)]

    @property
    def entry_value(self) -> float:
        return self.sign * self.quantity * (self.c2 - self.c1)


@dataclass(frozen=True)
class ButterflySpread:
    """Long K1 and K3 calls, short two K2 calls (``direction="long"``)."""

    k1: float
    k2: float
    k3: float
    c1: float
    c2: float
    c3: float
    tenor: int = 3  # months
    direction: str = "long"
    entry_date: dt.date | None = None
    quantity: float = 1.0
    kind: str = "call"

    def __post_init__(self):
        _check_direction(self.direction)
        if not 0 < self.k1 < self.k2 < self.k3:
            raise ValueError(f"strikes must satisfy 0 < K1 < K2 < K3, got {self.k1}, {self.k2}, {self.k3}")
        if abs(self.k1 + self.k3 - 2.0 * self.k2) > _STRIKE_RTOL * self.k2:
            raise ValueError(f"strikes must be equally spaced (K1 + K3 = 2 K2), got {self.k1}, {self.k2}, {self.k3}")
        if self.tenor <= 0:
            raise ValueError("tenor must be positive")

    @property
    def sign(self) -> float:
        return 1.0 if self.direction == "long" else -1.0

    @property
    def expiry_years(self) -> float:
        return self.tenor / MONTHS_PER_YEAR

    def legs(self) -> list[tuple[float, int, float]]:
        return [(self.k1, self.tenor, 1.0), (self.k2, self.tenor, -2.0), (self.k3, self.tenor, 1.0)]

    @property
    def entry_value(self) -> float:
        return self.sign * self.quantity * (self.c1 + self.c3 - 2.0 * self.c2)


def _check_direction(direction: str) -> None:
    if direction not in ("long", "short"):
        raise ValueError(f"direction must be 'long' or 'short', got {direction!r}")


# ---------------------------------------------------------------------------
# payoffs at expiry


def calendar_payoff(spread: CalendarSpread, s_t: float, c_t2: float) -> float:
    """Profit at the near leg's expiry given the far leg's value ``c_t2``."""
    if s_t <= spread.strike:
        profit = spread.c1 + c_t2 - spread.c2
    else:
        profit = spread.c1 - (s_t - spread.strike) + c_t2 - spread.c2
    return spread.sign * spread.quantity * profit


def butterfly_payoff(spread: ButterflySpread, s_t: float) -> float:
    """Profit at the common expiry."""
    net = 2.0 * spread.c2 - spread.c1 - spread.c3
    if s_t <= spread.k1:
        profit = net
    elif s_t <= spread.k2:
        profit = s_t - spread.k1 + net
    elif s_t <= spread.k3:
        profit = spread.k3 - s_t + net
    else:
        profit = net
    return spread.sign * spread.quantity * profit


# ---------------------------------------------------------------------------
# pricing off a surface


def nearest_node(tenor_months: float, moneyness: float, tol: float = 0.0125) -> tuple[int, float]:
    """Closest grid node; raises GridLookupError if farther than ``tol`` in
    moneyness or not an exact grid tenor."""
    if tenor_months not in TENORS_MONTHS:
        raise GridLookupError(f"tenor {tenor_months}m is not a grid tenor")
    j = int(np.argmin([abs(m - moneyness) for m in MONEYNESS]))
    if abs(MONEYNESS[j] - moneyness) > tol:
        raise GridLookupError(f"moneyness {moneyness:.4f} is more than {tol} from the nearest node {MONEYNESS[j]}")
    return tenor_months, MONEYNESS[j]


def price_legs(spread, surface: VolSurface, spot: float, rate: float, tol: float = 0.0125) -> list[float]:
    """BS premium of each leg (unsigned), vol from the nearest grid node."""
    out = []
    for strike, tenor, _ in spread.legs():
        node = nearest_node(tenor, strike / spot, tol)
        sigma = surface.vol(*node)
        out.append(bs_price(OptionSpec(spread.kind, strike, tenor / MONTHS_PER_YEAR, spot, rate), sigma))
    return out


def open_calendar(surface: VolSurface, spot: float, rate: float, moneyness: float = 1.0,
                  short_tenor: int = 3, long_tenor: int = 6, direction: str = "long") -> CalendarSpread:
    strike = spot * moneyness
    template = _CalendarLegs(strike, short_tenor, long_tenor)
    c1, c2 = price_legs(template, surface, spot, rate)
    return CalendarSpread(strike, c1, c2, short_tenor, long_tenor, direction, surface.date)


def open_butterfly(surface: VolSurface, spot: float, rate: float, moneyness: float = 1.0,
                   wing: float = 0.05, tenor: int = 3, direction: str = "long") -> ButterflySpread:
    k2 = spot * moneyness
    half = spot * wing
    k1, k3 = k2 - half, k2 + half
    k2 = 0.5 * (k1 + k3)
    c1, c2, c3 = price_legs(_ButterflyLegs(k1, k2, k3, tenor), surface, spot, rate)
    return ButterflySpread(k1, k2, k3, c1, c2, c3, tenor, direction, surface.date)


@dataclass(frozen=True)
class _CalendarLegs:
    strike: float
    short_tenor: int
    long_tenor: int
    kind: str = "call"

    def legs(self):
        return [(self.strike, self.short_tenor, -1.0), (self.strike, self.long_tenor, 1.0)]


@dataclass(frozen=True)
class _ButterflyLegs:
    k1: float
    k2: float
    k3: float
    tenor: int
    kind: str = "call"

    def legs(self):
        return [(self.k1, self.tenor, 1.0), (self.k2, self.tenor, -2.0), (self.k3, self.tenor, 1.0)]


def interpolated_vol(surface: VolSurface, tenor_years: float, moneyness: float) -> float:
    """Vol for an off-grid (tenor, moneyness): linear in moneyness, linear in
    total variance across tenors, flat beyond the grid edges."""
    grid = surface.grid
    m = np.clip(moneyness, MONEYNESS[0], MONEYNESS[-1])
    smile = np.array([np.interp(m, MONEYNESS, row) for row in grid])
    if tenor_years <= TENOR_YEARS[0]:
        return float(smile[0])
    if tenor_years >= TENOR_YEARS[-1]:
        return float(smile[-1])
    w = np.interp(tenor_years, TENOR_YEARS, smile**2 * TENOR_YEARS)
    return float(math.sqrt(w / tenor_years))


def position_value(spread, surface: VolSurface, spot: float, rate: float, elapsed_years: float) -> float:
    """Signed mark-to-market value (long-direction premium convention)."""
    total = 0.0
    for strike, tenor, qty in spread.legs():
        remaining = tenor / MONTHS_PER_YEAR - elapsed_years
        if remaining <= 1e-12:
            leg = max(spot - strike, 0.0) if spread.kind == "call" else max(strike - spot, 0.0)
        else:
            sigma = interpolated_vol(surface, remaining, strike / spot)
            leg = bs_price(OptionSpec(spread.kind, strike, remaining, spot, rate), sigma)
        total += qty * leg
    return spread.sign * spread.quantity * total


# ---------------------------------------------------------------------------
# backtest


@dataclass(frozen=True)
class BacktestRules:
    """Entry/exit configuration.

    A position is opened (and, with ``exit_on_signal``, kept) while the
    forecast ATM 3m vol change lies in ``[band_low, band_high]``.  Defaults
    favour the spread's vega sign: the long calendar wants vol not to fall,
    the long butterfly wants it not to rise.
    """

    strategy: str = "calendar"
    moneyness: float = 1.0
    short_tenor: int = 3
    long_tenor: int = 6
    wing: float = 0.05
    band_low: float | None = None
    band_high: float | None = None
    exit_on_signal: bool = True
    stop_loss: float = 0.5  # trailing, fraction of entry premium
    take_profit: float = 1.0
    rate: float = 0.02
    cost_per_leg: float = 0.0
    capital: float = 100.0
    spot0: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("calendar", "butterfly"):
            raise ValueError(f"strategy must be 'calendar' or 'butterfly', got {self.strategy!r}")
        if self.stop_loss <= 0 or self.take_profit <= 0:
            raise ValueError("stop_loss and take_profit must be positive")
        if self.capital <= 0:
            raise ValueError("capital must be positive")
        if self.cost_per_leg < 0:
            raise ValueError("cost_per_leg must be non-negative")

    @property
    def band(self) -> tuple[float, float]:
        lo, hi = self.band_low, self.band_high
        if self.strategy == "calendar":
            return (0.0 if lo is None else lo, math.inf if hi is None else hi)
        return (-math.inf if lo is None else lo, 0.0 if hi is None else hi)

    @staticmethod
    def keys() -> set[str]:
        return {f.name for f in fields(BacktestRules)}

    def replace(self, **kw) -> "BacktestRules":
        d = asdict(self)
        d.update(kw)
        return BacktestRules(**d)


@dataclass
class Trade:
    strategy: str
    entry_date: dt.date
    exit_date: dt.date
    reason: str
    strikes: tuple[float, ...]
    entry_value: float
    pnl: float


@dataclass
class PnLSeries:
    dates: list[dt.date]
    values: np.ndarray
    positions: np.ndarray
    returns: np.ndarray
    trades: list[Trade] = field(default_factory=list)
    capital: float = 100.0

    @property
    def total_pnl(self) -> float:
        return float(self.values[-1] - self.capital) if len(self.values) else 0.0

    @property
    def total_return(self) -> float:
        return self.total_pnl / self.capital

    @property
    def sharpe(self) -> float | None:
        """Annualized mean/stdev of daily returns; None when returns are flat."""
        r = self.returns[1:]
        if r.size < 2:
            return None
        sd = float(np.std(r, ddof=1))
        if sd == 0.0:
            return None
        return float(np.mean(r)) / sd * math.sqrt(TRADING_DAYS_PER_YEAR)

    @property
    def max_drawdown(self) -> float:
        if not len(self.values):
            return 0.0
        peak = np.maximum.accumulate(self.values)
        return float(np.max((peak - self.values) / peak))


def _forecast_lookup(series: SurfaceSeries, forecasts: SurfaceSeries | None) -> tuple[int, int, dict]:
    """Range of decision rows [first, last] and the forecast row for each."""
    n = len(series)
    if forecasts is None:
        return 0, n - 1, {}
    by_date = {d: k for k, d in enumerate(forecasts.dates)}
    rows = [i for i in range(n - 1) if series.dates[i + 1] in by_date]
    if not rows:
        raise AlignmentError("no forecast is dated on any realized trading day after the first")
    first, last = rows[0], rows[-1]
    if rows != list(range(first, last + 1)):
        raise AlignmentError("forecasts have gaps relative to the realized trading calendar")
    return first, last + 1, {i: by_date[series.dates[i + 1]] for i in rows}


def backtest(series: SurfaceSeries, forecasts: SurfaceSeries | None, rules: BacktestRules,
             spot: np.ndarray | None = None) -> PnLSeries:
    """Daily loop over realized surfaces; decisions at the close of day i see
    realized data up to day i and the forecast dated day i+1.

    ``forecasts=None`` is the no-forecast baseline (tomorrow = today).  When
    ``spot`` is omitted a lognormal index path is simulated from the realized
    ATM vols with ``rules.seed``.
    """
    n = len(series)
    if n < 2:
        raise AlignmentError("need at least two realized days")
    if spot is None:
        spot = simulate_underlying(series, rules.spot0, rules.rate, rules.seed)
    spot = np.asarray(spot, dtype=np.float64)
    if spot.shape != (n,):
        raise AlignmentError(f"spot path has {spot.shape[0]} points for {n} realized days")
    first, last, fc_row = _forecast_lookup(series, forecasts)
    atm = surface_index(3, 1.00)
    lo, hi = rules.band
    n_legs = 2 if rules.strategy == "calendar" else 3
    step = 1.0 / TRADING_DAYS_PER_YEAR

    cash = rules.capital
    pos = None
    entry_i = entry_val = peak = 0
    prev_value = rules.capital
    dates, values, positions, rets, trades = [], [], [], [], []

    def close(i, value, reason):
        nonlocal cash, pos
        cash += value - rules.cost_per_leg * n_legs * pos.quantity
        strikes = (pos.strike,) if rules.strategy == "calendar" else (pos.k1, pos.k2, pos.k3)
        trades.append(Trade(rules.strategy, series.dates[entry_i], series.dates[i], reason, strikes,
                            entry_val, value - entry_val))
        pos = None

    for i in range(first, last + 1):
        view = series.as_of(i + 1)
        surf = view[i]
        s = float(spot[i])
        if pos is not None:
            elapsed = (i - entry_i) * step
            if elapsed >= pos.expiry_years - 1e-12:
                if rules.strategy == "calendar":
                    far_left = (pos.long_tenor - pos.short_tenor) / MONTHS_PER_YEAR
                    sigma = interpolated_vol(surf, far_left, pos.strike / s)
                    c_t2 = bs_price(OptionSpec("call", pos.strike, far_left, s, rules.rate), sigma)
                    value = entry_val + calendar_payoff(pos, s, c_t2)
                else:
                    value = entry_val + butterfly_payoff(pos, s)
                close(i, value, "expiry")
            else:
                value = position_value(pos, surf, s, rules.rate, elapsed)
                pnl = value - entry_val
                peak = max(peak, pnl)
                basis = abs(entry_val)
                if pnl >= rules.take_profit * basis:
                    close(i, value, "take_profit")
                elif pnl <= peak - rules.stop_loss * basis:
                    close(i, value, "stop_loss")
                elif i == last:
                    close(i, value, "end")

        if i < last:
            forecast_atm = surf.vols[atm] if forecasts is None else forecasts[fc_row[i]].vols[atm]
            delta = forecast_atm - surf.vols[atm]
            in_band = lo <= delta <= hi
            if pos is not None and rules.exit_on_signal and not in_band:
                close(i, position_value(pos, surf, s, rules.rate, (i - entry_i) * step), "signal")
            if pos is None and in_band:
                if rules.strategy == "calendar":
                    pos = open_calendar(surf, s, rules.rate, rules.moneyness, rules.short_tenor, rules.long_tenor)
                else:
                    pos = open_butterfly(surf, s, rules.rate, rules.moneyness, rules.wing, rules.short_tenor)
                entry_i, entry_val, peak = i, pos.entry_value, 0.0
                cash -= entry_val + rules.cost_per_leg * n_legs * pos.quantity

        mtm = 0.0 if pos is None else position_value(pos, surf, s, rules.rate, (i - entry_i) * step)
        value = cash + mtm
        dates.append(series.dates[i])
        values.append(value)
        positions.append(0 if pos is None else 1)
        rets.append(value / prev_value - 1.0)
        prev_value = value

    return PnLSeries(dates, np.array(values), np.array(positions), np.array(rets), trades, rules.capital)


# ---------------------------------------------------------------------------
# CSV emission


def write_pnl(pnl: PnLSeries, path, comments=()) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        sharpe = pnl.sharpe
        fh.write(f"# total_return={pnl.total_return:.17g} sharpe={'' if sharpe is None else f'{sharpe:.17g}'} "
                 f"max_drawdown={pnl.max_drawdown:.17g}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "portfolio_value", "open_positions", "daily_return"])
        for d, v, p, r in zip(pnl.dates, pnl.values, pnl.positions, pnl.returns):
            w.writerow([d.isoformat(), f"{v:.17g}", int(p), f"{r:.17g}"])


def write_trades(pnl: PnLSeries, path, comments=()) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "entry_date", "exit_date", "reason", "strikes", "entry_value", "pnl"])
        for t in pnl.trades:
            w.writerow([t.strategy, t.entry_date.isoformat(), t.exit_date.isoformat(), t.reason,
                        " ".join(f"{k:.17g}" for k in t.strikes), f"{t.entry_value:.17g}", f"{t.pnl:.17g}"])
