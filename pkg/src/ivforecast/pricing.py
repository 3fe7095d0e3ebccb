"""Black-Scholes pricing of European index options (no dividend yield)."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConvergenceError, NoSolutionError

SIGMA_MIN = 1e-6
SIGMA_MAX = 10.0


@dataclass(frozen=True)
class OptionSpec:
    kind: str  # "call" or "put"
    strike: float
    tenor: float  # years
    spot: float
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("call", "put"):
            raise ValueError(f"kind must be 'call' or 'put', got {self.kind!r}")
        if not (self.strike > 0 and self.spot > 0 and self.tenor > 0):
            raise ValueError("strike, spot and tenor must be positive")
        if not math.isfinite(self.rate):
            raise ValueError("rate must be finite")

    @property
    def discounted_strike(self) -> float:
        return self.strike * math.exp(-self.rate * self.tenor)

    @property
    def moneyness(self) -> float:
        """Strike over spot."""
        return self.strike / self.spot


def cumulative_normal(x: float) -> float:
    # erfc keeps full relative precision in the lower tail
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def d1_d2(spec: OptionSpec, sigma: float) -> tuple[float, float]:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    vol_sqrt_t = sigma * math.sqrt(spec.tenor)
    d1 = (math.log(spec.spot / spec.strike) + (spec.rate + 0.5 * sigma * sigma) * spec.tenor) / vol_sqrt_t
    return d1, d1 - vol_sqrt_t


def bs_price(spec: OptionSpec, sigma: float) -> float:
    d1, d2 = d1_d2(spec, sigma)
    dk = spec.discounted_strike
    if spec.kind == "call":
        return spec.spot * cumulative_normal(d1) - dk * cumulative_normal(d2)
    return dk * cumulative_normal(-d2) - spec.spot * cumulative_normal(-d1)


def vega(spec: OptionSpec, sigma: float) -> float:
    d1, _ = d1_d2(spec, sigma)
    return spec.spot * normal_pdf(d1) * math.sqrt(spec.tenor)


def price_bounds(spec: OptionSpec) -> tuple[float, float]:
    """Open no-arbitrage band (zero-vol limit, infinite-vol limit)."""
    dk = spec.discounted_strike
    if spec.kind == "call":
        return max(spec.spot - dk, 0.0), spec.spot
    return max(dk - spec.spot, 0.0), dk


def implied_vol(spec: OptionSpec, market_price: float, tol: float = 1e-12, max_iter: int = 200) -> float:
    """Invert :func:`bs_price` by vega-Newton steps safeguarded with bisection.

    Raises NoSolutionError when the price sits outside the no-arbitrage band
    and ConvergenceError when the iteration cap is hit.
    """
    lower, upper = price_bounds(spec)
    if not (lower < market_price < upper):
        raise NoSolutionError(
            f"price {market_price} outside the no-arbitrage band ({lower}, {upper})"
        )
    lo, hi = SIGMA_MIN, SIGMA_MAX
    f_lo = bs_price(spec, lo) - market_price
    f_hi = bs_price(spec, hi) - market_price
    if f_lo > 0 or f_hi < 0:
        raise NoSolutionError(f"price {market_price} not bracketed by sigma in [{lo}, {hi}]")

    sigma = 0.2 if lo < 0.2 < hi else 0.5 * (lo + hi)
    dx_old = hi - lo
    for _ in range(max_iter):
        diff = bs_price(spec, sigma) - market_price
        if diff == 0.0:
            return sigma
        if diff > 0:
            hi = sigma
        else:
            lo = sigma
        v = vega(spec, sigma)
        # bisect when Newton leaves the bracket or fails to halve the last step
        if v > 0 and lo < sigma - diff / v < hi and abs(2.0 * diff) <= abs(dx_old * v):
            candidate = sigma - diff / v
        else:
            candidate = 0.5 * (lo + hi)
        dx_old = candidate - sigma
        if abs(dx_old) <= tol * max(1.0, sigma) or hi - lo <= 4e-16 * hi:
            return candidate
        sigma = candidate
    raise ConvergenceError(f"implied vol did not converge in {max_iter} iterations")
