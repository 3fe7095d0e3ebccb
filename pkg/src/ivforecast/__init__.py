"""Implied-volatility surface forecasting with an attention LSTM, no-arbitrage
smoothing, and calendar/butterfly spread backtests."""

from .errors import (
    AlignmentError,
    ConfigError,
    ConvergenceError,
    DimensionError,
    FormatError,
    GridLookupError,
    LookAheadError,
    NoSolutionError,
    OrderError,
    StateError,
    WindowError,
)
from .surface import SurfaceSeries, VolSurface

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "ConfigError",
    "ConvergenceError",
    "DimensionError",
    "FormatError",
    "GridLookupError",
    "LookAheadError",
    "NoSolutionError",
    "OrderError",
    "StateError",
    "SurfaceSeries",
    "VolSurface",
    "WindowError",
]
