"""Small builders shared across test modules."""

import datetime as dt

import numpy as np

from bullbear.market_data import PriceSeries, trading_dates


def make_prices(prices, start=dt.date(2020, 1, 6), tickers=None) -> PriceSeries:
    """PriceSeries over consecutive weekdays from a (T, D) array-like."""
    prices = np.asarray(prices, dtype=np.float64)
    if prices.ndim == 1:
        prices = prices[:, None]
    t, d = prices.shape
    if tickers is None:
        tickers = tuple(f"A{i}" for i in range(d))
    return PriceSeries(tickers, trading_dates(start, t), prices)


def drift_prices(t: int, daily_factors, p0: float = 100.0,
                 start=dt.date(2020, 1, 6)) -> PriceSeries:
    """Deterministic exponential paths: asset j grows by daily_factors[j] per day."""
    factors = np.asarray(daily_factors, dtype=np.float64)
    steps = np.arange(t)[:, None]
    return make_prices(p0 * factors[None, :] ** steps, start=start)


def geometric_curve(n_points: int, daily_factor: float, v0: float = 10_000.0,
                    start=dt.date(2020, 1, 6)):
    """Equity curve compounding at a constant daily factor."""
    from bullbear.backtest import EquityCurve

    values = v0 * daily_factor ** np.arange(n_points, dtype=np.float64)
    return EquityCurve(trading_dates(start, n_points), values)


def grid_simplex(d: int, step: float, lower: float = 0.0, upper: float = 1.0) -> np.ndarray:
    """Every grid point with spacing ``step`` on {lower <= w <= upper, sum w = 1}.

    Brute-force oracle for the constrained allocation solvers; only the small
    dimensions used in tests are supported.
    """
    ticks = np.arange(lower, upper + step / 2, step)
    if d == 2:
        pts = np.stack([ticks, 1.0 - ticks], axis=1)
    elif d == 3:
        a, b = np.meshgrid(ticks, ticks, indexing="ij")
        pts = np.stack([a.ravel(), b.ravel(), 1.0 - a.ravel() - b.ravel()], axis=1)
    else:
        raise ValueError(f"grid oracle supports d in {{2, 3}}, got {d}")
    ok = (pts >= lower - 1e-9).all(axis=1) & (pts <= upper + 1e-9).all(axis=1)
    return pts[ok]
