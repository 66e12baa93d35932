"""Daily price data: ingestion, cleaning, synthesis, returns, and an index proxy.

The data model is deliberately small: a dense T×D matrix of positive close
prices with strictly increasing dates. Real data comes in through
:func:`load_csv` / :func:`align_and_clean`; reproducible synthetic data comes
from :func:`synth_market`, a regime-switching correlated GBM whose bull/bear
ground truth feeds the regime-aware training machinery.

All operations are pure and every returned object is safe to share across
threads; nothing here mutates its inputs.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptySeries, InvalidParams, OutOfRange, ParseError, ShapeMismatch

DAYS_PER_YEAR = 252


class Regime(Enum):
    """Market regime label. The string values appear verbatim in CSV output."""

    BULL = "bull"
    BEAR = "bear"


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Aligned close prices for ``D`` assets over ``T`` days.

    Invariants (checked at construction): prices strictly positive and dense,
    dates strictly increasing, ``D >= 1`` and ``T >= 2``.
    """

    asset_ids: tuple[str, ...]
    dates: tuple[dt.date, ...]
    prices: np.ndarray  # (T, D) float64

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=np.float64)
        object.__setattr__(self, "asset_ids", tuple(self.asset_ids))
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "prices", prices)
        t, d = prices.shape if prices.ndim == 2 else (0, 0)
        if prices.ndim != 2 or d != len(self.asset_ids):
            raise ShapeMismatch(
                f"prices must be (T, D={len(self.asset_ids)}), got {prices.shape}"
            )
        if t != len(self.dates):
            raise ShapeMismatch(f"{len(self.dates)} dates for {t} price rows")
        if d < 1 or t < 2:
            raise EmptySeries(f"need T >= 2 and D >= 1, got T={t}, D={d}")
        if not np.all(np.isfinite(prices)) or np.min(prices) <= 0.0:
            raise InvalidParams("prices must be finite and strictly positive")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise InvalidParams("dates must be strictly increasing")

    @property
    def n_days(self) -> int:
        return self.prices.shape[0]

    @property
    def n_assets(self) -> int:
        return self.prices.shape[1]


@dataclass(frozen=True, eq=False)
class ReturnSeries:
    """Simple per-period returns; ``dates[t]`` is the day return ``t`` realizes."""

    asset_ids: tuple[str, ...]
    dates: tuple[dt.date, ...]
    returns: np.ndarray  # (T-1, D) float64

    def __post_init__(self):
        object.__setattr__(self, "asset_ids", tuple(self.asset_ids))
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "returns", np.asarray(self.returns, dtype=np.float64))
        if self.returns.shape != (len(self.dates), len(self.asset_ids)):
            raise ShapeMismatch(
                f"returns shape {self.returns.shape} inconsistent with "
                f"{len(self.dates)} dates x {len(self.asset_ids)} assets"
            )
        if self.returns.size and np.min(self.returns) <= -1.0:
            raise InvalidParams("simple returns must exceed -1")


@dataclass(frozen=True, eq=False)
class GbmParams:
    """Parameters of the regime-switching correlated GBM generator.

    ``mu`` and ``sigma`` are annualized and accept a scalar (both regimes, all
    assets), a length-``d`` vector (both regimes), or a ``(2, d)`` matrix with
    row 0 = bull, row 1 = bear. ``corr`` defaults to the identity.
    """

    d: int
    t: int
    p0: float | Sequence[float] = 100.0
    mu: float | Sequence[float] | np.ndarray = 0.05
    sigma: float | Sequence[float] | np.ndarray = 0.2
    corr: np.ndarray | None = None
    regime_switch_prob: float = 0.0
    days_per_year: int = DAYS_PER_YEAR
    seed: int = 0
    start_date: dt.date = dt.date(2010, 1, 4)
    tickers: tuple[str, ...] | None = None

    def resolved(self) -> "_ResolvedGbm":
        if self.d < 1 or self.t < 2:
            raise InvalidParams(f"need d >= 1 and t >= 2, got d={self.d}, t={self.t}")
        if not 0.0 <= self.regime_switch_prob <= 1.0:
            raise InvalidParams("regime_switch_prob must lie in [0, 1]")
        if self.days_per_year < 1:
            raise InvalidParams("days_per_year must be positive")
        p0 = np.broadcast_to(np.asarray(self.p0, dtype=np.float64), (self.d,)).copy()
        if np.min(p0) <= 0:
            raise InvalidParams("initial prices must be positive")
        mu = _per_regime(self.mu, self.d, "mu")
        sigma = _per_regime(self.sigma, self.d, "sigma")
        if np.min(sigma) < 0:
            raise InvalidParams("sigma must be nonnegative")
        corr = np.eye(self.d) if self.corr is None else np.asarray(self.corr, float)
        if corr.shape != (self.d, self.d) or not np.allclose(corr, corr.T, atol=1e-12):
            raise InvalidParams("corr must be a symmetric (d, d) matrix")
        if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
            raise InvalidParams("corr must have a unit diagonal")
        evals, evecs = np.linalg.eigh(corr)
        if evals.min() < -1e-10:
            raise InvalidParams(
                f"corr is not positive semi-definite (min eigenvalue {evals.min():.3e})"
            )
        factor = evecs * np.sqrt(np.clip(evals, 0.0, None))
        tickers = self.tickers or tuple(f"SYN{i:02d}" for i in range(self.d))
        if len(tickers) != self.d:
            raise InvalidParams(f"{len(tickers)} tickers for d={self.d}")
        return _ResolvedGbm(p0, mu, sigma, factor, tickers)


@dataclass(frozen=True, eq=False)
class _ResolvedGbm:
    p0: np.ndarray
    mu: np.ndarray      # (2, d), row 0 bull
    sigma: np.ndarray   # (2, d)
    factor: np.ndarray  # corr = factor @ factor.T
    tickers: tuple[str, ...]


def _per_regime(value, d: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return np.full((2, d), float(arr))
    if arr.shape == (d,):
        return np.vstack([arr, arr])
    if arr.shape == (2, d):
        return arr.copy()
    raise InvalidParams(f"{name} must be scalar, ({d},), or (2, {d}); got {arr.shape}")


def load_csv(path) -> PriceSeries:
    """Parse a ``date,TICKER,...`` close-price CSV into a PriceSeries.

    Rows are sorted by date. A row containing a non-numeric or non-positive
    price is rejected wholesale and parsing continues; structural problems
    (bad header, wrong field count, unreadable or duplicate dates) raise
    :class:`ParseError` with the offending line and column.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptySeries(f"{path} is empty") from None
        if len(header) < 2 or header[0].strip().lower() != "date":
            raise ParseError("header must be 'date,TICKER,...'", line=1, column=0)
        tickers = tuple(h.strip() for h in header[1:])
        if any(not t for t in tickers) or len(set(tickers)) != len(tickers):
            raise ParseError("empty or duplicate ticker in header", line=1, column=1)

        rows: list[tuple[dt.date, list[float], int]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue  # blank line
            if len(row) != len(tickers) + 1:
                raise ParseError(
                    f"expected {len(tickers) + 1} fields, got {len(row)}",
                    line=lineno,
                    column=0,
                )
            try:
                day = dt.date.fromisoformat(row[0].strip())
            except ValueError:
                raise ParseError(f"bad date {row[0]!r}", line=lineno, column=0) from None
            values = []
            for cell in row[1:]:
                try:
                    v = float(cell)
                except ValueError:
                    values = None  # non-numeric cell: drop the row
                    break
                if not math.isfinite(v) or v <= 0.0:
                    values = None  # non-positive price: drop the row
                    break
                values.append(v)
            if values is not None:
                rows.append((day, values, lineno))

    rows.sort(key=lambda r: r[0])
    for prev, cur in zip(rows, rows[1:]):
        if prev[0] == cur[0]:
            raise ParseError(f"duplicate date {cur[0].isoformat()}", line=cur[2], column=0)
    if len(rows) < 2:
        raise EmptySeries(f"{path}: only {len(rows)} usable rows after cleaning")
    dates = tuple(r[0] for r in rows)
    prices = np.array([r[1] for r in rows], dtype=np.float64)
    return PriceSeries(tickers, dates, prices)


def align_and_clean(
    observations: Mapping[str, Iterable[tuple[dt.date, float]]]
) -> PriceSeries:
    """Align per-asset observation lists into a dense PriceSeries.

    The output covers the common date range (from the latest first observation
    to the earliest last observation); internal gaps are forward-filled from
    the asset's most recent prior observation. Leading dates where some asset
    has no history yet are dropped by construction of the common range.
    """
    if not observations:
        raise EmptySeries("no assets supplied")
    per_asset: dict[str, dict[dt.date, float]] = {}
    for ticker, obs in observations.items():
        series = dict(sorted((d, float(p)) for d, p in obs))
        if not series:
            raise EmptySeries(f"asset {ticker} has no observations")
        if min(series.values()) <= 0:
            raise InvalidParams(f"asset {ticker} has non-positive prices")
        per_asset[ticker] = series

    start = max(min(s) for s in per_asset.values())
    end = min(max(s) for s in per_asset.values())
    grid = sorted({d for s in per_asset.values() for d in s if start <= d <= end})
    if len(grid) < 2:
        raise EmptySeries(f"common range {start}..{end} spans {len(grid)} day(s)")

    tickers = tuple(per_asset)
    prices = np.empty((len(grid), len(tickers)), dtype=np.float64)
    for j, ticker in enumerate(tickers):
        series = per_asset[ticker]
        last = None
        sorted_dates = sorted(series)
        for i, day in enumerate(grid):
            if day in series:
                last = series[day]
            elif last is None:
                # first grid day precedes this asset's coverage only if the
                # asset has an earlier observation to carry forward
                idx = bisect_right(sorted_dates, day) - 1
                last = series[sorted_dates[idx]]
            prices[i, j] = last
    return PriceSeries(tickers, tuple(grid), prices)


def simple_returns(ps: PriceSeries) -> ReturnSeries:
    """Per-period simple returns: ``r[t] = p[t+1]/p[t] - 1``."""
    returns = ps.prices[1:] / ps.prices[:-1] - 1.0
    return ReturnSeries(ps.asset_ids, ps.dates[1:], returns)


def synth_market(params: GbmParams) -> tuple[PriceSeries, list[Regime]]:
    """Generate a regime-switching correlated GBM market, deterministic by seed.

    Day 0 starts in the bull regime at the initial prices. Each subsequent day
    first toggles the regime with probability ``regime_switch_prob``, then
    draws correlated shocks; the day's log increment uses the drift/vol of the
    regime in effect that day. Draw order is fixed (one uniform, then ``d``
    normals per day) so equal seeds give bit-identical output.
    """
    r = params.resolved()
    rng = np.random.default_rng(params.seed)
    dtau = 1.0 / params.days_per_year

    log_p = np.log(r.p0)
    prices = np.empty((params.t, params.d), dtype=np.float64)
    prices[0] = r.p0
    regimes = [Regime.BULL]
    state = 0  # 0 = bull, 1 = bear
    for t in range(1, params.t):
        if rng.uniform() < params.regime_switch_prob:
            state = 1 - state
        regimes.append(Regime.BULL if state == 0 else Regime.BEAR)
        z = r.factor @ rng.standard_normal(params.d)
        drift = (r.mu[state] - 0.5 * r.sigma[state] ** 2) * dtau
        log_p = log_p + drift + r.sigma[state] * math.sqrt(dtau) * z
        prices[t] = np.exp(log_p)

    dates = trading_dates(params.start_date, params.t)
    return PriceSeries(r.tickers, dates, prices), regimes


def trading_dates(start: dt.date, n: int) -> tuple[dt.date, ...]:
    """``n`` consecutive weekdays beginning at the first weekday >= start."""
    out: list[dt.date] = []
    day = start
    while len(out) < n:
        if day.weekday() < 5:
            out.append(day)
        day += dt.timedelta(days=1)
    return tuple(out)


def index_series(ps: PriceSeries) -> np.ndarray:
    """Price-weighted index normalized so ``index[0] = 100``.

    Per-day sums use exact (fsum) summation, so the result is bit-invariant
    under any reordering of the assets.
    """
    sums = np.array([math.fsum(row) for row in ps.prices])
    divisor = sums[0] / 100.0
    return sums / divisor


def index_of_date(ps: PriceSeries, day: dt.date, *, clamp: bool = False) -> int:
    """Index of the first date >= ``day``; OutOfRange past the end unless clamped."""
    i = bisect_left(ps.dates, day)
    if i >= len(ps.dates):
        if clamp:
            return len(ps.dates) - 1
        raise OutOfRange(
            f"{day.isoformat()} is after the last available date "
            f"{ps.dates[-1].isoformat()}"
        )
    return i


def slice_between(ps: PriceSeries, start: dt.date | None, end: dt.date | None) -> PriceSeries:
    """Rows with ``start <= date <= end`` (inclusive; None leaves a side open)."""
    lo = 0 if start is None else bisect_left(ps.dates, start)
    hi = len(ps.dates) if end is None else bisect_right(ps.dates, end)
    if hi - lo < 2:
        span = f"{ps.dates[0].isoformat()}..{ps.dates[-1].isoformat()}"
        raise OutOfRange(
            f"range {start}..{end} selects {max(0, hi - lo)} rows from data span {span}"
        )
    return PriceSeries(ps.asset_ids, ps.dates[lo:hi], ps.prices[lo:hi])


def write_prices_csv(ps: PriceSeries, path) -> None:
    """Persist in the ``date,TICKER,...`` format; floats round-trip exactly."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", *ps.asset_ids])
        for day, row in zip(ps.dates, ps.prices):
            writer.writerow([day.isoformat(), *[repr(float(v)) for v in row]])


def write_regimes_csv(dates: Sequence[dt.date], regimes: Sequence[Regime], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "regime"])
        for day, regime in zip(dates, regimes):
            writer.writerow([day.isoformat(), regime.value])


def load_regimes_csv(path) -> tuple[tuple[dt.date, ...], list[Regime]]:
    dates: list[dt.date] = []
    regimes: list[Regime] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["date", "regime"]:
            raise ParseError("regime sidecar header must be 'date,regime'", line=1, column=0)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", line=lineno, column=0)
            try:
                dates.append(dt.date.fromisoformat(row[0].strip()))
                regimes.append(Regime(row[1].strip()))
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, column=1) from None
    return tuple(dates), regimes
