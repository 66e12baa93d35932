"""Strategy evaluation harness.

Runs a strategy day by day through the trading environment over held-out
prices and reduces the equity curve to the usual annualized metrics. The
strategy set mirrors the classic comparison table: the RL agent (greedy by
default), buy-and-hold on the price-weighted index, and rolling min-variance
and mean-variance (max-Sharpe) rebalancers. Every (strategy, seed) run is an
independent pure job over immutable data; `compare` assembles rows strictly
in input order so output files diff clean across repeat runs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .agent import AgentNets, NoiseProcess, select_action
from .errors import (
    Degenerate,
    DegenerateCurve,
    Infeasible,
    InsufficientData,
    InvalidParams,
    ZeroVolatility,
)
from .market_data import DAYS_PER_YEAR, PriceSeries, ReturnSeries
from .portfolio_opt import (
    AllocationConstraints,
    Moments,
    estimate_moments,
    max_sharpe,
    min_variance,
)
from .trading_env import EnvState, TradeAction, TradingEnv, state_features

DEFAULT_SEEDS = (0, 1, 2, 3, 4)


@dataclass(frozen=True, eq=False)
class EquityCurve:
    """Daily total portfolio value over the evaluation span; values[0] is the
    initial capital."""

    dates: tuple
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dates", tuple(self.dates))
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size != len(self.dates):
            raise InvalidParams(
                f"{values.size} values for {len(self.dates)} dates"
            )
        if values.size < 1 or not np.all(np.isfinite(values)) or np.min(values) <= 0:
            raise InvalidParams("curve values must be positive and finite")

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class BacktestReport:
    strategy: str
    seed: int
    initial_value: float
    final_value: float
    annualized_return: float
    annualized_std: float
    sharpe_ratio: float
    curve: EquityCurve


def annualized_return(curve: EquityCurve | Sequence[float],
                      days_per_year: int = DAYS_PER_YEAR) -> float:
    """Geometric annualization: (V_T / V_0)^(days_per_year / (T-1)) - 1."""
    values = curve.values if isinstance(curve, EquityCurve) else np.asarray(curve, dtype=np.float64)
    if values.size < 2:
        raise DegenerateCurve(f"need >= 2 curve points, got {values.size}")
    v0, vt = float(values[0]), float(values[-1])
    if v0 <= 0 or vt <= 0:
        raise DegenerateCurve("curve endpoints must be positive")
    return (vt / v0) ** (days_per_year / (values.size - 1)) - 1.0


def annualized_std(curve: EquityCurve | Sequence[float],
                   days_per_year: int = DAYS_PER_YEAR) -> float:
    """Sample standard deviation of daily simple returns, scaled by sqrt(days_per_year)."""
    values = curve.values if isinstance(curve, EquityCurve) else np.asarray(curve, dtype=np.float64)
    if values.size < 3:
        raise DegenerateCurve(f"need >= 3 curve points, got {values.size}")
    daily = values[1:] / values[:-1] - 1.0
    return float(np.std(daily, ddof=1) * math.sqrt(days_per_year))


def sharpe_from_metrics(ann_return: float, ann_std: float, rf_per_year: float = 0.0) -> float:
    if not ann_std > 1e-12:
        raise ZeroVolatility(f"annualized std {ann_std!r} too small for a Sharpe ratio")
    return (ann_return - rf_per_year) / ann_std


def sharpe_ratio(curve: EquityCurve | Sequence[float], rf_per_year: float = 0.0,
                 days_per_year: int = DAYS_PER_YEAR) -> float:
    """(annualized return - rf) / annualized std of the curve."""
    return sharpe_from_metrics(
        annualized_return(curve, days_per_year),
        annualized_std(curve, days_per_year),
        rf_per_year,
    )


class Strategy:
    """Daily decision rule; emits weight deltas for the environment.

    ``begin`` re-initializes run-scoped state, so one instance can be
    backtested repeatedly (each run an independent job).
    """

    name: str = "strategy"

    def begin(self, ps: PriceSeries, eval_start: int,
              constraints: AllocationConstraints, rng: np.random.Generator) -> None:
        pass

    def act(self, state: EnvState, ps: PriceSeries) -> np.ndarray:
        raise NotImplementedError


class RlAgentStrategy(Strategy):
    """Trained actor evaluated greedily; a flag re-enables exploration noise."""

    def __init__(self, nets: AgentNets, lookback: int, name: str = "adaptive_ddpg",
                 stochastic: bool = False, noise_sigma: float = 0.2,
                 noise_theta: float = 0.15):
        if lookback < 0:
            raise InvalidParams(f"lookback must be nonnegative, got {lookback}")
        self.nets = nets
        self.lookback = lookback
        self.name = name
        self.stochastic = stochastic
        self.noise_sigma = noise_sigma
        self.noise_theta = noise_theta
        self._noise: NoiseProcess | None = None

    def begin(self, ps, eval_start, constraints, rng):
        self._noise = None
        if self.stochastic:
            seed = int(rng.integers(0, 2**31 - 1))
            self._noise = NoiseProcess(
                "positive", ps.n_assets, self.noise_sigma, self.noise_theta, seed
            )

    def act(self, state, ps):
        features = state_features(state, ps, self.lookback)
        return select_action(self.nets, features, self._noise).a


class BuyAndHoldIndexStrategy(Strategy):
    """Buys the price-weighted index on the first day and never trades again.

    Equal share counts per asset means weights proportional to first-day
    prices; the position is fully invested, so the curve tracks the index.
    """

    def __init__(self, name: str = "index"):
        self.name = name
        self._bought = False

    def begin(self, ps, eval_start, constraints, rng):
        self._bought = False

    def act(self, state, ps):
        if self._bought:
            return np.zeros(ps.n_assets)
        self._bought = True
        return state.p / math.fsum(state.p)


class _OptimizerStrategy(Strategy):
    """Shared machinery for rolling Markowitz rebalancers.

    Targets are re-solved every ``rebalance_every`` days from moments of the
    trailing ``estimation_window`` daily returns (the window shrinks near the
    start of the data). ``fixed_moments`` switches to static mode: one moment
    estimate, typically fit on training data, reused at every rebalance.
    """

    def __init__(self, name: str, rebalance_every: int = 21,
                 estimation_window: int = 252,
                 fixed_moments: Moments | None = None,
                 days_per_year: int = DAYS_PER_YEAR):
        if estimation_window < 2:
            raise InvalidParams(f"estimation_window must be >= 2, got {estimation_window}")
        if rebalance_every < 1:
            raise InvalidParams(f"rebalance_every must be >= 1, got {rebalance_every}")
        self.name = name
        self.rebalance_every = rebalance_every
        self.estimation_window = estimation_window
        self.fixed_moments = fixed_moments
        self.days_per_year = days_per_year
        self._constraints = AllocationConstraints()
        self._last_rebalance: int | None = None

    def begin(self, ps, eval_start, constraints, rng):
        if self.fixed_moments is None and ps.n_days < self.estimation_window + 2:
            raise InsufficientData(
                f"optimizer strategy needs >= {self.estimation_window + 2} days, "
                f"series has {ps.n_days}"
            )
        self._constraints = constraints
        self._last_rebalance = None

    def _moments_at(self, t: int, ps: PriceSeries) -> Moments | None:
        if self.fixed_moments is not None:
            return self.fixed_moments
        lo = max(0, t - self.estimation_window)
        window = ps.prices[lo:t + 1]
        if window.shape[0] < 3:
            return None
        returns = window[1:] / window[:-1] - 1.0
        rs = ReturnSeries(ps.asset_ids, ps.dates[lo + 1:t + 1], returns)
        return estimate_moments(rs, self.days_per_year)

    def _solve(self, m: Moments) -> np.ndarray:
        raise NotImplementedError

    def act(self, state, ps):
        d = ps.n_assets
        t = state.t
        if self._last_rebalance is not None and t - self._last_rebalance < self.rebalance_every:
            return np.zeros(d)
        m = self._moments_at(t, ps)
        if m is None:
            return np.zeros(d)
        self._last_rebalance = t
        try:
            target = self._solve(m)
        except (Degenerate, Infeasible, ZeroVolatility):
            # no meaningful optimum on this window (e.g. zero variance): hold
            return np.zeros(d)
        return np.clip(target - state.w, -1.0, 1.0)


class MinVarianceStrategy(_OptimizerStrategy):
    def __init__(self, rebalance_every: int = 21, estimation_window: int = 252,
                 name: str = "min_variance", **kwargs):
        super().__init__(name, rebalance_every, estimation_window, **kwargs)

    def _solve(self, m):
        return min_variance(m, self._constraints)


class MeanVarianceStrategy(_OptimizerStrategy):
    def __init__(self, rebalance_every: int = 21, estimation_window: int = 252,
                 rf: float = 0.0, name: str = "mean_variance", **kwargs):
        super().__init__(name, rebalance_every, estimation_window, **kwargs)
        self.rf = rf

    def _solve(self, m):
        return max_sharpe(m, self.rf, self._constraints)


def run_backtest(
    strategy: Strategy,
    ps: PriceSeries,
    initial_cash: float = 10_000.0,
    cost_rate: float = 0.0,
    seed: int = 0,
    *,
    eval_start: int = 0,
    constraints: AllocationConstraints | None = None,
    rf_per_year: float = 0.0,
    days_per_year: int = DAYS_PER_YEAR,
) -> BacktestReport:
    """Drive one strategy through one episode and report its metrics.

    ``eval_start`` admits leading history days (for lookback features and
    estimation windows) without scoring them: the curve starts at
    ``ps.dates[eval_start]`` with the initial capital. Metrics a short or
    flat curve cannot support are reported as nan rather than failing the
    whole run.
    """
    if constraints is None:
        constraints = AllocationConstraints.for_assets(ps.n_assets)
    strategy.begin(ps, eval_start, constraints, np.random.default_rng(seed))
    env = TradingEnv(ps, initial_cash, cost_rate)
    env.reset(eval_start)
    values = [float(initial_cash)]
    while not env.done:
        action = np.asarray(strategy.act(env.state, ps), dtype=np.float64)
        result = env.step(TradeAction(action))
        values.append(result.next_state.value)
    curve = EquityCurve(ps.dates[eval_start:], np.array(values))

    ann_ret = annualized_return(curve, days_per_year)
    try:
        ann_std = annualized_std(curve, days_per_year)
    except DegenerateCurve:
        ann_std = float("nan")
    try:
        sharpe = sharpe_from_metrics(ann_ret, ann_std, rf_per_year) \
            if math.isfinite(ann_std) else float("nan")
    except ZeroVolatility:
        sharpe = float("nan")
    return BacktestReport(
        strategy=strategy.name,
        seed=seed,
        initial_value=float(initial_cash),
        final_value=float(curve.values[-1]),
        annualized_return=ann_ret,
        annualized_std=ann_std,
        sharpe_ratio=sharpe,
        curve=curve,
    )


@dataclass(frozen=True)
class SummaryRow:
    strategy: str
    initial: float
    final: float
    ann_return: float
    ann_std: float
    sharpe: float


@dataclass(eq=False)
class StrategyComparison:
    """All runs of one logical strategy: one report per seed."""

    name: str
    seeds: tuple[int, ...]
    reports: list[BacktestReport]

    def _metric(self, attr: str) -> np.ndarray:
        return np.array([getattr(r, attr) for r in self.reports], dtype=np.float64)

    def aggregate(self) -> SummaryRow:
        return SummaryRow(
            strategy=self.name,
            initial=float(self._metric("initial_value").mean()),
            final=float(self._metric("final_value").mean()),
            ann_return=float(self._metric("annualized_return").mean()),
            ann_std=float(self._metric("annualized_std").mean()),
            sharpe=float(self._metric("sharpe_ratio").mean()),
        )

    def spread(self) -> dict[str, float]:
        """Across-seed standard deviation per metric (0.0 for a single run)."""
        return {
            attr: float(np.std(self._metric(attr)))
            for attr in ("final_value", "annualized_return", "annualized_std", "sharpe_ratio")
        }


@dataclass(eq=False)
class Comparison:
    entries: list[StrategyComparison]

    def summary_rows(self) -> list[SummaryRow]:
        return [e.aggregate() for e in self.entries]


def compare(
    strategies: Sequence[Strategy | Sequence[Strategy]],
    ps: PriceSeries,
    initial_cash: float = 10_000.0,
    cost_rate: float = 0.0,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    **run_kwargs,
) -> Comparison:
    """Backtest each entry and keep rows in input order.

    An entry may be a single strategy (run once, first seed) or a per-seed
    group, one instance per seed in ``seeds``; group metrics are averaged
    across seeds with the per-seed reports retained.
    """
    if not strategies:
        raise InvalidParams("need at least one strategy")
    if not seeds:
        raise InvalidParams("need at least one seed")
    entries = []
    for entry in strategies:
        group = list(entry) if isinstance(entry, (list, tuple)) else [entry]
        if len(group) == 1:
            pairs = [(group[0], int(seeds[0]))]
        elif len(group) == len(seeds):
            pairs = [(s, int(sd)) for s, sd in zip(group, seeds)]
        else:
            raise InvalidParams(
                f"group of {len(group)} strategies does not match {len(seeds)} seeds"
            )
        reports = [
            run_backtest(s, ps, initial_cash, cost_rate, sd, **run_kwargs)
            for s, sd in pairs
        ]
        entries.append(
            StrategyComparison(
                name=group[0].name,
                seeds=tuple(sd for _, sd in pairs),
                reports=reports,
            )
        )
    return Comparison(entries)


def write_summary_csv(rows: Sequence[SummaryRow], path) -> None:
    """Comparison-table CSV: strategy,initial,final,ann_return,ann_std,sharpe."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "initial", "final", "ann_return", "ann_std", "sharpe"])
        for r in rows:
            writer.writerow(
                [r.strategy, repr(r.initial), repr(r.final),
                 repr(r.ann_return), repr(r.ann_std), repr(r.sharpe)]
            )


def write_equity_csv(curve: EquityCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "value"])
        for day, value in zip(curve.dates, curve.values):
            writer.writerow([day.isoformat(), repr(float(value))])


def _jsonable(x: float):
    return None if not math.isfinite(x) else x


def write_report_json(comparison: Comparison, path, *, config: dict | None = None,
                      equity_files: dict[tuple[str, int], str] | None = None) -> None:
    """Machine-readable report: config echo plus per-strategy and per-seed detail.

    Deliberately timestamp-free so repeat runs diff clean; non-finite metrics
    serialize as null.
    """
    payload = {"config": config or {}, "strategies": []}
    for entry in comparison.entries:
        agg = entry.aggregate()
        per_seed = []
        for report in entry.reports:
            row = {
                "seed": report.seed,
                "initial": _jsonable(report.initial_value),
                "final": _jsonable(report.final_value),
                "ann_return": _jsonable(report.annualized_return),
                "ann_std": _jsonable(report.annualized_std),
                "sharpe": _jsonable(report.sharpe_ratio),
                "n_days": len(report.curve),
            }
            if equity_files and (entry.name, report.seed) in equity_files:
                row["equity_csv"] = equity_files[(entry.name, report.seed)]
            per_seed.append(row)
        payload["strategies"].append(
            {
                "name": entry.name,
                "seeds": list(entry.seeds),
                "aggregate": {
                    "initial": _jsonable(agg.initial),
                    "final": _jsonable(agg.final),
                    "ann_return": _jsonable(agg.ann_return),
                    "ann_std": _jsonable(agg.ann_std),
                    "sharpe": _jsonable(agg.sharpe),
                },
                "spread": {k: _jsonable(v) for k, v in entry.spread().items()},
                "per_seed": per_seed,
            }
        )
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, allow_nan=False)
        fh.write("\n")
