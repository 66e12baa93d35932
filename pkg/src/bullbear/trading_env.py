"""The daily trading MDP: portfolio accounting, regime signal, feature encoding.

State is (prices, share holdings, cash); actions are per-asset weight deltas
in [-1, 1] with positive = buy. Trades execute at the current day's prices:
sells are capped at the held quantity, and if requested buys cost more than
the cash freed up, every buy leg is scaled by one common factor so the balance
never goes negative (a hard constraint of the MDP). The reward is the change
in total portfolio value across the step, computed as the price move on the
post-trade holdings minus transaction fees so that a frozen-price, zero-cost
step rewards exactly 0.0 regardless of the action.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EpisodeDone, InvalidParams, OutOfRange, ShapeMismatch
from .market_data import PriceSeries, Regime

__all__ = [
    "Regime",
    "EnvState",
    "TradeAction",
    "StepResult",
    "TraceRow",
    "reset_env",
    "step",
    "portfolio_value",
    "regime_signal",
    "state_features",
    "feature_length",
    "TradingEnv",
    "write_episode_trace",
]


@dataclass(frozen=True, eq=False)
class EnvState:
    """MDP state at day ``t``: prices, holdings (shares), and cash balance."""

    t: int
    p: np.ndarray  # (D,) prices at day t
    h: np.ndarray  # (D,) non-negative share holdings
    b: float       # cash balance >= 0

    @property
    def value(self) -> float:
        return float(self.p @ self.h) + self.b

    @property
    def w(self) -> np.ndarray:
        """Per-asset weights; together with b/V they partition the portfolio."""
        return (self.p * self.h) / self.value


@dataclass(frozen=True, eq=False)
class TradeAction:
    """Target weight deltas, each in [-1, 1]; positive buys, negative sells."""

    a: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        object.__setattr__(self, "a", a)
        if a.ndim != 1:
            raise ShapeMismatch(f"action must be a vector, got shape {a.shape}")
        if not np.all(np.isfinite(a)) or np.max(np.abs(a)) > 1.0 + 1e-12:
            raise InvalidParams("weight deltas must be finite and within [-1, 1]")


@dataclass(frozen=True, eq=False)
class StepResult:
    next_state: EnvState
    reward: float
    done: bool
    executed: np.ndarray  # weight deltas actually filled


@dataclass(frozen=True, eq=False)
class TraceRow:
    t: int
    date: dt.date
    value: float
    balance: float
    reward: float
    weights: np.ndarray
    executed: np.ndarray


def reset_env(ps: PriceSeries, initial_cash: float, start_t: int = 0) -> EnvState:
    """All-cash state at ``start_t``; the episode ends at the last day."""
    if not 0 <= start_t < ps.n_days - 1:
        raise OutOfRange(f"start_t {start_t} outside [0, {ps.n_days - 1})")
    if not initial_cash > 0:
        raise InvalidParams(f"initial_cash must be positive, got {initial_cash}")
    return EnvState(
        t=start_t,
        p=ps.prices[start_t].copy(),
        h=np.zeros(ps.n_assets),
        b=float(initial_cash),
    )


def portfolio_value(state: EnvState) -> float:
    """Total value: stock equity plus cash."""
    return state.value


def step(
    state: EnvState,
    action: TradeAction | np.ndarray,
    ps: PriceSeries,
    cost_rate: float = 0.0,
) -> StepResult:
    """Trade at day-t prices, then advance to day t+1.

    Execution order: sells first (capped at holdings), then buys from the
    resulting cash, scaled by a common factor if they would overdraw it.
    ``cost_rate`` is a proportional fee on traded notional, default 0.
    """
    if state.t >= ps.n_days - 1:
        raise EpisodeDone(f"episode ended at t={state.t}")
    a = (action.a if isinstance(action, TradeAction) else TradeAction(action).a)
    d = ps.n_assets
    if a.size != d:
        raise ShapeMismatch(f"action length {a.size} for {d} assets")
    if cost_rate < 0:
        raise InvalidParams("cost_rate must be nonnegative")

    p = ps.prices[state.t]
    h, b = state.h, state.b
    value = float(p @ h) + b

    requested_shares = a * value / p
    dh = np.zeros(d)
    executed = np.zeros(d)

    selling = a < 0
    full_exit = selling & (requested_shares <= -h)
    partial = selling & ~full_exit
    dh[full_exit] = -h[full_exit]
    executed[full_exit] = -(h[full_exit] * p[full_exit]) / value
    dh[partial] = requested_shares[partial]
    executed[partial] = a[partial]
    sell_notional = float(p[selling] @ (-dh[selling]))

    buying = a > 0
    buy_notional = float(p[buying] @ requested_shares[buying])
    cash_after_sells = b + (1.0 - cost_rate) * sell_notional
    need = (1.0 + cost_rate) * buy_notional
    if buy_notional > 0.0 and need > cash_after_sells:
        scale = cash_after_sells / need
        executed[buying] = scale * a[buying]
        dh[buying] = executed[buying] * value / p[buying]
        buy_executed = scale * buy_notional
        b_new = 0.0
    else:
        executed[buying] = a[buying]
        dh[buying] = requested_shares[buying]
        buy_executed = buy_notional
        b_new = cash_after_sells - need

    h_new = h + dh  # full exits land on exactly 0.0 since dh = -h there
    fees = cost_rate * (sell_notional + buy_executed)

    t_next = state.t + 1
    p_next = ps.prices[t_next]
    reward = float((p_next - p) @ h_new) - fees
    next_state = EnvState(t=t_next, p=p_next.copy(), h=h_new, b=b_new)
    return StepResult(
        next_state=next_state,
        reward=reward,
        done=t_next == ps.n_days - 1,
        executed=executed,
    )


def regime_signal(index: Sequence[float] | np.ndarray, t: int, window: int) -> Regime:
    """Bull when the index sits at or above its trailing mean, else Bear.

    The window shrinks at the start of the series. The tie comparison is done
    as ``index[t] * n >= fsum(window)``: both sides are correctly rounded
    values of the exact quantities, so a constant series is Bull at every t.
    """
    if t < 0 or t >= len(index):
        raise OutOfRange(f"t {t} outside [0, {len(index)})")
    if window < 1:
        raise InvalidParams(f"window must be >= 1, got {window}")
    lo = max(0, t - window + 1)
    win = [float(v) for v in index[lo : t + 1]]
    return Regime.BULL if float(index[t]) * len(win) >= math.fsum(win) else Regime.BEAR


def feature_length(d: int, lookback: int) -> int:
    return d * lookback + d + 1


def state_features(state: EnvState, ps: PriceSeries, lookback: int) -> np.ndarray:
    """Network input: per-asset daily log-price ratios over ``lookback`` days
    (zero-padded before the series start, oldest first), then the current
    weights, then the cash fraction."""
    if lookback < 0:
        raise InvalidParams("lookback must be nonnegative")
    d = ps.n_assets
    ratios = np.zeros((lookback, d))
    for k in range(lookback):
        t0 = state.t - lookback + k
        if t0 >= 0:
            ratios[k] = np.log(ps.prices[t0 + 1] / ps.prices[t0])
    value = state.value
    weights = (state.p * state.h) / value
    # order='F' keeps each asset's ratio history contiguous
    return np.concatenate([ratios.ravel(order="F"), weights, [state.b / value]])


class TradingEnv:
    """Single-owner convenience wrapper holding the current episode state."""

    def __init__(self, ps: PriceSeries, initial_cash: float = 10_000.0,
                 cost_rate: float = 0.0):
        self.ps = ps
        self.initial_cash = float(initial_cash)
        self.cost_rate = float(cost_rate)
        self.state: EnvState | None = None

    def reset(self, start_t: int = 0) -> EnvState:
        self.state = reset_env(self.ps, self.initial_cash, start_t)
        return self.state

    def step(self, action: TradeAction | np.ndarray) -> StepResult:
        if self.state is None:
            raise EpisodeDone("reset() must be called before step()")
        result = step(self.state, action, self.ps, self.cost_rate)
        self.state = result.next_state
        return result

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.t >= self.ps.n_days - 1


def write_episode_trace(rows: Sequence[TraceRow], asset_ids: Sequence[str], path) -> None:
    """Diagnostic CSV: ``t,date,V,b,reward,w_1..w_D,exec_1..exec_D``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t", "date", "V", "b", "reward"]
            + [f"w_{t}" for t in asset_ids]
            + [f"exec_{t}" for t in asset_ids]
        )
        for r in rows:
            writer.writerow(
                [r.t, r.date.isoformat(), repr(r.value), repr(r.balance), repr(r.reward)]
                + [repr(float(v)) for v in r.weights]
                + [repr(float(v)) for v in r.executed]
            )
