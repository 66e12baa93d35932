"""Report figures rendered straight to files.

Uses the Agg backend only; nothing here opens a window. PNG metadata is
suppressed so repeat runs with identical inputs produce byte-identical
files, matching the diff-clean contract of the delimited outputs they sit
alongside.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np  # noqa: E402

from .agent import EpisodeLog  # noqa: E402
from .backtest import EquityCurve  # noqa: E402
from .market_data import Regime  # noqa: E402
from .portfolio_opt import FrontierPoint  # noqa: E402

_DPI = 120
_SAVE_KWARGS = {"dpi": _DPI, "metadata": {"Software": None}}


def plot_equity_curves(curves: Mapping[str, EquityCurve], path) -> None:
    """Overlay portfolio values of several strategies on one time axis."""
    fig, ax = plt.subplots(figsize=(9, 5))
    for name, curve in curves.items():
        ax.plot(curve.dates, curve.values, label=name, linewidth=1.2)
    ax.set_xlabel("date")
    ax.set_ylabel("portfolio value")
    ax.legend(loc="upper left", fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.autofmt_xdate()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def plot_frontier(points: Sequence[FrontierPoint], path, *,
                  cloud: tuple[np.ndarray, np.ndarray] | None = None) -> None:
    """Efficient frontier in (volatility, return) space.

    ``cloud`` is an optional (volatilities, returns) scatter of random
    feasible portfolios drawn behind the frontier for context. The MVP is
    marked; the max-Sharpe point is the frontier point with the best Sharpe.
    """
    fig, ax = plt.subplots(figsize=(7, 5))
    if cloud is not None:
        vols, rets = cloud
        ax.scatter(vols, rets, s=4, alpha=0.25, color="gray", label="random feasible")
    vols = [p.volatility for p in points]
    rets = [p.exp_return for p in points]
    ax.plot(vols, rets, "o-", markersize=3, linewidth=1.2, label="frontier")
    mvp = [p for p in points if p.is_mvp]
    if mvp:
        ax.plot([mvp[0].volatility], [mvp[0].exp_return], "s", markersize=8,
                color="tab:red", label="min variance")
    finite = [p for p in points if np.isfinite(p.sharpe)]
    if finite:
        best = max(finite, key=lambda p: p.sharpe)
        ax.plot([best.volatility], [best.exp_return], "*", markersize=12,
                color="tab:green", label="max Sharpe")
    ax.set_xlabel("annualized volatility")
    ax.set_ylabel("annualized return")
    ax.legend(loc="lower right", fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def plot_training(log: Sequence[EpisodeLog], path) -> None:
    """Episode reward and mean |prediction error| over the training run."""
    episodes = [row.episode for row in log]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    ax1.plot(episodes, [row.total_reward for row in log], linewidth=1.0)
    ax1.set_ylabel("episode reward")
    ax1.grid(True, alpha=0.3)
    ax2.plot(episodes, [row.mean_abs_delta for row in log],
             linewidth=1.0, color="tab:orange")
    ax2.set_ylabel("mean |delta|")
    ax2.set_xlabel("episode")
    ax2.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def plot_index_regimes(dates: Sequence, index: Sequence[float],
                       regimes: Sequence[Regime], path) -> None:
    """Index level with bear spans shaded."""
    fig, ax = plt.subplots(figsize=(9, 4))
    ax.plot(dates, index, linewidth=1.0, color="tab:blue", label="index")
    start = None
    for i, regime in enumerate(regimes):
        if regime is Regime.BEAR and start is None:
            start = i
        elif regime is not Regime.BEAR and start is not None:
            ax.axvspan(dates[start], dates[i], color="tab:red", alpha=0.15)
            start = None
    if start is not None:
        ax.axvspan(dates[start], dates[-1], color="tab:red", alpha=0.15)
    ax.set_xlabel("date")
    ax.set_ylabel("index level")
    ax.legend(loc="upper left", fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.autofmt_xdate()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
