"""Markowitz machinery: moments, constrained allocation, efficient frontier.

The feasible set is the box-constrained simplex
``{w : lower <= w_i <= upper, sum w_i = budget}``. Its Euclidean projection
has a one-parameter characterization ``w = clip(v - shift, lower, upper)``
with the shift found by bisection (the clipped sum is monotone in the shift),
which gives an exact projection without any external QP dependency. Both
solvers are projected gradient methods with Armijo backtracking and 16
deterministic restarts; the min-variance problem is convex and the Sharpe
ratio is quasi-concave on this set, so multi-start is belt and braces rather
than a global-search crutch.

Annualization is arithmetic: per-year moments are ``days_per_year`` times the
per-day column means / sample covariance (denominator n-1).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (
    Degenerate,
    Infeasible,
    InsufficientData,
    InvalidParams,
    ShapeMismatch,
    ZeroVolatility,
)
from .market_data import DAYS_PER_YEAR, ReturnSeries

_PG_TOL = 1e-9          # projected-gradient norm stopping threshold
_PG_CERT = 1e-7         # certificate required of the returned point
_MAX_ITER = 10_000
_ARMIJO = 1e-4
_N_RESTARTS = 16


@dataclass(frozen=True, eq=False)
class Moments:
    """Annualized first and second moments of asset returns.

    ``sigma_mat`` must be symmetric and PSD; an eigenvalue in (-1e-8, 0) is
    treated as rounding noise and clipped to zero, anything lower is rejected.
    """

    mu: np.ndarray         # (D,)
    sigma_mat: np.ndarray  # (D, D)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sig = np.asarray(self.sigma_mat, dtype=np.float64)
        if mu.ndim != 1 or sig.shape != (mu.size, mu.size):
            raise ShapeMismatch(f"mu {mu.shape} incompatible with sigma_mat {sig.shape}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sig))):
            raise InvalidParams("moments must be finite")
        if not np.allclose(sig, sig.T, atol=1e-10):
            raise InvalidParams("sigma_mat must be symmetric")
        sig = 0.5 * (sig + sig.T)
        evals, evecs = np.linalg.eigh(sig)
        if evals.min() < -1e-8:
            raise InvalidParams(
                f"sigma_mat is not PSD (min eigenvalue {evals.min():.3e})"
            )
        if evals.min() < 0.0:
            # rounding-level repair: clip and reconstruct
            sig = (evecs * np.clip(evals, 0.0, None)) @ evecs.T
            sig = 0.5 * (sig + sig.T)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma_mat", sig)

    @property
    def n_assets(self) -> int:
        return self.mu.size


@dataclass(frozen=True)
class AllocationConstraints:
    """Box bounds on each weight plus a budget the weights must sum to."""

    lower: float = 0.0
    upper: float = 0.2
    budget: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise InvalidParams("bounds must be finite")
        if self.lower > self.upper:
            raise InvalidParams(f"lower {self.lower} exceeds upper {self.upper}")

    def check_feasible(self, d: int) -> None:
        if self.upper * d < self.budget - 1e-12 or self.lower * d > self.budget + 1e-12:
            raise Infeasible(
                f"no w in [{self.lower}, {self.upper}]^{d} sums to {self.budget}"
            )

    @classmethod
    def for_assets(cls, d: int, lower: float = 0.0, upper: float = 0.2,
                   budget: float = 1.0) -> "AllocationConstraints":
        """Default bounds for a d-asset universe.

        When the standard 20% cap leaves no slack (d <= 5 it pins every
        weight), the cap is relaxed to twice the equal weight so the box
        always admits a non-degenerate feasible set.
        """
        return cls(lower, max(upper, min(budget, 2.0 * budget / d)), budget)


@dataclass(frozen=True, eq=False)
class PortfolioStats:
    exp_return: float
    volatility: float
    sharpe: float


@dataclass(frozen=True, eq=False)
class FrontierPoint:
    weights: np.ndarray
    exp_return: float
    volatility: float
    sharpe: float
    target_return: float
    is_mvp: bool = False


def estimate_moments(rs: ReturnSeries, days_per_year: int = DAYS_PER_YEAR) -> Moments:
    """Annualized mean vector and sample covariance (denominator n-1)."""
    r = rs.returns
    if r.shape[0] < 2:
        raise InsufficientData(f"need >= 2 return rows, got {r.shape[0]}")
    mu = days_per_year * r.mean(axis=0)
    cov = np.cov(r, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    return Moments(mu, days_per_year * cov)


def return_and_volatility(w: np.ndarray, m: Moments) -> tuple[float, float]:
    w = _check_weights(w, m)
    ret = float(w @ m.mu)
    var = float(w @ m.sigma_mat @ w)
    return ret, float(np.sqrt(max(var, 0.0)))


def portfolio_stats(w: np.ndarray, m: Moments, rf: float = 0.0) -> PortfolioStats:
    """(expected return, volatility, Sharpe); Sharpe needs nonzero volatility."""
    ret, vol = return_and_volatility(w, m)
    if vol < 1e-12:
        raise ZeroVolatility(f"volatility {vol:.3e} too small for a Sharpe ratio")
    return PortfolioStats(ret, vol, (ret - rf) / vol)


def _check_weights(w, m: Moments) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (m.n_assets,):
        raise ShapeMismatch(f"weights shape {w.shape}, expected ({m.n_assets},)")
    if not np.all(np.isfinite(w)):
        raise InvalidParams("weights must be finite")
    return w


def project_capped_simplex(
    v: np.ndarray, lower: float, upper: float, budget: float
) -> np.ndarray:
    """Euclidean projection onto {lower <= w <= upper, sum w = budget}.

    The projection is clip(v - shift, lower, upper) for the unique shift at
    which the clipped sum hits the budget. That sum is piecewise linear and
    non-increasing in the shift with knots at v_i - upper and v_i - lower, so
    the exact shift falls out of one sorted walk over the 2d knots. A final
    linear correction on the unclamped coordinates absorbs float residue.
    """
    v = np.asarray(v, dtype=np.float64)
    d = v.size
    if upper * d < budget - 1e-12 or lower * d > budget + 1e-12:
        raise Infeasible(f"no point of [{lower}, {upper}]^{d} sums to {budget}")
    knots = np.concatenate([v - upper, v - lower])
    knots.sort()
    sums = np.clip(v[None, :] - knots[:, None], lower, upper).sum(axis=1)
    # sums runs from d*upper down to d*lower; locate the segment holding the budget
    i = int(np.searchsorted(-sums, -budget, side="left"))
    if i == 0:
        shift = knots[0]
    elif i == knots.size:
        shift = knots[-1]
    else:
        k0, k1 = knots[i - 1], knots[i]
        s0, s1 = sums[i - 1], sums[i]
        # linear between knots; slope zero means any shift in the segment works
        shift = k0 if s0 == s1 else k0 + (s0 - budget) * (k1 - k0) / (s0 - s1)
    w = np.clip(v - shift, lower, upper)
    margin = 1e-12 * max(1.0, upper - lower)
    free = (w > lower + margin) & (w < upper - margin)
    if free.any():
        w[free] += (budget - w.sum()) / free.sum()
    return np.clip(w, lower, upper)


def _restart_points(d: int, c: AllocationConstraints) -> list[np.ndarray]:
    # restart 0 preserves symmetry so symmetric instances resolve to equal weights
    starts = [project_capped_simplex(np.full(d, c.budget / d), c.lower, c.upper, c.budget)]
    for k in range(1, _N_RESTARTS):
        rng = np.random.default_rng(k)
        v = rng.dirichlet(np.ones(d)) * c.budget
        starts.append(project_capped_simplex(v, c.lower, c.upper, c.budget))
    return starts


def _pgd_minimize(
    value_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    w0: np.ndarray,
    c: AllocationConstraints,
    max_iter: int = _MAX_ITER,
) -> tuple[np.ndarray, float]:
    """Projected gradient descent with an adaptive Armijo step.

    The accepted step carries over and doubles each iteration, so the search
    self-scales to the objective's curvature (annualized covariances make
    gradients tiny; restarting from step 1.0 every time under-steps by orders
    of magnitude). Halving on a failed sufficient-decrease test keeps the
    usual Armijo guarantee.
    """
    proj = lambda x: project_capped_simplex(x, c.lower, c.upper, c.budget)
    w = proj(w0)
    f, g = value_grad(w)
    step = 1.0
    for _ in range(max_iter):
        if np.linalg.norm(w - proj(w - g)) < _PG_TOL:
            break
        step *= 2.0
        improved = False
        for _ in range(60):
            w_new = proj(w - step * g)
            direction = w_new - w
            if not direction.any():
                break
            f_new, g_new = value_grad(w_new)
            if f_new <= f + _ARMIJO * float(g @ direction):
                w, f, g = w_new, f_new, g_new
                improved = True
                break
            step *= 0.5
        if not improved:
            break
    return w, f


def _multistart(
    value_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    c: AllocationConstraints,
    d: int,
) -> tuple[np.ndarray, float]:
    best_w, best_f = None, np.inf
    for w0 in _restart_points(d, c):
        w, f = _pgd_minimize(value_grad, w0, c)
        if f < best_f - 1e-12:
            best_w, best_f = w, f
        elif abs(f - best_f) <= 1e-12 and best_w is not None:
            if tuple(w) < tuple(best_w):  # deterministic tie-break
                best_w, best_f = w, min(f, best_f)
    return best_w, best_f


def _certify(w: np.ndarray, g: np.ndarray, c: AllocationConstraints, label: str) -> None:
    pg = np.linalg.norm(w - project_capped_simplex(w - g, c.lower, c.upper, c.budget))
    if pg >= _PG_CERT:
        raise Degenerate(f"{label}: projected-gradient norm {pg:.3e} fails certificate")


def min_variance(m: Moments, c: AllocationConstraints) -> np.ndarray:
    """Weights minimizing w' Sigma w over the constrained simplex."""
    d = m.n_assets
    c.check_feasible(d)
    sig = m.sigma_mat

    def value_grad(w: np.ndarray) -> tuple[float, np.ndarray]:
        sw = sig @ w
        return float(w @ sw), 2.0 * sw

    w, _ = _multistart(value_grad, c, d)
    _certify(w, value_grad(w)[1], c, "min_variance")
    return w


def max_sharpe(m: Moments, rf: float, c: AllocationConstraints) -> np.ndarray:
    """Weights maximizing (w'mu - rf) / sqrt(w'Sigma w) over the constrained simplex."""
    d = m.n_assets
    c.check_feasible(d)
    starts = _restart_points(d, c)
    if all(float(w @ m.sigma_mat @ w) < 1e-24 for w in starts):
        raise Degenerate("all probed feasible portfolios have zero volatility")

    sig, mu = m.sigma_mat, m.mu

    def value_grad(w: np.ndarray) -> tuple[float, np.ndarray]:
        # minimize the negated Sharpe ratio
        sw = sig @ w
        var = max(float(w @ sw), 1e-24)
        vol = np.sqrt(var)
        excess = float(mu @ w) - rf
        grad = -(mu / vol) + excess * sw / (var * vol)
        return -excess / vol, grad

    w, _ = _multistart(value_grad, c, d)
    _certify(w, value_grad(w)[1], c, "max_sharpe")
    return w


def max_return_weights(mu: np.ndarray, c: AllocationConstraints) -> np.ndarray:
    """Exact solution of max mu'w over the constrained simplex (greedy fill)."""
    d = mu.size
    c.check_feasible(d)
    w = np.full(d, c.lower, dtype=np.float64)
    room = c.budget - c.lower * d
    for i in np.argsort(-mu, kind="stable"):
        take = min(c.upper - c.lower, room)
        w[i] += take
        room -= take
        if room <= 0:
            break
    return w


def efficient_frontier(
    m: Moments, c: AllocationConstraints, n_points: int, rf: float = 0.0
) -> list[FrontierPoint]:
    """Min-volatility portfolios at n_points evenly spaced target returns.

    Targets run from the MVP's return to the highest achievable constrained
    return. Each point solves min w'Sigma w - theta mu'w with theta chosen by
    bisection until the minimizer's return hits the target: the scalarized
    problems reuse the fast single-constraint projection, and their solutions
    trace exactly the upper (efficient) branch of the frontier.
    """
    if n_points < 2:
        raise InvalidParams(f"n_points must be >= 2, got {n_points}")
    d = m.n_assets
    c.check_feasible(d)
    sig, mu = m.sigma_mat, m.mu

    w_mvp = min_variance(m, c)
    ret_mvp, _ = return_and_volatility(w_mvp, m)
    ret_max = float(mu @ max_return_weights(mu, c))

    def solve_theta(theta: float, w0: np.ndarray) -> np.ndarray:
        def value_grad(w: np.ndarray) -> tuple[float, np.ndarray]:
            sw = sig @ w
            return float(w @ sw) - theta * float(mu @ w), 2.0 * sw - theta * mu

        w, _ = _pgd_minimize(value_grad, w0, c)
        return w

    points: list[FrontierPoint] = []
    if ret_max - ret_mvp < 1e-12:  # flat frontier (e.g. identical assets)
        targets = [ret_mvp] * n_points
        solutions = [w_mvp] * n_points
    else:
        targets = list(np.linspace(ret_mvp, ret_max, n_points))
        solutions = []
        theta_lo, w_warm = 0.0, w_mvp
        for target in targets:
            if target <= ret_mvp + 1e-14:
                solutions.append(w_mvp)
                continue
            # bracket: return(theta) is non-decreasing in theta
            lo, hi = theta_lo, max(theta_lo, 1e-6)
            w_hi = solve_theta(hi, w_warm)
            for _ in range(80):
                if float(mu @ w_hi) >= target - 1e-12:
                    break
                lo, hi = hi, hi * 2.0
                w_hi = solve_theta(hi, w_hi)
            w_cur = w_hi
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                w_mid = solve_theta(mid, w_cur)
                if float(mu @ w_mid) >= target:
                    hi, w_hi = mid, w_mid
                else:
                    lo = mid
                w_cur = w_mid
                if hi - lo <= 1e-14 * max(1.0, hi):
                    break
            solutions.append(w_hi)
            theta_lo, w_warm = lo, w_hi

    for i, (target, w) in enumerate(zip(targets, solutions)):
        ret, vol = return_and_volatility(w, m)
        sharpe = (ret - rf) / vol if vol >= 1e-12 else float("nan")
        points.append(
            FrontierPoint(w, ret, vol, sharpe, target_return=float(target), is_mvp=i == 0)
        )
    points.sort(key=lambda p: (p.exp_return, p.volatility))
    return points


def write_frontier_csv(points: Sequence[FrontierPoint], asset_ids: Sequence[str], path) -> None:
    """Frontier rows with the MVP and the best-Sharpe row flagged."""
    finite = [p.sharpe for p in points if np.isfinite(p.sharpe)]
    best_sharpe = max(finite) if finite else None
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["target_return", "volatility", "sharpe", "is_mvp", "is_max_sharpe"]
            + [f"w_{t}" for t in asset_ids]
        )
        flagged = False
        for p in points:
            is_best = (
                not flagged and best_sharpe is not None
                and np.isfinite(p.sharpe) and p.sharpe == best_sharpe
            )
            flagged = flagged or is_best
            writer.writerow(
                [repr(p.target_return), repr(p.volatility), repr(p.sharpe),
                 str(p.is_mvp).lower(), str(is_best).lower()]
                + [repr(float(v)) for v in p.weights]
            )
