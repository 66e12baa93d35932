"""Operator pipeline: ``synth``, ``train``, ``backtest``, ``frontier``.

One JSON config document drives every subcommand; each field has a default,
command-line flags override file values, and the fully resolved config is
echoed into the output directory so a run is reproducible from its artifacts
alone. Exit codes: 0 success, 2 config error, 3 data error, 4 runtime error.

The report paths render matplotlib figures next to the delimited outputs:
equity overlays for backtests, the frontier scatter, per-seed training
curves, and the synthetic index with bear regimes shaded. All outputs are
timestamp-free, so repeat runs with the same config diff clean.
"""

from __future__ import annotations

import argparse
import bisect
import copy
import dataclasses
import datetime as dt
import json
import os
import sys
from typing import Sequence

import numpy as np

from . import backtest as bt
from .agent import AdaptiveConfig, load_agent, save_agent, train, write_training_log
from .errors import BullbearError, ConfigError, DataError, ZeroVolatility
from .market_data import (
    GbmParams,
    PriceSeries,
    index_series,
    load_csv,
    simple_returns,
    synth_market,
    write_prices_csv,
    write_regimes_csv,
)
from .plots import plot_equity_curves, plot_frontier, plot_index_regimes, plot_training
from .portfolio_opt import (
    AllocationConstraints,
    efficient_frontier,
    estimate_moments,
    portfolio_stats,
    project_capped_simplex,
    write_frontier_csv,
)


def _agent_defaults() -> dict:
    out = {}
    for f in dataclasses.fields(AdaptiveConfig):
        value = f.default
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out


def default_config() -> dict:
    return {
        "data": {
            "prices": None,
            "train_start": None,
            "train_end": None,
            "test_start": None,
            "test_end": None,
            "train_frac": 0.6,
        },
        "synth": {
            "n_assets": 5,
            "n_days": 1500,
            "p0": 100.0,
            "mu_bull": 0.12,
            "mu_bear": -0.08,
            "sigma_bull": 0.15,
            "sigma_bear": 0.25,
            "corr_uniform": 0.3,
            "regime_switch_prob": 0.02,
            "seed": 0,
            "start_date": "2010-01-04",
        },
        "env": {"initial_cash": 10_000.0, "cost_rate": 0.001},
        "agent": _agent_defaults(),
        "train": {"episodes": 30, "seeds": [0, 1, 2, 3, 4]},
        "backtest": {
            "rebalance_every": 21,
            "estimation_window": 252,
            "rf": 0.0,
            "static_baselines": False,
            "stochastic_eval": False,
        },
        "frontier": {
            "n_points": 25,
            "rf": 0.0,
            "lower": 0.0,
            "upper": 0.2,
            "cloud_size": 300,
            "cloud_seed": 0,
            "start": None,
            "end": None,
        },
    }


def _deep_update(base: dict, override: dict, path: str = "") -> dict:
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {here!r} must be an object")
            _deep_update(base[key], value, here)
        else:
            base[key] = value
    return base


def load_config(path: str | None) -> dict:
    """Defaults, deep-updated by the JSON file when one is given."""
    config = copy.deepcopy(default_config())
    if path is None:
        return config
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a JSON object")
    return _deep_update(config, raw)


def _parse_date(value, key: str) -> dt.date | None:
    if value is None:
        return None
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError:
        raise ConfigError(f"config key {key!r} must be an ISO date, got {value!r}")


def _agent_config(config: dict, vanilla: bool) -> AdaptiveConfig:
    fields = dict(config["agent"])
    for key in ("actor_hidden", "critic_hidden"):
        fields[key] = tuple(fields[key])
    if vanilla:
        fields.update(alpha_plus=1.0, alpha_minus=1.0, regime_coupling=False, vanilla=True)
    try:
        return AdaptiveConfig(**fields)
    except (TypeError, BullbearError) as exc:
        raise ConfigError(f"invalid agent config: {exc}")


def _slice(ps: PriceSeries, lo: int, hi: int) -> PriceSeries:
    """Days lo..hi inclusive as a standalone series."""
    return PriceSeries(ps.asset_ids, ps.dates[lo:hi + 1], ps.prices[lo:hi + 1])


def resolve_split(config: dict, ps: PriceSeries) -> tuple[int, int, int, int]:
    """(train_lo, train_hi, test_lo, test_hi) day indices, both ranges >= 2 days.

    Either all four date fields are given (train strictly before test), or
    none are and the series splits at ``train_frac``.
    """
    data = config["data"]
    keys = ("train_start", "train_end", "test_start", "test_end")
    given = [data[k] for k in keys]
    if all(v is None for v in given):
        frac = data["train_frac"]
        if not 0.0 < frac < 1.0:
            raise ConfigError(f"train_frac must lie in (0, 1), got {frac}")
        boundary = int(ps.n_days * frac)
        if boundary < 2 or ps.n_days - boundary < 2:
            raise ConfigError(
                f"train_frac {frac} leaves too few days on one side of "
                f"a {ps.n_days}-day series"
            )
        return 0, boundary - 1, boundary, ps.n_days - 1
    if any(v is None for v in given):
        raise ConfigError(f"set all of {keys} or none of them")
    train_start, train_end, test_start, test_end = (
        _parse_date(v, k) for v, k in zip(given, keys)
    )
    if not train_start <= train_end < test_start <= test_end:
        raise ConfigError("need train_start <= train_end < test_start <= test_end")
    train_lo = bisect.bisect_left(ps.dates, train_start)
    train_hi = bisect.bisect_right(ps.dates, train_end) - 1
    test_lo = bisect.bisect_left(ps.dates, test_start)
    test_hi = bisect.bisect_right(ps.dates, test_end) - 1
    span = f"{ps.dates[0].isoformat()}..{ps.dates[-1].isoformat()}"
    if train_hi - train_lo < 1:
        raise DataError(f"train range holds fewer than 2 days of data ({span})")
    if test_hi - test_lo < 1:
        raise DataError(f"test range holds fewer than 2 days of data ({span})")
    return train_lo, train_hi, test_lo, test_hi


def _prices_path(config: dict, args, out: str) -> str:
    if getattr(args, "prices", None):
        return args.prices
    return config["data"]["prices"] or os.path.join(out, "prices.csv")


def _echo_config(config: dict, command: str, out: str) -> None:
    payload = {"command": command}
    payload.update(config)
    with open(os.path.join(out, "config_resolved.json"), "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def cmd_synth(args, config: dict, out: str) -> None:
    s = config["synth"]
    d = int(s["n_assets"])
    mu = np.vstack([np.broadcast_to(s["mu_bull"], d), np.broadcast_to(s["mu_bear"], d)])
    sigma = np.vstack(
        [np.broadcast_to(s["sigma_bull"], d), np.broadcast_to(s["sigma_bear"], d)]
    )
    rho = float(s["corr_uniform"])
    corr = None if rho == 0.0 else (1.0 - rho) * np.eye(d) + rho * np.ones((d, d))
    try:
        params = GbmParams(
            d=d,
            t=int(s["n_days"]),
            p0=s["p0"],
            mu=mu,
            sigma=sigma,
            corr=corr,
            regime_switch_prob=float(s["regime_switch_prob"]),
            seed=int(s["seed"]),
            start_date=_parse_date(s["start_date"], "synth.start_date"),
        )
        ps, regimes = synth_market(params)
    except BullbearError as exc:
        raise ConfigError(f"invalid synth config: {exc}")
    write_prices_csv(ps, os.path.join(out, "prices.csv"))
    write_regimes_csv(ps.dates, regimes, os.path.join(out, "regimes.csv"))
    index = index_series(ps)
    plot_index_regimes(ps.dates, index, regimes, os.path.join(out, "index_regimes.png"))
    bull = sum(r.value == "bull" for r in regimes) / len(regimes)
    print(f"synthesized {ps.n_assets} assets x {ps.n_days} days "
          f"({ps.dates[0].isoformat()}..{ps.dates[-1].isoformat()}), "
          f"bull fraction {bull:.3f}")
    print(f"wrote {os.path.join(out, 'prices.csv')} and regimes.csv")


def cmd_train(args, config: dict, out: str) -> None:
    ps = load_csv(_prices_path(config, args, out))
    train_lo, train_hi, _, _ = resolve_split(config, ps)
    ps_train = _slice(ps, train_lo, train_hi)
    agent_cfg = _agent_config(config, vanilla=bool(args.vanilla))
    tag = "vanilla" if args.vanilla else "adaptive"
    episodes = int(config["train"]["episodes"])
    seeds = [int(x) for x in config["train"]["seeds"]]
    env = config["env"]
    ckpt_root = os.path.join(out, f"checkpoint_{tag}")
    print(f"training {tag} agent: {episodes} episodes x {len(seeds)} seeds on "
          f"{ps_train.n_days} days ({ps_train.dates[0].isoformat()}.."
          f"{ps_train.dates[-1].isoformat()})")
    for seed in seeds:
        result = train(
            ps_train,
            agent_cfg,
            episodes,
            seed,
            initial_cash=float(env["initial_cash"]),
            cost_rate=float(env["cost_rate"]),
            data_end_guard=ps_train.dates[-1],
        )
        save_agent(result.nets, agent_cfg, os.path.join(ckpt_root, f"seed_{seed}"))
        write_training_log(result.log, os.path.join(out, f"train_log_{tag}_seed{seed}.csv"))
        plot_training(result.log, os.path.join(out, f"train_{tag}_seed{seed}.png"))
        last = result.log[-1].total_reward if result.log else float("nan")
        print(f"  seed {seed}: final episode reward {last:.2f}")
    print(f"checkpoints under {ckpt_root}")


def _load_checkpoint_group(root: str, name: str, stochastic: bool) -> list[bt.RlAgentStrategy]:
    if not os.path.isdir(root):
        raise FileNotFoundError(f"checkpoint directory not found: {root}")
    seed_dirs = sorted(
        (e for e in os.listdir(root) if e.startswith("seed_")),
        key=lambda e: int(e.split("_", 1)[1]),
    )
    if not seed_dirs:
        raise FileNotFoundError(f"no seed_<k> checkpoints under {root}")
    group = []
    for entry in seed_dirs:
        nets, cfg = load_agent(os.path.join(root, entry))
        group.append(
            bt.RlAgentStrategy(
                nets,
                cfg.lookback,
                name=name,
                stochastic=stochastic,
                noise_sigma=cfg.noise_sigma,
                noise_theta=cfg.noise_theta,
            )
        )
    return group


def cmd_backtest(args, config: dict, out: str) -> None:
    ps = load_csv(_prices_path(config, args, out))
    train_lo, train_hi, test_lo, test_hi = resolve_split(config, ps)
    bt_cfg = config["backtest"]
    env = config["env"]
    seeds = [int(x) for x in config["train"]["seeds"]]
    stochastic = bool(bt_cfg["stochastic_eval"])

    entries: list = []
    lookbacks = [0]
    if not args.baselines_only:
        ckpt = args.checkpoint or os.path.join(out, "checkpoint_adaptive")
        group = _load_checkpoint_group(ckpt, "adaptive_ddpg", stochastic)
        lookbacks += [s.lookback for s in group]
        entries.append(group)
        if args.vanilla_checkpoint:
            vgroup = _load_checkpoint_group(args.vanilla_checkpoint, "ddpg", stochastic)
            lookbacks += [s.lookback for s in vgroup]
            entries.append(vgroup)

    fixed_moments = None
    if bt_cfg["static_baselines"]:
        fixed_moments = estimate_moments(simple_returns(_slice(ps, train_lo, train_hi)))
    entries.append(bt.BuyAndHoldIndexStrategy())
    entries.append(
        bt.MinVarianceStrategy(
            rebalance_every=int(bt_cfg["rebalance_every"]),
            estimation_window=int(bt_cfg["estimation_window"]),
            fixed_moments=fixed_moments,
        )
    )
    entries.append(
        bt.MeanVarianceStrategy(
            rebalance_every=int(bt_cfg["rebalance_every"]),
            estimation_window=int(bt_cfg["estimation_window"]),
            rf=float(bt_cfg["rf"]),
            fixed_moments=fixed_moments,
        )
    )

    # leading history so lookback features and estimation windows are warm
    # from the first scored day
    history = max(int(bt_cfg["estimation_window"]), max(lookbacks) + 1)
    lo = max(0, test_lo - history)
    ps_bt = _slice(ps, lo, test_hi)
    eval_start = test_lo - lo

    comparison = bt.compare(
        entries,
        ps_bt,
        initial_cash=float(env["initial_cash"]),
        cost_rate=float(env["cost_rate"]),
        seeds=seeds,
        eval_start=eval_start,
        constraints=AllocationConstraints.for_assets(ps.n_assets),
        rf_per_year=float(bt_cfg["rf"]),
    )

    rows = comparison.summary_rows()
    bt.write_summary_csv(rows, os.path.join(out, "summary.csv"))
    curves = {}
    equity_files: dict[tuple[str, int], str] = {}
    for entry in comparison.entries:
        for report in entry.reports:
            label = entry.name if len(entry.reports) == 1 \
                else f"{entry.name}_seed{report.seed}"
            fname = f"equity_{label}.csv"
            bt.write_equity_csv(report.curve, os.path.join(out, fname))
            equity_files[(entry.name, report.seed)] = fname
            curves[label] = report.curve
    bt.write_report_json(
        comparison,
        os.path.join(out, "report.json"),
        config=config,
        equity_files=equity_files,
    )
    plot_equity_curves(curves, os.path.join(out, "equity.png"))

    header = f"{'strategy':<16} {'initial':>10} {'final':>12} " \
             f"{'ann_ret':>8} {'ann_std':>8} {'sharpe':>7}"
    print(f"evaluation span {ps_bt.dates[eval_start].isoformat()}.."
          f"{ps_bt.dates[-1].isoformat()} ({len(ps_bt.dates) - eval_start} days)")
    print(header)
    for r in rows:
        print(f"{r.strategy:<16} {r.initial:>10.2f} {r.final:>12.2f} "
              f"{r.ann_return:>8.4f} {r.ann_std:>8.4f} {r.sharpe:>7.3f}")
    print(f"wrote summary.csv, report.json, equity curves, equity.png under {out}")


def cmd_frontier(args, config: dict, out: str) -> None:
    ps = load_csv(_prices_path(config, args, out))
    f_cfg = config["frontier"]
    start = _parse_date(f_cfg["start"], "frontier.start")
    end = _parse_date(f_cfg["end"], "frontier.end")
    if start is not None or end is not None:
        from .market_data import slice_between

        ps = slice_between(ps, start, end)
    m = estimate_moments(simple_returns(ps))
    c = AllocationConstraints.for_assets(
        ps.n_assets, lower=float(f_cfg["lower"]), upper=float(f_cfg["upper"])
    )
    points = efficient_frontier(m, c, int(f_cfg["n_points"]), rf=float(f_cfg["rf"]))
    write_frontier_csv(points, ps.asset_ids, os.path.join(out, "frontier.csv"))

    cloud = None
    n_cloud = int(f_cfg["cloud_size"])
    if n_cloud > 0:
        rng = np.random.default_rng(int(f_cfg["cloud_seed"]))
        vols, rets = [], []
        for _ in range(n_cloud):
            w = project_capped_simplex(
                rng.dirichlet(np.ones(ps.n_assets)), c.lower, c.upper, c.budget
            )
            try:
                stats = portfolio_stats(w, m)
            except ZeroVolatility:
                continue
            vols.append(stats.volatility)
            rets.append(stats.exp_return)
        cloud = (np.array(vols), np.array(rets))
    plot_frontier(points, os.path.join(out, "frontier.png"), cloud=cloud)

    mvp = next(p for p in points if p.is_mvp)
    finite = [p for p in points if np.isfinite(p.sharpe)]
    print(f"frontier over {ps.n_days} days, {len(points)} points")
    print(f"  min variance: return {mvp.exp_return:.4f}, vol {mvp.volatility:.4f}")
    if finite:
        best = max(finite, key=lambda p: p.sharpe)
        print(f"  max Sharpe:   return {best.exp_return:.4f}, vol {best.volatility:.4f}, "
              f"sharpe {best.sharpe:.3f}")
    print(f"wrote frontier.csv and frontier.png under {out}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bullbear",
        description="Adaptive-DDPG portfolio lab: synthesize markets, train, "
                    "backtest, and chart efficient frontiers.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--seed", type=int, metavar="INT",
                        help="master seed: sets the synth seed and rebases the seed list")
    common.add_argument("--out", default="out", metavar="DIR", help="output directory")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic regime-switching market")
    p.add_argument("--n-assets", type=int, metavar="INT")
    p.add_argument("--n-days", type=int, metavar="INT")
    p.add_argument("--switch-prob", type=float, metavar="P",
                   help="daily regime flip probability")

    p = sub.add_parser("train", parents=[common], help="train the agent on the train slice")
    p.add_argument("--prices", metavar="CSV", help="price file (default <out>/prices.csv)")
    p.add_argument("--episodes", type=int, metavar="INT")
    p.add_argument("--vanilla", action="store_true",
                   help="train the symmetric (vanilla DDPG) variant instead")

    p = sub.add_parser("backtest", parents=[common],
                       help="evaluate strategies on the test slice")
    p.add_argument("--prices", metavar="CSV")
    p.add_argument("--checkpoint", metavar="DIR",
                   help="adaptive checkpoint root (default <out>/checkpoint_adaptive)")
    p.add_argument("--vanilla-checkpoint", metavar="DIR",
                   help="also evaluate this vanilla-DDPG checkpoint root")
    p.add_argument("--baselines-only", action="store_true",
                   help="skip RL rows; run index, min-variance, mean-variance")
    p.add_argument("--static", action="store_true",
                   help="fit baseline moments once on the train slice")
    p.add_argument("--stochastic", action="store_true",
                   help="evaluate RL policies with exploration noise")

    p = sub.add_parser("frontier", parents=[common],
                       help="compute the constrained efficient frontier")
    p.add_argument("--prices", metavar="CSV")
    p.add_argument("--n-points", type=int, metavar="INT")
    p.add_argument("--start", metavar="DATE", help="ISO date, first day included")
    p.add_argument("--end", metavar="DATE", help="ISO date, last day included")
    return parser


def _apply_flags(args, config: dict) -> dict:
    if args.seed is not None:
        config["synth"]["seed"] = args.seed
        n = len(config["train"]["seeds"])
        config["train"]["seeds"] = list(range(args.seed, args.seed + n))
        config["frontier"]["cloud_seed"] = args.seed
    if getattr(args, "n_assets", None) is not None:
        config["synth"]["n_assets"] = args.n_assets
    if getattr(args, "n_days", None) is not None:
        config["synth"]["n_days"] = args.n_days
    if getattr(args, "switch_prob", None) is not None:
        config["synth"]["regime_switch_prob"] = args.switch_prob
    if getattr(args, "episodes", None) is not None:
        config["train"]["episodes"] = args.episodes
    if getattr(args, "prices", None):
        config["data"]["prices"] = args.prices
    if getattr(args, "static", False):
        config["backtest"]["static_baselines"] = True
    if getattr(args, "stochastic", False):
        config["backtest"]["stochastic_eval"] = True
    if getattr(args, "n_points", None) is not None:
        config["frontier"]["n_points"] = args.n_points
    if getattr(args, "start", None):
        config["frontier"]["start"] = args.start
    if getattr(args, "end", None):
        config["frontier"]["end"] = args.end
    return config


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "backtest": cmd_backtest,
    "frontier": cmd_frontier,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _apply_flags(args, load_config(args.config))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    try:
        _echo_config(config, args.command, args.out)
        _COMMANDS[args.command](args, config, args.out)
        return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except BullbearError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # pragma: no cover - last-resort operator message
        print(f"error: {exc!r}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
