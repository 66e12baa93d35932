"""Regime-aware DDPG with asymmetric critic updates.

The learner is standard DDPG (actor, critic, slow target copies, replay
buffer, exploration noise) with one twist: each sampled transition's squared
TD error is weighted by ``alpha_plus`` when its prediction error is positive
("good news") and ``alpha_minus`` when negative ("bad news"). With the
weights equal the update reduces bit-for-bit to the plain DDPG step. The
asymmetry couples to the market regime: in bull markets the configured pair
applies and exploration uses an unconstrained noise process, in bear markets
the pair is swapped and exploration uses a strictly non-positive noise
process, so the agent is optimistic while the index rides above its trailing
mean and pessimistic below it. Both couplings can be switched off.

One trainer owns all mutable state; separate seeds are fully independent.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    EmptyBatch,
    InsufficientSamples,
    InvalidParams,
    OutOfRange,
    ShapeMismatch,
)
from .market_data import PriceSeries, Regime, index_series
from .neural import AdamState, Mlp, apply_update, backward, forward, init_mlp, load_mlp, save_mlp
from .trading_env import TradeAction, TradingEnv, feature_length, regime_signal, state_features

DELTA_MODES = ("bootstrapped", "reward")
NET_FILES = {
    "actor": "actor.json",
    "critic": "critic.json",
    "target_actor": "target_actor.json",
    "target_critic": "target_critic.json",
}


@dataclass(frozen=True)
class AdaptiveConfig:
    """Hyperparameters; defaults follow the asymmetric setting (bad news ignored).

    ``vanilla_ddpg()`` gives the symmetric reference configuration: equal
    weights, no regime coupling, a single unconstrained noise process, and an
    unweighted critic loss code path.
    """

    gamma: float = 0.99
    tau: float = 0.005
    alpha_plus: float = 1.0
    alpha_minus: float = 0.0
    beta: float = 1.0
    batch_size: int = 64
    buffer_capacity: int = 100_000
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    noise_sigma: float = 0.2
    noise_theta: float = 0.15
    noise_decay_floor: float = 0.2
    regime_window: int = 50
    lookback: int = 10
    actor_hidden: tuple[int, ...] = (64, 32)
    critic_hidden: tuple[int, ...] = (64, 32)
    reward_scale: float = 1e-3
    regime_coupling: bool = True
    delta_mode: str = "bootstrapped"
    vanilla: bool = False
    randomize_start: bool = False

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidParams(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise InvalidParams(f"tau must lie in (0, 1], got {self.tau}")
        if self.alpha_plus < 0 or self.alpha_minus < 0:
            raise InvalidParams("alpha_plus and alpha_minus must be nonnegative")
        if self.beta < 0:
            raise InvalidParams("beta must be nonnegative")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise InvalidParams("batch_size and buffer_capacity must be positive")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise InvalidParams("learning rates must be positive")
        if self.noise_sigma < 0 or not 0.0 <= self.noise_theta <= 1.0:
            raise InvalidParams("noise_sigma >= 0 and noise_theta in [0, 1] required")
        if not 0.0 <= self.noise_decay_floor <= 1.0:
            raise InvalidParams("noise_decay_floor must lie in [0, 1]")
        if self.regime_window < 1 or self.lookback < 0:
            raise InvalidParams("regime_window >= 1 and lookback >= 0 required")
        if self.reward_scale <= 0:
            raise InvalidParams("reward_scale must be positive")
        if self.delta_mode not in DELTA_MODES:
            raise InvalidParams(f"delta_mode must be one of {DELTA_MODES}")
        object.__setattr__(self, "actor_hidden", tuple(self.actor_hidden))
        object.__setattr__(self, "critic_hidden", tuple(self.critic_hidden))

    @classmethod
    def vanilla_ddpg(cls, **overrides) -> "AdaptiveConfig":
        base = dict(
            alpha_plus=1.0, alpha_minus=1.0, regime_coupling=False, vanilla=True
        )
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True, eq=False)
class Transition:
    """(s, a, r, s', done) in feature space, the unit of replay learning."""

    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool


@dataclass(eq=False)
class Batch:
    s: np.ndarray       # (N, F)
    a: np.ndarray       # (N, D)
    r: np.ndarray       # (N,)
    s_next: np.ndarray  # (N, F)
    done: np.ndarray    # (N,) 1.0 where terminal

    @property
    def size(self) -> int:
        return self.s.shape[0]

    @classmethod
    def stack(cls, transitions: Sequence[Transition]) -> "Batch":
        if not transitions:
            raise EmptyBatch("cannot stack an empty transition list")
        return cls(
            s=np.stack([t.s for t in transitions]),
            a=np.stack([t.a for t in transitions]),
            r=np.array([t.r for t in transitions], dtype=np.float64),
            s_next=np.stack([t.s_next for t in transitions]),
            done=np.array([1.0 if t.done else 0.0 for t in transitions]),
        )


class ReplayBuffer:
    """Fixed-capacity FIFO store sampled uniformly with replacement."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InvalidParams(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self._data: list[Transition] = []
        self.inserted = 0

    def __len__(self) -> int:
        return len(self._data)

    def push(self, transition: Transition) -> None:
        if len(self._data) < self.capacity:
            self._data.append(transition)
        else:
            self._data[self.inserted % self.capacity] = transition
        self.inserted += 1

    def sample(self, n: int, rng: np.random.Generator) -> list[Transition]:
        if len(self._data) < n:
            raise InsufficientSamples(f"buffer holds {len(self._data)} < {n}")
        idx = rng.integers(0, len(self._data), size=n)
        return [self._data[i] for i in idx]

    def snapshot(self) -> list[Transition]:
        """Contents oldest-first (diagnostics and tests)."""
        if len(self._data) < self.capacity:
            return list(self._data)
        cut = self.inserted % self.capacity
        return self._data[cut:] + self._data[:cut]


@dataclass(eq=False)
class NoiseProcess:
    """Mean-reverting exploration noise; the negative kind emits -|state|."""

    kind: str  # "positive" | "negative"
    dim: int
    sigma: float = 0.2
    theta: float = 0.15
    seed: int = 0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("positive", "negative"):
            raise InvalidParams(f"unknown noise kind {self.kind!r}")
        self._rng = np.random.default_rng(self.seed)
        self.state = np.zeros(self.dim)

    def reset(self) -> None:
        self.state = np.zeros(self.dim)

    def sample(self) -> np.ndarray:
        self.state = self.state + self.theta * (0.0 - self.state) \
            + self.sigma * self._rng.standard_normal(self.dim)
        out = self.scale * self.state
        return -np.abs(out) if self.kind == "negative" else out


@dataclass(eq=False)
class AgentNets:
    actor: Mlp
    critic: Mlp
    target_actor: Mlp
    target_critic: Mlp

    @classmethod
    def create(cls, feature_dim: int, action_dim: int, config: AdaptiveConfig,
               seed: int = 0) -> "AgentNets":
        a_seed, c_seed = (int(s) for s in np.random.SeedSequence(seed).generate_state(2))
        actor = init_mlp(
            [feature_dim, *config.actor_hidden, action_dim], "tanh", seed=a_seed
        )
        critic = init_mlp(
            [feature_dim + action_dim, *config.critic_hidden, 1], "linear", seed=c_seed
        )
        return cls(actor, critic, actor.copy(), critic.copy())

    @property
    def action_dim(self) -> int:
        return self.actor.n_out


def select_action(nets: AgentNets, features: np.ndarray,
                  noise: NoiseProcess | None = None) -> TradeAction:
    """Actor output plus optional exploration noise, clipped to [-1, 1]."""
    a, _ = forward(nets.actor, np.asarray(features, dtype=np.float64))
    if noise is not None:
        a = a + noise.sample()
    return TradeAction(np.clip(a, -1.0, 1.0))


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    """Sum of gamma^i * r_i (Horner evaluation from the tail)."""
    if not 0.0 <= gamma <= 1.0:
        raise InvalidParams(f"gamma must lie in [0, 1], got {gamma}")
    acc = 0.0
    for r in reversed(list(rewards)):
        acc = float(r) + gamma * acc
    return acc


def td_target(nets: AgentNets, batch: Batch, gamma: float) -> np.ndarray:
    """y_i = r_i + gamma Q'(s', mu'(s')); terminal transitions bootstrap nothing."""
    a_next, _ = forward(nets.target_actor, batch.s_next)
    q_next, _ = forward(nets.target_critic, np.concatenate([batch.s_next, a_next], axis=1))
    return batch.r + gamma * q_next[:, 0] * (1.0 - batch.done)


def prediction_error(nets: AgentNets, transition: Transition, gamma: float,
                     mode: str = "bootstrapped") -> float:
    """delta = target - Q(s, a); "reward" mode uses the raw reward as target."""
    if mode not in DELTA_MODES:
        raise InvalidParams(f"mode must be one of {DELTA_MODES}")
    batch = Batch.stack([transition])
    q, _ = forward(nets.critic, np.concatenate([batch.s, batch.a], axis=1))
    if mode == "reward":
        return float(transition.r - q[0, 0])
    return float(td_target(nets, batch, gamma)[0] - q[0, 0])


def effective_alphas(config: AdaptiveConfig, regime: Regime) -> tuple[float, float]:
    """(weight for positive delta, weight for negative delta) under the regime."""
    if config.regime_coupling and regime is Regime.BEAR:
        return config.alpha_minus, config.alpha_plus
    return config.alpha_plus, config.alpha_minus


@dataclass(frozen=True)
class CriticStepInfo:
    loss: float
    mean_abs_delta: float
    frac_positive: float
    stepped: bool


def adaptive_critic_step(nets: AgentNets, opt: AdamState, batch: Batch,
                         config: AdaptiveConfig,
                         regime: Regime = Regime.BULL) -> CriticStepInfo:
    """One optimizer step on the (optionally asymmetric) critic loss.

    Loss = (1/N) sum c_i (y_i - Q(s_i, a_i))^2 with c_i = alpha_plus where the
    prediction error is positive, alpha_minus where negative, and
    max(alpha_plus, alpha_minus) on an exact zero. The vanilla configuration
    runs the unweighted loss through a separate branch, which the weighted
    branch must match bit-for-bit when every c_i is 1. A batch whose weights
    are all zero carries no gradient and leaves parameters and optimizer
    state untouched.
    """
    n = batch.size
    if n == 0:
        raise EmptyBatch("critic step needs at least one transition")
    y = td_target(nets, batch, config.gamma)
    q, cache = forward(nets.critic, np.concatenate([batch.s, batch.a], axis=1))
    q = q[:, 0]
    resid = y - q
    delta = batch.r - q if config.delta_mode == "reward" else resid
    mean_abs = float(np.mean(np.abs(delta)))
    frac_pos = float(np.mean(delta > 0))

    if config.vanilla:
        loss = float(np.mean(resid * resid))
        upstream = (2.0 / n) * (q - y)
    else:
        ap, am = effective_alphas(config, regime)
        weights = np.where(delta > 0, ap, np.where(delta < 0, am, max(ap, am)))
        loss = float(np.mean(weights * (resid * resid)))
        if not weights.any():
            return CriticStepInfo(loss, mean_abs, frac_pos, stepped=False)
        upstream = (2.0 / n) * (weights * (q - y))

    grads, _ = backward(nets.critic, cache, upstream[:, None])
    apply_update(nets.critic, grads, opt)
    return CriticStepInfo(loss, mean_abs, frac_pos, stepped=True)


def actor_step(nets: AgentNets, opt: AdamState, batch: Batch) -> float:
    """One ascent step on (1/N) sum Q(s_i, mu(s_i)); critic parameters frozen."""
    n = batch.size
    if n == 0:
        raise EmptyBatch("actor step needs at least one transition")
    actions, cache_a = forward(nets.actor, batch.s)
    q, cache_q = forward(nets.critic, np.concatenate([batch.s, actions], axis=1))
    objective = float(np.mean(q[:, 0]))
    upstream = np.full((n, 1), 1.0 / n)
    _, dx = backward(nets.critic, cache_q, upstream)
    d_action = dx[:, batch.s.shape[1]:]
    grads, _ = backward(nets.actor, cache_a, d_action)
    apply_update(nets.actor, grads.scaled(-1.0), opt)
    return objective


def soft_update(nets: AgentNets, tau: float) -> None:
    """theta_target <- tau * theta_online + (1 - tau) * theta_target."""
    if not 0.0 <= tau <= 1.0:
        raise InvalidParams(f"tau must lie in [0, 1], got {tau}")
    for target, online in (
        (nets.target_actor, nets.actor),
        (nets.target_critic, nets.critic),
    ):
        for pt, po in zip(target.weights + target.biases, online.weights + online.biases):
            pt *= 1.0 - tau
            pt += tau * po


def softmax_policy(q_values: Sequence[float] | np.ndarray, beta: float) -> np.ndarray:
    """Standard max-subtracted softmax of beta * q."""
    if beta < 0:
        raise InvalidParams(f"beta must be nonnegative, got {beta}")
    q = np.asarray(q_values, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise InvalidParams("q_values must be finite")
    z = beta * q
    e = np.exp(z - z.max())
    return e / e.sum()


def trade_preference(nets: AgentNets, features: np.ndarray, beta: float = 1.0,
                     levels: Sequence[float] = (0.25, 0.5, 0.75, 1.0)) -> np.ndarray:
    """Diagnostic (buy, hold, sell) probabilities from mean critic utilities.

    Each class is probed with uniform candidate actions of its sign at the
    given magnitudes; the class utilities feed the softmax read-out.
    """
    features = np.asarray(features, dtype=np.float64)
    d = nets.action_dim
    utilities = []
    for sign in (1.0, 0.0, -1.0):
        candidates = [np.zeros(d)] if sign == 0.0 else [sign * lv * np.ones(d) for lv in levels]
        qs = [
            float(forward(nets.critic, np.concatenate([features, c]))[0][0])
            for c in candidates
        ]
        utilities.append(sum(qs) / len(qs))
    return softmax_policy(np.array(utilities), beta)


@dataclass(frozen=True)
class EpisodeLog:
    episode: int
    total_reward: float
    mean_abs_delta: float
    frac_positive_delta: float
    regime_frac_bull: float


@dataclass(eq=False)
class TrainResult:
    nets: AgentNets
    log: list[EpisodeLog]


def train(
    ps: PriceSeries,
    config: AdaptiveConfig,
    episodes: int,
    seed: int = 0,
    *,
    initial_cash: float = 10_000.0,
    cost_rate: float = 0.0,
    index: Sequence[float] | None = None,
    data_end_guard=None,
    nets: AgentNets | None = None,
) -> TrainResult:
    """Run the training loop; deterministic given (data, config, seed).

    Per step: classify the regime from the index, pick the exploration noise
    and asymmetry pair accordingly, act, store the transition, and once the
    buffer covers a batch run critic step, actor step, and soft update.
    Rewards are multiplied by ``config.reward_scale`` before storage to keep
    critic targets at network-friendly magnitude; the log reports raw
    currency. ``data_end_guard`` is the data-access audit: training refuses
    price data extending past that date.
    """
    if episodes < 0:
        raise InvalidParams(f"episodes must be nonnegative, got {episodes}")
    if data_end_guard is not None and ps.dates[-1] > data_end_guard:
        raise OutOfRange(
            f"training data ends {ps.dates[-1].isoformat()}, past the allowed "
            f"{data_end_guard.isoformat()}"
        )
    idx = np.asarray(index_series(ps) if index is None else index, dtype=np.float64)
    if idx.size != ps.n_days:
        raise ShapeMismatch(f"index length {idx.size} != {ps.n_days} days")

    d = ps.n_assets
    seeds = [int(s) for s in np.random.SeedSequence(seed).generate_state(5)]
    net_seed, pos_seed, neg_seed, sample_seed, start_seed = seeds
    if nets is None:
        nets = AgentNets.create(feature_length(d, config.lookback), d, config, net_seed)
    actor_opt = AdamState.for_net(nets.actor, config.actor_lr)
    critic_opt = AdamState.for_net(nets.critic, config.critic_lr)
    buffer = ReplayBuffer(config.buffer_capacity)
    noise_pos = NoiseProcess("positive", d, config.noise_sigma, config.noise_theta, pos_seed)
    noise_neg = NoiseProcess("negative", d, config.noise_sigma, config.noise_theta, neg_seed)
    sample_rng = np.random.default_rng(sample_seed)
    start_rng = np.random.default_rng(start_seed)
    env = TradingEnv(ps, initial_cash, cost_rate)
    coupled = config.regime_coupling and not config.vanilla

    logs: list[EpisodeLog] = []
    for ep in range(episodes):
        span = 1.0 if episodes <= 1 else ep / (episodes - 1)
        decay = 1.0 - (1.0 - config.noise_decay_floor) * span
        noise_pos.scale = noise_neg.scale = decay
        noise_pos.reset()
        noise_neg.reset()
        start_t = int(start_rng.integers(0, ps.n_days - 1)) if config.randomize_start else 0
        env.reset(start_t)

        total_reward = 0.0
        bull_steps = 0
        steps = 0
        abs_deltas: list[float] = []
        frac_pos: list[float] = []
        while not env.done:
            regime = regime_signal(idx, env.state.t, config.regime_window)
            bull_steps += regime is Regime.BULL
            noise = noise_neg if (coupled and regime is Regime.BEAR) else noise_pos
            feats = state_features(env.state, ps, config.lookback)
            action = select_action(nets, feats, noise)
            result = env.step(action)
            buffer.push(
                Transition(
                    s=feats,
                    a=action.a,
                    r=result.reward * config.reward_scale,
                    s_next=state_features(result.next_state, ps, config.lookback),
                    done=result.done,
                )
            )
            total_reward += result.reward
            steps += 1
            if len(buffer) >= config.batch_size:
                batch = Batch.stack(buffer.sample(config.batch_size, sample_rng))
                info = adaptive_critic_step(nets, critic_opt, batch, config, regime)
                actor_step(nets, actor_opt, batch)
                soft_update(nets, config.tau)
                abs_deltas.append(info.mean_abs_delta)
                frac_pos.append(info.frac_positive)
        logs.append(
            EpisodeLog(
                episode=ep,
                total_reward=total_reward,
                mean_abs_delta=float(np.mean(abs_deltas)) if abs_deltas else float("nan"),
                frac_positive_delta=float(np.mean(frac_pos)) if frac_pos else float("nan"),
                regime_frac_bull=bull_steps / steps if steps else float("nan"),
            )
        )
    return TrainResult(nets, logs)


def write_training_log(log: Sequence[EpisodeLog], path) -> None:
    """CSV: episode,total_reward,mean_abs_delta,frac_positive_delta,regime_frac_bull."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["episode", "total_reward", "mean_abs_delta",
             "frac_positive_delta", "regime_frac_bull"]
        )
        for row in log:
            writer.writerow(
                [row.episode, repr(row.total_reward), repr(row.mean_abs_delta),
                 repr(row.frac_positive_delta), repr(row.regime_frac_bull)]
            )


def save_agent(nets: AgentNets, config: AdaptiveConfig, directory) -> None:
    """Checkpoint directory: four network files plus a config snapshot."""
    os.makedirs(directory, exist_ok=True)
    for attr, fname in NET_FILES.items():
        save_mlp(getattr(nets, attr), os.path.join(directory, fname))
    snapshot = dataclasses.asdict(config)
    snapshot["actor_hidden"] = list(config.actor_hidden)
    snapshot["critic_hidden"] = list(config.critic_hidden)
    with open(os.path.join(directory, "config.json"), "w") as fh:
        json.dump(snapshot, fh, indent=2)
        fh.write("\n")


def load_agent(directory) -> tuple[AgentNets, AdaptiveConfig]:
    nets = AgentNets(
        **{attr: load_mlp(os.path.join(directory, fname)) for attr, fname in NET_FILES.items()}
    )
    with open(os.path.join(directory, "config.json")) as fh:
        raw = json.load(fh)
    raw["actor_hidden"] = tuple(raw.get("actor_hidden", ()))
    raw["critic_hidden"] = tuple(raw.get("critic_hidden", ()))
    return nets, AdaptiveConfig(**raw)
