"""Minimal feed-forward networks with exact reverse-mode gradients.

A network is a plain value: a list of (weights, biases) pairs with tanh hidden
units and a configurable output activation. forward returns a cache that
backward consumes to produce gradients of ``sum(output * upstream)`` w.r.t.
every parameter and the input — exact, so finite-difference checks can gate
them hard. Everything is float64; Adam is the only optimizer.

Checkpoints are JSON. Python's float repr is the shortest round-tripping
decimal form (at most 17 significant digits), so save followed by load
reproduces parameters bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidShape, ShapeMismatch

OUTPUT_ACTIVATIONS = ("linear", "tanh", "scaled_tanh")
CHECKPOINT_FORMAT = "bullbear-mlp"
CHECKPOINT_VERSION = 1


@dataclass(eq=False)
class Mlp:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]  # per layer, (n_in, n_out)
    biases: list[np.ndarray]   # per layer, (n_out,)
    output_activation: str = "linear"
    output_bound: float = 1.0

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    @property
    def param_count(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.layer_sizes, self.layer_sizes[1:]))

    def copy(self) -> "Mlp":
        return Mlp(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output_activation,
            self.output_bound,
        )


@dataclass(eq=False)
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def scaled(self, factor: float) -> "Gradients":
        return Gradients(
            [factor * w for w in self.weights], [factor * b for b in self.biases]
        )


@dataclass(eq=False)
class ForwardCache:
    inputs: list[np.ndarray]  # activation entering each layer, 2-D
    output: np.ndarray        # post-activation network output, 2-D
    single: bool              # caller passed a 1-D vector


@dataclass(eq=False)
class AdamState:
    """Adam with bias correction; moment decays 0.9/0.999, epsilon 1e-8."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m_w: list[np.ndarray] = field(default_factory=list)
    m_b: list[np.ndarray] = field(default_factory=list)
    v_w: list[np.ndarray] = field(default_factory=list)
    v_b: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_net(cls, net: Mlp, lr: float) -> "AdamState":
        return cls(
            lr=lr,
            m_w=[np.zeros_like(w) for w in net.weights],
            m_b=[np.zeros_like(b) for b in net.biases],
            v_w=[np.zeros_like(w) for w in net.weights],
            v_b=[np.zeros_like(b) for b in net.biases],
        )


def init_mlp(
    layer_sizes: Sequence[int],
    output_activation: str = "linear",
    seed: int = 0,
    output_bound: float = 1.0,
) -> Mlp:
    """Glorot-uniform weights (scale sqrt(6/(fan_in+fan_out))), zero biases."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise InvalidShape(f"need >= 2 layers of size >= 1, got {sizes}")
    if output_activation not in OUTPUT_ACTIVATIONS:
        raise InvalidShape(f"unknown output activation {output_activation!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes, sizes[1:]):
        scale = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-scale, scale, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return Mlp(sizes, weights, biases, output_activation, float(output_bound))


def forward(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate the network on a single vector or an (N, n_in) batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != net.n_in:
        raise ShapeMismatch(f"input shape {x.shape}, expected (..., {net.n_in})")

    inputs = []
    a = x2
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(a)
        z = a @ w + b
        if l < last:
            a = np.tanh(z)
        elif net.output_activation == "linear":
            a = z
        elif net.output_activation == "tanh":
            a = np.tanh(z)
        else:  # scaled_tanh
            a = net.output_bound * np.tanh(z)
    cache = ForwardCache(inputs, a, single)
    return (a[0] if single else a), cache


def backward(
    net: Mlp, cache: ForwardCache, upstream: np.ndarray
) -> tuple[Gradients, np.ndarray]:
    """Exact gradients of sum(output * upstream) w.r.t. parameters and input."""
    up = np.asarray(upstream, dtype=np.float64)
    if cache.single and up.ndim == 1:
        up = up[None, :]
    if up.shape != cache.output.shape:
        raise ShapeMismatch(f"upstream shape {upstream.shape} vs output {cache.output.shape}")

    y = cache.output
    if net.output_activation == "linear":
        delta = up
    elif net.output_activation == "tanh":
        delta = up * (1.0 - y * y)
    else:  # scaled_tanh: y = B tanh(z), dy/dz = B (1 - (y/B)^2)
        ratio = y / net.output_bound
        delta = up * (net.output_bound * (1.0 - ratio * ratio))

    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.biases)
    for l in range(len(net.weights) - 1, -1, -1):
        a_in = cache.inputs[l]
        grads_w[l] = a_in.T @ delta
        grads_b[l] = delta.sum(axis=0)
        delta = delta @ net.weights[l].T
        if l > 0:
            delta = delta * (1.0 - a_in * a_in)  # a_in is tanh output of layer l-1
    input_grad = delta[0] if cache.single else delta
    return Gradients(grads_w, grads_b), input_grad


def apply_update(net: Mlp, grads: Gradients, opt: AdamState) -> tuple[Mlp, AdamState]:
    """One Adam step in place; returns the mutated (net, opt) for chaining."""
    if len(grads.weights) != len(net.weights):
        raise ShapeMismatch("gradient layer count differs from network")
    for gw, w in zip(grads.weights, net.weights):
        if gw.shape != w.shape:
            raise ShapeMismatch(f"gradient shape {gw.shape} vs weights {w.shape}")
    opt.step += 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1 ** opt.step
    c2 = 1.0 - b2 ** opt.step
    for l in range(len(net.weights)):
        for p, g, m, v in (
            (net.weights[l], grads.weights[l], opt.m_w[l], opt.v_w[l]),
            (net.biases[l], grads.biases[l], opt.m_b[l], opt.v_b[l]),
        ):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return net, opt


def save_mlp(net: Mlp, path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_sizes": list(net.layer_sizes),
        "output_activation": net.output_activation,
        "output_bound": net.output_bound,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_mlp(path) -> Mlp:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise InvalidShape(f"{path} is not a network checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise InvalidShape(f"unsupported checkpoint version {doc.get('version')}")
    sizes = tuple(doc["layer_sizes"])
    weights = [np.array(w, dtype=np.float64) for w in doc["weights"]]
    biases = [np.array(b, dtype=np.float64) for b in doc["biases"]]
    for (n_in, n_out), w, b in zip(zip(sizes, sizes[1:]), weights, biases):
        if w.shape != (n_in, n_out) or b.shape != (n_out,):
            raise InvalidShape(f"checkpoint arrays inconsistent with sizes {sizes}")
    if len(weights) != len(sizes) - 1 or len(biases) != len(sizes) - 1:
        raise InvalidShape("checkpoint layer count inconsistent")
    return Mlp(sizes, weights, biases, doc["output_activation"], doc["output_bound"])
