"""Small dense-network engine in double precision.

Layers are affine maps ``y = act(x @ W.T + b)`` with optional inverted
dropout on hidden layers. :func:`forward` records a :class:`Tape` that
:func:`backward` consumes exactly once to produce exact gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, TrainingError, UsageError

EPSILON_VAR = 1e-12
ACTIVATIONS = ("relu", "tanh", "selu", "linear")

_SELU_ALPHA = 1.6732632423543772
_SELU_SCALE = 1.0507009873554805


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def glorot_uniform_init(fan_in: int, fan_out: int, seed) -> np.ndarray:
    """(fan_out, fan_in) matrix drawn from U(-limit, limit), limit = sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise UsageError(f"fans must be >= 1, got {fan_in}, {fan_out}")
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return _as_rng(seed).uniform(-limit, limit, size=(fan_out, fan_in))


def activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "selu":
        return _SELU_SCALE * np.where(z > 0, z, _SELU_ALPHA * np.expm1(np.minimum(z, 0.0)))
    if kind == "linear":
        return z
    raise UsageError(f"unknown activation {kind!r}")


def activation_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """d act / d z, given the pre-activation ``z`` and output ``a``."""
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "selu":
        return np.where(z > 0, _SELU_SCALE, a + _SELU_SCALE * _SELU_ALPHA)
    if kind == "linear":
        return np.ones_like(z)
    raise UsageError(f"unknown activation {kind!r}")


@dataclass(eq=False)
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "relu"
    dropout: float = 0.0

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"layer weight {self.W.shape} and bias {self.b.shape} do not match")
        if self.activation not in ACTIVATIONS:
            raise UsageError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")
        if not 0.0 <= self.dropout < 1.0:
            raise UsageError(f"dropout rate must be in [0, 1), got {self.dropout}")


class MlpNetwork:
    """Ordered stack of :class:`Layer` objects with chained widths."""

    def __init__(self, layers: list[Layer]):
        if not layers:
            raise UsageError("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.W.shape[0] != nxt.W.shape[1]:
                raise ShapeError(f"layer widths do not chain: {prev.W.shape} -> {nxt.W.shape}")
        self.layers = list(layers)
        self.version = 0

    @classmethod
    def build(cls, widths, activation="relu", dropout=0.0, seed=0, output_activation="linear"):
        """Glorot-initialized network through ``widths`` (input, hidden..., output); zero biases."""
        rng = _as_rng(seed)
        layers = []
        last = len(widths) - 2
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            layers.append(Layer(
                glorot_uniform_init(fan_in, fan_out, rng),
                np.zeros(fan_out),
                output_activation if i == last else activation,
                0.0 if i == last else dropout,
            ))
        return cls(layers)

    @property
    def in_width(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def out_width(self) -> int:
        return self.layers[-1].W.shape[0]

    @property
    def widths(self) -> list[int]:
        return [self.in_width] + [layer.W.shape[0] for layer in self.layers]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def param_names(self, prefix: str = "") -> list[str]:
        out = []
        for i in range(len(self.layers)):
            out += [f"{prefix}W{i}", f"{prefix}b{i}"]
        return out

    def touch(self) -> None:
        """Mark parameters as changed; outstanding tapes become stale."""
        self.version += 1

    def copy(self) -> "MlpNetwork":
        return MlpNetwork([Layer(l.W.copy(), l.b.copy(), l.activation, l.dropout) for l in self.layers])

    def check_finite(self) -> None:
        for name, p in zip(self.param_names(), self.params()):
            if not np.isfinite(p).all():
                raise TrainingError(f"non-finite parameter block {name}")


@dataclass(eq=False)
class Tape:
    net: MlpNetwork
    version: int
    inputs: list = field(default_factory=list)  # input to each layer
    pre: list = field(default_factory=list)  # pre-activation z
    post: list = field(default_factory=list)  # activation output before dropout
    masks: list = field(default_factory=list)  # scaled dropout masks or None
    used: bool = False


def forward(net: MlpNetwork, x: np.ndarray, train: bool = False, rng=None):
    """Run the network on a (batch, in) matrix.

    With ``train=True`` hidden-layer dropout is applied using ``rng`` (seed
    or Generator); kept units are scaled by 1/(1-rate). Returns ``(y, tape)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_width:
        raise ShapeError(f"input of shape {x.shape} does not match network input width {net.in_width}")
    if train:
        if rng is None:
            raise UsageError("train mode needs a seed or Generator for the dropout masks")
        rng = _as_rng(rng)
    tape = Tape(net, net.version)
    h = x
    for layer in net.layers:
        tape.inputs.append(h)
        z = h @ layer.W.T + layer.b
        a = activate(layer.activation, z)
        tape.pre.append(z)
        tape.post.append(a)
        if train and layer.dropout > 0.0:
            keep = 1.0 - layer.dropout
            mask = (rng.random(a.shape) < keep) / keep
            tape.masks.append(mask)
            h = a * mask
        else:
            tape.masks.append(None)
            h = a
    return h, tape


def predict(net: MlpNetwork, x: np.ndarray) -> np.ndarray:
    return forward(net, x)[0]


def backward(tape: Tape, upstream: np.ndarray):
    """Gradients for a recorded forward pass.

    Returns ``(grads, dx)`` where ``grads`` lines up with ``net.params()``.
    A tape can be consumed once and only while the network is unchanged.
    """
    net = tape.net
    if tape.used or tape.version != net.version:
        raise UsageError("stale tape: the network changed or the tape was already consumed")
    tape.used = True
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != tape.post[-1].shape:
        raise ShapeError(f"upstream gradient {g.shape} does not match output {tape.post[-1].shape}")
    grads: list[np.ndarray] = [None] * (2 * len(net.layers))  # type: ignore[list-item]
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if tape.masks[i] is not None:
            g = g * tape.masks[i]
        g = g * activation_grad(layer.activation, tape.pre[i], tape.post[i])
        grads[2 * i] = g.T @ tape.inputs[i]
        grads[2 * i + 1] = g.sum(0)
        g = g @ layer.W
    return grads, g


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.t,
                         [a.copy() for a in self.m], [a.copy() for a in self.v])


def adam_step(state: AdamState, params: list, grads: list, names: list | None = None) -> list:
    """Bias-corrected Adam update, applied in place to ``params`` (also returned)."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameter blocks but {len(grads)} gradients")
    names = names or [f"block{i}" for i in range(len(params))]
    for name, p, g in zip(names, params, grads):
        if np.shape(p) != np.shape(g):
            raise ShapeError(f"gradient for {name} has shape {np.shape(g)}, parameter has {np.shape(p)}")
        if not np.isfinite(g).all():
            raise TrainingError(f"NaN or infinite gradient in parameter block {name}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# R^2


def r2(y_true, y_pred) -> float:
    """Coefficient of determination 1 - SSres / max(SStot, EPSILON_VAR)."""
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"length mismatch {y_true.shape} vs {y_pred.shape}")
    if y_true.size < 2:
        raise UsageError("R^2 needs at least two samples")
    ss_res = float(np.sum((y_true - y_pred) ** 2))
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    return 1.0 - ss_res / max(ss_tot, EPSILON_VAR)


def r2_columns(y_true: np.ndarray, y_pred: np.ndarray) -> np.ndarray:
    """Per-column R^2 of two (n, c) matrices."""
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"shape mismatch {y_true.shape} vs {y_pred.shape}")
    if y_true.shape[0] < 2:
        raise UsageError("R^2 needs at least two samples")
    ss_res = ((y_true - y_pred) ** 2).sum(0)
    ss_tot = ((y_true - y_true.mean(0)) ** 2).sum(0)
    return 1.0 - ss_res / np.maximum(ss_tot, EPSILON_VAR)


def r2_columns_grad(y_true: np.ndarray, y_pred: np.ndarray):
    """Per-column R^2 and d(sum of column R^2)/d y_pred."""
    ss_tot = np.maximum(((y_true - y_true.mean(0)) ** 2).sum(0), EPSILON_VAR)
    resid = y_pred - y_true
    values = 1.0 - (resid**2).sum(0) / ss_tot
    return values, -2.0 * resid / ss_tot
