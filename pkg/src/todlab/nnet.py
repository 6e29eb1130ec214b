"""Small fully connected networks with exact analytic gradients.

Parameters live in one flat float64 vector. The layout is fixed: for each
layer in order, the weight matrix of shape ``(fan_in, fan_out)`` in
row-major order, followed by the bias vector of length ``fan_out`` (omitted
when ``use_bias`` is false). Hidden layers use ReLU; the last layer is
linear and the head decides how its raw output is presented.

Snapshots are immutable: every update returns a new snapshot and the
parameter arrays are marked read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from numbers import Integral, Real
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, NumericError, ParseError, ShapeError

SCALAR_REGRESSION = "scalar_regression"
SOFTMAX_CLASSIFICATION = "softmax_classification"
HEADS = (SCALAR_REGRESSION, SOFTMAX_CLASSIFICATION)
ACTIVATIONS = ("relu",)

SNAPSHOT_VERSION = "todlab-snapshot v1"


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of a feed-forward network.

    Args:
        layer_widths: Input width first, output width last.
        activation: Hidden-layer nonlinearity. Only ``"relu"``.
        head: ``"scalar_regression"`` or ``"softmax_classification"``.
        init_scale: Half-width of the uniform initialization interval.
        use_bias: Whether every layer carries a bias vector.
    """

    layer_widths: tuple[int, ...]
    activation: str = "relu"
    head: str = SOFTMAX_CLASSIFICATION
    init_scale: float = 0.5
    use_bias: bool = True

    def __post_init__(self):
        widths = tuple(self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ConfigurationError("layer_widths needs at least an input and an output width")
        if any(not isinstance(w, Integral) or isinstance(w, bool) or w < 1 for w in widths):
            raise ConfigurationError(f"layer widths must be positive integers, got {widths}")
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in widths))
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}; valid: {ACTIVATIONS}")
        if self.head not in HEADS:
            raise ConfigurationError(f"unknown head {self.head!r}; valid: {HEADS}")
        if self.head == SCALAR_REGRESSION and widths[-1] != 1:
            raise ConfigurationError("scalar_regression head requires output width 1")
        if not (isinstance(self.init_scale, Real) and self.init_scale > 0 and math.isfinite(self.init_scale)):
            raise ConfigurationError(f"init_scale must be a positive real, got {self.init_scale!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def is_classifier(self) -> bool:
        return self.head == SOFTMAX_CLASSIFICATION

    def layer_shapes(self) -> list[tuple[int, int]]:
        return list(zip(self.layer_widths[:-1], self.layer_widths[1:]))

    @property
    def n_params(self) -> int:
        bias = 1 if self.use_bias else 0
        return sum(i * o + bias * o for i, o in self.layer_shapes())


@dataclass(frozen=True, eq=False)
class NetworkSnapshot:
    """Parameter state of a network after ``step_count`` gradient steps."""

    spec: NetworkSpec
    params: np.ndarray = field(repr=False)
    step_count: int = 0

    def __post_init__(self):
        params = np.array(self.params, dtype=np.float64, copy=True).reshape(-1)
        if params.size != self.spec.n_params:
            raise ShapeError(f"expected {self.spec.n_params} parameters for {self.spec.layer_widths}, got {params.size}")
        if self.step_count < 0:
            raise ConfigurationError("step_count must be non-negative")
        params.flags.writeable = False
        object.__setattr__(self, "params", params)

    def __eq__(self, other):
        if not isinstance(other, NetworkSnapshot):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.step_count == other.step_count
            and np.array_equal(self.params, other.params)
        )

    __hash__ = None

    def with_params(self, params, step_count=None) -> "NetworkSnapshot":
        return NetworkSnapshot(self.spec, params, self.step_count if step_count is None else step_count)


def init_network(spec: NetworkSpec, seed: int) -> NetworkSnapshot:
    """Draw every parameter uniformly from ``[-init_scale, init_scale]``."""
    if not isinstance(spec, NetworkSpec):
        raise ConfigurationError("init_network expects a NetworkSpec")
    rng = np.random.default_rng(seed)
    params = rng.uniform(-spec.init_scale, spec.init_scale, size=spec.n_params)
    return NetworkSnapshot(spec, params, 0)


def zero_network(spec: NetworkSpec) -> NetworkSnapshot:
    return NetworkSnapshot(spec, np.zeros(spec.n_params), 0)


# -- internals -------------------------------------------------------------


def _layers(spec: NetworkSpec, params: np.ndarray):
    """Views ``(W, b)`` into ``params``; ``b`` is None for bias-free nets."""
    out = []
    pos = 0
    for fan_in, fan_out in spec.layer_shapes():
        W = params[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = None
        if spec.use_bias:
            b = params[pos : pos + fan_out]
            pos += fan_out
        out.append((W, b))
    return out


def _forward_cache(spec: NetworkSpec, params: np.ndarray, X: np.ndarray):
    layers = _layers(spec, params)
    acts = [X]
    a = X
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        z = a @ W
        if b is not None:
            z = z + b
        if i == last:
            return layers, acts, z
        a = np.maximum(z, 0.0)
        acts.append(a)
    raise AssertionError("unreachable")


def _backward(spec: NetworkSpec, layers, acts, dz: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(dz * z_out)`` w.r.t. params, summed over the batch."""
    grads = []
    delta = dz
    for i in range(len(layers) - 1, -1, -1):
        W, b = layers[i]
        a_in = acts[i]
        parts = [(a_in.T @ delta).reshape(-1)]
        if b is not None:
            parts.append(delta.sum(axis=0))
        grads.append(parts)
        if i > 0:
            delta = (delta @ W.T) * (acts[i] > 0)
    flat = []
    for parts in reversed(grads):
        flat.extend(parts)
    return np.concatenate(flat)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(spec: NetworkSpec, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ShapeError(f"expected inputs of width {spec.input_dim}, got shape {np.shape(X)}")
    return X


def _as_sample(spec: NetworkSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != spec.input_dim:
        raise ShapeError(f"expected a vector of length {spec.input_dim}, got shape {x.shape}")
    return x


def _check_labels(spec: NetworkSpec, y) -> np.ndarray:
    y = np.asarray(y)
    if spec.is_classifier:
        if y.dtype.kind == "f":
            if not np.all(np.isfinite(y)) or np.any(y != np.round(y)):
                raise ConfigurationError("classification labels must be class indices")
            y = y.astype(np.int64)
        elif y.dtype.kind not in "iu":
            raise ConfigurationError("classification labels must be class indices")
        if np.any((y < 0) | (y >= spec.output_dim)):
            raise ConfigurationError(f"class index outside [0, {spec.output_dim})")
        return y.astype(np.int64)
    if y.dtype.kind not in "fiu" or y.dtype == bool:
        raise ConfigurationError("regression labels must be real numbers")
    return y.astype(np.float64)


# -- forward ---------------------------------------------------------------


def raw_output_batch(s: NetworkSnapshot, X) -> np.ndarray:
    """Raw final-layer output: the scalar for regression, logits for classifiers."""
    X = _as_batch(s.spec, X)
    return _forward_cache(s.spec, s.params, X)[2]


def forward_batch(s: NetworkSnapshot, X) -> np.ndarray:
    z = raw_output_batch(s, X)
    return _softmax(z) if s.spec.is_classifier else z


def forward(s: NetworkSnapshot, x) -> np.ndarray:
    """Network output for one sample: probabilities or the raw scalar."""
    return forward_batch(s, _as_sample(s.spec, x)[None, :])[0]


def output_batch(s: NetworkSnapshot, X, mode: str = "probs") -> np.ndarray:
    """Output representation used by discrepancy measures.

    Classifiers give probabilities (``mode="probs"``) or logits
    (``mode="logits"``); regression nets always give the raw output.
    """
    if mode not in ("probs", "logits"):
        raise ConfigurationError(f"unknown output mode {mode!r}; valid: ('probs', 'logits')")
    if mode == "logits":
        return raw_output_batch(s, X)
    return forward_batch(s, X)


# -- losses and gradients --------------------------------------------------


def per_sample_loss(s: NetworkSnapshot, X, y) -> np.ndarray:
    """Cross-entropy for classifiers, ``0.5 * (y - f)^2`` for regression."""
    X = _as_batch(s.spec, X)
    y = _check_labels(s.spec, y)
    z = _forward_cache(s.spec, s.params, X)[2]
    return _loss_from_logits(s.spec, z, y)


def _loss_from_logits(spec, z, y):
    if spec.is_classifier:
        m = z.max(axis=1)
        lse = m + np.log(np.exp(z - m[:, None]).sum(axis=1))
        return lse - z[np.arange(len(y)), y]
    return 0.5 * (y - z[:, 0]) ** 2


def _dloss_dz(spec, z, y):
    if spec.is_classifier:
        dz = _softmax(z)
        dz[np.arange(len(y)), y] -= 1.0
        return dz
    return (z[:, 0] - y)[:, None]


def batch_loss_grad(s: NetworkSnapshot, X, y) -> tuple[float, np.ndarray]:
    """Mean task loss over a batch and its gradient."""
    X = _as_batch(s.spec, X)
    y = _check_labels(s.spec, np.atleast_1d(y))
    layers, acts, z = _forward_cache(s.spec, s.params, X)
    n = X.shape[0]
    loss = float(_loss_from_logits(s.spec, z, y).mean())
    grad = _backward(s.spec, layers, acts, _dloss_dz(s.spec, z, y) / n)
    return loss, grad


def grad_loss(s: NetworkSnapshot, x, y) -> tuple[float, np.ndarray]:
    """Loss of one labelled sample and its exact gradient w.r.t. params."""
    x = _as_sample(s.spec, x)
    if s.spec.is_classifier:
        if isinstance(y, bool) or not isinstance(y, (Integral, np.integer)):
            raise ConfigurationError("classification head needs an integer class label")
    elif isinstance(y, bool) or not isinstance(y, (Real, np.floating, np.integer)):
        raise ConfigurationError("regression head needs a real label")
    return batch_loss_grad(s, x[None, :], np.array([y]))


def grad_output(s: NetworkSnapshot, x) -> np.ndarray:
    """Jacobian of the raw output (scalar or logits), shape ``(K, n_params)``."""
    x = _as_sample(s.spec, x)
    layers, acts, _ = _forward_cache(s.spec, s.params, x[None, :])
    K = s.spec.output_dim
    rows = []
    for k in range(K):
        dz = np.zeros((1, K))
        dz[0, k] = 1.0
        rows.append(_backward(s.spec, layers, acts, dz))
    return np.vstack(rows)


def grad_output_norm_sq_batch(s: NetworkSnapshot, X) -> np.ndarray:
    """Squared Frobenius norm of the output Jacobian for every row of ``X``.

    Uses the identity that the per-sample weight gradient of a layer is the
    outer product of its input activation and the backpropagated delta, so
    its squared norm factorises as ``|a|^2 * |delta|^2``.
    """
    X = _as_batch(s.spec, X)
    layers, acts, _ = _forward_cache(s.spec, s.params, X)
    n = X.shape[0]
    K = s.spec.output_dim
    total = np.zeros(n)
    for k in range(K):
        delta = np.zeros((n, K))
        delta[:, k] = 1.0
        for i in range(len(layers) - 1, -1, -1):
            W, b = layers[i]
            d2 = np.einsum("ij,ij->i", delta, delta)
            total += np.einsum("ij,ij->i", acts[i], acts[i]) * d2
            if b is not None:
                total += d2
            if i > 0:
                delta = (delta @ W.T) * (acts[i] > 0)
    return total


def grad_output_norm_sq(s: NetworkSnapshot, x) -> float:
    x = _as_sample(s.spec, x)
    return float(grad_output_norm_sq_batch(s, x[None, :])[0])


# -- updates ---------------------------------------------------------------


def sgd_step(s: NetworkSnapshot, g, eta: float) -> NetworkSnapshot:
    """Plain gradient descent: ``params - eta * g``."""
    if not (eta > 0 and math.isfinite(eta)):
        raise ConfigurationError(f"learning rate must be positive, got {eta!r}")
    g = np.asarray(g, dtype=np.float64)
    if g.shape != s.params.shape:
        raise ShapeError(f"gradient of shape {g.shape} does not match {s.params.shape}")
    if not np.all(np.isfinite(g)):
        raise NumericError("gradient contains NaN or Inf")
    return NetworkSnapshot(s.spec, s.params - eta * g, s.step_count + 1)


def ema_update(ema: NetworkSnapshot, current: NetworkSnapshot, alpha: float) -> NetworkSnapshot:
    """``alpha * ema + (1 - alpha) * current``; keeps the EMA's step count."""
    if ema.spec != current.spec:
        raise ConfigurationError("EMA and current network have different specs")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must lie in [0, 1], got {alpha!r}")
    return NetworkSnapshot(ema.spec, alpha * ema.params + (1.0 - alpha) * current.params, ema.step_count)


# -- serialization ---------------------------------------------------------


def dumps_snapshot(s: NetworkSnapshot) -> str:
    spec = s.spec
    lines = [
        SNAPSHOT_VERSION,
        "widths " + " ".join(str(w) for w in spec.layer_widths),
        f"activation {spec.activation}",
        f"head {spec.head}",
        f"init_scale {spec.init_scale!r}",
        f"use_bias {int(spec.use_bias)}",
        f"step_count {s.step_count}",
        f"params {spec.n_params}",
    ]
    lines.extend(repr(float(v)) for v in s.params)
    return "\n".join(lines) + "\n"


def loads_snapshot(text: str) -> NetworkSnapshot:
    lines = text.splitlines()
    if not lines or lines[0].strip() != SNAPSHOT_VERSION:
        raise ParseError(f"not a snapshot file (expected {SNAPSHOT_VERSION!r} header)", line=1)
    header = {}
    for lineno in range(2, 9):
        if lineno > len(lines):
            raise ParseError("truncated snapshot header", line=lineno)
        key, _, value = lines[lineno - 1].partition(" ")
        header[key] = value
    try:
        spec = NetworkSpec(
            layer_widths=tuple(int(w) for w in header["widths"].split()),
            activation=header["activation"],
            head=header["head"],
            init_scale=float(header["init_scale"]),
            use_bias=bool(int(header["use_bias"])),
        )
        step_count = int(header["step_count"])
        count = int(header["params"])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad snapshot header: {exc}") from exc
    body = lines[8 : 8 + count]
    if len(body) != count:
        raise ParseError(f"expected {count} parameters, found {len(body)}")
    try:
        params = np.array([float(v) for v in body])
    except ValueError as exc:
        raise ParseError(f"bad parameter value: {exc}") from exc
    return NetworkSnapshot(spec, params, step_count)


def save_snapshot(s: NetworkSnapshot, path) -> None:
    from .io import atomic_write_text

    atomic_write_text(Path(path), dumps_snapshot(s))


def load_snapshot(path) -> NetworkSnapshot:
    return loads_snapshot(Path(path).read_text())
