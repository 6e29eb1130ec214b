"""Output discrepancy scores and numerical checks of the loss bounds.

The discrepancy between two parameter states ``a`` and ``b`` on a sample
``x`` is ``||f(x; a) - f(x; b)||_2``. Taken between two optimizer steps it
estimates the sample loss; taken between the models saved at the end of two
consecutive active-learning cycles it is the acquisition score.

The bound checks run single-sample gradient descent on a scalar-regression
net with loss ``0.5 * (y - f)^2`` and compare the measured discrepancy with

* one step:  ``eta * sqrt(2 L_t) * ||grad_w f(w_t)||^2``
* T steps:   ``sqrt(2) * eta * sum_tau sqrt(L_tau) * ||grad_w f(w_tau)||^2``
* T steps with a constant ``C >= ||grad_w f||^2``:
  ``sqrt(2 T) * eta * C * sqrt(sum_tau L_tau)``

These hold to first order in ``eta``, so a check passes when
``lhs <= rhs * (1 + c * eta) + abs_tol``. The ReLU-layer Lipschitz bound
``||relu((W + r)^T x + b) - relu(W^T x + b)|| <= ||x|| * ||r||_F`` is exact
and is checked with zero relative slack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nnet
from .errors import ArgumentError, ConfigurationError, IndexRangeError, ShapeError
from .nnet import NetworkSnapshot, NetworkSpec

DEFAULT_SLACK_C = 10.0
DEFAULT_ABS_TOL = 1e-12


@dataclass(frozen=True)
class DiscrepancyScore:
    sample_index: int
    value: float


@dataclass(frozen=True)
class BoundReport:
    """One evaluated inequality ``lhs <= rhs``.

    ``passed`` is ``lhs <= rhs * (1 + rel_tol) + abs_tol``. ``extra`` holds
    check-specific diagnostics (per-step losses, the intermediate bound...).
    """

    check: str
    lhs: float
    rhs: float
    eta: float
    T: int
    rel_tol: float
    abs_tol: float
    seed: int | None = None
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return bool(self.lhs <= self.rhs * (1.0 + self.rel_tol) + self.abs_tol)


BOUND_CSV_HEADER = ("check", "seed", "eta", "T", "lhs", "rhs", "slack", "passed")


def bound_rows(reports):
    for r in reports:
        yield (r.check, r.seed, float(r.eta), r.T, float(r.lhs), float(r.rhs), float(r.slack), r.passed)


@dataclass(frozen=True)
class GradNormTrace:
    """Per-snapshot mean and variance of ``||grad_w f(x)||^2`` over samples."""

    means: tuple[float, ...]
    variances: tuple[float, ...]

    @property
    def cv_across_snapshots(self) -> float:
        """Coefficient of variation of the per-snapshot means."""
        m = np.asarray(self.means)
        mu = float(m.mean())
        return float(m.std() / mu) if mu > 0 else 0.0

    def __len__(self):
        return len(self.means)


# -- scores ----------------------------------------------------------------


def _check_pair(a: NetworkSnapshot, b: NetworkSnapshot):
    if a.spec != b.spec:
        raise ConfigurationError("snapshots have different network specs")


def discrepancy_batch(a: NetworkSnapshot, b: NetworkSnapshot, X, mode: str = "probs") -> np.ndarray:
    """Row-wise ``||f(x; a) - f(x; b)||`` for a feature matrix."""
    _check_pair(a, b)
    diff = nnet.output_batch(a, X, mode) - nnet.output_batch(b, X, mode)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def output_discrepancy(a: NetworkSnapshot, b: NetworkSnapshot, x, mode: str = "probs") -> float:
    """L2 distance between the outputs of two parameter states on one sample.

    Classifiers are compared on softmax probabilities by default
    (``mode="logits"`` compares logits); regression nets on the raw output.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("output_discrepancy takes a single sample vector")
    return float(discrepancy_batch(a, b, x[None, :], mode)[0])


def cod_values(current: NetworkSnapshot, previous: NetworkSnapshot, features, indices,
               mode: str = "probs") -> np.ndarray:
    features = np.asarray(features)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= features.shape[0]):
        raise IndexRangeError(f"sample index outside [0, {features.shape[0]})")
    if idx.size == 0:
        _check_pair(current, previous)
        return np.zeros(0)
    return discrepancy_batch(current, previous, features[idx], mode)


def cod_scores(current: NetworkSnapshot, previous: NetworkSnapshot, features, indices,
               mode: str = "probs") -> list[DiscrepancyScore]:
    """Cyclic output discrepancy for each requested sample, in input order.

    ``features`` is the bare feature matrix; labels are never needed.
    """
    idx = [int(i) for i in np.asarray(indices, dtype=np.int64).reshape(-1)]
    vals = cod_values(current, previous, features, idx, mode)
    return [DiscrepancyScore(i, float(v)) for i, v in zip(idx, vals)]


# -- bound checks ------------------------------------------------------------


def _scalar_only(spec: NetworkSpec):
    if spec.head != nnet.SCALAR_REGRESSION:
        raise ConfigurationError("bound checks are defined for scalar_regression nets only")


def _scalar_out(s: NetworkSnapshot, x) -> float:
    return float(nnet.raw_output_batch(s, x[None, :])[0, 0])


def theorem1_report(s: NetworkSnapshot, x, y: float, eta: float, c: float = DEFAULT_SLACK_C,
                    abs_tol: float = DEFAULT_ABS_TOL, seed=None) -> BoundReport:
    """One-step bound evaluated at a given parameter state."""
    _scalar_only(s.spec)
    x = np.asarray(x, dtype=np.float64)
    loss, g = nnet.grad_loss(s, x, float(y))
    gnorm = nnet.grad_output_norm_sq(s, x)
    s1 = nnet.sgd_step(s, g, eta)
    lhs = abs(_scalar_out(s1, x) - _scalar_out(s, x))
    rhs = eta * math.sqrt(2.0 * loss) * gnorm
    return BoundReport("theorem1", lhs, rhs, eta, 1, c * eta, abs_tol, seed,
                       {"loss": loss, "grad_norm_sq": gnorm})


def verify_theorem1(spec: NetworkSpec, seed: int, x, y: float, eta: float,
                    c: float = DEFAULT_SLACK_C, abs_tol: float = DEFAULT_ABS_TOL) -> BoundReport:
    """Check the one-step bound on a freshly initialised net."""
    _scalar_only(spec)
    return theorem1_report(nnet.init_network(spec, seed), x, y, eta, c, abs_tol, seed)


def corollary2_report(s: NetworkSnapshot, x, y: float, eta: float, T: int, c: float = DEFAULT_SLACK_C,
                      abs_tol: float = DEFAULT_ABS_TOL, seed=None) -> BoundReport:
    """T-step bound evaluated from a given parameter state.

    ``C`` is the largest measured ``||grad_w f||^2`` along the trajectory.
    ``extra`` carries the per-step losses and gradient norms and the
    intermediate per-step-sum bound (``eq3_rhs``) with its own verdict.
    """
    _scalar_only(s.spec)
    if T < 1:
        raise ArgumentError("T must be a positive integer")
    x = np.asarray(x, dtype=np.float64)
    start = _scalar_out(s, x)
    losses, norms = [], []
    w = s
    for _ in range(T):
        loss, g = nnet.grad_loss(w, x, float(y))
        losses.append(loss)
        norms.append(nnet.grad_output_norm_sq(w, x))
        w = nnet.sgd_step(w, g, eta)
    lhs = abs(_scalar_out(w, x) - start)
    C = max(norms)
    eq3_rhs = math.sqrt(2.0) * eta * sum(math.sqrt(L) * n for L, n in zip(losses, norms))
    rhs = math.sqrt(2.0 * T) * eta * C * math.sqrt(sum(losses))
    extra = {
        "losses": losses,
        "grad_norms_sq": norms,
        "C": C,
        "eq3_rhs": eq3_rhs,
        "eq3_passed": bool(lhs <= eq3_rhs * (1.0 + c * eta) + abs_tol),
        # Cauchy-Schwarz step; a few ulps of rounding are allowed for
        # equality cases such as T = 1.
        "chain_holds": bool(eq3_rhs <= rhs * (1.0 + 1e-12) + abs_tol),
    }
    return BoundReport("corollary2", lhs, rhs, eta, T, c * eta, abs_tol, seed, extra)


def verify_corollary2(spec: NetworkSpec, seed: int, x, y: float, eta: float, T: int,
                      c: float = DEFAULT_SLACK_C, abs_tol: float = DEFAULT_ABS_TOL) -> BoundReport:
    _scalar_only(spec)
    return corollary2_report(nnet.init_network(spec, seed), x, y, eta, T, c, abs_tol, seed)


def relu_layer(x, W, b=None) -> np.ndarray:
    z = np.asarray(x) @ W
    if b is not None:
        z = z + b
    return np.maximum(z, 0.0)


def remark1_report(W, b, x, r, abs_tol: float = DEFAULT_ABS_TOL, seed=None) -> BoundReport:
    """``||relu((W + r)^T x + b) - relu(W^T x + b)|| <= ||x|| * ||r||_F``."""
    W = np.asarray(W, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or r.shape != W.shape or x.shape != (W.shape[0],):
        raise ShapeError(f"incompatible shapes W{W.shape}, r{r.shape}, x{x.shape}")
    lhs = float(np.linalg.norm(relu_layer(x, W + r, b) - relu_layer(x, W, b)))
    rhs = float(np.linalg.norm(x) * np.linalg.norm(r, "fro"))
    return BoundReport("remark1", lhs, rhs, 0.0, 0, 0.0, abs_tol, seed)


def verify_remark1(input_dim: int, output_dim: int, seed: int, x, r, bias: bool = True,
                   scale: float = 1.0, abs_tol: float = DEFAULT_ABS_TOL) -> BoundReport:
    """Draw ``W`` (and ``b``) from ``seed`` and check the Lipschitz bound."""
    rng = np.random.default_rng(seed)
    W = rng.uniform(-scale, scale, size=(input_dim, output_dim))
    b = rng.uniform(-scale, scale, size=output_dim) if bias else None
    return remark1_report(W, b, x, r, abs_tol, seed)


def grad_norm_trace(snapshots, features, indices) -> GradNormTrace:
    """Mean and variance of ``||grad_w f||^2`` per snapshot over the given samples."""
    snapshots = list(snapshots)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise ArgumentError("grad_norm_trace needs at least one sample")
    if not snapshots:
        raise ArgumentError("grad_norm_trace needs at least one snapshot")
    spec = snapshots[0].spec
    if any(s.spec != spec for s in snapshots):
        raise ConfigurationError("all snapshots must share a spec")
    X = np.asarray(features)[idx]
    means, variances = [], []
    for s in snapshots:
        v = nnet.grad_output_norm_sq_batch(s, X)
        means.append(float(v.mean()))
        variances.append(float(v.var()))
    return GradNormTrace(tuple(means), tuple(variances))


# -- sweeps ----------------------------------------------------------------


def random_instance(seed: int, input_dim: int = 2):
    """Input and target for a bound-sweep trial, both standard normal."""
    rng = np.random.default_rng([seed, 1])
    return rng.normal(size=input_dim), float(rng.normal())


def theorem1_sweep(widths, eta: float, trials: int, seed: int = 0, c: float = DEFAULT_SLACK_C):
    spec = NetworkSpec(tuple(widths), head=nnet.SCALAR_REGRESSION)
    out = []
    for i in range(trials):
        x, y = random_instance(seed + i, spec.input_dim)
        out.append(verify_theorem1(spec, seed + i, x, y, eta, c))
    return out


def corollary2_sweep(widths, eta: float, T: int, trials: int, seed: int = 0, c: float = DEFAULT_SLACK_C):
    spec = NetworkSpec(tuple(widths), head=nnet.SCALAR_REGRESSION)
    out = []
    for i in range(trials):
        x, y = random_instance(seed + i, spec.input_dim)
        out.append(verify_corollary2(spec, seed + i, x, y, eta, T, c))
    return out


def remark1_sweep(input_dim: int, output_dim: int, trials: int, seed: int = 0):
    out = []
    for i in range(trials):
        rng = np.random.default_rng([seed + i, 2])
        x = rng.normal(size=input_dim)
        r = rng.normal(scale=rng.uniform(0.01, 1.0), size=(input_dim, output_dim))
        out.append(verify_remark1(input_dim, output_dim, seed + i, x, r))
    return out


def pass_rate(reports) -> float:
    reports = list(reports)
    if not reports:
        raise ArgumentError("no reports")
    return sum(r.passed for r in reports) / len(reports)
