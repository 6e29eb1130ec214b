"""One cycle of semi-supervised training against an EMA baseline.

Each optimizer step minimises

    L_S(w) + lam * L_U(w)

where ``L_S`` is the mean task loss on a labelled batch and ``L_U`` the
mean squared output distance between the current model and the EMA model
on an unlabeled batch. The EMA outputs are treated as constants. After
every step the EMA parameters move towards the current ones with decay
``alpha``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nnet
from .config import TrainConfig
from .errors import ArgumentError, ConfigurationError
from .nnet import NetworkSnapshot

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "fit_cycle",
    "overall_loss_grad",
    "supervised_loss",
    "train_cycle",
    "unsupervised_loss",
]


@dataclass(frozen=True)
class TrainHistory:
    """Per-epoch means of the supervised, unsupervised and overall loss."""

    sup_loss: tuple[float, ...]
    unsup_loss: tuple[float, ...]
    overall_loss: tuple[float, ...]

    CSV_HEADER = ("epoch", "sup_loss", "unsup_loss", "overall_loss")

    def rows(self):
        for e, (s, u, o) in enumerate(zip(self.sup_loss, self.unsup_loss, self.overall_loss), start=1):
            yield (e, s, u, o)


def _unsup_parts(current: NetworkSnapshot, ema: NetworkSnapshot, X, mode: str):
    if current.spec != ema.spec:
        raise ConfigurationError("current and EMA models have different specs")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ArgumentError("unsupervised loss needs a non-empty batch")
    target = nnet.output_batch(ema, X, mode)
    layers, acts, z = nnet._forward_cache(current.spec, current.params, nnet._as_batch(current.spec, X))
    use_probs = current.spec.is_classifier and mode == "probs"
    out = nnet._softmax(z) if use_probs else z
    diff = out - target
    return layers, acts, out, diff, use_probs


def unsupervised_loss(current: NetworkSnapshot, ema: NetworkSnapshot, X, mode: str = "probs") -> float:
    """Mean over the batch of ``||f(x; w) - f(x; w_ema)||^2``. Never reads labels."""
    _, _, _, diff, _ = _unsup_parts(current, ema, X, mode)
    return float(np.einsum("ij,ij->i", diff, diff).mean())


def _unsup_loss_grad(current, ema, X, mode):
    layers, acts, out, diff, use_probs = _unsup_parts(current, ema, X, mode)
    n = diff.shape[0]
    loss = float(np.einsum("ij,ij->i", diff, diff).mean())
    g_out = 2.0 * diff / n
    if use_probs:
        # softmax Jacobian-vector product
        g_out = out * (g_out - np.sum(g_out * out, axis=1, keepdims=True))
    return loss, nnet._backward(current.spec, layers, acts, g_out)


def supervised_loss(current: NetworkSnapshot, X, y) -> float:
    """Mean cross-entropy (classifiers) or mean ``0.5 * (y - f)^2`` (regression)."""
    return float(nnet.per_sample_loss(current, X, y).mean())


def overall_loss_grad(model: NetworkSnapshot, ema: NetworkSnapshot, X_lab, y_lab, X_unl, lam: float,
                      mode: str = "probs"):
    """``(sup, unsup, overall, grad)`` of the combined objective on one batch pair.

    The unsupervised term is skipped (reported as 0) when ``lam == 0`` or the
    unlabeled batch is empty.
    """
    sup, grad = nnet.batch_loss_grad(model, X_lab, y_lab)
    unsup = 0.0
    if lam > 0 and X_unl is not None and len(X_unl):
        unsup, g_u = _unsup_loss_grad(model, ema, X_unl, mode)
        grad = grad + lam * g_u
    return sup, unsup, sup + lam * unsup, grad


def fit_cycle(config: TrainConfig, X_lab, y_lab, X_unl, model: NetworkSnapshot, ema: NetworkSnapshot,
              max_steps: int | None = None):
    """Train for ``config.epochs`` epochs on a fixed labelled set.

    Labelled batches come from a fresh seeded permutation every epoch; one
    unlabeled batch is paired with each labelled batch, cycling through its
    own seeded permutations. ``max_steps`` stops early after that many
    optimizer steps (the partial epoch is still recorded). Returns
    ``(model, ema, history)``.
    """
    X_lab = np.asarray(X_lab, dtype=np.float64)
    y_lab = np.asarray(y_lab)
    n_lab = X_lab.shape[0]
    if n_lab == 0:
        raise ConfigurationError("labeled pool is empty")
    if model.spec != ema.spec:
        raise ConfigurationError("model and EMA have different specs")
    X_unl = np.zeros((0, X_lab.shape[1])) if X_unl is None else np.asarray(X_unl, dtype=np.float64)
    n_unl = X_unl.shape[0]
    use_unsup = config.lam > 0 and n_unl > 0
    rng = np.random.default_rng(config.seed)
    bs = config.batch_size
    steps = math.ceil(n_lab / bs)
    ubs = min(config.unsup_batch_size, n_unl) if use_unsup else 0
    u_perm = np.empty(0, dtype=np.int64)
    u_pos = 0
    sup_hist, unsup_hist, all_hist = [], [], []
    done = 0
    for _ in range(config.epochs):
        if max_steps is not None and done >= max_steps:
            break
        perm = rng.permutation(n_lab)
        s_sum = u_sum = o_sum = 0.0
        taken = 0
        for k in range(steps):
            if max_steps is not None and done >= max_steps:
                break
            batch = perm[k * bs : (k + 1) * bs]
            Xu = None
            if use_unsup:
                if u_pos + ubs > u_perm.size:
                    u_perm = rng.permutation(n_unl)
                    u_pos = 0
                Xu = X_unl[u_perm[u_pos : u_pos + ubs]]
                u_pos += ubs
            sup, unsup, overall, grad = overall_loss_grad(
                model, ema, X_lab[batch], y_lab[batch], Xu, config.lam, config.output_mode
            )
            model = nnet.sgd_step(model, grad, config.eta)
            ema = nnet.ema_update(ema, model, config.alpha)
            s_sum += sup
            u_sum += unsup
            o_sum += overall
            taken += 1
            done += 1
        sup_hist.append(s_sum / taken)
        unsup_hist.append(u_sum / taken)
        all_hist.append(o_sum / taken)
    return model, ema, TrainHistory(tuple(sup_hist), tuple(unsup_hist), tuple(all_hist))


def train_cycle(config: TrainConfig, pools, data, model: NetworkSnapshot, ema: NetworkSnapshot):
    """Train one cycle on ``data`` split by ``pools`` (``.labeled``/``.unlabeled``).

    Labels of unlabeled indices are never read.
    """
    labeled = np.asarray(list(pools.labeled), dtype=np.int64)
    unlabeled = np.asarray(list(pools.unlabeled), dtype=np.int64)
    if labeled.size == 0:
        raise ConfigurationError("labeled pool is empty")
    X = data.features
    return fit_cycle(config, X[labeled], data.labels[labeled], X[unlabeled], model, ema)
