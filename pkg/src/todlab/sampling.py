"""Acquisition strategies: pick the unlabeled samples to annotate next."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discrepancy import DiscrepancyScore, cod_values
from .errors import ArgumentError, ConfigurationError

KINDS = ("random", "cod", "emaod")
TIE_RULES = ("lowest_index", "seeded_shuffle")


@dataclass(frozen=True)
class AcquisitionStrategy:
    """``cod`` compares against the previous cycle's model, ``emaod`` against
    the EMA baseline, ``random`` ignores both."""

    kind: str = "cod"
    tie_rule: str = "lowest_index"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown strategy {self.kind!r}; valid strategies: {', '.join(KINDS)}")
        if self.tie_rule not in TIE_RULES:
            raise ConfigurationError(f"unknown tie rule {self.tie_rule!r}; valid: {', '.join(TIE_RULES)}")


@dataclass(frozen=True)
class SelectionResult:
    chosen: tuple[int, ...]
    scores_used: tuple[DiscrepancyScore, ...] | None = None

    def score_of(self, index: int) -> float | None:
        if self.scores_used is None:
            return None
        for s in self.scores_used:
            if s.sample_index == index:
                return s.value
        return None


def select_top_b(scores, b: int, tie_rule: str = "lowest_index", seed: int = 0) -> SelectionResult:
    """The ``b`` highest-scoring samples, best first.

    Equal scores are ordered by sample index (``lowest_index``) or by a
    seeded random permutation (``seeded_shuffle``).
    """
    if b < 1:
        raise ArgumentError(f"budget must be at least 1, got {b}")
    if tie_rule not in TIE_RULES:
        raise ConfigurationError(f"unknown tie rule {tie_rule!r}")
    scores = list(scores)
    idx = np.array([s.sample_index for s in scores], dtype=np.int64)
    if len(set(idx.tolist())) != len(idx):
        raise ArgumentError("duplicate sample indices in scores")
    vals = np.array([s.value for s in scores], dtype=np.float64)
    if tie_rule == "lowest_index":
        secondary = idx
    else:
        secondary = np.random.default_rng(seed).permutation(len(idx))
    # lexsort: last key is primary
    order = np.lexsort((secondary, -vals))
    chosen = tuple(int(i) for i in idx[order[:b]])
    return SelectionResult(chosen, tuple(scores))


def select_random(unlabeled, b: int, seed: int) -> SelectionResult:
    """Uniform draw without replacement, deterministic per seed."""
    pool = np.asarray(list(unlabeled), dtype=np.int64)
    if pool.size == 0:
        raise ArgumentError("unlabeled pool is empty")
    if b < 1:
        raise ArgumentError(f"budget must be at least 1, got {b}")
    rng = np.random.default_rng(seed)
    picked = rng.choice(pool, size=min(b, pool.size), replace=False)
    return SelectionResult(tuple(int(i) for i in picked), None)


def acquire(strategy: AcquisitionStrategy, unlabeled, current, comparison, features, b: int,
            seed: int, mode: str = "probs") -> SelectionResult:
    """Select ``b`` samples from ``unlabeled`` according to ``strategy``.

    Args:
        unlabeled: Indices of the unlabeled pool.
        current: Model at the end of the current cycle.
        comparison: Previous-cycle model for ``cod``, EMA model for
            ``emaod``; ignored for ``random``.
        features: Feature matrix only; labels are never passed here.
    """
    unlabeled = [int(i) for i in unlabeled]
    if not unlabeled:
        raise ArgumentError("unlabeled pool is empty")
    if strategy.kind == "random":
        return select_random(unlabeled, b, seed)
    if current is None or comparison is None:
        raise ConfigurationError(f"strategy {strategy.kind!r} needs both the current and comparison models")
    vals = cod_values(current, comparison, features, unlabeled, mode)
    scores = [DiscrepancyScore(i, float(v)) for i, v in zip(unlabeled, vals)]
    return select_top_b(scores, b, strategy.tie_rule, seed)
