"""How well a discrepancy score ranks samples by their true loss.

All functions here depend on the scores only through their ranks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ArgumentError

DEFAULT_NUM_BUCKETS = 20
DEFAULT_TOP_LOSS_FRACTION = 0.25
DEFAULT_SAMPLING_FRACTIONS = tuple(round(0.05 * i, 2) for i in range(1, 21))


def _values(scores) -> np.ndarray:
    scores = list(scores) if not isinstance(scores, np.ndarray) else scores
    if len(scores) and hasattr(scores[0], "value"):
        return np.array([s.value for s in scores], dtype=np.float64)
    return np.asarray(scores, dtype=np.float64)


def _aligned(scores, losses):
    s = _values(scores)
    l = np.asarray(losses, dtype=np.float64)
    if s.shape != l.shape or s.ndim != 1:
        raise ArgumentError(f"scores and losses must be aligned 1-D lists ({s.shape} vs {l.shape})")
    if s.size == 0:
        raise ArgumentError("empty score list")
    return s, l


def spearman(a, b) -> float | None:
    """Spearman rank correlation with average ranks for ties.

    Returns None when either input is constant, where the coefficient is
    undefined.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ArgumentError("spearman needs two 1-D sequences of equal length")
    if a.size < 2:
        raise ArgumentError("spearman needs at least two observations")
    ra = rankdata(a) - (a.size + 1) / 2.0
    rb = rankdata(b) - (b.size + 1) / 2.0
    den = np.sqrt(np.dot(ra, ra) * np.dot(rb, rb))
    if den == 0:
        return None
    return float(np.clip(np.dot(ra, rb) / den, -1.0, 1.0))


def _descending(s: np.ndarray) -> np.ndarray:
    # ties keep input order
    return np.argsort(-s, kind="stable")


@dataclass(frozen=True)
class BucketReport:
    """Mean true loss per score bucket, highest scores first.

    Bucket ``i`` spans ``lower[i]``..``upper[i]`` percent of the ranking.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    counts: tuple[int, ...]
    mean_loss: tuple[float, ...]

    CSV_HEADER = ("bucket", "from_pct", "to_pct", "count", "mean_loss")

    def rows(self):
        for i, row in enumerate(zip(self.lower, self.upper, self.counts, self.mean_loss)):
            yield (i, *row)


def bucket_mean_loss(scores, real_losses, num_buckets: int = DEFAULT_NUM_BUCKETS) -> BucketReport:
    """Sort by score (descending), cut into near-equal buckets, average the loss."""
    s, l = _aligned(scores, real_losses)
    if num_buckets < 2:
        raise ArgumentError("need at least two buckets")
    if num_buckets > s.size:
        raise ArgumentError(f"{num_buckets} buckets for {s.size} samples")
    parts = np.array_split(_descending(s), num_buckets)
    n = s.size
    lower, upper, counts, means = [], [], [], []
    start = 0
    for p in parts:
        lower.append(100.0 * start / n)
        start += len(p)
        upper.append(100.0 * start / n)
        counts.append(len(p))
        means.append(float(l[p].mean()))
    return BucketReport(tuple(lower), tuple(upper), tuple(counts), tuple(means))


@dataclass(frozen=True)
class CaptureCurve:
    sampling_fractions: tuple[float, ...]
    capture: tuple[float, ...]
    top_loss_fraction: float

    CSV_HEADER = ("sampling_fraction", "capture", "top_loss_fraction")

    def rows(self):
        for p, c in zip(self.sampling_fractions, self.capture):
            yield (p, c, self.top_loss_fraction)

    def at(self, fraction: float) -> float:
        return self.capture[self.sampling_fractions.index(fraction)]


def _top_count(fraction: float, n: int) -> int:
    return min(n, max(1, int(round(fraction * n))))


def capture_curve(scores, real_losses, top_loss_fraction: float = DEFAULT_TOP_LOSS_FRACTION,
                  sampling_fractions=DEFAULT_SAMPLING_FRACTIONS) -> CaptureCurve:
    """Share of the top-``q`` highest-loss samples found in the top-``p`` by score.

    For every sampling fraction ``p``, returns
    ``|top_p(score) & top_q(loss)| / |top_q(loss)|``.
    """
    s, l = _aligned(scores, real_losses)
    fractions = tuple(float(p) for p in sampling_fractions)
    for f in (top_loss_fraction, *fractions):
        if not 0.0 < f <= 1.0:
            raise ArgumentError(f"fractions must lie in (0, 1], got {f}")
    n = s.size
    m = _top_count(top_loss_fraction, n)
    in_top = np.zeros(n, dtype=bool)
    in_top[_descending(l)[:m]] = True
    hits = np.cumsum(in_top[_descending(s)])
    capture = tuple(float(hits[_top_count(p, n) - 1] / m) for p in fractions)
    return CaptureCurve(fractions, capture, float(top_loss_fraction))
