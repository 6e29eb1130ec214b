"""Synthetic 2-D datasets, CSV ingestion and feature standardization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, ParseError
from .io import atomic_write_text, format_value


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix with aligned labels.

    ``num_classes`` is 0 for regression targets.
    """

    features: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    name: str = "dataset"
    num_classes: int = 0

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise ArgumentError(f"features must be a 2-D matrix, got shape {X.shape}")
        y = np.array(self.labels)
        if y.shape != (X.shape[0],):
            raise ArgumentError(f"{y.shape[0] if y.ndim else 0} labels for {X.shape[0]} samples")
        if X.shape[0] < 1:
            raise ArgumentError("a dataset needs at least one sample")
        if not np.all(np.isfinite(X)):
            raise ArgumentError("features must be finite")
        if self.num_classes:
            y = y.astype(np.int64)
            if np.any((y < 0) | (y >= self.num_classes)):
                raise ArgumentError(f"class labels outside [0, {self.num_classes})")
        else:
            y = y.astype(np.float64)
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.name, self.num_classes)

    def with_features(self, features) -> "Dataset":
        return Dataset(features, self.labels, self.name, self.num_classes)


def gen_two_moons(n: int, noise: float = 0.1, seed: int = 0) -> Dataset:
    """Two interleaving half circles of radius 1, ``n / 2`` points each.

    Class 0 is the upper arc centred at the origin, class 1 the lower arc
    centred at ``(1, 0.5)``. Angles are evenly spaced on ``[0, pi]`` and
    isotropic Gaussian noise of standard deviation ``noise`` is added. Rows
    are shuffled with the same seed.
    """
    if n < 2 or n % 2:
        raise ArgumentError(f"two moons needs a positive even n, got {n}")
    if noise < 0:
        raise ArgumentError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    half = n // 2
    t = np.linspace(0.0, math.pi, half)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    X = np.vstack([upper, lower])
    y = np.repeat([0, 1], half)
    if noise > 0:
        X = X + rng.normal(scale=noise, size=X.shape)
    order = rng.permutation(n)
    return Dataset(X[order], y[order], "two_moons", 2)


MOON_CENTERS = ((0.0, 0.0), (1.0, 0.5))

BLOB_RADIUS = 3.0


def blob_centers(k: int, radius: float = BLOB_RADIUS) -> np.ndarray:
    """Centres evenly spaced on a circle, the first at angle 0."""
    angles = 2 * math.pi * np.arange(k) / k
    return radius * np.column_stack([np.cos(angles), np.sin(angles)])


def gen_blobs(n: int, k: int, spread: float = 1.0, seed: int = 0, radius: float = BLOB_RADIUS) -> Dataset:
    """``k`` isotropic Gaussian clusters centred on a circle.

    Class ``j`` sits at angle ``2 pi j / k`` on a circle of radius
    ``radius`` (default 3). Class sizes differ by at most one.
    """
    if k < 1:
        raise ArgumentError("need at least one class")
    if k > n:
        raise ArgumentError(f"cannot make {k} classes from {n} samples")
    if spread < 0:
        raise ArgumentError("spread must be non-negative")
    rng = np.random.default_rng(seed)
    y = rng.permutation(np.arange(n) % k)
    X = blob_centers(k, radius)[y]
    if spread > 0:
        X = X + rng.normal(scale=spread, size=X.shape)
    return Dataset(X, y, "blobs", k)


def load_csv(path, label_column: int = -1, delimiter: str = ",", header: bool = True,
             task: str = "classification") -> Dataset:
    """Read a numeric table; every column except ``label_column`` is a feature.

    Raises:
        ParseError: ragged or non-numeric rows, naming the 1-based line.
        FileNotFoundError: the file does not exist.
    """
    if task not in ("classification", "regression"):
        raise ArgumentError(f"unknown task {task!r}")
    path = Path(path)
    rows = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                width = len(row)
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            if len(row) != width:
                raise ParseError(f"expected {width} fields, found {len(row)}", line=lineno)
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise ParseError(f"non-numeric field ({exc})", line=lineno) from None
    if not rows:
        raise ParseError("no data rows")
    table = np.array(rows)
    col = label_column % table.shape[1]
    if table.shape[1] < 2:
        raise ParseError("need at least one feature column and one label column")
    labels = table[:, col]
    features = np.delete(table, col, axis=1)
    if task == "regression":
        return Dataset(features, labels, path.stem, 0)
    if np.any(labels != np.round(labels)) or np.any(labels < 0):
        raise ParseError("classification labels must be non-negative integers")
    labels = labels.astype(np.int64)
    return Dataset(features, labels, path.stem, int(labels.max()) + 1)


def save_csv(data: Dataset, path, delimiter: str = ",") -> None:
    """Write features then the label as the last column, with a header."""
    names = [f"x{i + 1}" for i in range(data.d)] + ["y"]
    lines = [delimiter.join(names)]
    for row, label in zip(data.features, data.labels):
        lines.append(delimiter.join([format_value(float(v)) for v in row] + [format_value(label)]))
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        std = X.std(axis=0)
        # constant columns pass through unscaled
        std = np.where(std > 0, std, 1.0)
        return cls(X.mean(axis=0), std)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def inverse(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) * self.std + self.mean
