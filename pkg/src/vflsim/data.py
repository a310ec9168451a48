"""Synthetic blobs, CSV ingestion, normalization and vertical feature splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ParseError, SchemaError, ValidationError


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    num_classes: int
    feature_names: list[str] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise ValidationError(f"X must be 2-D, got shape {self.X.shape}")
        n, d = self.X.shape
        if n < 1:
            raise ValidationError("dataset has no rows")
        if self.y.shape != (n,):
            raise ValidationError(f"y has shape {self.y.shape}, expected ({n},)")
        if np.any(self.y < 0) or np.any(self.y >= self.num_classes):
            raise ValidationError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.X)):
            raise ValidationError("X contains NaN or Inf")
        if not self.feature_names:
            self.feature_names = [f"x{j}" for j in range(d)]
        if len(self.feature_names) != d:
            raise ValidationError(f"{len(self.feature_names)} feature names for {d} columns")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.num_classes,
                       list(self.feature_names), list(self.class_names))


@dataclass
class SyntheticSpec:
    n: int = 2000
    d: int = 16
    num_classes: int = 4
    cluster_separation: float = 4.0
    noise_std: float = 1.0
    seed: int = 0


def _simplex_vertices(num_classes: int) -> np.ndarray:
    """Centered regular simplex with unit edge length, as C points in C-1 dims."""
    if num_classes == 1:
        return np.zeros((1, 1))
    e = np.eye(num_classes) - 1.0 / num_classes
    # orthonormal basis of the (C-1)-dim subspace the centered vertices span
    q, _ = np.linalg.qr(e[:, :-1])
    coords = e @ q
    return coords / np.sqrt(2.0)


def gen_gaussian_blobs(spec: SyntheticSpec) -> Dataset:
    if spec.num_classes < 1 or spec.n < 1 or spec.d < 1:
        raise ConfigError(f"n, d and num_classes must be positive: {spec}")
    if spec.num_classes > spec.n:
        raise ConfigError(f"{spec.num_classes} classes cannot be populated by {spec.n} samples")
    if spec.d < spec.num_classes - 1:
        raise ConfigError(f"d={spec.d} cannot hold a {spec.num_classes}-vertex simplex (need d >= C-1)")
    if spec.cluster_separation <= 0 or spec.noise_std < 0:
        raise ConfigError("cluster_separation must be > 0 and noise_std >= 0")

    rng = np.random.default_rng(spec.seed)
    verts = _simplex_vertices(spec.num_classes) * spec.cluster_separation
    centers = np.zeros((spec.num_classes, spec.d))
    centers[:, : verts.shape[1]] = verts
    # random rotation spreads class information over every column
    rot, _ = np.linalg.qr(rng.standard_normal((spec.d, spec.d)))
    centers = centers @ rot.T

    y = np.arange(spec.n) % spec.num_classes
    y = y[rng.permutation(spec.n)]
    X = centers[y] + spec.noise_std * rng.standard_normal((spec.n, spec.d))
    return Dataset(X, y, spec.num_classes)


def load_csv(path, label_column: str | int, has_header: bool = True) -> Dataset:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if has_header:
        if not rows:
            raise SchemaError(f"{path}: empty file, expected a header row")
        header, rows = rows[0], rows[1:]
    else:
        header = [str(j) for j in range(len(rows[0]))] if rows else []
    if not rows:
        raise ValidationError(f"{path}: no data rows")

    if isinstance(label_column, int) and not (has_header and str(label_column) in header):
        label_idx = label_column
        if not 0 <= label_idx < len(header):
            raise SchemaError(f"{path}: label column index {label_idx} out of range")
    else:
        if str(label_column) not in header:
            raise SchemaError(f"{path}: label column {label_column!r} not in header {header}")
        label_idx = header.index(str(label_column))

    feat_cols = [j for j in range(len(header)) if j != label_idx]
    X = np.empty((len(rows), len(feat_cols)))
    codes: dict[str, int] = {}
    y = np.empty(len(rows), dtype=np.int64)
    for i, row in enumerate(rows):
        line = i + 1 + int(has_header)
        if len(row) != len(header):
            raise ParseError(f"{path}: row {line} has {len(row)} cells, expected {len(header)}")
        for out_j, j in enumerate(feat_cols):
            try:
                X[i, out_j] = float(row[j])
            except ValueError:
                raise ParseError(
                    f"{path}: non-numeric value {row[j]!r} at row {line}, column {j} ({header[j]})"
                ) from None
        label = row[label_idx].strip()
        y[i] = codes.setdefault(label, len(codes))
    if not np.all(np.isfinite(X)):
        raise ParseError(f"{path}: NaN or Inf feature values")
    return Dataset(X, y, len(codes), [header[j] for j in feat_cols], list(codes))


def save_csv(dataset: Dataset, path, label_column: str = "label") -> None:
    path = Path(path)
    names = dataset.class_names or [str(c) for c in range(dataset.num_classes)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(dataset.feature_names) + [label_column])
        for row, label in zip(dataset.X, dataset.y):
            w.writerow([repr(float(v)) for v in row] + [names[label]])


def vertical_split(d: int, num_parties: int, explicit: Sequence[Sequence[int]] | None = None) -> list[list[int]]:
    """Column indices held by each party. Remainder columns go to the front parties."""
    if explicit is not None:
        cols = [list(map(int, c)) for c in explicit]
        flat = [j for c in cols for j in c]
        if any(len(c) == 0 for c in cols):
            raise ValidationError("every party must hold at least one column")
        if len(set(flat)) != len(flat):
            raise ValidationError("explicit split has overlapping columns")
        if sorted(flat) != list(range(d)):
            missing = sorted(set(range(d)) - set(flat))
            raise ValidationError(f"explicit split does not cover 0..{d - 1}; missing {missing}")
        return cols
    if not 1 <= num_parties <= d:
        raise ConfigError(f"cannot split {d} columns over {num_parties} parties")
    base, extra = divmod(d, num_parties)
    out, start = [], 0
    for k in range(num_parties):
        width = base + (1 if k < extra else 0)
        out.append(list(range(start, start + width)))
        start += width
    return out


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray


def fit_normalizer(dataset: Dataset) -> NormStats:
    return NormStats(dataset.X.mean(axis=0), dataset.X.std(axis=0))


def normalize(dataset: Dataset, stats: NormStats | None = None) -> Dataset:
    """Per-column z-score; zero-variance columns become 0.

    Pass the train-set ``stats`` when normalizing a test split.
    """
    if stats is None:
        if dataset.n < 2:
            raise ValidationError("normalize needs at least 2 rows")
        stats = fit_normalizer(dataset)
    scale = np.where(stats.std > 1e-12, stats.std, 1.0)
    X = (dataset.X - stats.mean) / scale
    X[:, stats.std <= 1e-12] = 0.0
    return Dataset(X, dataset.y.copy(), dataset.num_classes,
                   list(dataset.feature_names), list(dataset.class_names))


def train_test_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified split.

    The test side gets round(frac * n) rows, shared across classes by largest
    remainder (ties to the lower class index); every class keeps at least one
    row on each side.
    """
    if not 0 < test_fraction < 1:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    classes = [np.flatnonzero(dataset.y == c) for c in range(dataset.num_classes)]
    classes = [m for m in classes if len(m)]
    for m in classes:
        if len(m) < 2:
            raise ValidationError(f"class {int(dataset.y[m[0]])} has 1 sample; stratification needs >= 2")
    exact = np.array([test_fraction * len(m) for m in classes])
    quota = np.floor(exact).astype(np.int64)
    extra = int(math.floor(test_fraction * dataset.n + 0.5)) - int(quota.sum())
    for j in sorted(range(len(classes)), key=lambda j: (-(exact[j] - quota[j]), j))[:max(extra, 0)]:
        quota[j] += 1
    train_idx, test_idx = [], []
    for members, q in zip(classes, quota):
        members = members[rng.permutation(len(members))]
        q = min(max(int(q), 1), len(members) - 1)
        test_idx.append(members[:q])
        train_idx.append(members[q:])
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))
    return dataset.subset(tr), dataset.subset(te)
