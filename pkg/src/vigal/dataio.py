"""Synthetic datasets, CSV ingestion, and seeded train/test splitting."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from vigal.core import Dataset, PoolState


class DataError(ValueError):
    pass


@dataclass
class DatasetSpec:
    """What to generate or load.

    ``kind`` selects the generator: ``"blobs"`` (Gaussian clusters, one per
    class), ``"rings"`` (noisy concentric circles) or ``"csv"``.
    ``points_per_class`` may be one int or a per-class list for imbalanced
    blobs.
    """

    kind: str = "blobs"
    # blobs
    num_classes: int = 5
    points_per_class: object = 100
    dim: int = 2
    center_spread: float = 5.0
    within_std: float = 1.0
    # rings
    num_rings: int = 2
    points_per_ring: int = 100
    noise_std: float = 0.1
    # csv
    path: str | None = None
    label_column: str = "label"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("blobs", "rings", "csv"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown dataset keys: {sorted(unknown)}")
        return cls(**d)


def scale_counts(counts: Sequence[int], factor) -> list[int]:
    """Scale class counts by ``factor``, rounding half up.

    ``factor`` may be a float (taken at its decimal repr) or a Fraction.
    """
    f = Fraction(str(factor)) if isinstance(factor, float) else Fraction(factor)
    out = []
    for c in counts:
        exact = Fraction(int(c)) * f
        q = Decimal(exact.numerator) / Decimal(exact.denominator)
        out.append(int(q.quantize(Decimal(1), rounding=ROUND_HALF_UP)))
    return out


def make_blobs(num_classes: int, points_per_class, dim: int, center_spread: float,
               within_std: float, seed: int) -> Dataset:
    counts = ([int(points_per_class)] * num_classes if np.isscalar(points_per_class)
              else [int(c) for c in points_per_class])
    if len(counts) != num_classes:
        raise ValueError("points_per_class must have one entry per class")
    if any(c < 0 for c in counts) or sum(counts) < 1:
        raise ValueError("class counts must be nonnegative with a positive total")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, center_spread, size=(num_classes, dim))
    X = np.concatenate([rng.normal(centers[c], within_std, size=(n, dim)) for c, n in enumerate(counts)])
    y = np.repeat(np.arange(num_classes), counts)
    perm = rng.permutation(len(y))
    return Dataset(X[perm], y[perm], num_classes)


def make_rings(num_rings: int, points_per_ring: int, noise_std: float, seed: int) -> Dataset:
    if num_rings < 2:
        raise ValueError("need at least two rings")
    rng = np.random.default_rng(seed)
    X, y = [], []
    for r in range(num_rings):
        angle = rng.uniform(0, 2 * math.pi, points_per_ring)
        radius = (r + 1) + rng.normal(0, noise_std, points_per_ring)
        X.append(np.column_stack([radius * np.cos(angle), radius * np.sin(angle)]))
        y.append(np.full(points_per_ring, r))
    X, y = np.concatenate(X), np.concatenate(y)
    perm = rng.permutation(len(y))
    return Dataset(X[perm], y[perm], num_rings)


def generate(spec: DatasetSpec) -> Dataset:
    if spec.kind == "blobs":
        return make_blobs(spec.num_classes, spec.points_per_class, spec.dim,
                          spec.center_spread, spec.within_std, spec.seed)
    if spec.kind == "rings":
        return make_rings(spec.num_rings, spec.points_per_ring, spec.noise_std, spec.seed)
    if spec.path is None:
        raise DataError("csv dataset needs a path")
    return load_csv(spec.path, spec.label_column)


def load_csv(path, label_column: str = "label") -> Dataset:
    """Read a comma-delimited file with a header row.

    Every column other than ``label_column`` is a numeric feature. Labels are
    re-encoded densely in order of first appearance, except that a label
    column already holding exactly the integers ``0..C-1`` is kept as is.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if label_column not in header:
        raise DataError(f"{path}: missing label column {label_column!r} (columns: {header})")
    if len(rows) < 2:
        raise DataError(f"{path}: no data rows")
    li = header.index(label_column)
    feat_cols = [j for j in range(len(header)) if j != li]
    if not feat_cols:
        raise DataError(f"{path}: no feature columns")
    feats = np.empty((len(rows) - 1, len(feat_cols)))
    raw_labels = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
        for k, j in enumerate(feat_cols):
            try:
                feats[r - 2, k] = float(row[j])
            except ValueError:
                raise DataError(
                    f"{path}: row {r}, column {header[j]!r}: non-numeric value {row[j]!r}") from None
            if not math.isfinite(feats[r - 2, k]):
                raise DataError(f"{path}: row {r}, column {header[j]!r}: non-finite value")
        raw_labels.append(row[li].strip())

    distinct = list(dict.fromkeys(raw_labels))
    try:
        as_int = sorted(int(v) for v in distinct)
    except ValueError:
        as_int = None
    if as_int is not None and as_int == list(range(len(distinct))):
        labels = np.array([int(v) for v in raw_labels])
        names = tuple(str(i) for i in range(len(distinct)))
    else:
        code = {v: i for i, v in enumerate(distinct)}
        labels = np.array([code[v] for v in raw_labels])
        names = tuple(distinct)
    return Dataset(feats, labels, max(len(distinct), 2), label_names=names,
                   feature_names=tuple(header[j] for j in feat_cols))


def save_csv(dataset: Dataset, path, label_column: str = "label") -> None:
    names = dataset.feature_names or tuple(f"x{j}" for j in range(dataset.dim))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*names, label_column])
        for x, c in zip(dataset.features, dataset.labels):
            w.writerow([repr(float(v)) for v in x] + [int(c)])


def split(dataset: Dataset, test_fraction: float, seed) -> PoolState:
    """Seeded shuffle; the first floor(N * test_fraction) ids become the test set."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    n = len(dataset)
    n_test = math.floor(n * test_fraction)
    if n_test < 1 or n_test >= n:
        raise ValueError(f"degenerate split: {n_test} test of {n} points")
    perm = np.random.default_rng(seed).permutation(n)
    return PoolState(labeled=[], unlabeled={int(i) for i in perm[n_test:]},
                     test={int(i) for i in perm[:n_test]}, round=0)
