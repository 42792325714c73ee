"""Shared data model: datasets, pool partitions, and prediction sample sets.

All entropies are in nats.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

EPS = 1e-12
_SUM_TOL = 1e-9


@dataclass(frozen=True)
class CategoricalDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a nonempty 1-d vector")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(p.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"probabilities sum to {p.sum():.12g}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def num_classes(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with dense integer labels in ``[0, num_classes)``."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    label_names: tuple = ()
    feature_names: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError(f"features must be an N x d matrix with N, d >= 1, got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain non-finite entries")
        if y.shape != (X.shape[0],):
            raise ValueError("labels must have one entry per feature row")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise ValueError("labels must be integer class ids")
        y = y.astype(np.int64)
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "label_names", tuple(self.label_names))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def ids(self) -> np.ndarray:
        return np.arange(len(self))

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class PoolState:
    """Partition of dataset ids into labeled, unlabeled and test sets.

    ``labeled`` is kept in acquisition order and only ever appended to.
    """

    labeled: list = field(default_factory=list)
    unlabeled: set = field(default_factory=set)
    test: set = field(default_factory=set)
    round: int = 0

    @property
    def labeled_ids(self) -> list[int]:
        return [i for i, _ in self.labeled]

    @property
    def labeled_classes(self) -> list[int]:
        return [c for _, c in self.labeled]

    def sorted_unlabeled(self) -> np.ndarray:
        return np.array(sorted(self.unlabeled), dtype=np.int64)

    def add_labels(self, ids: Iterable[int], classes: Iterable[int]) -> None:
        ids = [int(i) for i in ids]
        classes = [int(c) for c in classes]
        if len(ids) != len(classes):
            raise ValueError("ids and classes differ in length")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate ids in labeling request")
        missing = [i for i in ids if i not in self.unlabeled]
        if missing:
            raise ValueError(f"ids not in the unlabeled pool: {missing}")
        for i, c in zip(ids, classes):
            self.unlabeled.remove(i)
            self.labeled.append((i, c))

    def check(self, dataset: Dataset) -> None:
        """Raise ``AssertionError`` if the partition invariants are broken."""
        lab = self.labeled_ids
        lab_set = set(lab)
        assert len(lab_set) == len(lab), "labeled ids repeat"
        assert not (lab_set & self.unlabeled), "labeled and unlabeled overlap"
        assert not (lab_set & self.test), "labeled and test overlap"
        assert not (self.unlabeled & self.test), "unlabeled and test overlap"
        union = lab_set | self.unlabeled | self.test
        assert union == set(range(len(dataset))), "partition does not cover the dataset"
        for i, c in self.labeled:
            assert dataset.labels[i] == c, f"label for id {i} disagrees with ground truth"

    def copy(self) -> "PoolState":
        return PoolState(list(self.labeled), set(self.unlabeled), set(self.test), self.round)


@dataclass(frozen=True)
class ProbabilitySampleSet:
    """``S x M x C`` tensor of per-pass categorical predictions."""

    samples: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.samples, dtype=float)
        if P.ndim != 3 or P.shape[0] < 1:
            raise ValueError(f"samples must be S x M x C with S >= 1, got shape {P.shape}")
        if np.any(P < 0) or np.any(P > 1):
            raise ValueError("sample probabilities must lie in [0, 1]")
        if P.size and np.max(np.abs(P.sum(axis=-1) - 1.0)) > _SUM_TOL:
            raise ValueError("each sample slice must sum to 1")
        P.setflags(write=False)
        object.__setattr__(self, "samples", P)

    @property
    def num_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def num_points(self) -> int:
        return self.samples.shape[1]

    @property
    def num_classes(self) -> int:
        return self.samples.shape[2]

    def subset(self, columns: Sequence[int]) -> "ProbabilitySampleSet":
        return ProbabilitySampleSet(self.samples[:, np.asarray(columns, dtype=np.int64), :])


@dataclass(frozen=True)
class LabelVectorSet:
    """``S x N`` matrix of hard class ids, one row per sampled label vector."""

    vectors: np.ndarray
    num_classes: int | None = None

    def __post_init__(self):
        V = np.asarray(self.vectors)
        if V.ndim != 2 or V.shape[0] < 1 or V.shape[1] < 1:
            raise ValueError(f"vectors must be S x N with S, N >= 1, got shape {V.shape}")
        V = V.astype(np.int64)
        if V.min() < 0:
            raise ValueError("class ids must be nonnegative")
        if self.num_classes is not None and V.max() >= self.num_classes:
            raise ValueError(f"class ids must be < {self.num_classes}")
        V.setflags(write=False)
        object.__setattr__(self, "vectors", V)

    @property
    def num_samples(self) -> int:
        return self.vectors.shape[0]

    @property
    def vector_length(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.num_samples


def as_sample_array(sample_set) -> np.ndarray:
    if isinstance(sample_set, ProbabilitySampleSet):
        return sample_set.samples
    return ProbabilitySampleSet(sample_set).samples


def empirical_class_distribution(labels, num_classes: int) -> CategoricalDistribution:
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if labels.size == 0:
        raise ValueError("empty label set")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"class ids must lie in [0, {num_classes})")
    counts = np.bincount(labels, minlength=num_classes)
    return CategoricalDistribution(counts / labels.size)


def shannon_entropy(dist) -> float | np.ndarray:
    """Shannon entropy in nats along the last axis, with ``0 ln 0 = 0``.

    Accepts a :class:`CategoricalDistribution` or an array of probability
    vectors; returns a float for a single vector and an array otherwise.
    """
    p = dist.probs if isinstance(dist, CategoricalDistribution) else np.asarray(dist, dtype=float)
    h = -np.sum(p * np.log(np.clip(p, EPS, 1.0)), axis=-1)
    h = np.maximum(h, 0.0)
    return float(h) if np.ndim(h) == 0 else h


def predictive_mean(sample_set) -> np.ndarray:
    """Per-point mean over the MC passes, shape ``M x C``."""
    P = as_sample_array(sample_set)
    if P.shape[0] == 1:
        return P[0].copy()
    # exact where the passes agree, so a deterministic model round-trips bit for bit
    agree = np.all(P == P[0], axis=0)
    return np.where(agree, P[0], P.mean(axis=0))
