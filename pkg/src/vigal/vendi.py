"""Vendi score, Vendi entropy and Vendi information gain.

The Vendi entropy of a sample set is the order-q Renyi entropy of the
normalized eigenvalues of its kernel matrix; the Vendi score is its
exponential, read as the effective number of distinct items.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from vigal.core import LabelVectorSet

PSD_TOL = 1e-8
_SYM_TOL = 1e-9

HAMMING_LABEL = "hamming_label"
COSINE_FEATURE = "cosine_feature"


@dataclass(frozen=True)
class KernelSpec:
    kind: str = HAMMING_LABEL

    def __post_init__(self):
        if self.kind not in (HAMMING_LABEL, COSINE_FEATURE):
            raise ValueError(f"unknown kernel {self.kind!r}")

    def __call__(self, a, b) -> float:
        if self.kind == HAMMING_LABEL:
            return hamming_similarity(a, b)
        return cosine_similarity(a, b)


def parse_order(q) -> float:
    """Accept a real ``q >= 0`` or the strings ``"inf"``/``"infinity"``."""
    if isinstance(q, str):
        if q.strip().lower() in ("inf", "infinity", "+inf"):
            return math.inf
        q = float(q)
    q = float(q)
    if math.isnan(q) or q < 0:
        raise ValueError(f"order q must be >= 0, got {q}")
    return q


def hamming_similarity(v1, v2) -> float:
    a = np.asarray(v1).ravel()
    b = np.asarray(v2).ravel()
    if a.size != b.size:
        raise ValueError(f"label vectors differ in length ({a.size} vs {b.size})")
    if a.size == 0:
        raise ValueError("label vectors must be nonempty")
    return 1.0 - np.count_nonzero(a != b) / a.size


def cosine_similarity(e1, e2) -> float:
    a = np.asarray(e1, dtype=float).ravel()
    b = np.asarray(e2, dtype=float).ravel()
    if a.size != b.size:
        raise ValueError(f"embeddings differ in dimension ({a.size} vs {b.size})")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("degenerate embedding")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _hamming_gram(V: np.ndarray) -> np.ndarray:
    # fraction of agreeing positions for every pair of rows
    V = np.asarray(V)
    if V.ndim != 2:
        raise ValueError("label vectors must be stacked as an S x N matrix")
    n_items, length = V.shape
    K = np.empty((n_items, n_items))
    for i in range(n_items):
        K[i] = np.count_nonzero(V == V[i], axis=1) / length
    return K


def _cosine_gram(E: np.ndarray) -> np.ndarray:
    E = np.asarray(E, dtype=float)
    norms = np.linalg.norm(E, axis=1)
    if np.any(norms == 0):
        raise ValueError("degenerate embedding")
    U = E / norms[:, None]
    K = np.clip(U @ U.T, -1.0, 1.0)
    K = (K + K.T) / 2
    np.fill_diagonal(K, 1.0)
    return K


def kernel_matrix(items, kernel: KernelSpec | str = HAMMING_LABEL) -> np.ndarray:
    """Pairwise kernel matrix over ``items`` (a sequence or a stacked array)."""
    if isinstance(kernel, str):
        kernel = KernelSpec(kernel)
    if isinstance(items, LabelVectorSet):
        items = items.vectors
    if isinstance(items, np.ndarray) and items.ndim == 2:
        if items.shape[0] < 1:
            raise ValueError("need at least one item")
        if kernel.kind == HAMMING_LABEL:
            return _hamming_gram(items)
        return _cosine_gram(items)
    items = list(items)
    n = len(items)
    if n < 1:
        raise ValueError("need at least one item")
    K = np.empty((n, n))
    for i in range(n):
        K[i, i] = kernel(items[i], items[i])
        for j in range(i + 1, n):
            K[i, j] = K[j, i] = kernel(items[i], items[j])
    return K


def normalized_spectrum(K) -> np.ndarray:
    """Eigenvalues of ``K`` in descending order, rescaled to sum to 1.

    Eigenvalues within ``PSD_TOL`` of zero are treated as exactly zero;
    anything below ``-PSD_TOL`` means the kernel is not PSD.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] < 1:
        raise ValueError("kernel matrix must be square and nonempty")
    if np.max(np.abs(K - K.T)) > _SYM_TOL:
        raise ValueError("kernel matrix is not symmetric")
    if np.max(np.abs(np.diag(K) - 1.0)) > _SYM_TOL:
        raise ValueError("kernel matrix must have unit diagonal")
    try:
        lam = np.linalg.eigvalsh(K)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"eigendecomposition failed: {exc}") from exc
    if lam[0] < -PSD_TOL:
        raise ValueError(f"kernel not PSD (min eigenvalue {lam[0]:.3g})")
    lam = np.where(np.abs(lam) <= PSD_TOL, 0.0, lam)[::-1]
    return lam / lam.sum()


def vendi_entropy(spectrum, q=1.0) -> float:
    """Order-q Renyi entropy (nats) of a normalized spectrum."""
    q = parse_order(q)
    lam = np.asarray(spectrum, dtype=float)
    lam = lam[lam > 0]
    if lam.size <= 1:
        return 0.0
    if q == 1.0:
        h = -np.sum(lam * np.log(lam))
    elif math.isinf(q):
        h = -math.log(lam.max())
    elif q == 0.0:
        h = math.log(lam.size)
    else:
        h = math.log(np.sum(lam**q)) / (1.0 - q)
    return float(min(max(h, 0.0), math.log(lam.size)))


def vendi_entropy_of(items, kernel: KernelSpec | str = HAMMING_LABEL, q=1.0) -> float:
    return vendi_entropy(normalized_spectrum(kernel_matrix(items, kernel)), q)


def vendi_score(items, kernel: KernelSpec | str = HAMMING_LABEL, q=1.0) -> float:
    return math.exp(vendi_entropy_of(items, kernel, q))


@dataclass(frozen=True)
class InfoGain:
    vig: float
    prior_entropy: float
    expected_posterior_entropy: float
    posterior_entropies: tuple = ()


def vendi_info_gain(
    unconditioned: LabelVectorSet,
    conditioned: Sequence[tuple[float, LabelVectorSet]],
    q=1.0,
    prior_entropy: float | None = None,
) -> InfoGain:
    """Prior Vendi entropy minus the weighted mean of conditioned entropies.

    ``prior_entropy`` may be supplied when the caller has already computed it
    (it does not depend on the conditioning variable).
    """
    weights = np.array([w for w, _ in conditioned], dtype=float)
    if weights.size == 0:
        raise ValueError("need at least one conditioned sample set")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must be nonnegative and sum to 1 (sum = {weights.sum():.12g})")
    length = unconditioned.vector_length
    for _, d in conditioned:
        if d.vector_length != length:
            raise ValueError("conditioned sets must share the unconditioned vector length")
    if prior_entropy is None:
        prior_entropy = vendi_entropy_of(unconditioned.vectors, HAMMING_LABEL, q)
    posts = tuple(vendi_entropy_of(d.vectors, HAMMING_LABEL, q) for _, d in conditioned)
    expected = float(np.dot(weights, posts))
    return InfoGain(prior_entropy - expected, prior_entropy, expected, posts)
