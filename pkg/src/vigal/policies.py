"""Acquisition policies: random, max entropy, mean-std, BALD, BatchBALD and VIG.

Uncertainty baselines score every unlabeled point from one shared set of MC
dropout passes. VIG fantasizes each plausible label of a candidate, warm
retrains a clone of the model, and measures how much the Vendi entropy of
label vectors sampled over the pool drops.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from vigal.classifier import DropoutMLP, TrainingDiverged
from vigal.core import (
    EPS,
    Dataset,
    LabelVectorSet,
    PoolState,
    as_sample_array,
    predictive_mean,
    shannon_entropy,
)
from vigal.vendi import HAMMING_LABEL, parse_order, vendi_entropy_of, vendi_info_gain

log = logging.getLogger(__name__)

POLICIES = ("random", "max_entropy", "mean_std", "bald", "batchbald", "vig")

# scores this close to zero are information-free; snapping makes ties exact
_ZERO_SNAP = 1e-12


class PoolExhausted(ValueError):
    pass


@dataclass
class VigConfig:
    mc_samples_pool: int = 16
    candidate_subsample: int = 100
    order: float = 1.0
    class_weight_floor: float = 0.01
    label_sampling: str = "argmax"
    pool_scope: str = "unlabeled"

    def __post_init__(self):
        self.order = parse_order(self.order)
        if self.mc_samples_pool < 1 or self.candidate_subsample < 1:
            raise ValueError("VIG sample counts must be at least 1")
        if not 0 <= self.class_weight_floor < 1:
            raise ValueError("class_weight_floor must lie in [0, 1)")
        if self.label_sampling not in ("argmax", "categorical"):
            raise ValueError(f"unknown label_sampling {self.label_sampling!r}")
        if self.pool_scope not in ("unlabeled", "all"):
            raise ValueError(f"unknown pool_scope {self.pool_scope!r}")


@dataclass
class BatchBaldConfig:
    config_enum_limit: int = 10000
    mc_configs: int = 2000

    def __post_init__(self):
        if self.config_enum_limit < 1 or self.mc_configs < 1:
            raise ValueError("BatchBALD limits must be positive")


@dataclass
class PolicyConfig:
    name: str = "random"
    mc_samples_score: int = 32
    vig: VigConfig = field(default_factory=VigConfig)
    batchbald: BatchBaldConfig = field(default_factory=BatchBaldConfig)
    seed: int = 0

    def __post_init__(self):
        if self.name not in POLICIES:
            raise ValueError(f"unknown policy {self.name!r}; choose from {POLICIES}")
        if isinstance(self.vig, dict):
            self.vig = VigConfig(**self.vig)
        if isinstance(self.batchbald, dict):
            self.batchbald = BatchBaldConfig(**self.batchbald)
        if self.mc_samples_score < 1:
            raise ValueError("mc_samples_score must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        _reject_unknown(cls, d, "policy")
        d = dict(d)
        if "vig" in d:
            _reject_unknown(VigConfig, d["vig"], "policy.vig")
        if "batchbald" in d:
            _reject_unknown(BatchBaldConfig, d["batchbald"], "policy.batchbald")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(d["vig"]["order"]):
            d["vig"]["order"] = "inf"
        return d


def _reject_unknown(cls, d: dict, where: str) -> None:
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")


@dataclass
class ScoredCandidate:
    id: int
    score: float
    diagnostics: dict = field(default_factory=dict)


@dataclass
class Selection:
    ids: list
    scores: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


# -- per-point uncertainty scores ----------------------------------------

def _agreeing_points(P: np.ndarray) -> np.ndarray:
    """Mask of points whose S passes are all identical."""
    return np.all(P == P[0], axis=(0, 2))


def score_max_entropy(sample_set) -> np.ndarray:
    return shannon_entropy(predictive_mean(sample_set))


def score_mean_std(sample_set) -> np.ndarray:
    P = as_sample_array(sample_set)
    var = np.maximum(np.mean(P**2, axis=0) - np.mean(P, axis=0) ** 2, 0.0)
    scores = np.sqrt(var).mean(axis=-1)
    scores[_agreeing_points(P)] = 0.0
    return scores


def score_bald(sample_set) -> np.ndarray:
    P = as_sample_array(sample_set)
    expected = shannon_entropy(P).mean(axis=0)
    scores = shannon_entropy(predictive_mean(P)) - expected
    scores = np.where(scores < _ZERO_SNAP, 0.0, scores)
    scores[_agreeing_points(P)] = 0.0
    return scores


def rank(scores, rng: np.random.Generator) -> np.ndarray:
    """Positions sorted by descending score, exact ties in seeded random order."""
    scores = np.asarray(scores, dtype=float)
    priority = rng.permutation(scores.size)
    return np.lexsort((priority, -scores))


# -- BatchBALD -------------------------------------------------------------

def _entropy_terms(p: np.ndarray) -> np.ndarray:
    return -p * np.log(np.clip(p, EPS, 1.0))


def select_batchbald(sample_set, batch: int, config: BatchBaldConfig | None = None,
                     rng: np.random.Generator | None = None) -> list[int]:
    """Greedy BatchBALD; returns positions into the sample set's points.

    The joint predictive entropy of the growing batch is computed exactly over
    all class configurations while that is within ``config_enum_limit``, and
    estimated from ``mc_configs`` sampled configurations beyond it.
    """
    config = config or BatchBaldConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    P = as_sample_array(sample_set)
    S, M, C = P.shape
    if batch > M:
        raise PoolExhausted("pool exhausted")
    priority = rng.permutation(M)
    cond = shannon_entropy(P).mean(axis=0)          # E_s H(p_s(x)) per point
    flat = P.reshape(S, M * C)

    first = score_bald(P)
    chosen = [int(np.lexsort((priority, -first))[0])]
    cond_sum = cond[chosen[0]]
    # exact regime state: per-sample probability of every configuration
    joint = P[:, chosen[0], :].copy()               # S x K
    draws = None                                    # MC regime state
    chunk = max(1, 2_000_000 // max(1, joint.shape[1] * C))

    while len(chosen) < batch:
        remaining = np.setdiff1d(np.arange(M), chosen)
        scores = np.full(M, -np.inf)
        if draws is None and joint.shape[1] * C > config.config_enum_limit:
            draws = _sample_configs(P, chosen, config.mc_configs, rng)
        if draws is None:
            K = joint.shape[1]
            chunk = max(1, 2_000_000 // (K * C))
            for lo in range(0, remaining.size, chunk):
                cols = remaining[lo:lo + chunk]
                block = flat.reshape(S, M, C)[:, cols, :].reshape(S, -1)
                jp = (joint.T @ block / S).reshape(K, cols.size, C)
                scores[cols] = _entropy_terms(jp).sum(axis=(0, 2))
        else:
            s_idx, prev = draws                     # D draws; prev is D x S
            marginal = prev.mean(axis=1)            # D
            for lo in range(0, remaining.size, 2048):
                cols = remaining[lo:lo + 2048]
                block = flat.reshape(S, M, C)[:, cols, :].reshape(S, -1)
                jp = (prev @ block / S).reshape(-1, cols.size, C)
                ratio = jp / marginal[:, None, None]
                scores[cols] = (ratio * -np.log(np.clip(jp, EPS, 1.0))).sum(axis=2).mean(axis=0)
        scores[remaining] -= cond_sum + cond[remaining]
        scores[remaining] = np.where(np.abs(scores[remaining]) < _ZERO_SNAP, 0.0, scores[remaining])
        best = int(np.lexsort((priority, -scores))[0])
        chosen.append(best)
        cond_sum += cond[best]
        if draws is None:
            joint = (joint[:, :, None] * P[:, best, None, :]).reshape(S, -1)
        else:
            draws = _extend_configs(P, best, draws, rng)
    return chosen


def _sample_configs(P, chosen, n_draws, rng):
    S = P.shape[0]
    s_idx = rng.integers(0, S, size=n_draws)
    prev = np.ones((n_draws, S))
    state = (s_idx, prev)
    for m in chosen:
        state = _extend_configs(P, m, state, rng)
    return state


def _extend_configs(P, point, state, rng):
    # draw this point's class from the sample each configuration was seeded with
    s_idx, prev = state
    probs = P[s_idx, point, :]
    u = rng.random((len(s_idx), 1))
    y = np.minimum((u > np.cumsum(probs, axis=1)).sum(axis=1), P.shape[2] - 1)
    return s_idx, prev * P[:, point, y].T


# -- VIG -------------------------------------------------------------------

def class_weights(probs, floor: float) -> np.ndarray:
    """Drop classes below ``floor`` and renormalize the rest."""
    p = np.asarray(probs, dtype=float)
    w = np.where(p >= floor, p, 0.0)
    if w.sum() <= 0:
        w = np.zeros_like(p)
        w[int(np.argmax(p))] = 1.0
    return w / w.sum()


def vig_from_samples(
    prior: LabelVectorSet,
    probs,
    posterior: Callable[[int], LabelVectorSet | None],
    order=1.0,
    floor: float = 0.01,
    prior_entropy: float | None = None,
) -> tuple[float, dict]:
    """VIG of one candidate given its label distribution and a fantasy sampler.

    ``posterior(c)`` returns the label vectors sampled after conditioning on
    the candidate having class ``c``, or ``None`` if that fantasy failed, in
    which case the candidate scores ``-inf``.
    """
    w = class_weights(probs, floor)
    classes = [int(c) for c in np.flatnonzero(w)]
    conditioned = []
    for c in classes:
        sampled = posterior(c)
        if sampled is None:
            return -math.inf, {"failed_class": c}
        conditioned.append((float(w[c]), sampled))
    total = sum(wc for wc, _ in conditioned)
    conditioned = [(wc / total, d) for wc, d in conditioned]
    gain = vendi_info_gain(prior, conditioned, order, prior_entropy=prior_entropy)
    diag = {
        "prior_entropy": gain.prior_entropy,
        "expected_posterior_entropy": gain.expected_posterior_entropy,
        "posterior_entropies": {c: h for c, h in zip(classes, gain.posterior_entropies)},
        "class_weights": {c: float(w[c]) for c in classes},
    }
    return gain.vig, diag


def _pool_ids(pool: PoolState, scope: str) -> np.ndarray:
    if scope == "all":
        return np.array(sorted(pool.unlabeled | set(pool.labeled_ids)), dtype=np.int64)
    return pool.sorted_unlabeled()


def _seed(seed, *tag) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), *[int(t) for t in tag]])


def score_vig(candidate: int, model: DropoutMLP, pool: PoolState, dataset: Dataset,
              config: PolicyConfig, *, seed=None, prior: LabelVectorSet | None = None,
              prior_entropy: float | None = None, candidate_probs=None) -> ScoredCandidate:
    """Score one unlabeled candidate by fantasize, warm retrain, and resample.

    ``prior``/``prior_entropy`` and ``candidate_probs`` may be precomputed by
    the caller; they are identical for every candidate in a round.
    """
    candidate = int(candidate)
    if candidate not in pool.unlabeled:
        raise ValueError(f"candidate {candidate} is not in the unlabeled pool")
    vcfg = config.vig
    seed = config.seed if seed is None else seed
    pool_x = dataset.features[_pool_ids(pool, vcfg.pool_scope)]
    pool_seed = _seed(seed, 1)
    if prior is None:
        prior = model.mc_sample_label_vectors(pool_x, vcfg.mc_samples_pool, pool_seed, vcfg.label_sampling)
    if prior_entropy is None:
        prior_entropy = vendi_entropy_of(prior.vectors, HAMMING_LABEL, vcfg.order)
    if candidate_probs is None:
        sampled = model.mc_sample_probs(dataset.features[[candidate]], config.mc_samples_score, _seed(seed, 2))
        candidate_probs = predictive_mean(sampled)[0]

    lab_ids = pool.labeled_ids
    X = np.vstack([dataset.features[lab_ids], dataset.features[[candidate]]])
    base_y = np.asarray(pool.labeled_classes, dtype=np.int64)

    def posterior(c: int):
        fantasy = model.clone()
        try:
            fantasy.train(X, np.append(base_y, c), warm_start=True)
        except TrainingDiverged:
            log.warning("fantasized retraining diverged for candidate %d, class %d", candidate, c)
            return None
        # same seed as the prior: common random numbers across candidates
        return fantasy.mc_sample_label_vectors(pool_x, vcfg.mc_samples_pool, pool_seed, vcfg.label_sampling)

    score, diag = vig_from_samples(prior, candidate_probs, posterior, vcfg.order,
                                   vcfg.class_weight_floor, prior_entropy)
    if abs(score) < _ZERO_SNAP:
        score = 0.0
    return ScoredCandidate(candidate, score, diag)


# -- batch selection -------------------------------------------------------

def select_batch(policy: PolicyConfig, model: DropoutMLP, pool: PoolState, dataset: Dataset,
                 batch: int, seed=None) -> Selection:
    seed = policy.seed if seed is None else seed
    unlabeled = pool.sorted_unlabeled()
    if batch > unlabeled.size:
        raise PoolExhausted("pool exhausted")
    if batch < 1:
        raise ValueError("batch must be at least 1")
    rng = np.random.default_rng(_seed(seed, 0))

    if policy.name == "random":
        ids = rng.choice(unlabeled, size=batch, replace=False)
        return Selection([int(i) for i in ids])

    X = dataset.features[unlabeled]
    if policy.name == "vig":
        return _select_vig(policy, model, pool, dataset, batch, seed, rng, unlabeled)

    sampled = model.mc_sample_probs(X, policy.mc_samples_score, _seed(seed, 2))
    if policy.name == "batchbald":
        picks = select_batchbald(sampled, batch, policy.batchbald, rng)
        bald = score_bald(sampled)
        return Selection([int(unlabeled[p]) for p in picks], [float(bald[p]) for p in picks])

    scorer = {"max_entropy": score_max_entropy, "mean_std": score_mean_std, "bald": score_bald}[policy.name]
    scores = scorer(sampled)
    order = rank(scores, rng)[:batch]
    return Selection([int(unlabeled[p]) for p in order], [float(scores[p]) for p in order])


def _select_vig(policy, model, pool, dataset, batch, seed, rng, unlabeled) -> Selection:
    vcfg = policy.vig
    n_cand = min(vcfg.candidate_subsample, unlabeled.size)
    if n_cand < batch:
        n_cand = batch
    candidates = np.sort(rng.choice(unlabeled, size=n_cand, replace=False))
    pool_x = dataset.features[_pool_ids(pool, vcfg.pool_scope)]
    prior = model.mc_sample_label_vectors(pool_x, vcfg.mc_samples_pool, _seed(seed, 1), vcfg.label_sampling)
    prior_entropy = vendi_entropy_of(prior.vectors, HAMMING_LABEL, vcfg.order)
    probs = predictive_mean(
        model.mc_sample_probs(dataset.features[candidates], policy.mc_samples_score, _seed(seed, 2)))

    scored = [
        score_vig(c, model, pool, dataset, policy, seed=seed, prior=prior,
                  prior_entropy=prior_entropy, candidate_probs=probs[k])
        for k, c in enumerate(candidates)
    ]
    scores = np.array([s.score for s in scored])
    order = rank(scores, rng)[:batch]
    picked = [scored[p] for p in order]
    diagnostics = {
        "order": "inf" if math.isinf(vcfg.order) else vcfg.order,
        "prior_entropy": prior_entropy,
        "candidates_scored": int(n_cand),
        "failed_candidates": int(np.sum(np.isneginf(scores))),
        "selected": [
            {"id": s.id, "score": s.score,
             "expected_posterior_entropy": s.diagnostics.get("expected_posterior_entropy")}
            for s in picked
        ],
    }
    return Selection([s.id for s in picked], [s.score for s in picked], diagnostics)
