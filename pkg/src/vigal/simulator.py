"""The pool-based active learning loop and its per-round metrics."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from vigal.classifier import ClassifierConfig, DropoutMLP
from vigal.core import EPS, Dataset, PoolState, empirical_class_distribution, predictive_mean, shannon_entropy
from vigal.dataio import DatasetSpec, generate, split
from vigal.policies import PolicyConfig, select_batch
from vigal.vendi import COSINE_FEATURE, vendi_score

log = logging.getLogger(__name__)

RECORD_KEYS = (
    "round", "n_labeled", "selected_ids", "selected_classes", "accuracy", "precision_w",
    "recall_w", "f1_w", "cross_entropy", "class_entropy", "feature_vs", "seconds", "diagnostics",
)


@dataclass
class RunConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    batch_size: int = 20
    label_budget: int = 500
    seed_set_size: int | None = None
    test_fraction: float = 0.2
    eval_mc_samples: int = 32
    master_seed: int = 0
    retrain: str = "warm"
    record_timing: bool = True

    def __post_init__(self):
        if isinstance(self.dataset, dict):
            self.dataset = DatasetSpec.from_dict(self.dataset)
        if isinstance(self.policy, dict):
            self.policy = PolicyConfig.from_dict(self.policy)
        if isinstance(self.classifier, dict):
            _check_keys(ClassifierConfig, self.classifier, "classifier")
            self.classifier = ClassifierConfig(**self.classifier)
        if self.seed_set_size is None:
            self.seed_set_size = self.batch_size
        if self.batch_size < 1 or self.seed_set_size < 1:
            raise ValueError("batch_size and seed_set_size must be at least 1")
        if self.batch_size > self.label_budget:
            raise ValueError("batch_size must not exceed label_budget")
        if self.label_budget < self.seed_set_size:
            raise ValueError("label_budget must cover the seed set")
        if (self.label_budget - self.seed_set_size) % self.batch_size:
            raise ValueError("label_budget - seed_set_size must be a multiple of batch_size")
        if self.retrain not in ("warm", "scratch"):
            raise ValueError("retrain must be 'warm' or 'scratch'")
        if self.eval_mc_samples < 1:
            raise ValueError("eval_mc_samples must be at least 1")

    @property
    def num_rounds(self) -> int:
        return (self.label_budget - self.seed_set_size) // self.batch_size

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _check_keys(cls, d, "run")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["policy"] = self.policy.to_dict()
        return d


def _check_keys(cls, d: dict, where: str) -> None:
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")


# -- metrics ---------------------------------------------------------------

def classification_metrics(y_true, y_pred, num_classes: int) -> dict:
    """Accuracy and support-weighted precision, recall and F1."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    n = y_true.size
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    tp = np.diag(conf).astype(float)
    support = conf.sum(axis=1).astype(float)
    predicted = conf.sum(axis=0).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        prec = np.where(predicted > 0, tp / predicted, 0.0)
        rec = np.where(support > 0, tp / support, 0.0)
        f1 = np.where(prec + rec > 0, 2 * prec * rec / (prec + rec), 0.0)
    w = support / n
    return {
        "accuracy": float(tp.sum() / n),
        "precision_w": float(w @ prec),
        "recall_w": float(w @ rec),
        "f1_w": float(w @ f1),
    }


def evaluate(model: DropoutMLP, X, y, eval_mc_samples: int, seed=0) -> dict:
    """Test metrics from the MC-mean prediction over ``eval_mc_samples`` passes."""
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise ValueError("empty test set")
    probs = predictive_mean(model.mc_sample_probs(X, eval_mc_samples, seed))
    metrics = classification_metrics(y, probs.argmax(axis=1), model.num_classes)
    p_true = np.clip(probs[np.arange(y.size), y], EPS, 1.0)
    metrics["cross_entropy"] = float(-np.mean(np.log(p_true)))
    return metrics


def diversity_metrics(labels, features, num_classes: int) -> tuple[float, float]:
    """Class-distribution entropy and cosine Vendi score (q=1) of a collection."""
    class_entropy = shannon_entropy(empirical_class_distribution(labels, num_classes))
    F = np.asarray(features, dtype=float)
    keep = np.linalg.norm(F, axis=1) > 0
    if not np.all(keep):
        log.warning("excluding %d zero-norm feature vectors from the Vendi score", int((~keep).sum()))
        F = F[keep]
    vs = vendi_score(F, COSINE_FEATURE, 1.0) if len(F) else 1.0
    return float(class_entropy), float(vs)


# -- the loop --------------------------------------------------------------

@dataclass
class RunLog:
    config: dict
    records: list = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=False) + "\n" for r in self.records)

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl())


def read_run_log(path) -> list[dict]:
    records = []
    for k, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        rec = json.loads(line)
        if set(rec) != set(RECORD_KEYS):
            raise ValueError(f"{path}: line {k} does not match the run-log schema")
        records.append(rec)
    return records


def _round_seed(master_seed: int, round_index: int, purpose: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(round_index), int(purpose)])


def run_active_learning(config: RunConfig, dataset: Dataset | None = None,
                        out_path=None, check_invariants: bool = False) -> RunLog:
    """Run one pool-based active learning experiment.

    Records are appended to ``out_path`` (JSON lines) as they are produced, so
    an aborted run leaves a partial log behind.
    """
    dataset = dataset if dataset is not None else generate(config.dataset)
    ms = config.master_seed
    pool = split(dataset, config.test_fraction, _round_seed(ms, 0, 0))
    if config.seed_set_size + config.num_rounds * config.batch_size > len(pool.unlabeled):
        raise ValueError(
            f"label budget {config.label_budget} exceeds the pool of {len(pool.unlabeled)} points")
    test_ids = np.array(sorted(pool.test), dtype=np.int64)
    X_test, y_test = dataset.features[test_ids], dataset.labels[test_ids]

    rng = np.random.default_rng(_round_seed(ms, 0, 1))
    seed_ids = rng.choice(pool.sorted_unlabeled(), size=config.seed_set_size, replace=False)
    pool.add_labels(seed_ids, dataset.labels[seed_ids])

    clf_cfg = ClassifierConfig(**{**config.classifier.to_dict(),
                                  "weight_init_seed": config.classifier.weight_init_seed + ms})
    model = DropoutMLP(dataset.dim, dataset.num_classes, clf_cfg)
    log_ = RunLog(config.to_dict())
    sink = Path(out_path).open("w") if out_path is not None else None
    try:
        t0 = time.perf_counter()
        _fit(model, pool, dataset, warm=False)
        selected, diagnostics = [int(i) for i in seed_ids], {"seed_set": True}
        for r in range(config.num_rounds + 1):
            pool.round = r
            if check_invariants:
                pool.check(dataset)
            metrics = evaluate(model, X_test, y_test, config.eval_mc_samples, _round_seed(ms, r, 2))
            lab = pool.labeled_ids
            cls_h, fvs = diversity_metrics(pool.labeled_classes, dataset.features[lab], dataset.num_classes)
            rec = {
                "round": r,
                "n_labeled": len(lab),
                "selected_ids": selected,
                "selected_classes": [int(dataset.labels[i]) for i in selected],
                **metrics,
                "class_entropy": cls_h,
                "feature_vs": fvs,
                "seconds": round(time.perf_counter() - t0, 6) if config.record_timing else 0.0,
                "diagnostics": diagnostics,
            }
            log_.records.append(rec)
            if sink:
                sink.write(json.dumps(rec) + "\n")
                sink.flush()
            if r == config.num_rounds:
                break
            t0 = time.perf_counter()
            sel = select_batch(config.policy, model, pool, dataset, config.batch_size,
                               seed=_round_seed(ms, r + 1, 3).generate_state(1)[0])
            selected, diagnostics = sel.ids, sel.diagnostics
            pool.add_labels(selected, dataset.labels[selected])   # exact oracle
            _fit(model, pool, dataset, warm=config.retrain == "warm")
    finally:
        if sink:
            sink.close()
    return log_


def _fit(model: DropoutMLP, pool: PoolState, dataset: Dataset, warm: bool) -> None:
    ids = pool.labeled_ids
    model.train(dataset.features[ids], np.asarray(pool.labeled_classes), warm_start=warm)
