"""Dropout multilayer perceptron with MC dropout sampling.

A plain numpy MLP: ReLU hidden layers, inverted dropout on hidden
activations, softmax output, cross-entropy loss, mini-batch SGD. Dropout
stays on for MC sampling so every pass is a draw from the same
distribution the network was trained under.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from vigal.core import EPS, LabelVectorSet, ProbabilitySampleSet

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ClassifierConfig:
    hidden_layers: list = field(default_factory=lambda: [64, 64])
    dropout_rate: float = 0.25
    learning_rate: float = 0.01
    max_epochs: int = 200
    warm_start_max_epochs: int = 50
    early_stop_rel_tol: float = 1e-3
    early_stop_patience: int = 3
    batch_size_sgd: int = 32
    weight_init_seed: int = 0
    weight_decay: float = 1e-3

    def __post_init__(self):
        self.hidden_layers = [int(h) for h in self.hidden_layers]
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        for name in ("max_epochs", "warm_start_max_epochs", "early_stop_patience", "batch_size_sgd"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if any(h < 1 for h in self.hidden_layers):
            raise ValueError("hidden layer widths must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    final_loss: float
    epochs_run: int
    stopped_early: bool


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class DropoutMLP:
    """MLP classifier whose parameters and RNG state form the model state."""

    def __init__(self, input_dim: int, num_classes: int, config: ClassifierConfig | None = None):
        self.config = config or ClassifierConfig()
        self.input_dim = int(input_dim)
        self.num_classes = int(num_classes)
        self.sizes = [self.input_dim, *self.config.hidden_layers, self.num_classes]
        self.reset()

    # -- parameters -----------------------------------------------------

    def reset(self) -> None:
        """Fresh Glorot-uniform weights and zero biases from the init seed."""
        rng = np.random.default_rng(self.config.weight_init_seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self.rng = np.random.default_rng([self.config.weight_init_seed, 1])

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def clone(self) -> "DropoutMLP":
        return copy.deepcopy(self)

    # -- forward / backward ---------------------------------------------

    def _dropout_masks(self, n_rows: int, rng: np.random.Generator, per_row: bool) -> list:
        p = self.config.dropout_rate
        if p == 0:
            return [None] * (len(self.sizes) - 2)
        keep = 1.0 - p
        shape_rows = n_rows if per_row else 1
        return [
            (rng.random((shape_rows, width)) < keep) / keep for width in self.sizes[1:-1]
        ]

    def _forward(self, X: np.ndarray, masks=None):
        acts = [X]
        h = X
        n_hidden = len(self.weights) - 1
        for k in range(n_hidden):
            h = np.maximum(h @ self.weights[k] + self.biases[k], 0.0)
            if masks is not None and masks[k] is not None:
                h = h * masks[k]
            acts.append(h)
        probs = softmax(h @ self.weights[-1] + self.biases[-1])
        return probs, acts

    def predict_proba(self, X, dropout: bool = False, rng=None) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        masks = None
        if dropout:
            rng = rng if rng is not None else self.rng
            masks = self._dropout_masks(1, rng, per_row=False)
        return self._forward(X, masks)[0]

    def loss_and_grads(self, X, y, masks=None):
        """Mean cross-entropy and its gradients with respect to ``params``."""
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=np.int64)
        n = X.shape[0]
        probs, acts = self._forward(X, masks)
        loss = -np.mean(np.log(np.clip(probs[np.arange(n), y], EPS, 1.0)))
        delta = probs.copy()
        delta[np.arange(n), y] -= 1.0
        delta /= n
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        for k in range(len(self.weights) - 1, -1, -1):
            grads_w[k] = acts[k].T @ delta
            grads_b[k] = delta.sum(axis=0)
            if k > 0:
                delta = delta @ self.weights[k].T
                if masks is not None and masks[k - 1] is not None:
                    delta = delta * masks[k - 1]
                delta = delta * (acts[k] > 0)
        wd = self.config.weight_decay
        if wd:
            loss += 0.5 * wd * sum(float(np.sum(W * W)) for W in self.weights)
            grads_w = [g + wd * W for g, W in zip(grads_w, self.weights)]
        grads = [g for pair in zip(grads_w, grads_b) for g in pair]
        return float(loss), grads

    def mean_loss(self, X, y) -> float:
        """Dropout-off training objective: mean cross-entropy plus the L2 penalty."""
        probs = self.predict_proba(X)
        y = np.asarray(y, dtype=np.int64)
        ce = -np.mean(np.log(np.clip(probs[np.arange(len(y)), y], EPS, 1.0)))
        penalty = 0.5 * self.config.weight_decay * sum(float(np.sum(W * W)) for W in self.weights)
        return float(ce + penalty)

    # -- training -------------------------------------------------------

    def train(self, X, y, warm_start: bool = False) -> TrainResult:
        """Mini-batch SGD with dropout, early-stopped on training-loss convergence.

        The monitored loss is the dropout-off objective over the whole training
        set (see ``mean_loss``), evaluated once per epoch. On return the model
        holds the parameters with the lowest monitored loss seen, including the
        starting point, and ``final_loss`` is that loss.
        """
        cfg = self.config
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError("need at least one labeled example")
        if y.shape != (X.shape[0],):
            raise ValueError("one label per training row required")
        if not warm_start:
            self.reset()
        cap = cfg.warm_start_max_epochs if warm_start else cfg.max_epochs
        n = X.shape[0]
        best = self.mean_loss(X, y)
        best_params = [p.copy() for p in self.params]
        stall = 0
        epoch = 0
        stopped = False
        for epoch in range(1, cap + 1):
            order = self.rng.permutation(n)
            for start in range(0, n, cfg.batch_size_sgd):
                idx = order[start:start + cfg.batch_size_sgd]
                masks = self._dropout_masks(idx.size, self.rng, per_row=True)
                _, grads = self.loss_and_grads(X[idx], y[idx], masks)
                for p, g in zip(self.params, grads):
                    p -= cfg.learning_rate * g
            loss = self.mean_loss(X, y)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(p)) for p in self.params):
                raise TrainingDiverged("training diverged")
            # improvement is measured against the best loss so far, so an
            # upward fluctuation cannot reset the patience window
            if (best - loss) / max(abs(best), EPS) < cfg.early_stop_rel_tol:
                stall += 1
            else:
                stall = 0
            if loss < best:
                best = loss
                best_params = [p.copy() for p in self.params]
            if stall >= cfg.early_stop_patience:
                stopped = True
                break
        for p, b in zip(self.params, best_params):
            p[...] = b
        return TrainResult(best, epoch, stopped)

    # -- MC dropout sampling --------------------------------------------

    def _mc_passes(self, X, num_samples: int, rng: np.random.Generator) -> np.ndarray:
        """``S x M x C`` probabilities; each pass draws one mask shared by all points."""
        if num_samples < 1:
            raise ValueError("num_samples must be at least 1")
        X = np.asarray(X, dtype=float)
        p = self.config.dropout_rate
        keep = 1.0 - p
        n = X.shape[0]
        h = X
        for k in range(len(self.weights) - 1):
            # flatten passes into rows so each layer is one 2-d matmul
            h = np.maximum(h.reshape(-1, h.shape[-1]) @ self.weights[k] + self.biases[k], 0.0)
            h = h.reshape(-1, n, h.shape[-1])
            if p > 0:
                mask = (rng.random((num_samples, 1, h.shape[-1])) < keep) / keep
                h = h * mask
            elif h.shape[0] != num_samples:
                h = np.broadcast_to(h, (num_samples, n, h.shape[-1]))
        logits = h.reshape(-1, h.shape[-1]) @ self.weights[-1] + self.biases[-1]
        if len(self.weights) == 1:
            logits = np.broadcast_to(logits, (num_samples, *logits.shape))
        return softmax(logits.reshape(num_samples, n, -1))

    def mc_sample_probs(self, X, num_samples: int, seed=None) -> ProbabilitySampleSet:
        return ProbabilitySampleSet(self._mc_passes(X, num_samples, np.random.default_rng(seed)))

    def mc_sample_label_vectors(self, X, num_samples: int, seed=None, mode: str = "argmax") -> LabelVectorSet:
        """One hard label vector per dropout pass.

        ``mode="argmax"`` takes each pass's most probable class;
        ``mode="categorical"`` draws a class from each pass's distribution.
        """
        if mode not in ("argmax", "categorical"):
            raise ValueError(f"unknown label sampling mode {mode!r}")
        rng = np.random.default_rng(seed)
        probs = self._mc_passes(X, num_samples, rng)
        if mode == "argmax":
            return LabelVectorSet(probs.argmax(axis=-1), self.num_classes)
        u = rng.random((*probs.shape[:2], 1))
        labels = np.minimum((u > np.cumsum(probs, axis=-1)).sum(axis=-1), self.num_classes - 1)
        return LabelVectorSet(labels, self.num_classes)

    # -- checkpoints ----------------------------------------------------

    def save(self, path) -> None:
        """Text checkpoint: a header, then each layer's shapes and row-major values.

        Format::

            vigal-mlp 1
            config <json>
            layers <L>
            W <rows> <cols>
            <rows*cols values, one per line>
            b <cols>
            <cols values>
            ...
        """
        import json

        lines = ["vigal-mlp 1", "config " + json.dumps(self.config.to_dict()),
                 f"dims {self.input_dim} {self.num_classes}", f"layers {len(self.weights)}"]
        for W, b in zip(self.weights, self.biases):
            lines.append(f"W {W.shape[0]} {W.shape[1]}")
            lines.extend(repr(float(v)) for v in W.ravel())
            lines.append(f"b {b.shape[0]}")
            lines.extend(repr(float(v)) for v in b)
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "DropoutMLP":
        import json

        it = iter(Path(path).read_text().splitlines())
        if next(it).strip() != "vigal-mlp 1":
            raise ValueError(f"{path}: not a checkpoint file")
        config = ClassifierConfig(**json.loads(next(it).split(" ", 1)[1]))
        _, d, c = next(it).split()
        model = cls(int(d), int(c), config)
        n_layers = int(next(it).split()[1])
        weights, biases = [], []
        for _ in range(n_layers):
            _, r, k = next(it).split()
            r, k = int(r), int(k)
            weights.append(np.array([float(next(it)) for _ in range(r * k)]).reshape(r, k))
            _, k = next(it).split()
            biases.append(np.array([float(next(it)) for _ in range(int(k))]))
        if [w.shape for w in weights] != [w.shape for w in model.weights]:
            raise ValueError(f"{path}: layer shapes do not match the stored config")
        model.weights, model.biases = weights, biases
        return model


def train(model: DropoutMLP, X, y, warm_start: bool = False):
    """Train ``model`` in place; returns ``(model, final_loss, epochs_run)``."""
    res = model.train(X, y, warm_start=warm_start)
    return model, res.final_loss, res.epochs_run


def clone_model(model: DropoutMLP) -> DropoutMLP:
    return model.clone()
