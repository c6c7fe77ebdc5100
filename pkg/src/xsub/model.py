"""Small feed-forward classifier trained with mini-batch SGD.

The classifier is the black box under attack. Callers outside this module
only see it through :func:`predict` (which counts queries) and through the
explainer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import rng_stream
from .data import Dataset
from .errors import FileError, FormatError, InvalidArgumentError, TrainingError

CHECKPOINT_FORMAT = "xsub-mlp"
CHECKPOINT_VERSION = 1


@dataclass
class QueryLog:
    """Online query counters. ``model_evals`` tracks explainer-internal forward passes."""

    predict_count: int = 0
    explain_count: int = 0
    model_evals: int = 0

    def __add__(self, other: "QueryLog") -> "QueryLog":
        return QueryLog(
            self.predict_count + other.predict_count,
            self.explain_count + other.explain_count,
            self.model_evals + other.model_evals,
        )

    def as_dict(self) -> dict:
        return {"predict": self.predict_count, "explain": self.explain_count}


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    hidden: tuple[int, ...] = (64,)

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidArgumentError(f"learning rate must be positive, got {self.lr}")
        if int(self.epochs) < 1:
            raise InvalidArgumentError(f"epochs must be >= 1, got {self.epochs}")
        if int(self.batch_size) < 1:
            raise InvalidArgumentError("batch_size must be >= 1")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Classifier:
    """ReLU MLP with a softmax head. ``weights[i]`` has shape (fan_in, fan_out)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_shape: tuple[int, ...]
    history: list[float] = field(default_factory=list, compare=False)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if len(self.weights) != len(self.biases) or not self.weights:
            raise InvalidArgumentError("need one bias per weight matrix")
        prev = int(np.prod(self.input_shape))
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != prev or b.shape != (w.shape[1],):
                raise InvalidArgumentError("incompatible layer dimensions")
            prev = w.shape[1]

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def num_features(self) -> int:
        return self.weights[0].shape[0]

    @classmethod
    def init(cls, input_shape, num_classes, hidden=(64,), seed=0) -> "Classifier":
        rng = rng_stream(seed, "init")
        dims = [int(np.prod(input_shape))] + list(hidden) + [int(num_classes)]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases, input_shape)

    def _flatten(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        d = self.num_features
        if x.shape == self.input_shape or (x.ndim == 1 and x.size == d):
            return x.reshape(1, d)
        if x.shape[1:] == self.input_shape or (x.ndim == 2 and x.shape[1] == d):
            return x.reshape(x.shape[0], d)
        raise InvalidArgumentError(f"input shape {x.shape} does not match {self.input_shape}")

    def forward(self, x) -> tuple[np.ndarray, list[np.ndarray]]:
        """Logits and the list of post-activation hidden layers."""
        h = self._flatten(x)
        hidden = []
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            hidden.append(h)
        return h @ self.weights[-1] + self.biases[-1], hidden

    def proba(self, x) -> np.ndarray:
        """Batched class probabilities, shape (n, C). Does not count as a query."""
        return softmax(self.forward(x)[0])

    __call__ = proba

    def penultimate(self, x) -> np.ndarray:
        logits, hidden = self.forward(x)
        return hidden[-1] if hidden else self._flatten(x)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def loss_and_grads(self, x, y) -> tuple[float, list[np.ndarray]]:
        """Mean cross-entropy and its gradient w.r.t. ``params()`` (same order)."""
        y = np.asarray(y, dtype=np.int64)
        h0 = self._flatten(x)
        acts = [h0]
        h = h0
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            acts.append(h)
        logits = h @ self.weights[-1] + self.biases[-1]
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        n = y.size
        loss = -float(logp[np.arange(n), y].mean())
        delta = np.exp(logp)
        delta[np.arange(n), y] -= 1.0
        delta /= n
        grads = [None] * (2 * len(self.weights))
        for layer in range(len(self.weights) - 1, -1, -1):
            a = acts[layer]
            grads[2 * layer] = a.T @ delta
            grads[2 * layer + 1] = delta.sum(axis=0)
            if layer:
                delta = (delta @ self.weights[layer].T) * (a > 0)
        return loss, grads

    def copy(self) -> "Classifier":
        return Classifier([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                          self.input_shape, list(self.history))

    def freeze(self) -> "Classifier":
        for p in self.params():
            p.setflags(write=False)
        return self


def train(dataset: Dataset, cfg: TrainConfig, x=None, y=None) -> Classifier:
    """Fit a fresh classifier on ``dataset`` with mini-batch SGD.

    ``x``/``y`` override the dataset arrays (used for poisoned unions);
    ``dataset`` still supplies the descriptor.
    """
    if dataset.split != "train":
        raise InvalidArgumentError("train() needs a dataset tagged 'train'")
    if x is None:
        x, y = dataset.flat, dataset.y
    x = np.asarray(x, dtype=np.float64).reshape(len(y), -1)
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise InvalidArgumentError("cannot train on an empty dataset")
    desc = dataset.descriptor
    model = Classifier.init(desc.shape, desc.num_classes, cfg.hidden, cfg.seed)
    rng = rng_stream(cfg.seed, "shuffle")
    params = model.params()
    for epoch in range(cfg.epochs):
        order = rng.permutation(y.size)
        total = 0.0
        for start in range(0, y.size, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = model.loss_and_grads(x[idx], y[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"loss diverged in epoch {epoch}")
            for p, g in zip(params, grads):
                p -= cfg.lr * g
            total += loss * idx.size
        model.history.append(total / y.size)
    return model.freeze()


def predict(f: Classifier, x, log: QueryLog | None = None) -> tuple[np.ndarray, int]:
    """One black-box query: probability vector and argmax label (lowest index on ties)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != f.input_shape and x.size != f.num_features:
        raise InvalidArgumentError(f"input shape {x.shape} does not match {f.input_shape}")
    probs = f.proba(x)[0]
    if log is not None:
        log.predict_count += 1
    return probs, int(np.argmax(probs))


def predict_labels(f: Classifier, x) -> np.ndarray:
    """Batched argmax labels; bookkeeping-free, for evaluation loops."""
    return np.argmax(f.forward(x)[0], axis=1)


def filter_correct(f: Classifier, test: Dataset) -> Dataset:
    """Test samples the model classifies correctly, order preserved."""
    if len(test) == 0:
        return test
    keep = np.flatnonzero(predict_labels(f, test.x) == test.y)
    return test.subset(keep)


def save_checkpoint(f: Classifier, path) -> Path:
    record = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "input_shape": list(f.input_shape),
        "layer_dims": f.layer_dims,
        "weights": [w.ravel().tolist() for w in f.weights],
        "biases": [b.tolist() for b in f.biases],
    }
    path = Path(path)
    path.write_text(json.dumps(record), encoding="utf-8")
    return path


def load_checkpoint(path) -> Classifier:
    path = Path(path)
    if not path.exists():
        raise FileError(f"missing checkpoint {path}")
    try:
        record = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not a checkpoint record") from exc
    if record.get("format") != CHECKPOINT_FORMAT or record.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint format/version")
    dims = record["layer_dims"]
    weights = [np.asarray(w, dtype=np.float64).reshape(a, b)
               for w, a, b in zip(record["weights"], dims[:-1], dims[1:])]
    biases = [np.asarray(b, dtype=np.float64) for b in record["biases"]]
    return Classifier(weights, biases, tuple(record["input_shape"])).freeze()
