"""Desk-scale substrate for the open-set pipeline.

Gaussian-mixture features stand in for images, and a linear softmax classifier
trained by mini-batch gradient descent on a class-balanced cross-entropy
supplies the logits the open-set methods consume.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .activations import ActivationDataset


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    class_names: tuple[str, ...]
    means: np.ndarray
    stddevs: np.ndarray
    counts: np.ndarray
    known_classes: tuple[str, ...] | None = None

    def __post_init__(self):
        means = np.array(self.means, dtype=np.float64, ndmin=2)
        stddevs = np.asarray(self.stddevs, dtype=np.float64)
        counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.class_names)
        if means.shape[0] != k or stddevs.shape != (k,) or counts.shape != (k,):
            raise ValueError("means, stddevs and counts need one entry per class")
        if np.any(stddevs <= 0) or not np.all(np.isfinite(stddevs)):
            raise ValueError("stddevs must be positive and finite")
        if np.any(counts < 1):
            raise ValueError("counts must be at least 1")
        if not np.all(np.isfinite(means)):
            raise ValueError("means must be finite")
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stddevs", stddevs)
        object.__setattr__(self, "counts", counts)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureSpec":
        """Parse ``{"dim": D, "classes": [{"name", "mean", "stddev", "count"}, ...]}``."""
        try:
            classes = d["classes"]
            spec = cls(
                tuple(c["name"] for c in classes),
                np.array([c["mean"] for c in classes], dtype=np.float64),
                np.array([c["stddev"] for c in classes], dtype=np.float64),
                np.array([c["count"] for c in classes]),
                tuple(d["known_classes"]) if d.get("known_classes") is not None else None,
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"invalid mixture spec: missing or malformed {exc}") from None
        if "dim" in d and int(d["dim"]) != spec.dim:
            raise ValueError(f"spec dim {d['dim']} does not match mean length {spec.dim}")
        return spec

    def to_dict(self) -> dict:
        d = {
            "dim": self.dim,
            "classes": [
                {"name": n, "mean": m.tolist(), "stddev": float(s), "count": int(c)}
                for n, m, s, c in zip(self.class_names, self.means, self.stddevs, self.counts)
            ],
        }
        if self.known_classes is not None:
            d["known_classes"] = list(self.known_classes)
        return d


def generate_mixture(spec: MixtureSpec, seed: int) -> ActivationDataset:
    """Draw ``counts[c]`` isotropic Gaussian samples per class, class after class."""
    rng = np.random.default_rng(seed)
    blocks, labels = [], []
    for c in range(len(spec.class_names)):
        n = int(spec.counts[c])
        blocks.append(spec.means[c] + spec.stddevs[c] * rng.standard_normal((n, spec.dim)))
        labels.append(np.full(n, c))
    x = np.concatenate(blocks)
    n = len(x)
    width = max(6, len(str(n)))
    return ActivationDataset(
        sample_ids=tuple(f"s{i:0{width}d}" for i in range(n)),
        labels=np.concatenate(labels),
        activations=x,
        splits=("unassigned",) * n,
        class_names=spec.class_names,
    )


def class_balanced_weights(counts, beta: float = 0.999) -> np.ndarray:
    """Inverse effective number of samples, ``(1 - beta) / (1 - beta ** n_c)``."""
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts < 1):
        raise ValueError("class counts must be at least 1")
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    return (1.0 - beta) / (1.0 - np.power(beta, counts))


class TrainingDiverged(ArithmeticError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"loss became non-finite in epoch {epoch}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 16
    weight_decay: float = 0.0
    seed: int = 0


@dataclass(frozen=True, eq=False)
class ToyClassifier:
    weights: np.ndarray
    biases: np.ndarray
    config: TrainConfig = field(default_factory=TrainConfig)
    loss_trace: tuple[float, ...] = ()
    class_names: tuple[str, ...] | None = None

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def logits(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ValueError(f"dimension mismatch: features have {x.shape[-1]} columns, model expects {self.dim}")
        return x @ self.weights.T + self.biases

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "config": asdict(self.config),
            "loss_trace": list(self.loss_trace),
            "final_loss": self.loss_trace[-1] if self.loss_trace else None,
            "class_names": list(self.class_names) if self.class_names is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToyClassifier":
        names = d.get("class_names")
        return cls(np.array(d["weights"], dtype=np.float64), np.array(d["biases"], dtype=np.float64),
                   TrainConfig(**d["config"]), tuple(d.get("loss_trace", ())),
                   tuple(names) if names is not None else None)


def loss_and_grad(weights, biases, x, y, class_weights=None, weight_decay: float = 0.0):
    """Weighted cross-entropy (mean over the batch) plus ``weight_decay / 2 * |W|^2``.

    Returns ``(loss, grad_weights, grad_biases)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    n = len(y)
    z = x @ weights.T + biases
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    logp = z - lse[:, None]
    w = np.ones(n) if class_weights is None else np.asarray(class_weights, dtype=np.float64)[y]
    rows = np.arange(n)
    loss = -(w * logp[rows, y]).sum() / n + 0.5 * weight_decay * np.sum(weights * weights)
    dz = np.exp(logp)
    dz[rows, y] -= 1.0
    dz *= (w / n)[:, None]
    return float(loss), dz.T @ x + weight_decay * weights, dz.sum(axis=0)


def train_toy_classifier(features, labels, class_weights=None, config: TrainConfig | None = None,
                         n_classes: int | None = None, class_names=None) -> ToyClassifier:
    """Mini-batch gradient descent from zero initialisation.

    Each epoch visits the samples in an order drawn from a generator seeded by
    ``config.seed``. ``loss_trace`` holds the full-data objective after each epoch.
    """
    config = config or TrainConfig()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("features must be (N, D) with one label per row")
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    k = int(n_classes) if n_classes is not None else int(y.max()) + 1
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    if config.batch_size < 1 or config.epochs < 0:
        raise ValueError("batch_size must be positive and epochs nonnegative")
    cw = None if class_weights is None else np.asarray(class_weights, dtype=np.float64)

    weights = np.zeros((k, x.shape[1]))
    biases = np.zeros(k)
    rng = np.random.default_rng(config.seed)
    trace = []
    lr, wd = config.learning_rate, config.weight_decay
    for epoch in range(config.epochs):
        order = rng.permutation(len(y))
        # overflow surfaces as a non-finite loss below
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, len(y), config.batch_size):
                idx = order[start:start + config.batch_size]
                _, gw, gb = loss_and_grad(weights, biases, x[idx], y[idx], cw)
                # decoupled decay: shrink W separately from the data gradient
                weights = weights - lr * gw - lr * wd * weights
                biases = biases - lr * gb
            loss = loss_and_grad(weights, biases, x, y, cw, wd)[0]
        if not np.isfinite(loss):
            raise TrainingDiverged(epoch)
        trace.append(loss)
    names = tuple(class_names) if class_names is not None else None
    return ToyClassifier(weights, biases, config, tuple(trace), names)


def extract_logits(model: ToyClassifier, ds: ActivationDataset) -> ActivationDataset:
    """Replace each row's features by the classifier's logits; ids, labels and splits carry over."""
    return ds.replace(activations=model.logits(ds.activations))
