"""End-to-end open-set protocol on a synthetic eight-class mixture.

Eight classes named after the Kvasir categories, 1000 samples each, split
70/10/20 per class. Three "normal" landmark classes are known; the other five
are only ever seen as unknowns. A linear classifier is trained on the known
training rows and its logits feed Softmax, Softmax Threshold and OpenMax.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .activations import ActivationDataset, OpenSetView, apply_openset_protocol, split_dataset
from .metrics import evaluate_open_set
from .openmax import SoftmaxModel
from .search import tune_osr
from .toy import (
    MixtureSpec,
    ToyClassifier,
    TrainConfig,
    class_balanced_weights,
    extract_logits,
    generate_mixture,
    train_toy_classifier,
)

KVASIR_CLASSES = (
    "dyed-lifted-polyps",
    "dyed-resection-margins",
    "esophagitis",
    "normal-cecum",
    "normal-pylorus",
    "normal-z-line",
    "polyps",
    "ulcerative-colitis",
)
KNOWN_CLASSES = ("normal-cecum", "normal-pylorus", "normal-z-line")
SPLIT_RATIOS = (0.7, 0.1, 0.2)

DEFAULT_TRAIN = TrainConfig(learning_rate=1e-3, epochs=20, batch_size=16, weight_decay=1e-4, seed=0)
DEFAULT_OPENMAX_GRID = {"weibull_tail": 5, "weibull_alpha": 3, "weibull_threshold": 14}
DEFAULT_THRESHOLD_GRID = {"softmax_threshold": 10}


def kvasir_like_spec(seed: int = 0, dim: int = 16, per_class: int = 1000,
                     spread: float = 1.5, stddev: float = 1.0) -> MixtureSpec:
    """Eight isotropic Gaussian classes with means drawn around the origin."""
    rng = np.random.default_rng(seed)
    means = spread * rng.standard_normal((len(KVASIR_CLASSES), dim))
    k = len(KVASIR_CLASSES)
    return MixtureSpec(KVASIR_CLASSES, means, np.full(k, stddev), np.full(k, per_class), KNOWN_CLASSES)


@dataclass
class ProtocolResult:
    features: ActivationDataset
    classifier: ToyClassifier
    view: OpenSetView
    tuned: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)

    def report_dicts(self) -> dict:
        return {m: r.to_dict() for m, r in self.reports.items()}


def run_protocol(spec: MixtureSpec | None = None, seed: int = 0, train_config: TrainConfig = DEFAULT_TRAIN,
                 beta: float = 0.999, openmax_grid=None, threshold_grid=None,
                 distance_kind: str = "euclidean") -> ProtocolResult:
    """Generate, split, train, tune on validation and evaluate all three methods on test."""
    spec = spec if spec is not None else kvasir_like_spec(seed)
    known = spec.known_classes or KNOWN_CLASSES
    feats = split_dataset(generate_mixture(spec, seed), SPLIT_RATIOS, seed)

    fview = apply_openset_protocol(feats, known)
    x_train, y_train = fview.calibration_data("train")
    counts = np.bincount(y_train - 1, minlength=len(known))
    weights = class_balanced_weights(counts, beta)
    # rescale to sum to K so the weighting changes class balance, not the step size
    weights = weights * len(weights) / weights.sum()
    clf = train_toy_classifier(x_train, y_train - 1, weights, train_config,
                               n_classes=len(known), class_names=known)

    view = apply_openset_protocol(extract_logits(clf, feats), known)
    train = view.calibration_data("train")
    val = view.partition("val")
    test_logits, test_labels = view.partition("test")

    result = ProtocolResult(feats, clf, view)
    result.tuned["softmax-threshold"] = tune_osr(
        "softmax-threshold", *train, *val, budget=threshold_grid or DEFAULT_THRESHOLD_GRID)
    result.tuned["openmax"] = tune_osr(
        "openmax", *train, *val, budget=openmax_grid or DEFAULT_OPENMAX_GRID, distance_kind=distance_kind)

    models = {"softmax": SoftmaxModel(), **{m: r.artifact for m, r in result.tuned.items()}}
    for method, model in models.items():
        result.reports[method] = evaluate_open_set(model.predict(test_logits), test_labels, method,
                                                   view.label_names)
    return result


def unknown_fraction(labels) -> float:
    return float(np.mean(np.asarray(labels) == 0))

