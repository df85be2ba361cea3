"""Open-set decision rules: Softmax, Softmax Threshold and OpenMax.

All functions work in the open-set label space: slot 0 is "unknown" and known
classes occupy ``1..K``. Logit arrays may be a single vector of length K or a
batch of shape ``(N, K)``; outputs follow the same shape convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .weibull import WeibullModel, fit_weibull_tail

METHODS = ("softmax", "softmax-threshold", "openmax")
DISTANCES = ("euclidean", "cosine", "eucos")
DEFAULT_GAMMA = 200.0
FORMAT_VERSION = 1


def normalize_method(method: str) -> str:
    m = method.strip().lower().replace("_", "-")
    if m not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    return m


def softmax(v):
    """Max-subtracted softmax over the last axis."""
    v = np.asarray(v, dtype=np.float64)
    z = np.exp(v - v.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class OpenSetPrediction:
    """Probabilities over ``[unknown, known_1..known_K]`` plus the decision.

    For a batch, ``probs`` is ``(N, K+1)`` and the other fields are length-N arrays.
    """

    probs: np.ndarray
    predicted_label: int | np.ndarray
    score_unknown: float | np.ndarray

    def __len__(self):
        return 1 if np.ndim(self.probs) == 1 else len(self.probs)


def _as_batch(v):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim not in (1, 2) or v.shape[-1] == 0:
        raise ValueError(f"logits must be a non-empty vector or (N, K) array, got shape {v.shape}")
    return np.atleast_2d(v), v.ndim == 1


def _pack(probs, labels, scores, single):
    if single:
        return OpenSetPrediction(probs[0], int(labels[0]), float(scores[0]))
    return OpenSetPrediction(probs, labels.astype(np.int64), scores)


def predict_softmax(v) -> OpenSetPrediction:
    """Closed-set decision: never predicts unknown; ``score_unknown = 1 - max prob``."""
    return predict_softmax_threshold(v, 0.0)


def predict_softmax_threshold(v, threshold: float) -> OpenSetPrediction:
    """Reject as unknown when the winning softmax probability is below ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    batch, single = _as_batch(v)
    p = softmax(batch)
    top = p.max(axis=1)
    labels = p.argmax(axis=1) + 1
    labels[top < threshold] = 0
    probs = np.concatenate([np.zeros((len(p), 1)), p], axis=1)
    return _pack(probs, labels, 1.0 - top, single)


def distance(v, mu, kind: str = "euclidean", gamma: float = DEFAULT_GAMMA):
    """Distance from ``v`` (vector or rows of a matrix) to ``mu``.

    ``euclidean`` is the L2 norm, ``cosine`` is ``1 - cos(v, mu)`` and ``eucos``
    is ``euclidean / gamma + cosine``.
    """
    if kind not in DISTANCES:
        raise ValueError(f"unknown distance {kind!r}; expected one of {DISTANCES}")
    v = np.asarray(v, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if v.shape[-1] != mu.shape[-1]:
        raise ValueError(f"dimension mismatch: {v.shape[-1]} vs {mu.shape[-1]}")
    euc = np.linalg.norm(v - mu, axis=-1)
    if kind == "euclidean":
        return euc
    nv = np.linalg.norm(v, axis=-1)
    nm = np.linalg.norm(mu, axis=-1)
    if np.any(nv == 0) or np.any(nm == 0):
        raise ValueError(f"{kind} distance is undefined for zero vectors")
    cos = 1.0 - np.sum(v * mu, axis=-1) / (nv * nm)
    # rounding can push 1 - cos slightly below zero for parallel vectors
    cos = np.maximum(cos, 0.0)
    if kind == "cosine":
        return cos
    return euc / gamma + cos


def compute_mavs(activations, labels, logits=None, distance_kind: str = "euclidean",
                 gamma: float = DEFAULT_GAMMA):
    """Per-class mean activation vectors over correctly classified samples.

    ``labels`` are open-set labels ``1..K`` (K = number of logit columns). A
    sample counts as correct when ``argmax(logits) + 1 == label``; ``logits``
    defaults to ``activations``. Returns ``(mavs, dists)`` where ``mavs`` is
    ``(K, D)`` and ``dists[c]`` holds the distances of class ``c + 1``'s correct
    samples to its own mean.
    """
    acts = np.atleast_2d(np.asarray(activations, dtype=np.float64))
    logits = acts if logits is None else np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels)
    if len(acts) != len(labels) or len(logits) != len(labels):
        raise ValueError("activations, logits and labels disagree in length")
    k = logits.shape[1]
    if np.any(labels < 1) or np.any(labels > k):
        raise ValueError("calibration labels must be known classes 1..K (no unknown samples)")
    correct = logits.argmax(axis=1) + 1 == labels
    mavs = np.empty((k, acts.shape[1]))
    dists = []
    for c in range(1, k + 1):
        rows = acts[correct & (labels == c)]
        if len(rows) == 0:
            raise CalibrationError(f"class {c} has no correctly classified training samples")
        mavs[c - 1] = rows.mean(axis=0)
        dists.append(distance(rows, mavs[c - 1], distance_kind, gamma))
    return mavs, dists


class CalibrationError(ValueError):
    """OpenMax calibration failed (missing correct samples or an unfittable tail)."""


@dataclass(frozen=True, eq=False)
class OpenMaxModel:
    mavs: np.ndarray
    weibulls: tuple[WeibullModel, ...]
    alpha: int
    threshold: float
    distance: str = "euclidean"
    gamma: float = DEFAULT_GAMMA

    method = "openmax"

    def __post_init__(self):
        mavs = np.array(self.mavs, dtype=np.float64, ndmin=2)
        mavs.flags.writeable = False
        object.__setattr__(self, "mavs", mavs)
        object.__setattr__(self, "weibulls", tuple(self.weibulls))
        if len(self.weibulls) != len(mavs):
            raise ValueError("need exactly one Weibull model per mean activation vector")
        if not 1 <= self.alpha <= len(mavs):
            raise ValueError(f"alpha must lie in [1, {len(mavs)}], got {self.alpha}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if self.distance not in DISTANCES:
            raise ValueError(f"unknown distance {self.distance!r}")

    @property
    def known_count(self) -> int:
        return len(self.mavs)

    @property
    def dim(self) -> int:
        return self.mavs.shape[1]

    def with_params(self, alpha=None, threshold=None) -> "OpenMaxModel":
        return OpenMaxModel(self.mavs, self.weibulls,
                            self.alpha if alpha is None else alpha,
                            self.threshold if threshold is None else threshold,
                            self.distance, self.gamma)

    def predict(self, logits) -> OpenSetPrediction:
        return predict_openmax(self, logits)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "method": "openmax",
            "alpha": int(self.alpha),
            "threshold": float(self.threshold),
            "distance": self.distance,
            "gamma": float(self.gamma),
            "mavs": self.mavs.tolist(),
            "weibulls": [w.to_dict() for w in self.weibulls],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OpenMaxModel":
        _check_format(d)
        return cls(np.array(d["mavs"], dtype=np.float64),
                   tuple(WeibullModel.from_dict(w) for w in d["weibulls"]),
                   int(d["alpha"]), float(d["threshold"]), d["distance"], float(d["gamma"]))

    def __eq__(self, other):
        if not isinstance(other, OpenMaxModel):
            return NotImplemented
        return self.to_dict() == other.to_dict()


@dataclass(frozen=True)
class SoftmaxModel:
    """Softmax decision rule, optionally with a rejection threshold."""

    threshold: float | None = None

    @property
    def method(self) -> str:
        return "softmax" if self.threshold is None else "softmax-threshold"

    def predict(self, logits) -> OpenSetPrediction:
        if self.threshold is None:
            return predict_softmax(logits)
        return predict_softmax_threshold(logits, self.threshold)

    def to_dict(self) -> dict:
        d = {"format": FORMAT_VERSION, "method": self.method}
        if self.threshold is not None:
            d["threshold"] = float(self.threshold)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SoftmaxModel":
        _check_format(d)
        return cls(None if normalize_method(d["method"]) == "softmax" else float(d["threshold"]))


def _check_format(d):
    if d.get("format") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format {d.get('format')!r}")


def model_from_dict(d: dict):
    if normalize_method(d.get("method", "")) == "openmax":
        return OpenMaxModel.from_dict(d)
    return SoftmaxModel.from_dict(d)


def calibrate_openmax(logits, labels, tail_size: int, alpha: int, threshold: float,
                      distance_kind: str = "euclidean", gamma: float = DEFAULT_GAMMA,
                      clamp_tail: bool = False, activations=None) -> OpenMaxModel:
    """Build an :class:`OpenMaxModel` from known-class training logits.

    ``labels`` are open-set labels in ``1..K``. ``activations`` (defaults to the
    logits) is the space in which class means and distances are computed; it
    must match what is passed to prediction.
    """
    acts = logits if activations is None else activations
    mavs, dists = compute_mavs(acts, labels, logits, distance_kind, gamma)
    weibulls = []
    for c, d in enumerate(dists, start=1):
        try:
            weibulls.append(fit_weibull_tail(d, tail_size, clamp_tail=clamp_tail))
        except ValueError as exc:
            raise CalibrationError(f"class {c}: {exc}") from exc
    return OpenMaxModel(mavs, tuple(weibulls), int(alpha), float(threshold), distance_kind, float(gamma))


def class_cdfs(model: OpenMaxModel, batch):
    """Weibull CDF of each sample's distance to each class mean, shape ``(N, K)``."""
    if batch.shape[1] != model.dim:
        raise ValueError(f"dimension mismatch: logits have {batch.shape[1]} columns, model expects {model.dim}")
    out = np.empty((len(batch), model.known_count))
    for c, (mu, w) in enumerate(zip(model.mavs, model.weibulls)):
        out[:, c] = w.cdf(distance(batch, mu, model.distance, model.gamma))
    return out


def rank_weights(v, alpha: int):
    """Per-class modulation weights ``(alpha - r + 1) / alpha`` for the top-alpha ranks, 0 elsewhere.

    Classes are ranked by activation, descending; ties go to the lower index.
    """
    batch = np.atleast_2d(v)
    order = np.argsort(-batch, axis=1, kind="stable")
    weights = np.zeros_like(batch, dtype=np.float64)
    rows = np.arange(len(batch))
    for r in range(1, alpha + 1):
        weights[rows, order[:, r - 1]] = (alpha - r + 1) / alpha
    return weights


def recalibrate_activations(model: OpenMaxModel, v, cdfs=None):
    """OpenMax-augmented activations ``[v0, v1*w1, ..., vK*wK]``.

    ``w_j = 1 - rank_weight_j * CDF_j(distance(v, mu_j))`` and ``v0`` collects the
    removed mass ``sum_j v_j * (1 - w_j)``. ``cdfs`` may be supplied to bypass
    the Weibull evaluation.
    """
    batch, single = _as_batch(v)
    if batch.shape[1] != model.known_count:
        raise ValueError(f"dimension mismatch: got {batch.shape[1]} logits for {model.known_count} classes")
    if cdfs is None:
        cdfs = class_cdfs(model, batch)
    omega = 1.0 - rank_weights(batch, model.alpha) * np.atleast_2d(cdfs)
    known = batch * omega
    unknown = np.sum(batch * (1.0 - omega), axis=1, keepdims=True)
    out = np.concatenate([unknown, known], axis=1)
    return out[0] if single else out


def predict_openmax(model: OpenMaxModel, v, cdfs=None) -> OpenSetPrediction:
    """Softmax over the recalibrated activations, rejecting when slot 0 wins or the
    winning probability is below the model threshold (equality accepts)."""
    batch, single = _as_batch(v)
    probs = softmax(recalibrate_activations(model, batch, cdfs))
    labels = probs.argmax(axis=1)
    labels[probs.max(axis=1) < model.threshold] = 0
    return _pack(probs, labels, probs[:, 0].copy(), single)


def unknownness_score(method: str, prediction: OpenSetPrediction):
    """Score used for unknown detection: ``probs[0]`` for OpenMax, otherwise
    ``1 - max`` known-class probability (independent of any threshold)."""
    method = normalize_method(method)
    probs = np.asarray(prediction.probs)
    if method == "openmax":
        s = probs[..., 0]
    else:
        s = 1.0 - probs[..., 1:].max(axis=-1)
    return float(s) if np.ndim(s) == 0 else s
