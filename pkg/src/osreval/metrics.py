"""Closed-set and open-set evaluation metrics.

Conventions: confusion-matrix rows are true labels and columns predictions;
any 0/0 precision, recall or F1 cell is defined as 0 and still enters the macro
mean; AUROC gives tied (unknown, known) pairs half credit; average precision
evaluates precision once per block of tied scores.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .openmax import OpenSetPrediction, normalize_method, unknownness_score


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray
    label_names: tuple[str, ...]

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError("confusion matrix must be square")
        if counts.shape[0] != len(self.label_names):
            raise ValueError("label_names length must match the matrix size")
        if np.any(counts < 0):
            raise ValueError("confusion counts must be nonnegative")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "label_names", tuple(self.label_names))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_dict(self) -> dict:
        return {"label_names": list(self.label_names), "counts": self.counts.tolist()}

    def to_csv(self) -> str:
        """Rows are true labels, columns predictions; the corner cell is ``true\\pred``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred", *self.label_names])
        for name, row in zip(self.label_names, self.counts):
            w.writerow([name, *map(int, row)])
        return buf.getvalue()

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return self.label_names == other.label_names and np.array_equal(self.counts, other.counts)


def confusion_matrix(y_true, y_pred, n_labels: int, label_names=None) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError("y_true and y_pred must be 1-D and of equal length")
    for name, y in (("y_true", y_true), ("y_pred", y_pred)):
        if y.size and (y.min() < 0 or y.max() >= n_labels):
            raise ValueError(f"{name} contains labels outside [0, {n_labels})")
    counts = np.bincount(y_true * n_labels + y_pred, minlength=n_labels * n_labels)
    names = tuple(label_names) if label_names is not None else tuple(str(i) for i in range(n_labels))
    return ConfusionMatrix(counts.reshape(n_labels, n_labels), names)


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


@dataclass(frozen=True)
class PRFScores:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    macro: dict
    micro: dict


def prf_scores(cm: ConfusionMatrix) -> PRFScores:
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    p = _safe_div(tp, tp + fp)
    r = _safe_div(tp, tp + fn)
    f = _safe_div(2 * p * r, p + r)
    mp = float(_safe_div(tp.sum(), tp.sum() + fp.sum()))
    mr = float(_safe_div(tp.sum(), tp.sum() + fn.sum()))
    mf = float(_safe_div(2 * mp * mr, mp + mr))
    macro = {"precision": float(p.mean()), "recall": float(r.mean()), "f1": float(f.mean())}
    micro = {"precision": mp, "recall": mr, "f1": mf}
    return PRFScores(p, r, f, cm.counts.sum(axis=1), macro, micro)


def mcc(cm: ConfusionMatrix) -> float:
    """Multiclass Matthews correlation (Gorodkin's R_K); 0 when undefined."""
    c = cm.counts.astype(np.float64)
    s = c.sum()
    correct = np.trace(c)
    t = c.sum(axis=1)
    p = c.sum(axis=0)
    cov_tp = correct * s - p @ t
    cov_pp = s * s - p @ p
    cov_tt = s * s - t @ t
    if cov_pp == 0 or cov_tt == 0:
        return 0.0
    return float(np.clip(cov_tp / np.sqrt(cov_pp * cov_tt), -1.0, 1.0))


def _binary_inputs(scores, is_unknown):
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(is_unknown, dtype=bool)
    if scores.shape != pos.shape or scores.ndim != 1:
        raise ValueError("scores and is_unknown must be 1-D and of equal length")
    return scores, pos


def auroc(scores, is_unknown) -> float:
    """Mann-Whitney AUROC with unknown as the positive class."""
    scores, pos = _binary_inputs(scores, is_unknown)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs at least one unknown and one known sample")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def aupr_out(scores, is_unknown) -> float:
    """Average precision with unknown as the positive class."""
    scores, pos = _binary_inputs(scores, is_unknown)
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise ValueError("AUPR-OUT needs at least one unknown sample")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = pos[order]
    # last index of each block of equal scores
    block_end = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[block_end]
    seen = block_end + 1
    precision = tp / seen
    d_recall = np.diff(np.r_[0, tp]) / n_pos
    return float(np.sum(d_recall * precision))


@dataclass(frozen=True, eq=False)
class EvaluationReport:
    accuracy: float
    precision: dict
    recall: dict
    f1: dict
    mcc: float
    confusion: ConfusionMatrix
    per_class: dict
    auroc: float | None = None
    aupr_out: float | None = None
    method: str | None = None

    @property
    def n_samples(self) -> int:
        return self.confusion.total

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "n_samples": self.n_samples,
            "accuracy": self.accuracy,
            "precision": dict(self.precision),
            "recall": dict(self.recall),
            "f1": dict(self.f1),
            "mcc": self.mcc,
            "auroc": self.auroc,
            "aupr_out": self.aupr_out,
            "per_class": self.per_class,
            "confusion": self.confusion.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        cm = ConfusionMatrix(np.array(d["confusion"]["counts"]), d["confusion"]["label_names"])
        return cls(d["accuracy"], d["precision"], d["recall"], d["f1"], d["mcc"], cm,
                   d["per_class"], d.get("auroc"), d.get("aupr_out"), d.get("method"))


def _report(cm: ConfusionMatrix, **extra) -> EvaluationReport:
    prf = prf_scores(cm)
    acc = float(np.trace(cm.counts) / cm.total) if cm.total else 0.0
    per_class = {
        name: {"precision": float(prf.precision[i]), "recall": float(prf.recall[i]),
               "f1": float(prf.f1[i]), "support": int(prf.support[i])}
        for i, name in enumerate(cm.label_names)
    }
    return EvaluationReport(
        accuracy=acc,
        precision={"macro": prf.macro["precision"], "micro": prf.micro["precision"]},
        recall={"macro": prf.macro["recall"], "micro": prf.micro["recall"]},
        f1={"macro": prf.macro["f1"], "micro": prf.micro["f1"]},
        mcc=mcc(cm),
        confusion=cm,
        per_class=per_class,
        **extra,
    )


def evaluate_closed_set(y_true, y_pred, label_names, method=None) -> EvaluationReport:
    """Metrics over an ordinary label space ``0..L-1`` (no unknown slot, no AUROC)."""
    cm = confusion_matrix(y_true, y_pred, len(label_names), label_names)
    return _report(cm, method=method)


def evaluate_open_set(prediction: OpenSetPrediction, y_true, method: str,
                      label_names=None) -> EvaluationReport:
    """Full open-set report over labels ``0..K`` (slot 0 = unknown).

    Unknown detection is scored with :func:`unknownness_score`; AUROC and
    AUPR-OUT are ``None`` when the truth has no unknowns (or, for AUROC, no
    knowns).
    """
    method = normalize_method(method)
    probs = np.atleast_2d(prediction.probs)
    y_pred = np.atleast_1d(prediction.predicted_label)
    y_true = np.asarray(y_true, dtype=np.int64)
    if len(y_true) != len(y_pred):
        raise ValueError("predictions and labels disagree in length")
    n_labels = probs.shape[1]
    if label_names is None:
        label_names = ("unknown", *[str(i) for i in range(1, n_labels)])
    cm = confusion_matrix(y_true, y_pred, n_labels, label_names)
    scores = np.atleast_1d(unknownness_score(method, OpenSetPrediction(probs, y_pred, None)))
    is_unknown = y_true == 0
    au = ap = None
    if is_unknown.any():
        ap = aupr_out(scores, is_unknown)
        if not is_unknown.all():
            au = auroc(scores, is_unknown)
    return _report(cm, auroc=au, aupr_out=ap, method=method)
