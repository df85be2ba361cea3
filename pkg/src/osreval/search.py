"""Deterministic hyperparameter search over open-set rejection parameters.

Grid search walks the Cartesian product of per-parameter grids; random search
draws each trial from its own generator seeded by ``(seed, trial)``. Both pick
the highest objective and break ties with the lexicographically smallest
parameter tuple, so results never depend on evaluation order.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .metrics import confusion_matrix
from .openmax import (
    CalibrationError,
    OpenMaxModel,
    SoftmaxModel,
    calibrate_openmax,
    class_cdfs,
    compute_mavs,
    normalize_method,
    predict_openmax,
    predict_softmax_threshold,
)
from .weibull import fit_weibull_tail


class TrialFailed(Exception):
    """Raised by an objective to mark one configuration as failed (scored -inf)."""


class SearchError(RuntimeError):
    """The objective raised something other than :class:`TrialFailed`."""

    def __init__(self, params, cause):
        self.params = params
        super().__init__(f"objective failed at {params}: {cause!r}")


class SearchExhausted(RuntimeError):
    """Every trial failed."""


@dataclass(frozen=True)
class Parameter:
    name: str
    kind: str
    lo: float
    hi: float

    def __post_init__(self):
        if self.kind not in ("float", "int"):
            raise ValueError(f"parameter kind must be 'float' or 'int', got {self.kind!r}")
        if self.lo > self.hi:
            raise ValueError(f"{self.name}: lower bound {self.lo} exceeds upper bound {self.hi}")
        if self.kind == "int" and (int(self.lo) != self.lo or int(self.hi) != self.hi):
            raise ValueError(f"{self.name}: integer bounds required")

    def grid(self, resolution: int) -> list:
        if resolution < 1:
            raise ValueError("resolution must be at least 1")
        if self.kind == "int":
            lo, hi = int(self.lo), int(self.hi)
            if hi - lo + 1 <= resolution:
                return list(range(lo, hi + 1))
            pts = np.round(np.linspace(lo, hi, resolution)).astype(int)
            return sorted({int(x) for x in pts})
        if resolution == 1 or self.lo == self.hi:
            return [float(self.lo)]
        # rounding strips linspace noise (0.7949999999999999 -> 0.795) from logged values
        pts = np.round(np.linspace(self.lo, self.hi, resolution), 12)
        return [float(min(max(x, self.lo), self.hi)) for x in pts]

    def sample(self, rng: np.random.Generator):
        if self.kind == "int":
            return int(rng.integers(int(self.lo), int(self.hi) + 1))
        return float(min(max(rng.uniform(self.lo, self.hi), self.lo), self.hi))

    def contains(self, value) -> bool:
        return self.lo <= value <= self.hi


SPACE_PARAMETERS = {
    "softmax-threshold": ("softmax_threshold",),
    "openmax": ("weibull_tail", "weibull_alpha", "weibull_threshold"),
}


@dataclass(frozen=True)
class SearchSpace:
    method: str
    parameters: tuple[Parameter, ...]

    def __post_init__(self):
        method = normalize_method(self.method)
        if method not in SPACE_PARAMETERS:
            raise ValueError(f"no tunable parameters for method {method!r}")
        names = tuple(p.name for p in self.parameters)
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        if set(names) != set(SPACE_PARAMETERS[method]):
            raise ValueError(f"{method} space must have exactly {SPACE_PARAMETERS[method]}, got {names}")
        object.__setattr__(self, "method", method)
        object.__setattr__(self, "parameters", tuple(self.parameters))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.parameters)

    def __getitem__(self, name) -> Parameter:
        for p in self.parameters:
            if p.name == name:
                return p
        raise KeyError(name)

    def with_bounds(self, name: str, lo, hi) -> "SearchSpace":
        return SearchSpace(self.method, tuple(
            replace(p, lo=lo, hi=hi) if p.name == name else p for p in self.parameters))

    def contains(self, params: dict) -> bool:
        return set(params) == set(self.names) and all(p.contains(params[p.name]) for p in self.parameters)


def default_space(method: str) -> SearchSpace:
    """Search ranges: threshold 0.50-0.95 for softmax thresholding; tail 20-400,
    alpha 1-3 and threshold 0.60-0.99 for OpenMax."""
    method = normalize_method(method)
    if method == "softmax-threshold":
        return SearchSpace(method, (Parameter("softmax_threshold", "float", 0.50, 0.95),))
    if method == "openmax":
        return SearchSpace(method, (
            Parameter("weibull_tail", "int", 20, 400),
            Parameter("weibull_alpha", "int", 1, 3),
            Parameter("weibull_threshold", "float", 0.60, 0.99),
        ))
    raise ValueError(f"no tunable parameters for method {method!r}")


@dataclass(frozen=True)
class TrialResult:
    params: dict
    objective: float
    trial_index: int
    seed: int | None = None
    status: str = "ok"

    def key(self, names):
        return tuple(self.params[n] for n in names)

    def to_dict(self) -> dict:
        return {
            "trial": self.trial_index,
            "params": dict(self.params),
            "objective": self.objective if math.isfinite(self.objective) else None,
            "status": self.status,
        }


@dataclass
class SearchResult:
    best: TrialResult
    trials: list[TrialResult]
    artifact: object = field(default=None, repr=False)

    def trial_log(self) -> str:
        """JSON-lines trial log, one trial per line in trial order."""
        return "".join(json.dumps(t.to_dict(), allow_nan=False) + "\n" for t in self.trials)


def best_trial(trials, names) -> TrialResult:
    ok = [t for t in trials if t.status == "ok"]
    if not ok:
        raise SearchExhausted(f"all {len(trials)} trials failed")
    top = max(t.objective for t in ok)
    return min((t for t in ok if t.objective == top), key=lambda t: t.key(names))


def _run_trial(objective_fn, params, index, seed):
    try:
        value = float(objective_fn(params))
    except TrialFailed:
        return TrialResult(params, -math.inf, index, seed, "failed")
    except Exception as exc:
        raise SearchError(params, exc) from exc
    if math.isnan(value):
        return TrialResult(params, -math.inf, index, seed, "failed")
    return TrialResult(params, value, index, seed)


def grid_search(space: SearchSpace, objective_fn, resolution=5) -> SearchResult:
    """Evaluate every grid point. ``resolution`` is an int or a per-parameter dict."""
    if isinstance(resolution, dict):
        res = [int(resolution.get(p.name, 5)) for p in space.parameters]
    else:
        res = [int(resolution)] * len(space.parameters)
    axes = [p.grid(r) for p, r in zip(space.parameters, res)]
    trials = []
    for i, values in enumerate(itertools.product(*axes)):
        params = dict(zip(space.names, values))
        trials.append(_run_trial(objective_fn, params, i, None))
    return SearchResult(best_trial(trials, space.names), trials)


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, trial]).generate_state(1, dtype=np.uint32)[0])


def random_search(space: SearchSpace, objective_fn, n_trials: int, seed: int) -> SearchResult:
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    trials = []
    for t in range(n_trials):
        sub = trial_seed(seed, t)
        rng = np.random.default_rng(sub)
        params = {p.name: p.sample(rng) for p in space.parameters}
        trials.append(_run_trial(objective_fn, params, t, sub))
    return SearchResult(best_trial(trials, space.names), trials)


def _accuracy(y_true, y_pred, n_labels) -> float:
    cm = confusion_matrix(y_true, y_pred, n_labels)
    return float(np.trace(cm.counts) / cm.total)


class _OpenMaxObjective:
    """Validation accuracy of OpenMax, with tail fits and CDF tables cached per tail size."""

    def __init__(self, train_logits, train_labels, val_logits, val_labels, distance_kind, gamma, clamp_tail):
        self.val_logits = np.asarray(val_logits, dtype=np.float64)
        self.val_labels = np.asarray(val_labels)
        self.k = self.val_logits.shape[1]
        self.distance_kind, self.gamma, self.clamp_tail = distance_kind, gamma, clamp_tail
        try:
            self.mavs, self.dists = compute_mavs(train_logits, train_labels, None, distance_kind, gamma)
        except CalibrationError as exc:
            self.mavs, self.error = None, exc
        self._cache = {}

    def model(self, params) -> OpenMaxModel:
        tail = int(params["weibull_tail"])
        if tail not in self._cache:
            if self.mavs is None:
                raise TrialFailed(str(self.error))
            try:
                weibulls = tuple(fit_weibull_tail(d, tail, clamp_tail=self.clamp_tail) for d in self.dists)
            except ValueError as exc:
                self._cache[tail] = exc
            else:
                base = OpenMaxModel(self.mavs, weibulls, 1, 0.0, self.distance_kind, self.gamma)
                self._cache[tail] = (base, class_cdfs(base, self.val_logits))
        entry = self._cache[tail]
        if isinstance(entry, Exception):
            raise TrialFailed(str(entry))
        alpha = int(params["weibull_alpha"])
        if alpha > self.k:
            raise TrialFailed(f"alpha {alpha} exceeds the number of known classes {self.k}")
        return entry[0].with_params(alpha, float(params["weibull_threshold"]))

    def __call__(self, params) -> float:
        model = self.model(params)
        cdfs = self._cache[int(params["weibull_tail"])][1]
        pred = predict_openmax(model, self.val_logits, cdfs).predicted_label
        return _accuracy(self.val_labels, pred, self.k + 1)


def tune_osr(method: str, train_logits, train_labels, val_logits, val_labels, space=None,
             strategy: str = "grid", budget=5, seed: int = 0, distance_kind: str = "euclidean",
             gamma: float = 200.0, clamp_tail: bool = False) -> SearchResult:
    """Tune a rejection method for open-set accuracy on a validation view.

    Labels are open-set labels (0 = unknown, known classes ``1..K``). The
    training data must hold known classes only. For ``strategy="grid"``,
    ``budget`` is the per-parameter grid resolution (int or dict); for
    ``"random"`` it is the number of trials. The returned result carries the
    best configuration's model in ``artifact``.
    """
    method = normalize_method(method)
    space = default_space(method) if space is None else space
    if space.method != method:
        raise ValueError(f"search space is for {space.method}, not {method}")
    val_logits = np.atleast_2d(np.asarray(val_logits, dtype=np.float64))
    val_labels = np.asarray(val_labels)
    if len(val_labels) == 0:
        raise ValueError("validation view is empty")
    k = val_logits.shape[1]

    if method == "softmax-threshold":
        def objective(params):
            pred = predict_softmax_threshold(val_logits, params["softmax_threshold"]).predicted_label
            return _accuracy(val_labels, pred, k + 1)
    else:
        objective = _OpenMaxObjective(train_logits, train_labels, val_logits, val_labels,
                                      distance_kind, gamma, clamp_tail)

    if strategy == "grid":
        result = grid_search(space, objective, budget)
    elif strategy == "random":
        result = random_search(space, objective, int(budget), seed)
    else:
        raise ValueError(f"unknown search strategy {strategy!r}")

    best = result.best.params
    if method == "softmax-threshold":
        result.artifact = SoftmaxModel(float(best["softmax_threshold"]))
    else:
        result.artifact = calibrate_openmax(
            train_logits, train_labels, int(best["weibull_tail"]), int(best["weibull_alpha"]),
            float(best["weibull_threshold"]), distance_kind, gamma, clamp_tail)
    return result
