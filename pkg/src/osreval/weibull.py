"""Weibull models of the upper tail of a distance distribution.

The tail of a sample (its ``tail_size`` largest values) is translated so that
its smallest point sits just above zero, and a two-parameter Weibull is fitted
to the translated values by maximum likelihood. The profiled shape equation is
solved with a bracketed Newton iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# the smallest tail point ends up this far (relative) above the shift
SHIFT_MARGIN = 1e-6
MAX_ITER = 200
TOL = 1e-9


class WeibullFitError(ValueError):
    """The tail cannot be fitted: too few samples, a degenerate tail or no convergence."""


@dataclass(frozen=True)
class WeibullModel:
    tau: float
    lam: float
    kappa: float
    tail_size: int

    def __post_init__(self):
        if not (self.lam > 0 and self.kappa > 0):
            raise ValueError(f"scale and shape must be positive, got lam={self.lam}, kappa={self.kappa}")
        if int(self.tail_size) < 2:
            raise ValueError("tail_size must be at least 2")

    def cdf(self, d):
        """``1 - exp(-((d - tau) / lam) ** kappa)`` above the shift, 0 at or below it."""
        return weibull_cdf(self, d)

    def to_dict(self) -> dict:
        return {"tau": float(self.tau), "lambda": float(self.lam), "kappa": float(self.kappa),
                "tail_size": int(self.tail_size)}

    @classmethod
    def from_dict(cls, d: dict) -> "WeibullModel":
        return cls(float(d["tau"]), float(d["lambda"]), float(d["kappa"]), int(d["tail_size"]))


def weibull_cdf(model: WeibullModel, d):
    d = np.asarray(d, dtype=np.float64)
    z = np.maximum(d - model.tau, 0.0) / model.lam
    out = np.where(d > model.tau, -np.expm1(-np.power(z, model.kappa)), 0.0)
    return float(out) if out.ndim == 0 else out


def _shape_equation(k, y, ybar):
    """Profiled shape equation and its derivative, with ``y = log(x) - max(log(x))``."""
    w = np.exp(k * y)
    s0 = w.sum()
    m1 = (w * y).sum() / s0
    m2 = (w * y * y).sum() / s0
    return m1 - ybar - 1.0 / k, (m2 - m1 * m1) + 1.0 / (k * k)


def weibull_mle(x, tol: float = TOL, max_iter: int = MAX_ITER):
    """Maximum-likelihood ``(lam, kappa)`` for strictly positive samples ``x``.

    The root of the shape equation is kept inside a sign-change bracket; Newton
    steps that leave the bracket are replaced by bisection. Convergence is
    declared when the residual scaled by ``kappa`` drops below ``tol``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2 or np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise WeibullFitError("MLE needs at least 2 finite, strictly positive values")
    logx = np.log(x)
    top = logx.max()
    y = logx - top
    ybar = y.mean()
    var = y.var()
    if var <= 0:
        raise WeibullFitError("degenerate tail: all values identical")

    # log-variance of a Weibull is pi^2 / (6 kappa^2)
    k = math.pi / math.sqrt(6.0 * var)
    lo = hi = k
    for _ in range(MAX_ITER):
        if _shape_equation(lo, y, ybar)[0] < 0:
            break
        lo /= 2.0
    for _ in range(MAX_ITER):
        if _shape_equation(hi, y, ybar)[0] > 0:
            break
        hi *= 2.0
    if not (_shape_equation(lo, y, ybar)[0] < 0 < _shape_equation(hi, y, ybar)[0]):
        raise WeibullFitError("could not bracket the shape parameter")

    for _ in range(max_iter):
        g, dg = _shape_equation(k, y, ybar)
        if abs(g) * k <= tol:
            break
        if g < 0:
            lo = k
        else:
            hi = k
        step = k - g / dg
        k = step if lo < step < hi else 0.5 * (lo + hi)
    else:
        raise WeibullFitError(f"shape equation did not converge in {max_iter} iterations")

    lam = math.exp(top) * float(np.mean(np.exp(k * y))) ** (1.0 / k)
    return lam, k


def fit_weibull_tail(distances, tail_size: int, clamp_tail: bool = False) -> WeibullModel:
    """Fit a :class:`WeibullModel` to the ``tail_size`` largest ``distances``.

    With ``clamp_tail`` a sample shorter than ``tail_size`` is fitted on all of
    its values instead of raising.
    """
    d = np.asarray(distances, dtype=np.float64).ravel()
    if not np.all(np.isfinite(d)):
        raise WeibullFitError("distances must be finite")
    if np.any(d < 0):
        raise WeibullFitError("distances must be nonnegative")
    tail_size = int(tail_size)
    if tail_size < 2:
        raise WeibullFitError("tail_size must be at least 2")
    if d.size < tail_size:
        if not clamp_tail or d.size < 2:
            raise WeibullFitError(f"need {tail_size} distances for the tail, got {d.size}")
        tail_size = d.size

    tail = np.sort(d)[-tail_size:]
    lo, hi = tail[0], tail[-1]
    if hi == lo:
        raise WeibullFitError("degenerate tail: all values identical")
    # relative margin keeps the fit exactly scale-equivariant
    tau = lo - SHIFT_MARGIN * (lo if lo > 0 else hi)
    lam, kappa = weibull_mle(tail - tau)
    return WeibullModel(tau=float(tau), lam=float(lam), kappa=float(kappa), tail_size=tail_size)


def sample_weibull(model: WeibullModel, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` values by inverse-CDF sampling; uniforms lie strictly inside (0, 1)."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    u = (rng.integers(0, 2**53, size=n).astype(np.float64) + 0.5) / 2.0**53
    return model.tau + model.lam * np.power(-np.log1p(-u), 1.0 / model.kappa)
