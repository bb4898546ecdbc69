"""Extreme value calibration: low-tail extraction, Weibull MLE, inclusion probability.

The two-parameter Weibull is fit by maximum likelihood. The scale is
profiled out, leaving a single equation in the shape ``k``::

    g(k) = sum(x**k * ln x) / sum(x**k) - 1/k - mean(ln x) = 0

``g`` is strictly increasing, negative near zero and positive for large
``k`` whenever the sample is not constant, so the root is unique. It is
found with Newton steps kept inside a shrinking bracket, falling back to
bisection whenever a step would leave the bracket.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import DegenerateDataError, InvalidInputError, NumericError

DISTANCE_FLOOR = 1e-12
MAX_ITER = 200
REL_TOL = 1e-9


@dataclass(frozen=True)
class WeibullFit:
    shape: float
    scale: float
    tail_size_used: int
    clamped: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.shape) and self.shape > 0):
            raise InvalidInputError(f"Weibull shape must be finite and positive, got {self.shape}")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise InvalidInputError(f"Weibull scale must be finite and positive, got {self.scale}")
        if self.tail_size_used < 2:
            raise InvalidInputError("a Weibull fit needs at least two samples")


class Tail(NamedTuple):
    values: np.ndarray
    clamped: bool


def extract_tail(dist, tau: int) -> Tail:
    """The ``tau`` smallest values in ascending order; ties keep input order.

    With fewer than ``tau`` values, all of them are returned and ``clamped``
    is set.
    """
    if int(tau) != tau or tau < 2:
        raise InvalidInputError(f"tail size must be an integer >= 2, got {tau}")
    dist = np.asarray(dist, dtype=np.float64).ravel()
    if dist.size == 0:
        raise InvalidInputError("cannot take the tail of an empty sample")
    order = np.argsort(dist, kind="stable")[: int(tau)]
    return Tail(dist[order], dist.size < tau)


def _score(log_y: np.ndarray, mean_log: float, k: float) -> tuple[float, float]:
    """Profile score g(k) and its derivative for log-data with max(log_y) == 0."""
    w = np.exp(k * log_y)
    s0 = w.sum()
    s1 = np.dot(w, log_y)
    s2 = np.dot(w, log_y * log_y)
    m1 = s1 / s0
    g = m1 - 1.0 / k - mean_log
    dg = s2 / s0 - m1 * m1 + 1.0 / (k * k)
    return g, dg


def fit_weibull_mle(tail) -> WeibullFit:
    """Maximum-likelihood (shape, scale) for a sample of positive values."""
    x = np.asarray(tail, dtype=np.float64).ravel()
    if x.size < 2:
        raise InvalidInputError("Weibull fitting needs at least two values")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("Weibull sample contains non-finite values")
    if np.any(x <= 0):
        raise InvalidInputError("Weibull sample must be strictly positive")
    x_max = x.max()
    if x.min() == x_max:
        raise DegenerateDataError(f"all {x.size} values equal {x_max!r}; the shape is unbounded")

    # Dividing by the maximum keeps every x**k in (0, 1] and makes the fit
    # scale-equivariant by construction.
    log_y = np.log(x / x_max)
    mean_log = float(log_y.mean())
    sd = float(log_y.std())
    if sd == 0.0:
        raise DegenerateDataError("sample has no spread on the log scale")

    # Method of moments on log-data: var(ln X) = pi^2 / (6 k^2).
    k = math.pi / (math.sqrt(6.0) * sd)
    lo, hi = 0.0, math.inf
    history = []
    for _ in range(MAX_ITER):
        g, dg = _score(log_y, mean_log, k)
        history.append((k, g))
        if g > 0:
            hi = min(hi, k)
        elif g < 0:
            lo = max(lo, k)
        else:
            break
        step = g / dg
        k_new = k - step
        if not (lo < k_new < hi) or not math.isfinite(k_new):
            k_new = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * k if g < 0 else 0.5 * k
        if abs(k_new - k) <= REL_TOL * k:
            k = k_new
            break
        k = k_new
    else:
        tail = ", ".join(f"k={a:.6g} g={b:.3g}" for a, b in history[-3:])
        raise NumericError(
            f"Weibull shape did not converge in {MAX_ITER} iterations "
            f"(n={x.size}, bracket=[{lo:.6g}, {hi:.6g}], last: {tail})"
        )

    scale = x_max * float(np.mean(np.exp(k * log_y))) ** (1.0 / k)
    if not (math.isfinite(k) and math.isfinite(scale) and k > 0 and scale > 0):
        raise NumericError(f"Weibull fit produced invalid parameters k={k}, scale={scale}")
    return WeibullFit(float(k), float(scale), int(x.size))


def fit_low_tail(dist, tau: int) -> WeibullFit:
    """Extract the low tail of ``dist``, floor tiny distances, and fit."""
    values, clamped = extract_tail(dist, tau)
    values = np.maximum(values, DISTANCE_FLOOR)
    fit = fit_weibull_mle(values)
    return WeibullFit(fit.shape, fit.scale, fit.tail_size_used, clamped)


def weibull_log_likelihood(x, shape: float, scale: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    z = x / scale
    return float(
        x.size * (math.log(shape) - math.log(scale))
        + (shape - 1.0) * np.log(z).sum()
        - np.power(z, shape).sum()
    )


def psi(fit: WeibullFit, d) -> float | np.ndarray:
    """Probability of inclusion exp(-(d / scale) ** shape) for distance(s) ``d``."""
    arr = np.asarray(d, dtype=np.float64)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise InvalidInputError("psi needs non-negative distances")
    out = np.exp(-np.power(arr / fit.scale, fit.shape))
    return float(out) if out.ndim == 0 else out
