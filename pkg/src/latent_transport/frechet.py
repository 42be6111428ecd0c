"""Warp maps as distributions on [0, 1]: Wasserstein geometry and global Fréchet regression.

A warp map is increasing from 0 to 1, so it is the distribution function of a
law on the unit interval.  Its piecewise-linear inverse is the quantile
function, and the 2-Wasserstein distance is the L2 distance of quantile
functions.  Global Fréchet regression on a scalar covariate reduces to a
weighted average of quantile functions followed by a projection onto
nondecreasing functions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import List, Sequence

import numpy as np
from scipy.optimize import isotonic_regression

from .core import MONOTONE_TOL, TimeGrid, WarpMap, _thin, invert

__all__ = [
    "TransportDistribution",
    "ExtrapolationWarning",
    "UndefinedVarianceWarning",
    "wasserstein2",
    "frechet_weights",
    "quantile_grid",
    "global_frechet_regression",
    "frechet_mean",
    "frechet_r_squared",
    "FrechetFit",
    "fit_frechet",
    "U_POINTS",
]

U_POINTS = 101
# mixing weight toward the uniform law used when projection leaves flat quantile pieces
TIE_MIX = 1e-7


class ExtrapolationWarning(UserWarning):
    """Prediction outside the covariate range; weights may be strongly negative."""


class UndefinedVarianceWarning(UserWarning):
    """All responses coincide, so the Fréchet R^2 is undefined."""


class TransportDistribution:
    """A warp map read as a distribution function on [0, 1]."""

    def __init__(self, cdf: WarpMap):
        if not isinstance(cdf, WarpMap):
            cdf = WarpMap(cdf.grid, cdf.values)
        if cdf.grid.lo != 0.0 or cdf.grid.hi != 1.0:
            raise ValueError("transport distributions live on [0, 1]")
        self.cdf = cdf

    @classmethod
    def from_quantile(cls, u, q) -> "TransportDistribution":
        u = np.asarray(u, dtype=float)
        q = np.asarray(q, dtype=float)
        # drop nodes whose values are within rounding of their neighbour
        idx = _thin(u, q)
        return cls(invert(WarpMap(TimeGrid(u[idx]), q[idx])))

    @cached_property
    def quantile(self) -> WarpMap:
        return invert(self.cdf)

    def __call__(self, t):
        return self.cdf(t)

    def __repr__(self) -> str:
        return f"TransportDistribution({self.cdf.grid.m} breakpoints)"


def _as_dist(d) -> TransportDistribution:
    return d if isinstance(d, TransportDistribution) else TransportDistribution(d)


def _pl_sq_integral(u: np.ndarray, d: np.ndarray) -> float:
    """Exact integral of the square of a piecewise-linear function with nodes (u, d)."""
    h = np.diff(u)
    d0, d1 = d[:-1], d[1:]
    return float(np.sum(h * (d0 * d0 + d0 * d1 + d1 * d1)) / 3.0)


def wasserstein2(a, b) -> float:
    """2-Wasserstein distance, integrated exactly over the union of quantile breakpoints."""
    qa, qb = _as_dist(a).quantile, _as_dist(b).quantile
    u = np.union1d(qa.grid.points, qb.grid.points)
    d = qa(u) - qb(u)
    return float(np.sqrt(max(_pl_sq_integral(u, d), 0.0)))


def frechet_weights(x, x0: float) -> np.ndarray:
    """Global Fréchet regression weights ``1 + (x_i - xbar)(x0 - xbar) / s^2``.

    ``s^2`` is the variance with divisor n.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("need at least two scalar covariates")
    xbar = x.mean()
    s2 = np.mean((x - xbar) ** 2)
    if not s2 > 0:
        raise ValueError("covariates have zero variance; regression is undefined")
    return 1.0 + (x - xbar) * (x0 - xbar) / s2


def quantile_grid(dists: Sequence[TransportDistribution], points: int = U_POINTS) -> np.ndarray:
    """A uniform u-grid merged with every breakpoint of the quantile functions.

    Weighted averages of the quantile functions are exact on this grid.
    """
    u = np.linspace(0.0, 1.0, points)
    for d in dists:
        u = np.union1d(u, d.quantile.grid.points)
    return _thin(u)


def _trapezoid_weights(u: np.ndarray) -> np.ndarray:
    h = np.diff(u)
    w = np.zeros_like(u)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def _project(u: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, bool]:
    """Nearest nondecreasing quantile values with fixed endpoints 0 and 1.

    Returns the projected values and whether projection changed anything.
    """
    if np.all(np.diff(q) > MONOTONE_TOL) and q[0] == 0.0 and q[-1] == 1.0:
        return q, False
    inner = isotonic_regression(q[1:-1], weights=_trapezoid_weights(u)[1:-1]).x
    out = np.concatenate(([0.0], np.clip(inner, 0.0, 1.0), [1.0]))
    if np.any(np.diff(out) <= MONOTONE_TOL):
        # flat pieces would be jumps of the distribution function; mix in a
        # little of the uniform law to keep a strictly increasing warp
        out = (1.0 - TIE_MIX) * out + TIE_MIX * u
        out[0], out[-1] = 0.0, 1.0
    return out, True


def _weighted_quantile(dists, weights, u) -> np.ndarray:
    Q = np.vstack([d.quantile(u) for d in dists])
    q = weights @ Q / len(dists)
    q[0], q[-1] = 0.0, 1.0
    return q


def global_frechet_regression(transports, x, x0: float, points: int = U_POINTS) -> TransportDistribution:
    """Conditional Fréchet mean of ``transports`` at covariate value ``x0``.

    Minimizes ``sum_i q_i d_W^2(T_i, T)`` over distributions on [0, 1]; the
    minimizer is the weighted quantile average, projected onto nondecreasing
    functions when negative weights break monotonicity.
    """
    dists = [_as_dist(t) for t in transports]
    x = np.asarray(x, dtype=float)
    if len(dists) != x.size:
        raise ValueError("one covariate per transport is required")
    if x0 < x.min() or x0 > x.max():
        warnings.warn(f"x0={x0!r} lies outside the covariate range [{float(x.min())!r}, {float(x.max())!r}]; "
                      "regression weights can be strongly negative", ExtrapolationWarning, stacklevel=2)
    q = frechet_weights(x, x0)
    u = quantile_grid(dists, points)
    qu, _ = _project(u, _weighted_quantile(dists, q, u))
    return TransportDistribution.from_quantile(u, qu)


def frechet_mean(transports, points: int = U_POINTS) -> TransportDistribution:
    """Unweighted Fréchet mean (average quantile function)."""
    dists = [_as_dist(t) for t in transports]
    u = quantile_grid(dists, points)
    qu, _ = _project(u, _weighted_quantile(dists, np.ones(len(dists)), u))
    return TransportDistribution.from_quantile(u, qu)


@dataclass(frozen=True)
class RSquared:
    value: float
    raw: float
    clipped: bool
    defined: bool


def _r_squared(dists, fitted, mean) -> RSquared:
    res = sum(wasserstein2(d, f) ** 2 for d, f in zip(dists, fitted))
    tot = sum(wasserstein2(d, mean) ** 2 for d in dists)
    if not tot > 1e-300:
        warnings.warn("all transports coincide; the Fréchet R^2 is undefined",
                      UndefinedVarianceWarning, stacklevel=3)
        return RSquared(float("nan"), float("nan"), False, False)
    raw = 1.0 - res / tot
    val = min(max(raw, 0.0), 1.0)
    return RSquared(val, raw, val != raw, True)


def frechet_r_squared(transports, x, points: int = U_POINTS) -> float:
    """Fréchet coefficient of determination, clipped to [0, 1].

    ``1 - sum_i d^2(T_i, m(x_i)) / sum_i d^2(T_i, mean)``; NaN (with an
    :class:`UndefinedVarianceWarning`) when all transports coincide.
    """
    return fit_frechet(transports, x, points).r_squared


@dataclass(frozen=True)
class FrechetFit:
    """Global Fréchet regression of transports on a scalar covariate."""

    x: np.ndarray
    transports: List[TransportDistribution]
    mean: TransportDistribution
    r2: RSquared
    points: int = U_POINTS

    @property
    def r_squared(self) -> float:
        return self.r2.value

    def fitted(self, x0: float) -> TransportDistribution:
        return global_frechet_regression(self.transports, self.x, x0, self.points)


def fit_frechet(transports, x, points: int = U_POINTS) -> FrechetFit:
    dists = [_as_dist(t) for t in transports]
    x = np.asarray(x, dtype=float)
    if len(dists) != x.size:
        raise ValueError("one covariate per transport is required")
    frechet_weights(x, float(x.mean()))  # validates the covariates
    mean = frechet_mean(dists, points)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExtrapolationWarning)
        fitted = [global_frechet_regression(dists, x, float(xi), points) for xi in x]
    return FrechetFit(x, dists, mean, _r_squared(dists, fitted, mean), points)
