"""Penalized pairwise warping with linear-spline warping functions.

A warping function ``v`` on ``[0, 1]`` is represented by its values ``theta``
at ``L`` equidistant interior knots and at the right endpoint,
``0 < theta_1 < ... < theta_{L+1} = 1``.  For a target curve ``f`` and a
moving curve ``g`` the fitted warp minimizes

    int (g(v(t)) - f(t))^2 dt + eta * int (v(t) - t)^2 dt

so that ``g o v`` is aligned to ``f``.  Subject-level warps are averages of
the pairwise warps that align every curve of the sample to a given curve.
"""

from __future__ import annotations

import logging
import os
import warnings
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from . import _kernels
from .core import (
    Curve,
    DegenerateInputError,
    DomainError,
    InvariantError,
    MONOTONE_TOL,
    TimeGrid,
    WarpMap,
    evaluate,
)

__all__ = [
    "WarpSpline",
    "PairwiseConfig",
    "WarpDiagnostics",
    "OptimizationWarning",
    "knots",
    "spline_to_warpmap",
    "pairwise_objective",
    "pairwise_warp",
    "default_eta1",
    "subject_warp_for_component",
    "fit_warp_pairs",
]

logger = logging.getLogger(__name__)

# knot count range outside which fits are known to degrade
RELIABLE_KNOTS = (3, 6)


class OptimizationWarning(UserWarning):
    """The optimizer hit its iteration budget before meeting the tolerances."""


def knots(L: int) -> np.ndarray:
    """Knot positions ``0, 1/(L+1), ..., 1`` (length L+2)."""
    return np.arange(L + 2) / (L + 1)


@dataclass(frozen=True)
class WarpSpline:
    """Knot values ``theta_1 < ... < theta_{L+1} = 1`` of a linear-spline warp."""

    theta: np.ndarray
    status: str = "ok"
    objective: float = float("nan")

    def __post_init__(self):
        th = np.array(self.theta, dtype=float)
        if th.ndim != 1 or th.size < 2:
            raise InvariantError("theta must hold at least two knot values")
        if abs(th[-1] - 1.0) > MONOTONE_TOL:
            raise InvariantError("the last knot value must equal 1")
        th[-1] = 1.0
        full = np.concatenate(([0.0], th))
        if np.any(np.diff(full) <= MONOTONE_TOL):
            raise InvariantError("knot values must satisfy 0 < theta_1 < ... < theta_{L+1} = 1")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    @classmethod
    def identity(cls, L: int) -> "WarpSpline":
        return cls(knots(L)[1:])

    @property
    def L(self) -> int:
        return self.theta.size - 1

    @property
    def knot_values(self) -> np.ndarray:
        return np.concatenate(([0.0], self.theta))

    def to_warpmap(self) -> WarpMap:
        """The exact piecewise-linear map through ``(t_l, theta_l)``."""
        return WarpMap(TimeGrid(knots(self.L)), self.knot_values)

    def __call__(self, t):
        return evaluate(self.to_warpmap(), t)

    def __eq__(self, other):
        return isinstance(other, WarpSpline) and np.array_equal(self.theta, other.theta)

    def __hash__(self):
        return hash(self.theta.tobytes())


def spline_to_warpmap(s: WarpSpline, grid: TimeGrid | None = None) -> WarpMap:
    """Evaluate the spline warp on ``grid`` (or return it on its own knots)."""
    w = s.to_warpmap()
    if grid is None:
        return w
    _require_unit(grid)
    return WarpMap(grid, evaluate(w, grid.points))


@dataclass(frozen=True)
class PairwiseConfig:
    """Settings of one penalized warping problem.

    ``starts`` fixes the multi-start pattern: the identity plus two
    perturbations of the logits with alternating signs.
    """

    L: int = 4
    eta1: float = 0.0
    max_iter: int = 2000
    restarts: int = 3
    step: float = 0.5
    perturbation: float = 0.75
    xatol: float = 1e-5
    fatol: float = 1e-11
    floor: float = 1e-6

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be at least 1")
        if self.eta1 < 0:
            raise ValueError("eta1 must be nonnegative")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if not 0 < self.floor < 1.0 / (self.L + 1):
            raise ValueError("floor must lie in (0, 1/(L+1))")

    def start_points(self) -> np.ndarray:
        L = self.L
        pattern = np.where(np.arange(L) % 2 == 0, 1.0, -1.0) * self.perturbation
        cands = [np.zeros(L), pattern, -pattern]
        k = 2
        while len(cands) < self.restarts:
            cands.append(pattern * k)
            cands.append(-pattern * k)
            k += 1
        return np.ascontiguousarray(np.array(cands[: self.restarts]))


@dataclass
class WarpDiagnostics:
    """Per-pair optimizer outcomes collected during a warping stage."""

    stage: str = ""
    eta: float = 0.0
    pairs: int = 0
    not_converged: List[tuple] = field(default_factory=list)
    degenerate: List[tuple] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.not_converged and not self.degenerate

    def as_dict(self) -> dict:
        return {
            "stage": self.stage,
            "eta": self.eta,
            "pairs": self.pairs,
            "not_converged": [list(p) for p in self.not_converged],
            "degenerate": [list(p) for p in self.degenerate],
        }


def _require_unit(grid: TimeGrid):
    if grid.lo != 0.0 or grid.hi != 1.0:
        raise DomainError("warping operates on the unit interval; rescale time to [0, 1] first")


def _layout(grid: TimeGrid, L: int):
    pts = np.ascontiguousarray(grid.points)
    kn = knots(L)
    seg = np.clip(np.searchsorted(kn, pts, side="right") - 1, 0, L)
    frac = (pts - kn[seg]) / (kn[seg + 1] - kn[seg])
    wq = np.empty_like(pts)
    d = np.diff(pts)
    wq[0] = d[0] / 2
    wq[-1] = d[-1] / 2
    wq[1:-1] = (d[:-1] + d[1:]) / 2
    return pts, grid.is_uniform, wq, seg.astype(np.int64), frac


def _common_grid(*curves: Curve) -> TimeGrid:
    grid = curves[0].grid
    for c in curves[1:]:
        if c.grid != grid:
            raise DomainError("curves must share a common grid")
    _require_unit(grid)
    return grid


def pairwise_objective(theta, target: Curve, moving: Curve, eta1: float) -> float:
    """Penalized alignment cost of warping ``moving`` onto ``target``.

    Parameters
    ----------
    theta : WarpSpline or array-like
        Knot values ``theta_1, ..., theta_{L+1}``.
    target, moving : Curve
        Normalized curves on a common grid over ``[0, 1]``.
    eta1 : float
        Penalty weight on ``int (v(t) - t)^2 dt``.
    """
    if not isinstance(theta, WarpSpline):
        theta = WarpSpline(np.asarray(theta, dtype=float))
    grid = _common_grid(target, moving)
    t = grid.points
    v = evaluate(theta.to_warpmap(), t)
    data = (evaluate(moving, v) - target.values) ** 2
    pen = (v - t) ** 2
    return float(np.trapezoid(data + eta1 * pen, t))


def fit_warp_pairs(bank: np.ndarray, grid: TimeGrid, target_idx, moving_idx,
                   cfg: PairwiseConfig, eta: float):
    """Solve the warping problem for many (target, moving) row pairs of ``bank``.

    Returns ``(thetas, objective_values, converged)`` with ``thetas`` of shape
    (P, L+1) holding ``theta_1 .. theta_{L+1}``.
    """
    _require_unit(grid)
    _set_threads()
    pts, uniform, wq, seg, frac = _layout(grid, cfg.L)
    bank = np.ascontiguousarray(bank, dtype=float)
    ti = np.ascontiguousarray(target_idx, dtype=np.int64)
    mi = np.ascontiguousarray(moving_idx, dtype=np.int64)
    if ti.size == 0:
        return np.empty((0, cfg.L + 1)), np.empty(0), np.empty(0, dtype=bool)
    thetas, fvals, status = _kernels.fit_pairs(
        bank, ti, mi, pts, uniform, wq, seg, frac, cfg.L, float(eta), cfg.floor,
        cfg.start_points(), cfg.step, cfg.max_iter, cfg.xatol, cfg.fatol)
    return thetas[:, 1:], fvals, status == _kernels.STATUS_OK


def _set_threads():
    env = os.environ.get("LTM_THREADS")
    if env:
        import numba

        numba.set_num_threads(max(1, min(int(env), numba.config.NUMBA_NUM_THREADS)))


def _is_constant(values: np.ndarray) -> bool:
    return float(np.ptp(values)) <= 1e-12 * max(1.0, float(np.max(np.abs(values))))


def pairwise_warp(target: Curve, moving: Curve, cfg: PairwiseConfig = PairwiseConfig()) -> WarpSpline:
    """Warp that aligns ``moving`` to ``target`` (``moving o v ~ target``).

    Identical curves short-circuit to the identity warp.  A constant moving
    curve carries no timing information; the identity is returned with status
    ``"degenerate"``.  If no start meets the tolerances within ``max_iter``
    iterations the best point found is returned with status ``"maxiter"`` and
    an :class:`OptimizationWarning` is issued.
    """
    grid = _common_grid(target, moving)
    if np.array_equal(target.values, moving.values):
        return WarpSpline(knots(cfg.L)[1:], "ok", 0.0)
    if _is_constant(moving.values):
        s = WarpSpline.identity(cfg.L)
        return WarpSpline(s.theta, "degenerate", pairwise_objective(s, target, moving, cfg.eta1))
    bank = np.vstack([target.values, moving.values])
    th, f, ok = fit_warp_pairs(bank, grid, [0], [1], cfg, cfg.eta1)
    status = "ok" if ok[0] else "maxiter"
    if not ok[0]:
        warnings.warn("pairwise warp did not converge within the iteration budget",
                      OptimizationWarning, stacklevel=2)
    return WarpSpline(th[0], status, float(f[0]))


def default_eta1(curves, grid: TimeGrid) -> float:
    """Default penalty: ``1e-4`` times the largest per-component mean integrated variance.

    ``curves`` has shape (n, p, m) or (n, m) for a single component.
    """
    X = np.asarray(curves, dtype=float)
    if X.ndim == 2:
        X = X[:, None, :]
    if X.shape[0] < 2:
        raise ValueError("default_eta1 needs at least two subjects")
    dev = X - X.mean(axis=0, keepdims=True)
    ise = np.trapezoid(dev ** 2, grid.points, axis=-1)
    return float(1e-4 * np.max(ise.mean(axis=0)))


def subject_warp_for_component(curves, grid: TimeGrid, cfg: PairwiseConfig,
                               stage: str = "component") -> tuple[list[WarpMap], np.ndarray, WarpDiagnostics]:
    """Average pairwise warps for each subject of one component.

    For subject ``i`` the estimate is ``n^{-1} sum_{i'} V_{i'i}`` where
    ``V_{i'i}`` aligns curve ``i'`` to curve ``i``; the ``i' = i`` term is the
    identity.  ``curves`` is an (n, m) array of normalized curves.

    Returns the warp maps (on the knot grid), their knot values (n, L+1),
    and optimizer diagnostics.
    """
    U = np.asarray(curves, dtype=float)
    n = U.shape[0]
    if n < 2:
        raise ValueError("subject warps need at least two curves")
    _require_unit(grid)
    L = cfg.L
    ident = knots(L)[1:]
    diag = WarpDiagnostics(stage=stage, eta=cfg.eta1)
    V = np.empty((n, n, L + 1))  # V[i_prime, i]
    tgt, mov = [], []
    for i in range(n):
        for ip in range(n):
            if ip == i or np.array_equal(U[ip], U[i]):
                V[ip, i] = ident
            elif _is_constant(U[ip]):
                V[ip, i] = ident
                diag.degenerate.append((ip, i))
            else:
                tgt.append(i)
                mov.append(ip)
    diag.pairs = len(tgt)
    th, _, ok = fit_warp_pairs(U, grid, tgt, mov, cfg, cfg.eta1)
    for q, (i, ip) in enumerate(zip(tgt, mov)):
        V[ip, i] = th[q]
        if not ok[q]:
            diag.not_converged.append((ip, i))
    if diag.not_converged:
        warnings.warn(f"{len(diag.not_converged)} of {diag.pairs} pairwise warps in stage "
                      f"'{stage}' hit the iteration budget", OptimizationWarning, stacklevel=2)
    H = V.mean(axis=0)
    H[:, -1] = 1.0
    kn = TimeGrid(knots(L))
    maps = [WarpMap(kn, np.concatenate(([0.0], H[i]))) for i in range(n)]
    return maps, H, diag
