"""Grids, sampled curves and monotone piecewise-linear maps.

Every curve in the package is a set of samples on a strictly increasing grid
and is evaluated by linear interpolation.  Warping maps are curves whose
values are strictly increasing and fix both endpoints of the domain.  Inversion
and composition of warping maps are carried out exactly in piecewise-linear
algebra (breakpoint unions), so identities such as ``w^{-1} o w = id`` hold to
floating point precision rather than to grid resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

__all__ = [
    "DomainError",
    "DegenerateInputError",
    "InvariantError",
    "MONOTONE_TOL",
    "CANONICAL_POINTS",
    "TimeGrid",
    "Curve",
    "WarpMap",
    "Domain",
    "canonical_grid",
    "identity",
    "evaluate",
    "sup_norm",
    "normalize",
    "integrate",
    "invert",
    "compose",
    "compose_chain",
    "resample",
    "average_warps",
    "sup_distance",
]

MONOTONE_TOL = 1e-12
# breakpoints closer than this are merged when forming unions
MERGE_TOL = 1e-10
# smallest node gap kept by exact composition; just above the grid invariant
STRICT_TOL = 2 * MONOTONE_TOL
CANONICAL_POINTS = 101


class DomainError(ValueError):
    """Raised when a curve is evaluated or composed outside its domain."""


class DegenerateInputError(ValueError):
    """Raised for inputs that carry no usable information (e.g. a zero curve)."""


class InvariantError(ValueError):
    """Raised when a grid or warping map violates its structural invariants."""


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


class TimeGrid:
    """Strictly increasing sampling points ``T1 = t_0 < ... < t_{m-1} = T2``."""

    __slots__ = ("points",)

    def __init__(self, points: Union[Sequence[float], np.ndarray]):
        pts = _readonly(points)
        if pts.ndim != 1 or pts.size < 3:
            raise InvariantError("a TimeGrid needs at least 3 points")
        if not np.all(np.isfinite(pts)):
            raise InvariantError("grid points must be finite")
        if np.any(np.diff(pts) <= MONOTONE_TOL):
            raise InvariantError("grid points must be strictly increasing")
        self.points = pts

    @classmethod
    def uniform(cls, m: int, lo: float = 0.0, hi: float = 1.0) -> "TimeGrid":
        pts = np.linspace(lo, hi, m)
        return cls(pts)

    @property
    def lo(self) -> float:
        return float(self.points[0])

    @property
    def hi(self) -> float:
        return float(self.points[-1])

    @property
    def m(self) -> int:
        return int(self.points.size)

    def __len__(self) -> int:
        return self.m

    @property
    def spacing(self) -> float:
        """Mean spacing; equals the step on equispaced grids."""
        return (self.hi - self.lo) / (self.m - 1)

    @property
    def is_uniform(self) -> bool:
        d = np.diff(self.points)
        return bool(np.allclose(d, d.mean(), rtol=1e-9, atol=0.0))

    def __eq__(self, other) -> bool:
        return isinstance(other, TimeGrid) and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())

    def __repr__(self) -> str:
        return f"TimeGrid(m={self.m}, lo={self.lo:g}, hi={self.hi:g})"


def canonical_grid(m: int = CANONICAL_POINTS, lo: float = 0.0, hi: float = 1.0) -> TimeGrid:
    return TimeGrid.uniform(m, lo, hi)


def _interp(x: np.ndarray, y: np.ndarray, t: np.ndarray) -> np.ndarray:
    # exact at the stored points: (1 - f) * y0 + f * y1 with f in {0, 1}
    idx = np.searchsorted(x, t, side="right") - 1
    idx = np.clip(idx, 0, x.size - 2)
    x0 = x[idx]
    x1 = x[idx + 1]
    f = (t - x0) / (x1 - x0)
    f = np.clip(f, 0.0, 1.0)
    return (1.0 - f) * y[idx] + f * y[idx + 1]


class Curve:
    """A function sampled on a :class:`TimeGrid`, linearly interpolated."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Union[TimeGrid, Sequence[float], np.ndarray], values):
        if not isinstance(grid, TimeGrid):
            grid = TimeGrid(grid)
        vals = _readonly(values)
        if vals.shape != grid.points.shape:
            raise InvariantError(
                f"values have shape {vals.shape}, grid has {grid.m} points")
        self.grid = grid
        self.values = vals

    def __call__(self, t):
        return evaluate(self, t)

    def with_values(self, values) -> "Curve":
        return Curve(self.grid, values)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.grid!r})"


class WarpMap(Curve):
    """Strictly increasing piecewise-linear homeomorphism of ``[T1, T2]``.

    Endpoint values are checked to within ``MONOTONE_TOL`` and then snapped to
    the exact domain endpoints.
    """

    __slots__ = ()

    def __init__(self, grid, values):
        super().__init__(grid, values)
        v = np.array(self.values)
        lo, hi = self.grid.lo, self.grid.hi
        scale = max(1.0, abs(lo), abs(hi))
        if abs(v[0] - lo) > MONOTONE_TOL * scale or abs(v[-1] - hi) > MONOTONE_TOL * scale:
            raise InvariantError(
                f"warp map must fix the endpoints: got ({v[0]!r}, {v[-1]!r}) "
                f"on [{lo!r}, {hi!r}]")
        if np.any(np.diff(v) <= MONOTONE_TOL):
            raise InvariantError("warp map values must be strictly increasing")
        v[0], v[-1] = lo, hi
        self.values = _readonly(v)

    def as_curve(self) -> Curve:
        return Curve(self.grid, self.values)


@dataclass(frozen=True)
class Domain:
    """Affine map between an observed time interval and ``[0, 1]``."""

    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.hi > self.lo:
            raise DomainError("domain must satisfy lo < hi")

    def to_unit(self, t):
        return (np.asarray(t, dtype=float) - self.lo) / (self.hi - self.lo)

    def from_unit(self, u):
        return self.lo + np.asarray(u, dtype=float) * (self.hi - self.lo)


def identity(grid: Union[TimeGrid, int, None] = None) -> WarpMap:
    if grid is None:
        grid = canonical_grid()
    elif isinstance(grid, int):
        grid = canonical_grid(grid)
    return WarpMap(grid, grid.points)


def _check_domain(curve: Curve, t: np.ndarray) -> np.ndarray:
    lo, hi = curve.grid.lo, curve.grid.hi
    slack = MONOTONE_TOL * max(1.0, hi - lo)
    if np.any(~np.isfinite(t)) or np.any(t < lo - slack) or np.any(t > hi + slack):
        bad = t[(~np.isfinite(t)) | (t < lo - slack) | (t > hi + slack)]
        raise DomainError(
            f"evaluation point {float(bad.flat[0])!r} outside [{lo!r}, {hi!r}]")
    return np.clip(t, lo, hi)


def evaluate(curve: Curve, t):
    """Evaluate ``curve`` at ``t`` (scalar or array) by linear interpolation."""
    arr = np.asarray(t, dtype=float)
    arr = _check_domain(curve, arr)
    out = _interp(curve.grid.points, curve.values, arr)
    if np.ndim(t) == 0:
        return float(out)
    return out


def sup_norm(curve: Curve) -> float:
    """Grid maximum of ``|values|``."""
    return float(np.max(np.abs(curve.values)))


def normalize(curve: Curve) -> Curve:
    s = sup_norm(curve)
    if not s > 0:
        raise DegenerateInputError("cannot normalize a curve that is identically zero")
    return Curve(curve.grid, curve.values / s)


def integrate(curve: Curve) -> float:
    """Trapezoid rule over the curve's own grid."""
    return float(np.trapezoid(curve.values, curve.grid.points))


def resample(curve: Curve, grid: TimeGrid) -> Curve:
    """Evaluate ``curve`` on ``grid``; warp maps stay warp maps."""
    vals = evaluate(curve, grid.points)
    if isinstance(curve, WarpMap):
        return WarpMap(grid, vals)
    return Curve(grid, vals)


def invert(w: WarpMap, grid: TimeGrid | None = None) -> WarpMap:
    """Exact piecewise-linear inverse, obtained by swapping grid and values.

    With ``grid`` given, the inverse is additionally resampled onto it.
    """
    if not isinstance(w, WarpMap):
        vals = np.asarray(w.values)
        if np.any(np.diff(vals) <= MONOTONE_TOL):
            raise InvariantError("cannot invert a non-monotone map")
        w = WarpMap(w.grid, vals)
    inv = WarpMap(TimeGrid(w.values), w.grid.points)
    if grid is not None:
        return resample(inv, grid)
    return inv


def _merge_breakpoints(primary: np.ndarray, extra: np.ndarray, lo: float, hi: float) -> np.ndarray:
    # keep every primary point; add extras not within MERGE_TOL of a primary point
    primary = np.unique(primary)
    extra = np.unique(extra[(extra > lo) & (extra < hi)])
    if extra.size:
        pos = np.searchsorted(primary, extra)
        left = primary[np.clip(pos - 1, 0, primary.size - 1)]
        right = primary[np.clip(pos, 0, primary.size - 1)]
        near = (np.abs(extra - left) <= MERGE_TOL) | (np.abs(extra - right) <= MERGE_TOL)
        extra = extra[~near]
    pts = np.union1d(primary, extra)
    return _thin(pts)


def _thin(pts: np.ndarray, vals: np.ndarray | None = None) -> np.ndarray:
    """Drop interior points crowding the last kept one.

    Returns the kept points, or their indices when ``vals`` is given.
    """
    keep = [0]
    for k in range(1, pts.size - 1):
        j = keep[-1]
        if pts[k] - pts[j] <= MERGE_TOL:
            continue
        if vals is not None and vals[k] - vals[j] <= MERGE_TOL:
            continue
        keep.append(k)
    last = pts.size - 1
    while len(keep) > 1 and (pts[last] - pts[keep[-1]] <= MERGE_TOL
                             or (vals is not None and vals[last] - vals[keep[-1]] <= MERGE_TOL)):
        keep.pop()
    keep.append(last)
    idx = np.asarray(keep)
    return pts[idx] if vals is None else idx


def _chord_error(p: np.ndarray, v: np.ndarray, k: int) -> float:
    """Larger of the vertical and horizontal offsets of node ``k`` from its neighbours' chord."""
    p0, p1, v0, v1 = p[k - 1], p[k + 1], v[k - 1], v[k + 1]
    dv = abs(v[k] - (v0 + (v1 - v0) * (p[k] - p0) / (p1 - p0))) if p1 > p0 else np.inf
    dp = abs(p[k] - (p0 + (p1 - p0) * (v[k] - v0) / (v1 - v0))) if v1 > v0 else np.inf
    return max(dv, dp)


def _strict(pts: np.ndarray, vals: np.ndarray | None = None, tol: float = MONOTONE_TOL,
            gap: float = STRICT_TOL):
    """Repair nodes so that ``pts`` (and ``vals``, if given) increase by more than ``tol``.

    Where two nodes are within ``tol`` in some coordinate, one of them is
    dropped if it lies within ``gap`` of the chord through its neighbours,
    both vertically and horizontally.  Pairs left over are genuine corners,
    and there the crowded coordinate alone is spread to ``gap`` (at least one
    ulp).  Endpoints never move.  Returns the kept indices and the repaired
    arrays.
    """
    p = np.array(pts, dtype=float)
    v = p.copy() if vals is None else np.array(vals, dtype=float)
    cols = (p,) if vals is None else (p, v)
    keep = list(range(p.size))
    a = 0
    while a < len(keep) - 1 and len(keep) > 2:
        i, j = keep[a], keep[a + 1]
        close = [c[j] - c[i] <= tol for c in cols]
        if not any(close):
            a += 1
            continue
        cand = [c for c in (a, a + 1) if 0 < c < len(keep) - 1]
        pk, vk = p[keep], v[keep]
        errs = [_chord_error(pk, vk, c) for c in cand]
        best = int(np.argmin(errs)) if cand else -1
        if cand and (all(close) or errs[best] <= gap):
            del keep[cand[best]]
            a = max(a - 1, 0)
        else:
            a += 1
    idx = np.asarray(keep)
    for c in cols:
        x = c[idx]
        for k in range(1, x.size - 1):
            if x[k] - x[k - 1] <= tol:
                x[k] = max(x[k - 1] + gap, np.nextafter(x[k - 1] + tol, np.inf))
        for k in range(x.size - 2, 0, -1):
            if x[k + 1] - x[k] <= tol:
                x[k] = min(x[k + 1] - gap, np.nextafter(x[k + 1] - tol, -np.inf))
        c[idx] = x
    ok = np.ones(idx.size, dtype=bool)
    for c in cols:
        d = np.diff(c[idx])
        ok[1:-1] &= (d[:-1] > tol) & (d[1:] > tol)
    idx = idx[ok]
    return idx, p[idx], (None if vals is None else v[idx])


def _compose_nodes(op, ov, s_in, u_in, warp: bool, tol: float, gap: float):
    """Node arrays of the exact composition of ``(op, ov)`` after ``(s_in, u_in)``."""
    # nodes are (s, inner(s)) pairs: inner's own breakpoints, plus the
    # preimages of outer's breakpoints carried with their exact images, so
    # steep pieces of inner do not blur the kinks of outer
    ob = np.setdiff1d(op[(op > u_in[0]) & (op < u_in[-1])], u_in)
    u = np.concatenate((u_in, ob))
    order = np.argsort(u, kind="stable")
    u = u[order]
    pts = np.concatenate((s_in, _interp(u_in, s_in, ob)))[order]
    vals = _interp(op, ov, np.clip(u, op[0], op[-1]))
    if warp:
        _, pts, vals = _strict(pts, vals, tol, gap)
    else:
        idx = _strict(pts, None, tol, gap)[0]
        pts, vals = pts[idx], vals[idx]
    return pts, vals


def _check_range(outer: Curve, inner: WarpMap) -> None:
    if not isinstance(inner, WarpMap):
        raise InvariantError("the inner map of a composition must be a WarpMap")
    lo, hi = inner.grid.lo, inner.grid.hi
    slack = MONOTONE_TOL * max(1.0, hi - lo)
    if (inner.values[0] < outer.grid.lo - slack or inner.values[-1] > outer.grid.hi + slack):
        raise DomainError(
            f"inner map range [{inner.values[0]!r}, {inner.values[-1]!r}] is not inside "
            f"the outer domain [{outer.grid.lo!r}, {outer.grid.hi!r}]")


def _from_nodes(maps: Sequence[Curve], pts, vals, grid: TimeGrid | None) -> Curve:
    outer = maps[0]
    if pts.size < 3:
        lo, hi = maps[-1].grid.lo, maps[-1].grid.hi
        pts = vals = np.array([lo, 0.5 * (lo + hi), hi])
        for m in reversed(maps):
            vals = _interp(m.grid.points, m.values, vals)
    result: Curve = WarpMap(TimeGrid(pts), vals) if isinstance(outer, WarpMap) else Curve(TimeGrid(pts), vals)
    if grid is not None:
        return resample(result, grid)
    return result


def compose(outer: Curve, inner: WarpMap, grid: TimeGrid | None = None) -> Curve:
    """Exact composition ``outer o inner``.

    The breakpoints of the result are the union of ``inner``'s breakpoints and
    the preimages under ``inner`` of ``outer``'s breakpoints, so the result is
    the exact piecewise-linear composition.  The result is a :class:`WarpMap`
    when ``outer`` is one, otherwise a :class:`Curve`.  Pass ``grid`` to
    resample the composition.
    """
    _check_range(outer, inner)
    pts, vals = _compose_nodes(np.asarray(outer.grid.points), outer.values, inner.grid.points,
                               inner.values, isinstance(outer, WarpMap), MONOTONE_TOL, STRICT_TOL)
    return _from_nodes((outer, inner), pts, vals, grid)


def compose_chain(maps: Sequence[WarpMap]) -> WarpMap:
    """``maps[0] o maps[1] o ... o maps[-1]`` composed exactly.

    Intermediate compositions keep every node that floating point can
    separate; only the final map is repaired to the ``MONOTONE_TOL`` spacing
    of a :class:`WarpMap`.  Repairing each step instead would perturb nearly
    flat pieces by ``STRICT_TOL``, which steep later maps amplify.
    """
    maps = list(maps)
    if not maps:
        raise DegenerateInputError("empty chain")
    for outer, inner in zip(maps[:-1], maps[1:]):
        if not isinstance(outer, WarpMap):
            raise InvariantError("chain members must be WarpMaps")
        _check_range(outer, inner)
    s, u = maps[-1].grid.points, maps[-1].values
    for outer in reversed(maps[:-1]):
        s, u = _compose_nodes(np.asarray(outer.grid.points), outer.values, s, u, True, 0.0, 0.0)
    _, s, u = _strict(s, u)
    return _from_nodes(maps, s, u, None)


def average_warps(warps: Sequence[WarpMap], weights=None, grid: TimeGrid | None = None) -> WarpMap:
    """Convex combination of warp maps on the union of their breakpoints."""
    warps = list(warps)
    if not warps:
        raise DegenerateInputError("need at least one warp map to average")
    if grid is None:
        pts = warps[0].grid.points
        for w in warps[1:]:
            if not np.array_equal(w.grid.points, pts):
                pts = _merge_breakpoints(pts, w.grid.points, pts[0], pts[-1])
        grid = TimeGrid(pts)
    if weights is None:
        weights = np.full(len(warps), 1.0 / len(warps))
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0) or not np.isclose(weights.sum(), 1.0):
        raise InvariantError("averaging weights must be nonnegative and sum to one")
    acc = np.zeros(grid.m)
    for wt, w in zip(weights, warps):
        acc += wt * evaluate(w, grid.points)
    return WarpMap(grid, acc)


def sup_distance(a: Curve, b: Curve) -> float:
    """Maximum absolute difference over the union of both grids."""
    pts = np.union1d(a.grid.points, b.grid.points)
    pts = pts[(pts >= max(a.grid.lo, b.grid.lo)) & (pts <= min(a.grid.hi, b.grid.hi))]
    return float(np.max(np.abs(evaluate(a, pts) - evaluate(b, pts))))
