"""Local linear kernel smoothing of densely observed noisy curves."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import Curve, DegenerateInputError, TimeGrid, sup_norm

__all__ = [
    "Kernel",
    "SmoothConfig",
    "RawObservations",
    "BandwidthError",
    "SingularWindowWarning",
    "kernel_weights",
    "smoother_matrix",
    "local_linear_smooth",
    "smooth_observations",
    "estimate_amplitude",
    "default_bandwidth",
]


class Kernel(str, Enum):
    EPANECHNIKOV = "epanechnikov"
    GAUSSIAN_TRUNCATED = "gaussian-truncated"
    UNIFORM = "uniform"
    TRIANGULAR = "triangular"


class BandwidthError(ValueError):
    """A smoothing window contains no observation with positive kernel weight."""


class SingularWindowWarning(UserWarning):
    """Local linear fit fell back to a local constant fit."""


def kernel_weights(u, kernel: Kernel | str = Kernel.EPANECHNIKOV) -> np.ndarray:
    """Kernel values with support ``[-1, 1]``."""
    kernel = Kernel(kernel)
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) <= 1.0
    if kernel is Kernel.EPANECHNIKOV:
        k = 0.75 * (1.0 - u ** 2)
    elif kernel is Kernel.GAUSSIAN_TRUNCATED:
        k = np.exp(-0.5 * u ** 2)
    elif kernel is Kernel.UNIFORM:
        k = np.full_like(u, 0.5)
    else:
        k = 1.0 - np.abs(u)
    return np.where(inside, np.maximum(k, 0.0), 0.0)


@dataclass(frozen=True)
class SmoothConfig:
    bandwidth: float
    kernel: Kernel = Kernel.EPANECHNIKOV

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "kernel", Kernel(self.kernel))


@dataclass(frozen=True)
class RawObservations:
    """Noisy observations ``y[i, j, s]`` of subject i, component j at ``grid[s]``."""

    grid: TimeGrid
    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 3 or y.shape[2] != self.grid.m:
            raise ValueError("y must have shape (n, p, m) matching the grid")
        if not np.all(np.isfinite(y)):
            raise ValueError("observations must be finite (no missing cells)")
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.y.shape[1]


def default_bandwidth(grid: TimeGrid) -> float:
    """Twice the grid spacing."""
    return 2.0 * grid.spacing


def smoother_matrix(obs_times, cfg: SmoothConfig, out_points) -> np.ndarray:
    """Equivalent-kernel matrix ``S`` with ``fit = S @ y`` for local linear smoothing.

    Rows whose local design is singular use the local constant (weighted mean)
    and raise :class:`SingularWindowWarning`.
    """
    ts = np.asarray(obs_times, dtype=float)
    to = np.asarray(out_points, dtype=float)
    d = ts[None, :] - to[:, None]
    w = kernel_weights(d / cfg.bandwidth, cfg.kernel)
    s0 = w.sum(axis=1)
    empty = s0 <= 0
    if np.any(empty):
        bad = float(to[empty][0])
        raise BandwidthError(
            f"no observations inside the smoothing window at t={bad!r} "
            f"(bandwidth {cfg.bandwidth!r} is too small)")
    s1 = (w * d).sum(axis=1)
    s2 = (w * d * d).sum(axis=1)
    det = s0 * s2 - s1 * s1
    singular = det <= 1e-12 * s0 * s2
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = w * (s2[:, None] - s1[:, None] * d) / det[:, None]
    if np.any(singular):
        warnings.warn(
            f"local linear fit is singular at {int(singular.sum())} output points; "
            "using local constant fits there", SingularWindowWarning, stacklevel=2)
        ll[singular] = w[singular] / s0[singular, None]
    return ll


def local_linear_smooth(values, obs_grid: TimeGrid, cfg: SmoothConfig,
                        out_grid: TimeGrid | None = None) -> Curve:
    """Local linear estimate of one noisy series, evaluated on ``out_grid``."""
    y = np.asarray(values, dtype=float)
    if y.shape != (obs_grid.m,):
        raise ValueError("values must match the observation grid")
    out_grid = obs_grid if out_grid is None else out_grid
    S = smoother_matrix(obs_grid.points, cfg, out_grid.points)
    return Curve(out_grid, S @ y)


def smooth_observations(raw: RawObservations, cfg: SmoothConfig, out_grid: TimeGrid) -> np.ndarray:
    """Smooth every series of ``raw``; returns an (n, p, len(out_grid)) array."""
    S = smoother_matrix(raw.grid.points, cfg, out_grid.points)
    return np.einsum("gs,ijs->ijg", S, raw.y)


def estimate_amplitude(smoothed: Curve) -> float:
    """Amplitude factor estimate: the supremum norm of the smoothed curve."""
    a = sup_norm(smoothed)
    if not a > 0:
        raise DegenerateInputError("cannot estimate an amplitude from a zero curve")
    return a
