"""Estimation of the latent transport model.

Each observed component curve is modelled as

    X_ij(t) = A_ij * lambda(Psi_j(H_i(t)))

with a latent curve ``lambda`` (supremum norm one), component transports
``Psi_j``, subject warps ``H_i`` and amplitude factors ``A_ij``.  The
estimation pipeline is

1. subject warps: pairwise warping within each component on max-normalized
   curves, averaged over components;
2. component tempos: curves aligned by the inverse subject warps, averaged;
3. latent curve: one randomly chosen component per subject, registered
   across subjects by pairwise warping and averaged;
4. component transports: each tempo registered against the latent curve;
5. composite distortions ``G_ij = Psi_j o H_i`` and reconstructions
   ``A_ij * lambda o G_ij``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .core import (
    Curve,
    DegenerateInputError,
    InvariantError,
    TimeGrid,
    WarpMap,
    average_warps,
    canonical_grid,
    compose,
    evaluate,
    identity,
    invert,
    sup_distance,
)
from .smooth import (
    RawObservations,
    SmoothConfig,
    default_bandwidth,
    smooth_observations,
)
from .warp import (
    PairwiseConfig,
    RELIABLE_KNOTS,
    WarpDiagnostics,
    WarpSpline,
    default_eta1,
    fit_warp_pairs,
    knots,
    subject_warp_for_component,
)

__all__ = [
    "MultivariateSample",
    "LTMConfig",
    "LTMFit",
    "normalized_curves",
    "estimate_subject_warps",
    "estimate_component_tempos",
    "select_representatives",
    "estimate_latent_curve",
    "estimate_component_transports",
    "default_eta2",
    "compose_distortions",
    "reconstruct",
    "fit_ltm",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MultivariateSample:
    """Curves ``X_ij`` of n subjects and p components on a common grid over [0, 1].

    Parameters
    ----------
    curves : ndarray, shape (n, p, m)
        Fully observed or pre-smoothed component curves; must be strictly
        positive since the model describes positive component processes.
    grid : TimeGrid
        Common grid on [0, 1].
    amplitudes : ndarray, shape (n, p), optional
        Amplitude factors; defaults to the grid supremum of each curve.
    """

    curves: np.ndarray
    grid: TimeGrid
    amplitudes: Optional[np.ndarray] = None
    subject_ids: Optional[Sequence[str]] = None
    component_ids: Optional[Sequence[str]] = None

    def __post_init__(self):
        X = np.array(self.curves, dtype=float)
        if X.ndim != 3 or X.shape[2] != self.grid.m:
            raise ValueError("curves must have shape (n, p, m) matching the grid")
        if self.grid.lo != 0.0 or self.grid.hi != 1.0:
            raise ValueError("the sample grid must span [0, 1]; rescale time first")
        if not np.all(np.isfinite(X)):
            raise ValueError("curves must be finite")
        n, p = X.shape[:2]
        sids = [str(i + 1) for i in range(n)] if self.subject_ids is None else [str(s) for s in self.subject_ids]
        cids = [str(j + 1) for j in range(p)] if self.component_ids is None else [str(c) for c in self.component_ids]
        if len(sids) != n or len(cids) != p:
            raise ValueError("id lists must match the sample dimensions")
        if np.any(X <= 0):
            i, j, _ = np.argwhere(X <= 0)[0]
            raise ValueError(
                f"curve (subject {sids[i]}, component {cids[j]}) is not strictly positive; the model "
                "assumes positive component processes, shift or transform the data first")
        X.setflags(write=False)
        object.__setattr__(self, "curves", X)
        A = np.max(X, axis=2) if self.amplitudes is None else np.array(self.amplitudes, dtype=float)
        if A.shape != X.shape[:2] or np.any(A <= 0):
            raise ValueError("amplitudes must be positive with shape (n, p)")
        A.setflags(write=False)
        object.__setattr__(self, "amplitudes", A)
        object.__setattr__(self, "subject_ids", tuple(sids))
        object.__setattr__(self, "component_ids", tuple(cids))

    @property
    def n(self) -> int:
        return self.curves.shape[0]

    @property
    def p(self) -> int:
        return self.curves.shape[1]

    def curve(self, i: int, j: int) -> Curve:
        return Curve(self.grid, self.curves[i, j])

    @classmethod
    def from_raw(cls, raw: RawObservations, smooth: SmoothConfig | None = None,
                 out_grid: TimeGrid | None = None, **ids) -> "MultivariateSample":
        """Smooth noisy observations and estimate amplitudes by supremum norms."""
        if smooth is None:
            smooth = SmoothConfig(default_bandwidth(raw.grid))
            logger.info("using default bandwidth %.6g", smooth.bandwidth)
        if out_grid is None:
            out_grid = raw.grid if raw.grid.m > 101 else canonical_grid()
        X = smooth_observations(raw, smooth, out_grid)
        return cls(X, out_grid, None, **ids)

    def scaled(self, factors) -> "MultivariateSample":
        """Copy with curve (i, j) multiplied by ``factors[i, j]``."""
        f = np.broadcast_to(np.asarray(factors, dtype=float), (self.n, self.p))
        return MultivariateSample(self.curves * f[:, :, None], self.grid, self.amplitudes * f,
                                  self.subject_ids, self.component_ids)


@dataclass(frozen=True)
class LTMConfig:
    """Estimation settings.

    ``eta1``/``eta2`` of ``None`` select the default penalty rules.  ``draws``
    averages the latent curve over that many independent representative
    selections.
    """

    L: int = 4
    eta1: Optional[float] = None
    eta2: Optional[float] = None
    max_iter: int = 2000
    restarts: int = 3
    xatol: float = 1e-5
    fatol: float = 1e-11
    draws: int = 1
    renormalize_tempos: bool = False

    def __post_init__(self):
        if self.draws < 1:
            raise ValueError("draws must be at least 1")

    def pairwise(self, eta: float) -> PairwiseConfig:
        return PairwiseConfig(L=self.L, eta1=float(eta), max_iter=self.max_iter,
                              restarts=self.restarts, xatol=self.xatol, fatol=self.fatol)


@dataclass(frozen=True)
class LTMFit:
    """Estimated model components.  ``distortions[i][j]`` is ``Psi_j o H_i``."""

    grid: TimeGrid
    latent: Curve
    tempos: List[Curve]
    component_transports: List[WarpMap]
    transport_thetas: np.ndarray
    subject_warps: List[WarpMap]
    amplitudes: np.ndarray
    distortions: List[List[WarpMap]]
    representatives: np.ndarray
    eta1: float
    eta1_latent: float
    eta2: float
    latent_scale: float
    seed: int
    config: LTMConfig
    diagnostics: dict = field(default_factory=dict)
    subject_ids: tuple = ()
    component_ids: tuple = ()

    @property
    def n(self) -> int:
        return len(self.subject_warps)

    @property
    def p(self) -> int:
        return len(self.component_transports)

    def function_count(self) -> int:
        """Number of estimated functions: subject warps, transports and the latent curve."""
        return self.n + self.p + 1

    def component_index(self, cid) -> int:
        cid = str(cid)
        if cid not in self.component_ids:
            raise KeyError(f"unknown component {cid!r}; valid ids: {', '.join(self.component_ids)}")
        return self.component_ids.index(cid)

    def subject_index(self, sid) -> int:
        sid = str(sid)
        if sid not in self.subject_ids:
            raise KeyError(f"unknown subject {sid!r}")
        return self.subject_ids.index(sid)


def normalized_curves(sample: MultivariateSample) -> np.ndarray:
    """Curves divided by their grid supremum, shape (n, p, m)."""
    X = sample.curves
    return X / np.max(np.abs(X), axis=2, keepdims=True)


def estimate_subject_warps(sample: MultivariateSample, cfg: LTMConfig = LTMConfig(),
                           eta1: float | None = None):
    """Subject warps ``H_i`` as the component average of within-component estimates.

    Returns ``(warps, eta1, diagnostics)``; the warps live on the spline knot grid.
    """
    if sample.n < 2:
        raise ValueError("subject warps need at least two subjects")
    U = normalized_curves(sample)
    if eta1 is None:
        eta1 = cfg.eta1 if cfg.eta1 is not None else default_eta1(U, sample.grid)
    pcfg = cfg.pairwise(eta1)
    thetas = np.empty((sample.p, sample.n, cfg.L + 1))
    diags = []
    for j in range(sample.p):
        _, th, diag = subject_warp_for_component(U[:, j], sample.grid, pcfg,
                                                 stage=f"component {sample.component_ids[j]}")
        thetas[j] = th
        diags.append(diag)
    H = thetas.mean(axis=0)
    H[:, -1] = 1.0
    kn = TimeGrid(knots(cfg.L))
    warps = [WarpMap(kn, np.concatenate(([0.0], H[i]))) for i in range(sample.n)]
    return warps, float(eta1), diags


def estimate_component_tempos(sample: MultivariateSample, subject_warps: Sequence[WarpMap],
                              grid: TimeGrid | None = None) -> List[Curve]:
    """Average of subject-aligned normalized curves ``X_ij o H_i^{-1} / ||X_ij||``."""
    grid = sample.grid if grid is None else grid
    inv = [invert(h) for h in subject_warps]
    U = normalized_curves(sample)
    tempos = []
    for j in range(sample.p):
        acc = np.zeros(grid.m)
        for i in range(sample.n):
            acc += compose(Curve(sample.grid, U[i, j]), inv[i], grid=grid).values
        tempos.append(Curve(grid, acc / sample.n))
    return tempos


def select_representatives(sample: MultivariateSample, seed: int):
    """Draw one component per subject uniformly at random.

    Returns the 0-based component indices and the (n, m) array of chosen curves.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5E1EC7]))
    idx = rng.integers(0, sample.p, size=sample.n)
    Z = sample.curves[np.arange(sample.n), idx]
    return idx, Z


def estimate_latent_curve(representatives, grid: TimeGrid, cfg: LTMConfig = LTMConfig(),
                          eta: float | None = None):
    """Latent curve from globally registered representative curves.

    Returns ``(latent, D, scale, eta, diagnostics)`` where ``latent`` has
    supremum norm one, ``D`` are the global warps and ``scale`` is the
    supremum of the raw average before renormalization.
    """
    Z = np.asarray(representatives, dtype=float)
    if Z.shape[0] < 2:
        raise ValueError("the latent curve needs at least two subjects")
    Zs = Z / np.max(np.abs(Z), axis=1, keepdims=True)
    if eta is None:
        eta = default_eta1(Zs, grid)
    D, _, diag = subject_warp_for_component(Zs, grid, cfg.pairwise(eta), stage="latent")
    acc = np.zeros(grid.m)
    for i, d in enumerate(D):
        acc += compose(Curve(grid, Zs[i]), invert(d), grid=grid).values
    avg = acc / Z.shape[0]
    scale = float(np.max(np.abs(avg)))
    if not scale > 0:
        raise DegenerateInputError("aligned representatives average to zero")
    return Curve(grid, avg / scale), D, scale, float(eta), diag


def default_eta2(tempos: Sequence[Curve], latent: Curve) -> float:
    """``1e-4`` times the mean integrated squared distance of tempos to the latent curve."""
    grid = latent.grid
    ise = [np.trapezoid((evaluate(g, grid.points) - latent.values) ** 2, grid.points) for g in tempos]
    return float(1e-4 * np.mean(ise))


def estimate_component_transports(tempos: Sequence[Curve], latent: Curve, eta2: float,
                                  cfg: LTMConfig = LTMConfig()):
    """Register the latent curve onto each tempo: ``latent o Psi_j ~ tempo_j``.

    Returns a list of :class:`WarpSpline` and the stage diagnostics.
    """
    grid = latent.grid
    bank = [latent.values] + [evaluate(g, grid.points) for g in tempos]
    bank = np.vstack(bank)
    pcfg = cfg.pairwise(eta2)
    diag = WarpDiagnostics(stage="transports", eta=float(eta2))
    out: List[Optional[WarpSpline]] = [None] * len(tempos)
    todo = []
    for j in range(len(tempos)):
        if np.array_equal(bank[j + 1], bank[0]):
            out[j] = WarpSpline(knots(cfg.L)[1:], "ok", 0.0)
        else:
            todo.append(j)
    diag.pairs = len(todo)
    th, f, ok = fit_warp_pairs(bank, grid, [j + 1 for j in todo], [0] * len(todo), pcfg, eta2)
    for q, j in enumerate(todo):
        out[j] = WarpSpline(th[q], "ok" if ok[q] else "maxiter", float(f[q]))
        if not ok[q]:
            diag.not_converged.append((0, j))
    return out, diag


def compose_distortions(transports: Sequence[WarpMap], subject_warps: Sequence[WarpMap]):
    """``G_ij = Psi_j o H_i`` as exact piecewise-linear maps, indexed ``[i][j]``."""
    return [[compose(psi, h) for psi in transports] for h in subject_warps]


def reconstruct(fit: LTMFit, grid: TimeGrid | None = None) -> np.ndarray:
    """Fitted curves ``A_ij * lambda(G_ij(t))`` as an (n, p, m) array."""
    grid = fit.grid if grid is None else grid
    out = np.empty((fit.n, fit.p, grid.m))
    for i in range(fit.n):
        for j in range(fit.p):
            out[i, j] = fit.amplitudes[i, j] * compose(fit.latent, fit.distortions[i][j], grid=grid).values
    return out


def _mean_inverse_deviation(warps: Sequence[WarpMap]) -> float:
    m = average_warps([invert(h) for h in warps])
    return sup_distance(m, identity(m.grid))


def fit_ltm(sample: MultivariateSample, config: LTMConfig = LTMConfig(), seed: int = 0) -> LTMFit:
    """Run the full estimation pipeline; deterministic given sample, config and seed."""
    if config.L < RELIABLE_KNOTS[0] or config.L > RELIABLE_KNOTS[1]:
        warnings.warn(f"L={config.L} knots is outside the range {RELIABLE_KNOTS} where warp "
                      "estimates are reliable (too few knots underfit, too many distort)",
                      UserWarning, stacklevel=2)
    grid = sample.grid
    H, eta1, comp_diags = estimate_subject_warps(sample, config)
    tempos = estimate_component_tempos(sample, H)

    seeds = np.random.SeedSequence(int(seed)).generate_state(config.draws)
    lat_acc = np.zeros(grid.m)
    reps_all = []
    lat_diags = []
    eta_lat = None
    D = []
    for r in range(config.draws):
        rep_seed = int(seed) if config.draws == 1 else int(seeds[r])
        reps, Z = select_representatives(sample, rep_seed)
        eta_r = config.eta1
        lat, D, scale_r, eta_lat, ldiag = estimate_latent_curve(Z, grid, config, eta=eta_r)
        lat_acc += lat.values * scale_r
        reps_all.append(reps)
        lat_diags.append(ldiag)
    avg = lat_acc / config.draws
    scale = float(np.max(np.abs(avg)))
    latent = Curve(grid, avg / scale)

    if config.renormalize_tempos:
        tempos = [Curve(g.grid, g.values / np.max(np.abs(g.values))) for g in tempos]
    eta2 = config.eta2 if config.eta2 is not None else default_eta2(tempos, latent)
    splines, tdiag = estimate_component_transports(tempos, latent, eta2, config)
    psi = [s.to_warpmap() for s in splines]
    G = compose_distortions(psi, H)

    diags = {
        "component_stages": [d.as_dict() for d in comp_diags],
        "latent_stages": [d.as_dict() for d in lat_diags],
        "transport_stage": tdiag.as_dict(),
        "mean_inverse_subject_warp_deviation": _mean_inverse_deviation(H),
        "mean_inverse_transport_deviation": _mean_inverse_deviation(psi),
    }
    return LTMFit(
        grid=grid,
        latent=latent,
        tempos=tempos,
        component_transports=psi,
        transport_thetas=np.array([s.theta for s in splines]),
        subject_warps=H,
        amplitudes=np.array(sample.amplitudes),
        distortions=G,
        representatives=np.array(reps_all[0]) if config.draws == 1 else np.array(reps_all),
        eta1=eta1,
        eta1_latent=float(eta_lat),
        eta2=float(eta2),
        latent_scale=scale,
        seed=int(seed),
        config=config,
        diagnostics=diags,
        subject_ids=sample.subject_ids,
        component_ids=sample.component_ids,
    )
