"""Latent transport model for multivariate functional data.

Component curves are modelled as amplitude-scaled, time-warped copies of a
single latent curve; the package estimates the latent curve, component
transports and subject warps, and derives cross-component transport maps.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Curve,
    DegenerateInputError,
    Domain,
    DomainError,
    InvariantError,
    TimeGrid,
    WarpMap,
    canonical_grid,
    compose,
    evaluate,
    identity,
    integrate,
    invert,
    normalize,
    sup_norm,
)
from .ltm import LTMConfig, LTMFit, MultivariateSample, fit_ltm, reconstruct  # noqa: E402
from .smooth import RawObservations, SmoothConfig  # noqa: E402
from .warp import PairwiseConfig, WarpSpline, pairwise_warp  # noqa: E402
from .xct import TransportMatrix, cycle_deviation, marginal_xct, subject_xct  # noqa: E402
from .frechet import (  # noqa: E402
    TransportDistribution,
    fit_frechet,
    frechet_r_squared,
    global_frechet_regression,
    wasserstein2,
)
