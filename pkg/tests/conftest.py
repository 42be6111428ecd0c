import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.register_profile("thorough", deadline=None, max_examples=400)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@st.composite
def warp_values(draw, min_points=3, max_points=40):
    """Random strictly increasing warp on a random grid over [0, 1]: (grid, values)."""
    from latent_transport.core import TimeGrid

    m = draw(st.integers(min_points, max_points))
    gaps = draw(st.lists(st.floats(0.05, 1.0), min_size=m - 1, max_size=m - 1))
    incs = draw(st.lists(st.floats(0.05, 1.0), min_size=m - 1, max_size=m - 1))
    g = np.concatenate(([0.0], np.cumsum(gaps)))
    v = np.concatenate(([0.0], np.cumsum(incs)))
    g /= g[-1]
    v /= v[-1]
    g[-1] = v[-1] = 1.0
    return TimeGrid(g), v


@st.composite
def warps(draw, min_points=3, max_points=40):
    from latent_transport.core import WarpMap

    g, v = draw(warp_values(min_points, max_points))
    return WarpMap(g, v)


def make_fit(psis, hs, latent_curve=None, component_ids=None):
    """A fit assembled from given maps (only the fields transports depend on)."""
    from latent_transport.core import Curve, canonical_grid, normalize
    from latent_transport.ltm import LTMConfig, LTMFit, compose_distortions
    from latent_transport.simgen import latent

    grid = canonical_grid(101)
    if latent_curve is None:
        latent_curve = normalize(Curve(grid, latent(grid.points)))
    n, p = len(hs), len(psis)
    return LTMFit(
        grid=grid, latent=latent_curve, tempos=[], component_transports=list(psis),
        transport_thetas=np.zeros((p, 1)), subject_warps=list(hs), amplitudes=np.ones((n, p)),
        distortions=compose_distortions(psis, hs), representatives=np.zeros(n, dtype=int),
        eta1=0.0, eta1_latent=0.0, eta2=0.0, latent_scale=1.0, seed=0, config=LTMConfig(),
        subject_ids=tuple(str(i + 1) for i in range(n)),
        component_ids=tuple(component_ids or (f"c{j + 1}" for j in range(p))),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
