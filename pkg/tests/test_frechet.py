import warnings

import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, strategies as st

from latent_transport.core import TimeGrid, WarpMap, canonical_grid
from latent_transport.frechet import (
    ExtrapolationWarning,
    TransportDistribution,
    UndefinedVarianceWarning,
    _project,
    _trapezoid_weights,
    fit_frechet,
    frechet_mean,
    frechet_r_squared,
    frechet_weights,
    global_frechet_regression,
    wasserstein2,
)

from conftest import warps

U101 = np.linspace(0, 1, 101)


def from_q(qfun, u=U101):
    return TransportDistribution.from_quantile(u, qfun(u))


def mixed(alpha):
    """Quantile (1 - alpha) u + alpha u^2, linear in alpha."""
    return from_q(lambda u: (1 - alpha) * u + alpha * u ** 2)


def qp_projection(u, target):
    """Weighted L2 projection onto nondecreasing vectors with fixed endpoints 0 and 1."""
    w = _trapezoid_weights(u)
    Q = cp.Variable(u.size)
    cons = [Q[0] == 0, Q[-1] == 1, cp.diff(Q) >= 0]
    cp.Problem(cp.Minimize(cp.sum(cp.multiply(w, cp.square(Q - target)))), cons).solve(
        solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return Q.value


# -- Wasserstein distance ---------------------------------------------------------------

def test_w2_closed_form():
    g = canonical_grid(4001)
    a = TransportDistribution(WarpMap(g, g.points))
    b = TransportDistribution(WarpMap(g, g.points ** 2))
    assert wasserstein2(a, b) ** 2 == pytest.approx(1 / 30, abs=1e-6)
    assert wasserstein2(a, a) == 0.0


def test_w2_exact_for_piecewise_linear_quantiles():
    a = from_q(lambda u: u, np.array([0, 0.5, 1.0]))
    b = TransportDistribution.from_quantile(np.array([0, 0.5, 1.0]), np.array([0, 0.25, 1.0]))
    # difference is a hat of height 0.25 on [0, 1]: integral of its square = 0.25^2 / 3
    assert wasserstein2(a, b) ** 2 == pytest.approx(0.0625 / 3, abs=1e-15)


@given(warps(), warps(), warps())
def test_w2_metric_axioms(a, b, c):
    ab, ba = wasserstein2(a, b), wasserstein2(b, a)
    assert ab == pytest.approx(ba, abs=1e-14)
    assert wasserstein2(a, c) <= ab + wasserstein2(b, c) + 1e-12
    assert wasserstein2(a, a) <= 1e-12


def test_distribution_domain():
    with pytest.raises(ValueError):
        TransportDistribution(WarpMap(TimeGrid([0, 1, 2]), [0, 0.5, 2]))
    d = TransportDistribution(WarpMap(TimeGrid([0, 0.5, 1]), [0, 0.2, 1]))
    assert d.quantile(0.2) == pytest.approx(0.5)
    assert d(0.5) == pytest.approx(0.2)


# -- weights and regression -----------------------------------------------------------

def test_weights():
    x = np.array([-1.0, 0.0, 1.0])
    assert np.allclose(frechet_weights(x, 0.0), 1.0)
    # biased variance 2/3
    assert np.allclose(frechet_weights(x, 1.0), [-0.5, 1.0, 2.5])
    with pytest.raises(ValueError):
        frechet_weights(np.ones(4), 1.0)


def test_regression_at_mean_is_quantile_average():
    rng = np.random.default_rng(1)
    ds = [mixed(a) for a in rng.uniform(-0.5, 1, size=7)]
    x = rng.normal(size=7)
    fit = global_frechet_regression(ds, x, float(x.mean()))
    avg = np.mean([d.quantile(U101) for d in ds], axis=0)
    assert np.max(np.abs(fit.quantile(U101) - avg)) <= 1e-10


@given(st.lists(warps(3, 15), min_size=2, max_size=6), st.data())
def test_regression_at_mean_property(ws, data):
    x = np.asarray(data.draw(st.lists(st.floats(-3, 3), min_size=len(ws), max_size=len(ws))))
    if np.ptp(x) < 1e-3:
        return
    ds = [TransportDistribution(w) for w in ws]
    fit = global_frechet_regression(ds, x, float(np.mean(x)))
    u = np.unique(np.concatenate([U101] + [d.quantile.grid.points for d in ds]))
    avg = np.mean([d.quantile(u) for d in ds], axis=0)
    assert np.max(np.abs(fit.quantile(u) - avg)) <= 1e-10


def test_identical_transports_are_reproduced():
    d = mixed(0.4)
    fit = global_frechet_regression([d] * 4, np.array([1.0, 2, 3, 5]), 4.2)
    assert wasserstein2(fit, d) <= 1e-12


def test_positive_weights_skip_projection():
    rng = np.random.default_rng(2)
    ds = [mixed(a) for a in rng.uniform(0, 1, size=5)]
    x = np.arange(5.0)
    u = U101
    q = frechet_weights(x, 2.5)
    assert np.all(q > 0)
    avg = q @ np.vstack([d.quantile(u) for d in ds]) / 5
    _, changed = _project(u, avg)
    assert not changed


def test_three_point_oracle():
    x = np.array([-1.0, 0.0, 1.0])
    cs = (0.3, 1.0, 3.0)
    ds = [from_q(lambda u, c=c: u ** c) for c in cs]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fit = global_frechet_regression(ds, x, 1.0)
    q = frechet_weights(x, 1.0)
    target = q @ np.vstack([U101 ** c for c in cs]) / 3
    assert np.any(np.diff(target) < 0)  # the weighted average is not monotone
    oracle = qp_projection(U101, target)
    assert np.max(np.abs(fit.quantile(U101) - oracle)) <= 1e-6

    # the Frechet objective: fitted value is no worse than the oracle's
    def objective(dist):
        return sum(qi * wasserstein2(d, dist) ** 2 for qi, d in zip(q, ds))
    oq = np.maximum.accumulate(np.clip(oracle, 0, 1)) + 1e-9 * U101
    o = TransportDistribution.from_quantile(U101, oq / oq[-1])
    assert objective(fit) <= objective(o) + 1e-7

    # a coarser 51-point brute-force problem agrees within quadrature error
    u51 = np.linspace(0, 1, 51)
    coarse = qp_projection(u51, q @ np.vstack([u51 ** c for c in cs]) / 3)
    assert np.max(np.abs(fit.quantile(u51) - coarse)) <= 0.02


@given(st.lists(st.floats(-2, 2), min_size=11, max_size=11), st.lists(st.floats(0.05, 1), min_size=10, max_size=10))
def test_projection_matches_qp(vals, gaps):
    u = np.concatenate(([0.0], np.cumsum(gaps)))
    u /= u[-1]
    target = np.asarray(vals)
    proj, _ = _project(u, target)
    assert np.all(np.diff(proj) > 0)
    # the interior-point solver is accurate to about 1e-6 on tied solutions
    assert np.max(np.abs(proj - qp_projection(u, target))) <= 1e-5


def test_extrapolation_warning():
    ds = [mixed(a) for a in (0.1, 0.5, 0.9)]
    with pytest.warns(ExtrapolationWarning):
        fit = global_frechet_regression(ds, np.array([0.0, 1, 2]), 10.0)
    assert np.all(np.diff(fit.cdf.values) > 0)


def test_mismatched_lengths():
    with pytest.raises(ValueError):
        global_frechet_regression([mixed(0.1)] * 3, np.array([0.0, 1.0]), 0.5)


# -- R squared -------------------------------------------------------------------------------

def test_r2_undefined_when_identical():
    with pytest.warns(UndefinedVarianceWarning):
        r = frechet_r_squared([mixed(0.3)] * 4, np.arange(4.0))
    assert np.isnan(r)
    with pytest.warns(UndefinedVarianceWarning):
        f = fit_frechet([mixed(0.3)] * 4, np.arange(4.0))
    assert not f.r2.defined


def test_r2_deterministic_relation():
    x = np.linspace(0, 10, 20)
    ds = [mixed(a) for a in (x - 5) / 6]
    fit = fit_frechet(ds, x)
    assert fit.r_squared >= 0.99
    assert wasserstein2(fit.fitted(2.5), mixed((2.5 - 5) / 6)) <= 1e-8


def test_r2_permutation_null():
    rng = np.random.default_rng(3)
    vals = []
    for _ in range(10):
        ds = [mixed(a) for a in rng.uniform(-0.5, 1, size=50)]
        vals.append(frechet_r_squared(ds, rng.normal(size=50)))
    assert np.mean(vals) <= 0.15
    assert all(0.0 <= v <= 1.0 for v in vals)


def test_frechet_mean_of_two():
    a, b = mixed(0.0), mixed(1.0)
    m = frechet_mean([a, b])
    assert wasserstein2(m, mixed(0.5)) <= 1e-12
