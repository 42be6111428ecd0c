"""Acceptance criteria, each reported as one PASS/FAIL line.

The Monte Carlo criteria share one run of the harness (n=50, p=4, m=21,
B=20) over the sigma_E = 0 slice of the noise grid plus the cells
(0, 0, 10) and (1, 1, 10).  Expect about half an hour on one core; set
LT_WORKERS to run replicates in parallel.
"""

import math
import os
import warnings

import numpy as np
import pytest

from latent_transport.cli import main
from latent_transport.core import (
    Curve,
    WarpMap,
    average_warps,
    canonical_grid,
    compose,
    evaluate,
    invert,
    normalize,
)
from latent_transport.frechet import TransportDistribution, frechet_mean, global_frechet_regression, wasserstein2
from latent_transport.io import load_truth
from latent_transport.ltm import MultivariateSample, fit_ltm
from latent_transport.simgen import (
    SimConfig,
    exp_warp,
    fit_simulated,
    gen_component_transports,
    latent,
    monte_carlo,
    replicate_seed,
    simulate_dataset,
)
from latent_transport.smooth import Kernel, SmoothConfig, smoother_matrix
from latent_transport.warp import PairwiseConfig, pairwise_objective, pairwise_warp
from latent_transport.xct import cycle_deviation

from conftest import ACCEPTANCE_LINES
from test_smooth import normal_equations_oracle

SEED = 20240601
B = 20
SLICE = [(w, d, 0.0) for w in (0.0, 0.5, 1.0) for d in (0.0, 0.5, 1.0)]
EXTRA = [(0.0, 0.0, 10.0), (1.0, 1.0, 10.0)]
CYCLES_PER_FIT = 100


def verdict(criterion: str, parts):
    """Record ``parts`` (label, ok, detail) as one line and fail if any part failed."""
    ok = all(p[1] for p in parts)
    body = "; ".join(f"{label}: {detail} [{'ok' if good else 'FAIL'}]" for label, good, detail in parts)
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion} | {body}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


class CycleCheck:
    """Random transport cycles of length 2 to 6 on every fitted model."""

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)
        self.fits = 0
        self.worst = 0.0

    def __call__(self, fit, truth):
        self.fits += 1
        for c in range(CYCLES_PER_FIT):
            cyc = self.rng.integers(0, fit.p, size=int(self.rng.integers(2, 7)))
            # alternate marginal and subject-level transports
            subject = None if c % 2 == 0 else int(self.rng.integers(0, fit.n))
            self.worst = max(self.worst, cycle_deviation(fit, cyc, subject=subject))


@pytest.fixture(scope="module")
def mc():
    workers = int(os.environ.get("LT_WORKERS", "1"))
    check = CycleCheck(SEED)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = monte_carlo(SLICE + EXTRA, B=B, seed=SEED, inspect=check, workers=workers)
    return {(r.sigma_w, r.sigma_d, r.sigma_e): r for r in res}, check


def stat(mc, cell, metric, scale=1.0):
    r = mc[0][cell]
    return scale * r.mean(metric), scale * r.se(metric)


def test_criterion_1_latent_curve_error(mc):
    lo, lo_se = stat(mc, (0.0, 0.0, 0.0), "LISE", 100)
    hi, hi_se = stat(mc, (1.0, 1.0, 10.0), "LISE", 100)
    secs = mc[0][(0.0, 0.0, 0.0)].seconds + mc[0][(1.0, 1.0, 10.0)].seconds
    verdict("1 (LISE x100)", [
        ("(0,0,0) in [0, 0.05]", 0.0 <= lo <= 0.05, f"{lo:.4f} +- {lo_se:.4f}"),
        ("(1,1,10) in [0.10, 1.0]", 0.10 <= hi <= 1.0, f"{hi:.4f} +- {hi_se:.4f}"),
        ("runtime <= 15 min", secs <= 900, f"{secs:.0f} s for both cells"),
    ])


def test_criterion_2_subject_warp_error(mc):
    lo, lo_se = stat(mc, (0.0, 0.0, 0.0), "HMISE", 100)
    hi, hi_se = stat(mc, (1.0, 1.0, 10.0), "HMISE", 100)
    verdict("2 (HMISE x100)", [
        ("(0,0,0) <= 0.05", lo <= 0.05, f"{lo:.4f} +- {lo_se:.4f}"),
        ("(1,1,10) within factor 3 of 0.38", 0.38 / 3 <= hi <= 0.38 * 3, f"{hi:.4f} +- {hi_se:.4f}"),
    ])


def test_criterion_3_reconstruction_error(mc):
    zero, zero_se = stat(mc, (0.0, 0.0, 0.0), "XMISE")
    noisy, noisy_se = stat(mc, (0.0, 0.0, 10.0), "XMISE")
    ratio_d = stat(mc, (0.0, 0.5, 0.0), "XMISE")[0] / zero
    ratio_w = stat(mc, (0.5, 0.0, 0.0), "XMISE")[0] / zero
    verdict("3 (XMISE)", [
        ("(0,0,0) <= 0.5", zero <= 0.5, f"{zero:.3f} +- {zero_se:.3f}"),
        ("(0,0,10) within factor 2 of 57.19", 57.19 / 2 <= noisy <= 57.19 * 2, f"{noisy:.2f} +- {noisy_se:.2f}"),
        ("ratio(sigma_D) > ratio(sigma_W)", ratio_d > ratio_w, f"{ratio_d:.2f} vs {ratio_w:.2f}"),
    ])


def _trend(mc, metric, vary):
    """Inversions along one noise axis of the sigma_E = 0 slice.

    Returns (number of inversions, all inversions within 2 MC standard errors).
    """
    levels = (0.0, 0.5, 1.0)
    inversions, small = 0, True
    for fixed in levels:
        chain = [(v, fixed, 0.0) if vary == "w" else (fixed, v, 0.0) for v in levels]
        for a, b in zip(chain, chain[1:]):
            ma, sa = stat(mc, a, metric)
            mb, sb = stat(mc, b, metric)
            if mb < ma:
                inversions += 1
                small &= ma - mb <= 2 * math.hypot(sa, sb)
    return inversions, small


def test_criterion_4_trends(mc):
    parts = []
    for metric in ("LISE", "HMISE"):
        for vary, name in (("w", "sigma_W"), ("d", "sigma_D")):
            k, small = _trend(mc, metric, vary)
            parts.append((f"{metric} in {name}", k <= 1 and small, f"{k} inversions"))
    a, sa = stat(mc, (0.0, 0.0, 0.0), "LISE", 100)
    b, sb = stat(mc, (0.0, 0.0, 10.0), "LISE", 100)
    bound = 2 * math.hypot(sa, sb)
    parts.append(("LISE (0,0,10) vs (0,0,0)", abs(b - a) <= bound, f"|{b:.4f} - {a:.4f}| vs 2 SE {bound:.4f}"))
    verdict("4 (trends)", parts)


def test_criterion_5_cycle_consistency(mc):
    check = mc[1]
    n_fits = B * (len(SLICE) + len(EXTRA))
    verdict("5 (cycle consistency)", [
        ("fits checked", check.fits == n_fits, f"{check.fits} fits x {CYCLES_PER_FIT} cycles"),
        ("sup deviation <= 1e-9", check.worst <= 1e-9, f"{check.worst:.2e}"),
    ])


def test_criterion_6_oracles():
    rng = np.random.default_rng(2024)
    kernels = list(Kernel)
    worst = 0.0
    for trial in range(100):
        m = int(rng.integers(8, 60))
        g = canonical_grid(m)
        b = float(rng.uniform(2.2, 6.0) * g.spacing)
        k = kernels[trial % len(kernels)]
        y = rng.normal(size=m) * rng.uniform(0.1, 50)
        out = np.sort(rng.uniform(0, 1, size=25))
        fit = smoother_matrix(g.points, SmoothConfig(b, k), out) @ y
        ref = normal_equations_oracle(g.points, y, out, b, k)
        worst = max(worst, np.max(np.abs(fit - ref)) / max(1.0, np.max(np.abs(y))))
    parts = [("(a) smoother vs normal equations", worst <= 1e-9, f"{worst:.1e}")]

    # L = 1 warps against an exhaustive search with step 0.001
    step = 0.001
    cand = np.round(np.arange(0.01, 0.99 + 1e-9, step), 3)
    gap = 0.0
    for theta1 in (0.2, 0.3, 0.35, 0.4, 0.45, 0.55, 0.6, 0.65, 0.7, 0.8):
        for m in (101, 201):
            g = canonical_grid(m)
            target = normalize(Curve(g, latent(g.points)))
            w = WarpMap([0.0, 0.5, 1.0], [0.0, theta1, 1.0])
            moving = normalize(Curve(g, latent(w(g.points))))
            obj = [pairwise_objective(np.array([c, 1.0]), target, moving, 1e-6) for c in cand]
            best = cand[int(np.argmin(obj))]
            s = pairwise_warp(target, moving, PairwiseConfig(L=1, eta1=1e-6))
            gap = max(gap, abs(s.theta[0] - best))
    parts.append(("(b) L=1 vs exhaustive search", gap <= 2 * step + 1e-12, f"{gap / step:.2f} steps"))

    g = canonical_grid(20001)
    d1 = abs(wasserstein2(WarpMap(g, g.points), WarpMap(g, g.points ** 2)) ** 2 - 1 / 30)
    # quantiles u and u^3: 1/3 - 2/5 + 1/7
    d2 = abs(wasserstein2(WarpMap(g, g.points), WarpMap(g, np.cbrt(g.points))) ** 2 - (1 / 3 - 2 / 5 + 1 / 7))
    parts.append(("(c) W2 closed forms", max(d1, d2) <= 1e-6, f"{max(d1, d2):.1e}"))

    tr = gen_component_transports(4).warpmaps(401)
    ds = [TransportDistribution(compose(invert(tr[0]), t)) for t in tr[1:]]
    ds += [TransportDistribution(WarpMap(g, exp_warp(g.points, v))) for v in (-0.8, 0.3, 1.1)]
    x = rng.normal(size=len(ds))
    fit = global_frechet_regression(ds, x, float(x.mean()))
    u = np.unique(np.concatenate([d.quantile.grid.points for d in ds]))
    avg = np.mean([d.quantile(u) for d in ds], axis=0)
    dev = float(np.max(np.abs(fit.quantile(u) - avg)))
    dev = max(dev, float(np.max(np.abs(frechet_mean(ds).quantile(u) - avg))))
    parts.append(("(d) regression at mean vs quantile mean", dev <= 1e-10, f"{dev:.1e}"))
    verdict("6 (oracles)", parts)


def _random_warp(rng, m):
    t = np.concatenate(([0.0], np.sort(rng.uniform(0, 1, m - 2)), [1.0]))
    v = np.concatenate(([0.0], np.cumsum(rng.exponential(size=m - 1))))
    return WarpMap(t, v / v[-1])


def test_criterion_7_invariants():
    rng = np.random.default_rng(7)
    inv = 0.0
    for _ in range(200):
        w = _random_warp(rng, int(rng.integers(3, 60)))
        c = compose(invert(w), w)
        inv = max(inv, float(np.max(np.abs(c.values - c.grid.points))))
    parts = [("invert then compose", inv <= 1e-10, f"{inv:.1e}")]

    raw, _ = simulate_dataset(SimConfig(n=10, p=4, m=21, sigma_w=0.5, sigma_d=0.5, sigma_e=1.0, seed=8))
    s = MultivariateSample.from_raw(raw)
    a = fit_ltm(s, seed=3)
    # rescaling by powers of two is exact in floating point, so the fit can be bit-identical
    c = 2.0 ** rng.integers(-6, 7, size=(s.n, s.p))
    b = fit_ltm(s.scaled(c), seed=3)
    same = (np.array_equal(a.latent.values, b.latent.values)
            and np.array_equal(a.transport_thetas, b.transport_thetas)
            and all(np.array_equal(x.values, y.values) for x, y in zip(a.subject_warps, b.subject_warps))
            and all(np.array_equal(x.values, y.values) for x, y in zip(a.tempos, b.tempos)))
    parts.append(("amplitude invariance, bit-identical", same, "latent, tempos, H, Psi"))
    # any other factor rounds the input itself, so only near-equality is possible
    c = rng.uniform(0.1, 10.0, size=(s.n, s.p))
    b = fit_ltm(s.scaled(c), seed=3)
    gap = float(np.max(np.abs(a.latent.values - b.latent.values)))
    parts.append(("amplitude invariance, general factors", gap <= 1e-6, f"{gap:.1e}"))

    same = True
    for _ in range(200):
        m = int(rng.integers(3, 50))
        x = Curve(canonical_grid(m), rng.normal(size=m) * 10.0 ** rng.uniform(-3, 3))
        n1 = normalize(x)
        same &= np.array_equal(normalize(n1).values, n1.values)
    parts.append(("normalize idempotent", same, "bit-identical on 200 curves"))

    net = 0.0
    for p, a_, b_, vt in ((2, (2.0,), (2.0,), 0.5), (4, (2.0, 1.0), (2.0, 0.5), 0.5),
                          (6, (2.0, 1.0, 3.0), (2.0, 0.5, 3.0), 0.4), (4, (1.5, 3.0), (2.5, 1.0), 0.3)):
        tr = gen_component_transports(p, a_, b_, vt)
        m = average_warps([invert(w) for w in tr.warpmaps()])
        net = max(net, float(np.max(np.abs(m.values - m.grid.points))))
    parts.append(("generated transports net identity", net <= 1e-10, f"{net:.1e}"))
    verdict("7 (invariants)", parts)


def test_criterion_8_consistency():
    t = np.linspace(0.0, 1.0, 2001)
    med = {}
    for n in (25, 100):
        errs = []
        for s in range(10):
            rs = replicate_seed(8, s)
            # zero noise: no subject warps, no nuisance warps, no measurement error
            raw, _ = simulate_dataset(SimConfig(n=n, sigma_w=0.0, sigma_d=0.0, sigma_e=0.0, seed=rs))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                fit = fit_simulated(raw, seed=rs)
            errs.append(float(np.max(np.abs(evaluate(fit.latent, t) - latent(t)))))
        med[n] = float(np.median(errs))
    ratio = med[25] / med[100]
    verdict("8 (consistency)", [
        ("median sup error ratio n=25 / n=100 >= 1.5", ratio >= 1.5,
         f"{med[25]:.4f} / {med[100]:.4f} = {ratio:.2f}"),
    ])


def _pipeline(root):
    def run(*argv):
        assert main(["-q", *map(str, argv)]) == 0

    run("simulate", "--n", 15, "--sigma-w", 0.5, "--sigma-d", 0.5, "--sigma-e", 1, "--seed", 5, "--out", root / "sim")
    truth = load_truth(root / "sim" / "truth.jsonl")
    (root / "x.csv").write_text("subject_id,x\n" + "".join(
        f"{i + 1},{float(w)!r}\n" for i, w in enumerate(truth.w)))
    run("fit", root / "sim" / "dataset.csv", "--seed", 5, "--truth", root / "sim" / "truth.jsonl",
        "--out", root / "fit")
    run("xct", root / "fit" / "fit.jsonl", "--matrix", "--out", root / "xct")
    run("xct", root / "fit" / "fit.jsonl", "--cycle", "1,2,3,4", "--subject", "3", "--out", root / "xct")
    run("frechet", root / "fit" / "fit.jsonl", "--from", 1, "--to", 3, "--covariate-file", root / "x.csv",
        "--predict=-0.5,0,0.5", "--out", root / "frechet")
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_9_end_to_end_determinism(tmp_path, capsys):
    first = _pipeline(tmp_path / "a")
    second = _pipeline(tmp_path / "b")
    capsys.readouterr()
    differ = sorted(str(k) for k in first if first[k] != second.get(k))
    verdict("9 (determinism)", [
        ("same files", first.keys() == second.keys(), f"{len(first)} files"),
        ("byte-identical", not differ, ", ".join(differ) or "all equal"),
    ])
