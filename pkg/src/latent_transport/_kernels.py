"""Compiled inner loops for penalized spline warping.

The warping objective is minimized over unconstrained logits ``z`` (length L);
the L+1 increments of the knot values are ``floor + (1 - (L+1) floor) *
softmax([z, 0])`` so every iterate stays inside the monotone parameter space.
"""

import numpy as np
from numba import config, njit, prange

# the bundled TBB is too old for numba; avoid probing it first
config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

STATUS_OK = 0
STATUS_MAXITER = 1
SCOUT_XATOL = 1e-2
SCOUT_FATOL = 1e-8
POLISH_STEP = 0.05


@njit(cache=True)
def logits_to_theta(z, floor, theta):
    """Fill ``theta`` (length L+2, including theta[0] = 0) from logits ``z``."""
    L = z.size
    mx = 0.0
    for k in range(L):
        if z[k] > mx:
            mx = z[k]
    s = np.exp(-mx)
    for k in range(L):
        s += np.exp(z[k] - mx)
    scale = 1.0 - (L + 1) * floor
    theta[0] = 0.0
    acc = 0.0
    for k in range(L):
        acc += floor + scale * np.exp(z[k] - mx) / s
        theta[k + 1] = acc
    theta[L + 1] = 1.0


@njit(cache=True, fastmath=True)
def _interp_at(grid, uniform, y, x):
    G = grid.size
    if uniform:
        pos = (x - grid[0]) * ((G - 1) / (grid[G - 1] - grid[0]))
        i = int(pos)
        if i < 0:
            i = 0
        if i > G - 2:
            i = G - 2
        f = pos - i
    else:
        lo = 0
        hi = G - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if grid[mid] <= x:
                lo = mid
            else:
                hi = mid
        i = lo
        f = (x - grid[i]) / (grid[i + 1] - grid[i])
    if f < 0.0:
        f = 0.0
    elif f > 1.0:
        f = 1.0
    return (1.0 - f) * y[i] + f * y[i + 1]


@njit(cache=True, fastmath=True)
def objective_theta(theta, target, moving, grid, uniform, wq, seg, frac, eta):
    """Trapezoid value of  int (moving(v(t)) - target(t))^2 + eta (v(t) - t)^2 dt."""
    total = 0.0
    G = grid.size
    if uniform:
        t0 = grid[0]
        inv_h = (G - 1) / (grid[G - 1] - grid[0])
        for g in range(G):
            s = seg[g]
            v = theta[s] + frac[g] * (theta[s + 1] - theta[s])
            pos = (v - t0) * inv_h
            i = min(max(int(pos), 0), G - 2)
            f = min(max(pos - i, 0.0), 1.0)
            d = (1.0 - f) * moving[i] + f * moving[i + 1] - target[g]
            e = v - grid[g]
            total += wq[g] * (d * d + eta * e * e)
        return total
    for g in range(G):
        s = seg[g]
        v = theta[s] + frac[g] * (theta[s + 1] - theta[s])
        d = _interp_at(grid, uniform, moving, v) - target[g]
        e = v - grid[g]
        total += wq[g] * (d * d + eta * e * e)
    return total


@njit(cache=True)
def _obj_z(z, target, moving, grid, uniform, wq, seg, frac, eta, floor, theta):
    logits_to_theta(z, floor, theta)
    return objective_theta(theta, target, moving, grid, uniform, wq, seg, frac, eta)


@njit(cache=True)
def nelder_mead(x0, step, target, moving, grid, uniform, wq, seg, frac, eta, floor,
                maxiter, xatol, fatol):
    """Standard Nelder-Mead (reflection 1, expansion 2, contraction 1/2, shrink 1/2)."""
    n = x0.size
    theta = np.empty(n + 2)
    sim = np.empty((n + 1, n))
    fsim = np.empty(n + 1)
    for k in range(n + 1):
        for c in range(n):
            sim[k, c] = x0[c]
        if k > 0:
            sim[k, k - 1] += step
        fsim[k] = _obj_z(sim[k], target, moving, grid, uniform, wq, seg, frac, eta, floor, theta)
    xbar = np.empty(n)
    xr = np.empty(n)
    xe = np.empty(n)
    xc = np.empty(n)
    converged = False
    it = 0
    while it < maxiter:
        order = np.argsort(fsim)
        sim = sim[order]
        fsim = fsim[order]
        xspread = 0.0
        fspread = 0.0
        for k in range(1, n + 1):
            df = abs(fsim[k] - fsim[0])
            if df > fspread:
                fspread = df
            for c in range(n):
                dx = abs(sim[k, c] - sim[0, c])
                if dx > xspread:
                    xspread = dx
        if xspread <= xatol and fspread <= fatol:
            converged = True
            break
        it += 1
        for c in range(n):
            acc = 0.0
            for k in range(n):
                acc += sim[k, c]
            xbar[c] = acc / n
        for c in range(n):
            xr[c] = 2.0 * xbar[c] - sim[n, c]
        fr = _obj_z(xr, target, moving, grid, uniform, wq, seg, frac, eta, floor, theta)
        shrink = False
        if fr < fsim[0]:
            for c in range(n):
                xe[c] = 3.0 * xbar[c] - 2.0 * sim[n, c]
            fe = _obj_z(xe, target, moving, grid, uniform, wq, seg, frac, eta, floor, theta)
            if fe < fr:
                sim[n] = xe
                fsim[n] = fe
            else:
                sim[n] = xr
                fsim[n] = fr
        elif fr < fsim[n - 1]:
            sim[n] = xr
            fsim[n] = fr
        elif fr < fsim[n]:
            for c in range(n):
                xc[c] = 1.5 * xbar[c] - 0.5 * sim[n, c]
            fc = _obj_z(xc, target, moving, grid, uniform, wq, seg, frac, eta, floor, theta)
            if fc <= fr:
                sim[n] = xc
                fsim[n] = fc
            else:
                shrink = True
        else:
            for c in range(n):
                xc[c] = 0.5 * xbar[c] + 0.5 * sim[n, c]
            fc = _obj_z(xc, target, moving, grid, uniform, wq, seg, frac, eta, floor, theta)
            if fc < fsim[n]:
                sim[n] = xc
                fsim[n] = fc
            else:
                shrink = True
        if shrink:
            for k in range(1, n + 1):
                for c in range(n):
                    sim[k, c] = sim[0, c] + 0.5 * (sim[k, c] - sim[0, c])
                fsim[k] = _obj_z(sim[k], target, moving, grid, uniform, wq, seg, frac,
                                 eta, floor, theta)
    best = 0
    for k in range(1, n + 1):
        if fsim[k] < fsim[best]:
            best = k
    return sim[best].copy(), fsim[best], converged


@njit(parallel=True, cache=True)
def fit_pairs(bank, target_idx, moving_idx, grid, uniform, wq, seg, frac, L, eta, floor,
              starts, step, maxiter, xatol, fatol):
    """Minimize the warping objective for every (target, moving) pair of rows of ``bank``.

    Returns knot values (P, L+2) with theta[:, 0] = 0 and theta[:, -1] = 1, the
    achieved objective values, and per-pair status codes.
    """
    P = target_idx.size
    thetas = np.empty((P, L + 2))
    fvals = np.empty(P)
    status = np.empty(P, dtype=np.int64)
    for q in prange(P):
        target = bank[target_idx[q]]
        moving = bank[moving_idx[q]]
        # the first start is solved to full tolerance; later starts are scouted
        # coarsely and only polished when they beat the incumbent
        best_z, best_f, best_conv = nelder_mead(starts[0], step, target, moving, grid, uniform,
                                                wq, seg, frac, eta, floor, maxiter, xatol, fatol)
        for r in range(1, starts.shape[0]):
            z, f, conv = nelder_mead(starts[r], step, target, moving, grid, uniform, wq, seg,
                                     frac, eta, floor, maxiter, SCOUT_XATOL, SCOUT_FATOL)
            if f < best_f:
                z, f, conv = nelder_mead(z, POLISH_STEP, target, moving, grid, uniform, wq,
                                         seg, frac, eta, floor, maxiter, xatol, fatol)
                if f < best_f:
                    best_f = f
                    best_z = z
                    best_conv = conv
        th = np.empty(L + 2)
        logits_to_theta(best_z, floor, th)
        for k in range(L + 2):
            thetas[q, k] = th[k]
        fvals[q] = best_f
        status[q] = STATUS_OK if best_conv else STATUS_MAXITER
    return thetas, fvals, status
