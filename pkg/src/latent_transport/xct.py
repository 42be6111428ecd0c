"""Cross-component transport maps.

The marginal transport from component ``j`` to component ``k`` is
``T_jk = Psi_j^{-1} o Psi_k`` and the subject-level version is
``T^(i)_jk = G_ij^{-1} o G_ik``.  All maps are built by exact piecewise-linear
inversion and composition, so chained transports telescope to rounding error.

Component and subject indices are 0-based integers here; string ids are
resolved through :meth:`LTMFit.component_index`.
"""

from __future__ import annotations

from typing import Dict, Sequence, Tuple

import numpy as np

from .core import WarpMap, compose, compose_chain, identity, invert

__all__ = [
    "marginal_xct",
    "subject_xct",
    "transport_path",
    "chain",
    "cycle_deviation",
    "TransportMatrix",
]


def _check_index(k: int, size: int, what: str, ids: Sequence[str] = ()) -> int:
    if isinstance(k, (bool, np.bool_)) or not isinstance(k, (int, np.integer)):
        raise TypeError(f"{what} index must be an integer, got {k!r}")
    if not 0 <= k < size:
        hint = f"; valid ids: {', '.join(ids)}" if ids else ""
        raise IndexError(f"{what} index {k} out of range 0..{size - 1}{hint}")
    return int(k)


def _transport_pair(forward_j: WarpMap, forward_k: WarpMap) -> WarpMap:
    return compose(invert(forward_j), forward_k)


def marginal_xct(fit, j: int, k: int) -> WarpMap:
    """``T_jk = Psi_j^{-1} o Psi_k``; the identity when ``j == k``."""
    j = _check_index(j, fit.p, "component", fit.component_ids)
    k = _check_index(k, fit.p, "component", fit.component_ids)
    if j == k:
        return identity(fit.component_transports[j].grid)
    return _transport_pair(fit.component_transports[j], fit.component_transports[k])


def subject_xct(fit, i: int, j: int, k: int) -> WarpMap:
    """``T^(i)_jk = G_ij^{-1} o G_ik`` for subject ``i``."""
    i = _check_index(i, fit.n, "subject")
    j = _check_index(j, fit.p, "component", fit.component_ids)
    k = _check_index(k, fit.p, "component", fit.component_ids)
    G = fit.distortions[i]
    if j == k:
        return identity(G[j].grid)
    return _transport_pair(G[j], G[k])


def chain(maps: Sequence[WarpMap]) -> WarpMap:
    """``maps[0] o maps[1] o ... o maps[-1]``."""
    if not maps:
        raise ValueError("empty chain")
    return compose_chain(maps)


def transport_path(fit, path: Sequence[int], subject: int | None = None) -> WarpMap:
    """``T_{c1 c2} o T_{c2 c3} o ... o T_{c(m-1) cm}`` for ``path = (c1, ..., cm)``.

    The chain is composed from the fitted factors ``Psi^{-1}`` and ``Psi``
    (or ``G_i^{-1}`` and ``G_i``) in one exact pass.  Chaining the finished
    transports instead would compound their own rounding, which the steep
    pieces of later maps amplify.
    """
    if len(path) < 2:
        raise ValueError("a path needs at least two indices")
    if subject is None:
        G = fit.component_transports
    else:
        G = fit.distortions[_check_index(subject, fit.n, "subject")]
    idx = [_check_index(int(c), fit.p, "component", fit.component_ids) for c in path]
    maps = []
    for j, k in zip(idx[:-1], idx[1:]):
        if j != k:
            maps += [invert(G[j]), G[k]]
    if not maps:
        return identity(G[idx[0]].grid)
    return compose_chain(maps)


def cycle_deviation(fit, cycle: Sequence[int], subject: int | None = None) -> float:
    """Sup deviation from the identity of the transport chain around ``cycle``.

    For ``cycle = (c1, ..., cL)`` the chain is ``T_{c1 c2} o T_{c2 c3} o ... o
    T_{cL c1}``.  A closing repeat of the first index is accepted and dropped.
    Pass ``subject`` to use the subject-level transports.
    """
    cyc = [int(c) for c in cycle]
    if len(cyc) >= 2 and cyc[0] == cyc[-1]:
        cyc = cyc[:-1]
    if len(cyc) < 1 or len(cycle) < 2:
        raise ValueError("a cycle needs at least two indices")
    T = transport_path(fit, cyc + [cyc[0]], subject)
    return float(np.max(np.abs(T.values - T.grid.points)))


class TransportMatrix:
    """Lazily evaluated p x p table of marginal (or subject-level) transports.

    Maps are computed on first access and cached; :meth:`materialize` fills
    the whole table.
    """

    def __init__(self, fit, subject: int | None = None):
        self.fit = fit
        self.subject = None if subject is None else _check_index(subject, fit.n, "subject")
        self._cache: Dict[Tuple[int, int], WarpMap] = {}

    @property
    def p(self) -> int:
        return self.fit.p

    def __getitem__(self, jk) -> WarpMap:
        j, k = jk
        key = (int(j), int(k))
        if key not in self._cache:
            if self.subject is None:
                self._cache[key] = marginal_xct(self.fit, *key)
            else:
                self._cache[key] = subject_xct(self.fit, self.subject, *key)
        return self._cache[key]

    def materialize(self) -> "TransportMatrix":
        for j in range(self.p):
            for k in range(self.p):
                self[j, k]
        return self

    def __len__(self) -> int:
        return len(self._cache)
