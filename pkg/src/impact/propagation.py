"""Message-passing schemes expressed as edge reweightings, and the propagation kernels.

Every scheme here assigns an edge ``w -> v`` a weight that depends only on the
pair of timestamps ``(time(v), time(w))``, so each one is described by a
``(T, T)`` matrix ``W[t, t2]`` (target time first) and applied to the CSR
adjacency once.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ._accel import HAVE_NUMBA, njit
from .graph import TemporalGraph, WeightedAdjacency

log = logging.getLogger(__name__)


class SchemeTag(str, Enum):
    AVG = "avg"
    MMP = "mmp"
    PMP = "pmp"
    GENPMP = "genpmp"


class PmpBoundary(str, Enum):
    UPPER = "upper"   # only the future side is truncated (unbounded past assumed)
    BOTH = "both"     # truncation at both ends of the observed time range


@dataclass(frozen=True)
class Scheme:
    tag: SchemeTag = SchemeTag.AVG
    pmp_boundary: PmpBoundary = PmpBoundary.UPPER
    genpmp_denominator: str = "neighbor"   # "neighbor" or "target" time profile
    normalize: bool = True

    @classmethod
    def parse(cls, name: str, pmp_boundary: str = "upper", **kw) -> "Scheme":
        try:
            tag = SchemeTag(str(name).lower())
            boundary = PmpBoundary(str(pmp_boundary).lower())
        except ValueError:
            raise ValueError(f"unknown scheme {name!r} / pmp boundary {pmp_boundary!r}") from None
        return cls(tag=tag, pmp_boundary=boundary, **kw)

    @property
    def name(self) -> str:
        return self.tag.value


# -- time weight matrices --------------------------------------------------

def _deltas(t_min: int, t_max: int):
    ts = np.arange(t_min, t_max + 1)
    return ts, np.abs(ts[None, :] - ts[:, None])


def pmp_time_weights(t_min: int, t_max: int, mode: PmpBoundary | str = PmpBoundary.UPPER) -> np.ndarray:
    mode = PmpBoundary(mode)
    ts, d = _deltas(t_min, t_max)
    if mode is PmpBoundary.UPPER:
        reach = (t_max - ts)[:, None]
    else:
        reach = np.minimum(t_max - ts, ts - t_min)[:, None]
    single = (d > reach) | (d == 0)
    return np.where(single, 2.0, 1.0)


def mmp_time_weights(t_min: int, t_max: int) -> np.ndarray:
    ts = np.arange(t_min, t_max + 1)
    return (ts[None, :] <= ts[:, None]).astype(np.float64)


def avg_time_weights(t_min: int, t_max: int) -> np.ndarray:
    k = t_max - t_min + 1
    return np.ones((k, k))


def time_profile(counts) -> np.ndarray:
    """``P[s, tau]``: share of nodes at distance ``tau`` from timestamp position ``s``.

    ``counts[t]`` is the node count at time position ``t``. Rows are normalised
    over ``tau``; a row is all zero only when the graph is empty.
    """
    counts = np.asarray(counts, dtype=np.float64)
    T = counts.shape[0]
    s = np.arange(T)
    d = np.abs(s[:, None] - s[None, :])
    prof = np.zeros((T, T))
    for tau in range(T):
        prof[:, tau] = ((d == tau) * counts[None, :]).sum(axis=1)
    tot = prof.sum(axis=1, keepdims=True)
    return np.divide(prof, tot, out=np.zeros_like(prof), where=tot > 0)


def genpmp_time_weights(counts, denominator: str = "neighbor") -> tuple[np.ndarray, np.ndarray]:
    """Weights ``P_tmax(d) / P_s(d)`` with ``s`` the neighbour's (or target's) time.

    Returns ``(W, undefined)`` where ``undefined`` flags time pairs with a zero
    numerator or denominator; those edges are dropped.
    """
    prof = time_profile(counts)
    T = prof.shape[0]
    s = np.arange(T)
    d = np.abs(s[:, None] - s[None, :])
    num = prof[T - 1][d]
    if denominator == "neighbor":
        den = prof[s[None, :].repeat(T, 0), d]
    elif denominator == "target":
        den = prof[s[:, None].repeat(T, 1), d]
    else:
        raise ValueError(f"unknown GenPMP denominator {denominator!r}")
    bad = (den <= 0) | (num <= 0)
    w = np.divide(num, den, out=np.zeros_like(num), where=~bad)
    return w, bad


def time_weights(scheme: Scheme, t_min: int, t_max: int, counts=None) -> np.ndarray:
    tag = scheme.tag
    if tag is SchemeTag.AVG:
        return avg_time_weights(t_min, t_max)
    if tag is SchemeTag.MMP:
        return mmp_time_weights(t_min, t_max)
    if tag is SchemeTag.PMP:
        return pmp_time_weights(t_min, t_max, scheme.pmp_boundary)
    if counts is None:
        raise ValueError("GenPMP weights need per-time node counts")
    return genpmp_time_weights(counts, scheme.genpmp_denominator)[0]


# -- rewrites --------------------------------------------------------------

def _apply_time_weights(g: TemporalGraph, adj: WeightedAdjacency, w: np.ndarray) -> WeightedAdjacency:
    ti = g.time_index
    return adj.reweight(adj.weights * w[ti[adj.targets], ti[adj.indices]])


def pmp_rewrite(g: TemporalGraph, mode: PmpBoundary | str = PmpBoundary.UPPER) -> WeightedAdjacency:
    """Double the weight of in-edges whose time offset has no mirror inside the time range."""
    return _apply_time_weights(g, g.adjacency, pmp_time_weights(g.t_min, g.t_max, mode))


def mmp_rewrite(g: TemporalGraph) -> WeightedAdjacency:
    """Keep only in-edges from neighbours that are not later than the target."""
    return _apply_time_weights(g, g.adjacency, mmp_time_weights(g.t_min, g.t_max))


def genpmp_rewrite(g: TemporalGraph, denominator: str = "neighbor") -> WeightedAdjacency:
    w, bad = genpmp_time_weights(g.time_counts(), denominator)
    ti = g.time_index
    hit = bad[ti[g.adjacency.targets], ti[g.adjacency.indices]]
    if hit.any():
        log.warning("GenPMP: dropped %d directed edges with an undefined weight ratio", int(hit.sum()))
    return _apply_time_weights(g, g.adjacency, w)


def rewrite(g: TemporalGraph, scheme: Scheme) -> WeightedAdjacency:
    tag = scheme.tag
    if tag is SchemeTag.AVG:
        return g.adjacency
    if tag is SchemeTag.MMP:
        return mmp_rewrite(g)
    if tag is SchemeTag.PMP:
        return pmp_rewrite(g, scheme.pmp_boundary)
    return genpmp_rewrite(g, scheme.genpmp_denominator)


def scheme_time_weights(g: TemporalGraph, scheme: Scheme) -> np.ndarray:
    return time_weights(scheme, g.t_min, g.t_max, g.time_counts())


# -- kernels ---------------------------------------------------------------

@njit
def _spmm_kernel(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    f = x.shape[1]
    out = np.zeros((n, f))
    for v in range(n):
        for e in range(indptr[v], indptr[v + 1]):
            w = data[e]
            src = indices[e]
            for j in range(f):
                out[v, j] += w * x[src, j]
    return out


@njit
def _spmm_t_kernel(indptr, indices, data, g, n_src):
    n = indptr.shape[0] - 1
    f = g.shape[1]
    out = np.zeros((n_src, f))
    for v in range(n):
        for e in range(indptr[v], indptr[v + 1]):
            w = data[e]
            src = indices[e]
            for j in range(f):
                out[src, j] += w * g[v, j]
    return out


def spmm(indptr, indices, data, x, use_numba: bool | None = None) -> np.ndarray:
    """``A @ x`` for a CSR matrix ``A``."""
    fast = HAVE_NUMBA if use_numba is None else (use_numba and HAVE_NUMBA)
    x = np.ascontiguousarray(x, dtype=np.float64)
    if fast:
        return _spmm_kernel(indptr, indices, data, x)
    import scipy.sparse as sp

    n = indptr.shape[0] - 1
    return np.asarray(sp.csr_matrix((data, indices, indptr), shape=(n, x.shape[0])) @ x)


def spmm_t(indptr, indices, data, g, n_src: int, use_numba: bool | None = None) -> np.ndarray:
    """``A.T @ g`` for a CSR matrix ``A`` with ``n_src`` columns."""
    fast = HAVE_NUMBA if use_numba is None else (use_numba and HAVE_NUMBA)
    g = np.ascontiguousarray(g, dtype=np.float64)
    if fast:
        return _spmm_t_kernel(indptr, indices, data, g, n_src)
    import scipy.sparse as sp

    n = indptr.shape[0] - 1
    return np.asarray(sp.csr_matrix((data, indices, indptr), shape=(n, n_src)).T @ g)


class Propagator:
    """Row-normalised weighted mean over in-neighbours, with its adjoint.

    Nodes without in-neighbours copy their own input and are counted in
    ``n_fallback``. With ``normalize=False`` the weighted sum is returned instead.
    """

    def __init__(self, adj: WeightedAdjacency, normalize: bool = True):
        self.n = adj.n
        self.indptr = adj.indptr
        self.indices = adj.indices
        sums = adj.weight_sums()
        self.isolated = sums <= 0
        self.n_fallback = int(self.isolated.sum()) if normalize else 0
        if normalize:
            scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=~self.isolated)
            self.data = adj.weights * scale[adj.targets]
        else:
            self.data = adj.weights.copy()
            self.isolated = np.zeros(self.n, dtype=bool)
        if self.n_fallback:
            log.debug("propagation: %d nodes without in-neighbours keep their own features",
                      self.n_fallback)

    def forward(self, x) -> np.ndarray:
        out = spmm(self.indptr, self.indices, self.data, x)
        if self.n_fallback:
            out[self.isolated] = x[self.isolated]
        return out

    def adjoint(self, g) -> np.ndarray:
        out = spmm_t(self.indptr, self.indices, self.data, g, self.n)
        if self.n_fallback:
            out[self.isolated] += g[self.isolated]
        return out

    def dense(self) -> np.ndarray:
        m = np.zeros((self.n, self.n))
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        np.add.at(m, (rows, self.indices), self.data)
        m[self.isolated, self.isolated] = 1.0
        return m


def propagate(x, adj: WeightedAdjacency, normalize: bool = True) -> np.ndarray:
    return Propagator(adj, normalize).forward(np.asarray(x, dtype=np.float64))


def k_hop_stack(x, adj: WeightedAdjacency, K: int, hook=None, normalize: bool = True) -> np.ndarray:
    """Apply ``K`` propagation rounds; ``hook(k, messages, previous)`` may transform each round."""
    if K < 0:
        raise ValueError("K must be non-negative")
    prop = Propagator(adj, normalize)
    h = np.asarray(x, dtype=np.float64)
    for k in range(K):
        m = prop.forward(h)
        if hook is not None:
            m = hook(k, m, h)
        h = m
    return h
