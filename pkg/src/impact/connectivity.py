"""Estimating relative connectivity from labelled nodes and extending it to unlabelled times.

``P[y, t, y2, t2]`` is the expected share of a ``(y, t)`` node's neighbours that
fall in community ``(y2, t2)``. Only the block where both times precede the
test boundary can be counted directly; the rest is filled from the decay
profile ``g[y, y2, d]`` learned on that block, assuming connectivity separates
into a time-only factor and a ``(y, y2, |t - t2|)`` factor.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .graph import CommunityIndex, TemporalGraph, community_index

log = logging.getLogger(__name__)


@dataclass
class ConnectivityEstimate:
    p_hat: np.ndarray       # (Y, T, Y, T), every row sums to 1
    g_hat: np.ndarray       # (Y, Y, T) decay profile indexed by |dt|
    valid: np.ndarray       # (Y, T) rows counted directly from labelled data
    t_min: int
    test_boundary: int

    @property
    def num_labels(self) -> int:
        return self.p_hat.shape[0]

    @property
    def num_times(self) -> int:
        return self.p_hat.shape[1]

    def to_dict(self) -> dict:
        return {"t_min": self.t_min, "test_boundary": self.test_boundary,
                "valid": self.valid.tolist(), "g_hat": self.g_hat.tolist(),
                "p_hat": self.p_hat.tolist()}


def neighbor_counts(g: TemporalGraph, idx: CommunityIndex):
    """Edge counts between visible communities and the total degree per community.

    Returns ``(counts (Y, T, Y, T), degree_sum (Y, T))``. Degrees include
    neighbours whose labels are hidden.
    """
    Y, T = idx.num_labels, idx.num_times
    C = Y * T
    comm = idx.community
    e = g.edges
    cu, cv = comm[e[:, 0]], comm[e[:, 1]]
    both = (cu >= 0) & (cv >= 0)
    key = np.concatenate([cu[both] * C + cv[both], cv[both] * C + cu[both]])
    counts = np.bincount(key, minlength=C * C).reshape(Y, T, Y, T).astype(np.float64)
    ok = comm >= 0
    deg = np.bincount(comm[ok], weights=g.degrees[ok].astype(np.float64), minlength=C)
    return counts, deg.reshape(Y, T)


def estimate_train_connectivity(g: TemporalGraph, idx: CommunityIndex | None = None):
    """Counted block of ``P``: rows and columns at times before the test boundary.

    Cells outside the block are NaN. A row is invalid when its community is
    empty or has no edges at all. Returns ``(p_partial, valid)``.
    """
    idx = community_index(g) if idx is None else idx
    counts, deg = neighbor_counts(g, idx)
    Y, T = deg.shape
    b = int(np.clip(idx.test_boundary - idx.t_min, 0, T))
    p = np.full((Y, T, Y, T), np.nan)
    valid = np.zeros((Y, T), dtype=bool)
    valid[:, :b] = deg[:, :b] > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        block = counts[:, :b, :, :b] / deg[:, :b, None, None]
    p[:, :b, :, :b] = np.where(valid[:, :b, None, None], block, np.nan)
    return p, valid


def estimate_g(p_partial: np.ndarray, valid: np.ndarray, boundary_pos: int) -> np.ndarray:
    """Decay profile ``g[y, y2, d]`` pooled over both time directions.

    Forward pairs ``(t, t + d)`` and backward pairs ``(t, t - d)`` with both times
    in the counted block contribute; each contributing row adds its same-time
    mass to the denominator. Offsets with no contributing pair get 0.
    """
    Y, T = valid.shape
    b = boundary_pos
    g_hat = np.zeros((Y, Y, T))
    p0 = np.where(valid[:, :, None, None], np.nan_to_num(p_partial), 0.0)
    same = np.stack([p0[:, t, :, t] for t in range(T)], axis=1)   # (Y, T, Y)
    fsum = same.sum(axis=2)                                         # (Y, T)
    empty = []
    for d in range(T):
        num = np.zeros((Y, Y))
        den = np.zeros(Y)
        for t in range(0, b - d):                    # forward: t + d still labelled
            num += p0[:, t, :, t + d]
            den += fsum[:, t]
        for t in range(d, b):                        # backward: t - d >= t_min
            num += p0[:, t, :, t - d]
            den += fsum[:, t]
        ok = den > 0
        g_hat[ok, :, d] = num[ok] / den[ok, None]
        if not ok.all():
            empty.append(d)
    if empty:
        log.warning("decay profile undefined at offsets %s; set to 0", empty)
    return g_hat


def extend_to_tmax(p_partial: np.ndarray, valid: np.ndarray, g_hat: np.ndarray) -> np.ndarray:
    """Complete ``P`` from the decay profile.

    Rows at unlabelled times and invalid rows come entirely from ``g_hat``;
    counted rows get their unlabelled-time columns from ``g_hat`` and are then
    renormalised so every row sums to 1. A row whose profile is identically
    zero falls back to uniform; a counted row left with no mass keeps the
    profile row.
    """
    Y, T = valid.shape
    ts = np.arange(T)
    d = np.abs(ts[:, None] - ts[None, :])                       # (t, t2)
    model = np.transpose(g_hat[:, :, d], (0, 2, 1, 3))          # (y, t, y2, t2)
    tot = model.sum(axis=(2, 3), keepdims=True)
    zero = tot[..., 0, 0] <= 0
    with np.errstate(invalid="ignore", divide="ignore"):
        model = np.where(tot > 0, model / np.where(tot > 0, tot, 1.0), 1.0 / (Y * T))
    if zero.any():
        log.warning("%d connectivity rows have no decay profile; using uniform rows", int(zero.sum()))
    full = model.copy()
    counted = np.isfinite(p_partial) & valid[:, :, None, None]
    full[counted] = p_partial[counted]
    rows = full.sum(axis=(2, 3), keepdims=True)
    # a counted row whose neighbours all sit where the profile is zero keeps the model row
    return np.where(rows > 0, full / np.where(rows > 0, rows, 1.0), model)


def estimate_connectivity(g: TemporalGraph, idx: CommunityIndex | None = None) -> ConnectivityEstimate:
    idx = community_index(g) if idx is None else idx
    p, valid = estimate_train_connectivity(g, idx)
    b = int(np.clip(idx.test_boundary - idx.t_min, 0, idx.num_times))
    g_hat = estimate_g(p, valid, b)
    full = extend_to_tmax(p, valid, g_hat)
    return ConnectivityEstimate(p_hat=full, g_hat=g_hat, valid=valid,
                                t_min=idx.t_min, test_boundary=idx.test_boundary)


def max_abs_error(est: np.ndarray, oracle: np.ndarray, mask=None) -> float:
    diff = np.abs(est - oracle)
    if mask is not None:
        diff = diff[mask]
    return float(diff.max()) if diff.size else 0.0
