"""Second-moment alignment of aggregated messages toward the test-time distribution.

Two transforms are provided. Both map each training node's message through a
fixed per-community affine map and leave test nodes untouched:

* PNY whitens with the predicted message covariance of the node's own
  ``(label, time)`` community and re-colours with the prediction for the
  test-time block.
* JJnorm rescales deviations from the community mean by one scalar per time,
  chosen so the within-label variance matches the one implied at test time.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .connectivity import ConnectivityEstimate
from .graph import CommunityIndex, TemporalGraph
from .numerics import EPS_EIG, jacobi_eigh_batch

ALPHA_RANGE = (1e-3, 1e3)
VAR_FLOOR = 1e-12


class AlignmentError(ValueError):
    pass


# -- affine maps -----------------------------------------------------------

@dataclass
class AffineAlignment:
    """``M'_v = A_c (M_v - b_c) + b_c`` for nodes with community ``c >= 0``; identity otherwise."""

    cid: np.ndarray        # (n,) community id per node, -1 for identity
    mats: np.ndarray       # (C, f, f)
    centers: np.ndarray    # (C, f)

    def apply(self, m: np.ndarray) -> np.ndarray:
        out = np.array(m, dtype=np.float64, copy=True)
        sel = self.cid >= 0
        if sel.any():
            c = self.cid[sel]
            dev = m[sel] - self.centers[c]
            out[sel] = np.einsum("nij,nj->ni", self.mats[c], dev) + self.centers[c]
        return out

    def adjoint(self, grad: np.ndarray) -> np.ndarray:
        """Transpose of the linear part; statistics are held fixed."""
        out = np.array(grad, dtype=np.float64, copy=True)
        sel = self.cid >= 0
        if sel.any():
            c = self.cid[sel]
            out[sel] = np.einsum("nji,nj->ni", self.mats[c], grad[sel])
        return out


# -- statistics ------------------------------------------------------------

def group_sums(x: np.ndarray, groups: np.ndarray, k: int) -> np.ndarray:
    """Row sums of ``x`` per group id in ``[0, k)``, shape ``(k, f)``."""
    return np.stack([np.bincount(groups, weights=x[:, j], minlength=k) for j in range(x.shape[1])], axis=1)


def _train_nodes(idx: CommunityIndex) -> np.ndarray:
    return np.flatnonzero(idx.node_label >= 0)


def label_means(x: np.ndarray, idx: CommunityIndex) -> np.ndarray:
    """Per-label mean over visible (training) nodes, pooled over time; NaN if absent."""
    sel = _train_nodes(idx)
    y = idx.node_label[sel]
    Y = idx.num_labels
    cnt = np.bincount(y, minlength=Y).astype(np.float64)
    sums = group_sums(x[sel], y, Y)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / cnt[:, None]


def community_means(x: np.ndarray, idx: CommunityIndex):
    """Means per visible ``(y, t)`` community: ``(means (Y, T, f), counts (Y, T))``."""
    c = idx.community
    ok = c >= 0
    C = idx.num_labels * idx.num_times
    cnt = np.bincount(c[ok], minlength=C).astype(np.float64)
    sums = group_sums(x[ok], c[ok], C)
    with np.errstate(invalid="ignore", divide="ignore"):
        mu = sums / cnt[:, None]
    return mu.reshape(idx.num_labels, idx.num_times, -1), cnt.reshape(idx.num_labels, idx.num_times)


def estimate_label_covariances(x: np.ndarray, idx: CommunityIndex) -> np.ndarray:
    """Unbiased per-label feature covariance over training nodes, ``(Y, f, f)``."""
    x = np.asarray(x, dtype=np.float64)
    sel = _train_nodes(idx)
    y = idx.node_label[sel]
    Y, f = idx.num_labels, x.shape[1]
    out = np.zeros((Y, f, f))
    for lab in range(Y):
        rows = x[sel[y == lab]]
        if rows.shape[0] < 2:
            raise AlignmentError(f"label {lab} has {rows.shape[0]} training nodes; need at least 2")
        dev = rows - rows.mean(axis=0)
        cov = dev.T @ dev / (rows.shape[0] - 1)
        out[lab] = 0.5 * (cov + cov.T)
    return out


def expected_degrees(g: TemporalGraph, idx: CommunityIndex) -> np.ndarray:
    """Mean degree per ``(y, t)``, filled in for test times without using their labels.

    For a test time ``t`` the estimate is the mean degree of all nodes at ``t``
    scaled by label ``y``'s training degree relative to the training average.
    """
    from .graph import mean_degree_table

    table = mean_degree_table(g, idx)
    Y, T = table.shape
    deg = g.degrees.astype(np.float64)
    train = g.train_mask
    overall = deg[train].mean() if train.any() else np.nan
    train_cols = [t for t in range(T) if t + idx.t_min < idx.test_boundary]
    with np.errstate(invalid="ignore"):
        label_avg = np.array([np.nanmean(table[y, train_cols]) if np.isfinite(table[y, train_cols]).any()
                              else np.nan for y in range(Y)])
    ratio = label_avg / overall
    for t in range(T):
        if t + idx.t_min < idx.test_boundary:
            continue
        at_t = g.time_index == t
        if not at_t.any():
            continue
        table[:, t] = deg[at_t].mean() * ratio
    return table


def predict_message_covariance(p_hat: np.ndarray, sigma_xx: np.ndarray, n_yt: np.ndarray,
                               time_weights: np.ndarray) -> np.ndarray:
    """Predicted covariance of one aggregated message per community, ``(Y, T, f, f)``.

    With per-edge weights ``w(t, t2)`` and the row-normalised connectivity ``P``::

        Sigma_MM(y, t) = sum_{y2,t2} w^2 P Sigma_XX(y2) / ((sum_{y2,t2} w P)^2 |N_yt|)

    For PMP weights ``w`` in {1, 2} this is the familiar ``4P`` / ``P`` split
    between single-sided and mirrored offsets.
    """
    p = np.nan_to_num(np.asarray(p_hat, dtype=np.float64))
    rows = p.sum(axis=(2, 3), keepdims=True)
    p = np.divide(p, rows, out=np.zeros_like(p), where=rows > 0)
    w = np.asarray(time_weights, dtype=np.float64)[None, :, None, :]
    num = (w * w * p).sum(axis=3)                     # (Y, T, Y)
    den = (w * p).sum(axis=(2, 3)) ** 2               # (Y, T)
    n_yt = np.asarray(n_yt, dtype=np.float64)
    bad = ~(np.isfinite(n_yt) & (n_yt > 0))
    if bad.any():
        y, t = np.argwhere(bad)[0]
        raise AlignmentError(f"community (label={y}, time position={t}) has no neighbours")
    if np.any(den <= 0):
        y, t = np.argwhere(den <= 0)[0]
        raise AlignmentError(f"community (label={y}, time position={t}) has no weighted connectivity")
    sig = np.einsum("ytz,zab->ytab", num, sigma_xx) / (den * n_yt)[..., None, None]
    return 0.5 * (sig + np.swapaxes(sig, -1, -2))


@dataclass
class CommunityMoments:
    label_mean: np.ndarray        # (Y, f) message mean per label over training nodes
    sigma_xx: np.ndarray          # (Y, f, f) representation covariance per label
    sigma_mm: np.ndarray          # (Y, T, f, f) predicted message covariance
    n_yt: np.ndarray              # (Y, T) mean degree used in the prediction
    target_positions: np.ndarray  # time positions pooled into the test block
    target_weights: np.ndarray    # node-count weights of those positions

    @property
    def sigma_target(self) -> np.ndarray:
        """Predicted covariance of the test block per label, ``(Y, f, f)``."""
        w = self.target_weights / self.target_weights.sum()
        return np.einsum("t,ytab->yab", w, self.sigma_mm[:, self.target_positions])


def _target_block(g: TemporalGraph, target: str):
    counts = g.time_counts()
    b = g.test_boundary - g.t_min
    if target == "tmax":
        pos = np.array([g.num_times - 1])
    elif target == "pool":
        pos = np.arange(max(b, 0), g.num_times)
    else:
        raise ValueError(f"unknown alignment target {target!r}")
    w = counts[pos].astype(np.float64)
    if pos.size == 0 or w.sum() <= 0:
        raise AlignmentError("no nodes at test times to align toward")
    return pos, w


def community_moments(m: np.ndarray, x_prev: np.ndarray, g: TemporalGraph, idx: CommunityIndex,
                      conn: ConnectivityEstimate, time_weights: np.ndarray,
                      n_yt: np.ndarray | None = None, target: str = "pool") -> CommunityMoments:
    pos, w = _target_block(g, target)
    sigma_xx = estimate_label_covariances(x_prev, idx)
    n_yt = expected_degrees(g, idx) if n_yt is None else n_yt
    sigma_mm = predict_message_covariance(conn.p_hat, sigma_xx, n_yt, time_weights)
    return CommunityMoments(label_mean=label_means(m, idx), sigma_xx=sigma_xx, sigma_mm=sigma_mm,
                            n_yt=n_yt, target_positions=pos, target_weights=w)


# -- PNY -------------------------------------------------------------------

@dataclass
class PnyInfo:
    transforms: np.ndarray        # (Y, T, f, f); identity where unused
    sigma_target: np.ndarray      # (Y, f, f)
    max_residual: float           # max relative error of A S A^T against the target
    residuals: np.ndarray = field(repr=False, default=None)


def pny_maps(moments: CommunityMoments, train_positions) -> PnyInfo:
    sig = moments.sigma_mm
    Y, T, f, _ = sig.shape
    tgt = moments.sigma_target
    u_t, l_t = jacobi_eigh_batch(tgt)
    l_t = np.maximum(l_t, 0.0)
    colour = u_t * np.sqrt(l_t)[:, None, :]                       # U_eff L_eff^{1/2}
    pos = np.asarray(train_positions, dtype=np.int64)
    stack = sig[:, pos].reshape(-1, f, f)
    u_s, l_s = jacobi_eigh_batch(stack)
    # floor relative to each matrix's scale: hidden-layer covariances sit near 1e-3, where an
    # absolute floor would clip genuine small eigenvalues
    top = l_s[:, :1] if f else np.zeros((stack.shape[0], 1))
    floor = np.where(top > 0, EPS_EIG * top, EPS_EIG)
    whiten = (u_s / np.sqrt(np.maximum(l_s, floor))[:, None, :]).swapaxes(1, 2)  # L^{-1/2} U^T
    colour_rep = np.repeat(colour, pos.size, axis=0)
    a = colour_rep @ whiten
    trans = np.broadcast_to(np.eye(f), (Y, T, f, f)).copy()
    trans[:, pos] = a.reshape(Y, pos.size, f, f)
    # residual of the moment identity on every transformed community
    got = a @ stack @ a.swapaxes(1, 2)
    want = np.repeat(tgt, pos.size, axis=0)
    scale = np.maximum(np.linalg.norm(want, axis=(1, 2)), 1e-300)
    res = np.linalg.norm(got - want, axis=(1, 2)) / scale
    return PnyInfo(transforms=trans, sigma_target=tgt, max_residual=float(res.max()) if res.size else 0.0,
                   residuals=res.reshape(Y, pos.size))


def pny_alignment(moments: CommunityMoments, idx: CommunityIndex) -> tuple[AffineAlignment, PnyInfo]:
    pos = idx.train_time_positions
    info = pny_maps(moments, pos)
    Y, T = idx.num_labels, idx.num_times
    f = moments.label_mean.shape[1]
    mats = info.transforms.reshape(Y * T, f, f)
    centers = np.repeat(moments.label_mean, T, axis=0)
    cid = idx.community.copy()
    return AffineAlignment(cid=cid, mats=mats, centers=np.nan_to_num(centers)), info


def pny_transform(m: np.ndarray, moments: CommunityMoments, idx: CommunityIndex):
    """Apply PNY to the training nodes; returns ``(messages, PnyInfo)``."""
    align, info = pny_alignment(moments, idx)
    return align.apply(m), info


# -- JJnorm ----------------------------------------------------------------

@dataclass
class JJStats:
    nu_sq: np.ndarray             # (T,) between-label spread, NaN at unused times
    sigma_within_sq: np.ndarray   # (T,) pooled within-label variance
    sigma_total_sq: float         # total variance of the test block
    alpha: np.ndarray             # (T,) applied scale, 1 at unused times


def jjnorm_alignment(m: np.ndarray, g: TemporalGraph, idx: CommunityIndex,
                     target: str = "pool") -> tuple[AffineAlignment, JJStats]:
    m = np.asarray(m, dtype=np.float64)
    Y, T = idx.num_labels, idx.num_times
    f = m.shape[1]
    pos, _ = _target_block(g, target)
    test_rows = np.isin(g.time_index, pos)
    mt = m[test_rows]
    if mt.shape[0] < 2:
        raise AlignmentError("test block needs at least 2 nodes")
    total = float(((mt - mt.mean(axis=0)) ** 2).sum() / (mt.shape[0] - 1))

    mu_c, cnt = community_means(m, idx)
    nu = np.full(T, np.nan)
    within = np.full(T, np.nan)
    alpha = np.ones(T)
    c = idx.community
    for t in idx.train_time_positions:
        at_t = g.time_index == t
        n_t = int(at_t.sum())
        if n_t == 0:
            continue
        if n_t < 2:
            raise AlignmentError(f"time {t + idx.t_min} has a single node; cannot estimate variances")
        lab = at_t & (c >= 0)
        mu_all = m[at_t].mean(axis=0)
        present = cnt[:, t] > 0
        nu[t] = float((cnt[present, t] * ((mu_c[present, t] - mu_all) ** 2).sum(axis=1)).sum() / (n_t - 1))
        dev = m[lab] - mu_c.reshape(Y * T, f)[c[lab]]
        within[t] = float((dev ** 2).sum() / (n_t - 1))
        if within[t] > 0:
            a = np.sqrt(max(total - nu[t], VAR_FLOOR) / within[t])
            alpha[t] = float(np.clip(a, *ALPHA_RANGE))
    mats = np.broadcast_to(np.eye(f), (Y, T, f, f)) * alpha[None, :, None, None]
    align = AffineAlignment(cid=c.copy(), mats=np.ascontiguousarray(mats.reshape(Y * T, f, f)),
                            centers=np.nan_to_num(mu_c.reshape(Y * T, f)))
    return align, JJStats(nu_sq=nu, sigma_within_sq=within, sigma_total_sq=total, alpha=alpha)


def jjnorm_transform(m: np.ndarray, g: TemporalGraph, idx: CommunityIndex, target: str = "pool"):
    """Apply JJnorm to the training nodes; returns ``(messages, JJStats)``."""
    align, stats = jjnorm_alignment(m, g, idx, target)
    return align.apply(m), stats
