"""Diagnostics: invariance of message means over time, per-dimension W1, oracle comparison.

These use the held-out labels through :meth:`TemporalGraph.oracle_labels`
and are for evaluation only.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .graph import TemporalGraph, community_index
from .moments import community_means, group_sums
from .propagation import Propagator, Scheme, rewrite, scheme_time_weights
from .tsbm import TsbmParams, oracle_message_mean, oracle_relative_connectivity


def _reference_rows(g: TemporalGraph) -> np.ndarray:
    """The test block, or the latest timestamp when nothing is held out."""
    if g.test_mask.any():
        return g.test_mask
    return g.time_index == g.num_times - 1


def _block_means(m: np.ndarray, g: TemporalGraph, rows: np.ndarray) -> np.ndarray:
    labels = g.oracle_labels()[rows]
    Y = g.num_labels
    cnt = np.bincount(labels, minlength=Y).astype(np.float64)
    sums = group_sums(m[rows], labels, Y)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / cnt[:, None]


@dataclass
class InvarianceReport:
    gap_per_label: list       # max over training times of |mu(y, t) - mu(y, test block)|
    max_gap: float
    mean_gap: float
    normalizer: float         # mean pairwise distance between label means
    max_gap_normalized: float
    mean_gap_normalized: float

    def to_dict(self) -> dict:
        return asdict(self)


def invariance_gap(m: np.ndarray, g: TemporalGraph) -> InvarianceReport:
    """How far training-time community means of ``m`` sit from the test-block means, per label.

    Without a test split the latest timestamp serves as the reference block.
    """
    idx = community_index(g, visible_labels_only=False)
    mu, cnt = community_means(m, idx)
    ref = _block_means(m, g, _reference_rows(g))
    train_pos = idx.train_time_positions
    gaps = []
    for y in range(g.num_labels):
        d = [np.linalg.norm(mu[y, t] - ref[y]) for t in train_pos if cnt[y, t] > 0 and np.isfinite(ref[y]).all()]
        gaps.append(float(max(d)) if d else float("nan"))
    if np.all(np.isnan(gaps)):
        raise ValueError("no label has both a reference block and another community")
    gaps = np.array(gaps)
    labels = g.oracle_labels()
    lab_means = np.array([m[labels == y].mean(axis=0) for y in range(g.num_labels) if np.any(labels == y)])
    k = lab_means.shape[0]
    pd = [np.linalg.norm(lab_means[i] - lab_means[j]) for i in range(k) for j in range(i + 1, k)]
    norm = float(np.mean(pd)) if pd else float("nan")
    mx, mn = float(np.nanmax(gaps)), float(np.nanmean(gaps))
    return InvarianceReport(gap_per_label=gaps.tolist(), max_gap=mx, mean_gap=mn, normalizer=norm,
                            max_gap_normalized=mx / norm, mean_gap_normalized=mn / norm)


def empirical_w1_per_dim(a, b) -> float:
    """Mean over dimensions of the 1-D Wasserstein-1 distance between two samples.

    Both samples are summarised by ``q = min(n_a, n_b)`` evenly spaced quantiles
    (linear interpolation); for equal sizes this is the exact empirical W1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("W1 needs two non-empty samples")
    q = min(a.shape[0], b.shape[0])
    levels = np.linspace(0.0, 1.0, q) if q > 1 else np.array([0.5])
    qa = np.quantile(a, levels, axis=0)
    qb = np.quantile(b, levels, axis=0)
    return float(np.abs(qa - qb).mean())


def w1_report(m: np.ndarray, g: TemporalGraph) -> dict:
    """Per-dimension W1 between each training community and its label's test block."""
    labels = g.oracle_labels()
    te = g.test_mask
    ti = g.time_index
    idx = community_index(g, visible_labels_only=False)
    vals = {}
    for y in range(g.num_labels):
        ref = m[te & (labels == y)]
        if ref.shape[0] == 0:
            continue
        for t in idx.train_time_positions:
            rows = m[(labels == y) & (ti == t)]
            if rows.shape[0]:
                vals[(y, int(t) + g.t_min)] = empirical_w1_per_dim(rows, ref)
    arr = np.array(list(vals.values()))
    return {"mean": float(arr.mean()) if arr.size else float("nan"),
            "max": float(arr.max()) if arr.size else float("nan"),
            "per_community": {f"{y},{t}": v for (y, t), v in vals.items()}}


def compare_to_oracle(g: TemporalGraph, params: TsbmParams, scheme: Scheme) -> dict:
    """L2 error of empirical one-layer community message means against the analytic oracle."""
    m = Propagator(rewrite(g, scheme)).forward(g.features)
    idx = community_index(g, visible_labels_only=False)
    mu, cnt = community_means(m, idx)
    p_rel = oracle_relative_connectivity(params, idx.sizes)
    oracle = oracle_message_mean(params, p_rel, scheme_time_weights(g, scheme))
    err = np.linalg.norm(mu - oracle, axis=2)
    err = np.where(cnt > 0, err, np.nan)
    return {"max_error": float(np.nanmax(err)), "mean_error": float(np.nanmean(err)),
            "per_community": err.tolist()}
