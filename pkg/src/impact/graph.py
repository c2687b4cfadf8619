"""Temporal node-classification graphs, weighted CSR adjacency and community indexing."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np


class GraphError(ValueError):
    pass


UNLABELED = -1


@dataclass(frozen=True, eq=False)
class TemporalGraph:
    """Undirected graph whose nodes carry a timestamp, a label and a feature vector.

    Nodes with ``time >= test_boundary`` form the test split. Labels of test
    nodes are only reachable through :meth:`oracle_labels`, which evaluation
    and diagnostics use explicitly; training code works from :meth:`train_labels`.
    """

    times: np.ndarray
    features: np.ndarray
    edges: np.ndarray
    test_boundary: int
    t_min: int
    t_max: int
    num_labels: int
    _labels: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return int(self.times.shape[0])

    @property
    def f(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_times(self) -> int:
        return self.t_max - self.t_min + 1

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @cached_property
    def test_mask(self) -> np.ndarray:
        return self.times >= self.test_boundary

    @cached_property
    def train_mask(self) -> np.ndarray:
        return ~self.test_mask

    @cached_property
    def time_index(self) -> np.ndarray:
        """Timestamps shifted so that ``t_min`` maps to 0."""
        return self.times - self.t_min

    def train_labels(self) -> np.ndarray:
        out = self._labels.copy()
        out[self.test_mask] = UNLABELED
        return out

    def oracle_labels(self) -> np.ndarray:
        """All labels, including the held-out test labels. Evaluation only."""
        out = self._labels.copy()
        out.flags.writeable = False
        return out

    @cached_property
    def adjacency(self) -> "WeightedAdjacency":
        return WeightedAdjacency.from_edges(self.n, self.edges)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    def time_counts(self) -> np.ndarray:
        return np.bincount(self.time_index, minlength=self.num_times)


def build_graph(times, labels, features, edges, test_boundary: int,
                t_min: int | None = None, t_max: int | None = None,
                num_labels: int | None = None) -> TemporalGraph:
    """Validate raw arrays and assemble a :class:`TemporalGraph`.

    Edges are undirected; each unordered pair may appear once. ``labels`` may
    hold ``-1`` for test nodes whose label is unknown.
    """
    times = np.asarray(times)
    if times.ndim != 1:
        raise GraphError("times must be a 1-D array")
    if times.size and not np.issubdtype(times.dtype, np.integer):
        if not np.all(np.equal(np.mod(times, 1), 0)):
            raise GraphError("timestamps must be integers")
    times = times.astype(np.int64)
    n = times.shape[0]
    labels = np.asarray(labels).astype(np.int64)
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1 and n == 0:
        feats = feats.reshape(0, 0)
    if labels.shape != (n,):
        raise GraphError(f"labels has shape {labels.shape}, expected ({n},)")
    if feats.ndim != 2 or feats.shape[0] != n:
        raise GraphError(f"features has shape {feats.shape}, expected ({n}, f)")
    if not np.all(np.isfinite(feats)):
        bad = int(np.argwhere(~np.isfinite(feats))[0, 0])
        raise GraphError(f"non-finite feature at node {bad}")

    lo = int(times.min()) if n else 0
    hi = int(times.max()) if n else 0
    t_min = lo if t_min is None else int(t_min)
    t_max = hi if t_max is None else int(t_max)
    if n and (lo < t_min or hi > t_max):
        raise GraphError(f"timestamps span [{lo}, {hi}] outside declared [{t_min}, {t_max}]")
    if t_max < t_min:
        raise GraphError("t_max < t_min")
    theta = int(test_boundary)

    train = times < theta
    if np.any(labels[train] < 0):
        bad = int(np.flatnonzero(train & (labels < 0))[0])
        raise GraphError(f"training node {bad} has no label")
    if np.any(labels < UNLABELED):
        raise GraphError("labels must be >= 0 (or -1 for unknown test labels)")
    seen = int(labels.max()) + 1 if n else 0
    if num_labels is None:
        num_labels = seen
    elif seen > num_labels:
        raise GraphError(f"label {seen - 1} out of range for {num_labels} labels")

    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2) if len(edges) else np.zeros((0, 2), np.int64)
    if e.size:
        if e.min() < 0 or e.max() >= n:
            row = int(np.flatnonzero((e < 0).any(1) | (e >= n).any(1))[0])
            raise GraphError(f"edge {tuple(e[row])} references a node outside [0, {n})")
        loops = np.flatnonzero(e[:, 0] == e[:, 1])
        if loops.size:
            raise GraphError(f"self-loop at node {int(e[loops[0], 0])}")
        e = np.sort(e, axis=1)
        key = e[:, 0] * n + e[:, 1]
        order = np.argsort(key, kind="stable")
        ks = key[order]
        dup = np.flatnonzero(ks[1:] == ks[:-1])
        if dup.size:
            u, v = e[order[dup[0]]]
            raise GraphError(f"duplicate edge ({int(u)}, {int(v)})")
        e = e[order]
    return TemporalGraph(times=times, features=feats, edges=e, test_boundary=theta,
                         t_min=t_min, t_max=t_max, num_labels=int(num_labels), _labels=labels)


@dataclass(frozen=True, eq=False)
class WeightedAdjacency:
    """Directed weighted adjacency stored as CSR rows per *target* node.

    Row ``v`` lists the in-neighbours ``w`` of ``v`` (``indices``) with their
    positive weights. An undirected edge contributes one entry in each direction.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_edges(cls, n: int, edges, weights=None) -> "WeightedAdjacency":
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        if weights is None:
            w = np.ones(src.shape[0])
        else:
            w = np.asarray(weights, dtype=np.float64)
            w = np.concatenate([w, w])
        return cls.from_directed(n, src, dst, w)

    @classmethod
    def from_directed(cls, n: int, src, dst, weights) -> "WeightedAdjacency":
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        w = np.asarray(weights, dtype=np.float64)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise GraphError("edge weights must be finite and non-negative")
        keep = w > 0
        src, dst, w = src[keep], dst[keep], w[keep]
        order = np.lexsort((src, dst))
        counts = np.bincount(dst, minlength=n)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return cls(n=int(n), indptr=indptr, indices=src[order].astype(np.int64), weights=w[order])

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    @cached_property
    def targets(self) -> np.ndarray:
        """Target node of every stored entry (the CSR row index, expanded)."""
        return np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.indptr))

    def in_degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def weight_sums(self) -> np.ndarray:
        return np.bincount(self.targets, weights=self.weights, minlength=self.n).astype(np.float64)

    def reweight(self, new_weights) -> "WeightedAdjacency":
        """Same sparsity pattern with new weights; zero-weight entries are dropped."""
        w = np.asarray(new_weights, dtype=np.float64)
        if w.shape != self.weights.shape:
            raise GraphError("weight vector does not match the adjacency")
        return WeightedAdjacency.from_directed(self.n, self.indices, self.targets, w)

    def to_scipy(self):
        import scipy.sparse as sp

        return sp.csr_matrix((self.weights, self.indices, self.indptr), shape=(self.n, self.n))


@dataclass(frozen=True, eq=False)
class CommunityIndex:
    """Nodes grouped by ``(label, time)`` and by time alone.

    ``node_label`` is -1 for nodes whose label is not visible to this index.
    Time positions are offsets from ``t_min``.
    """

    num_labels: int
    t_min: int
    t_max: int
    test_boundary: int
    node_label: np.ndarray
    node_time: np.ndarray

    @property
    def num_times(self) -> int:
        return self.t_max - self.t_min + 1

    @cached_property
    def community(self) -> np.ndarray:
        """Flat community id ``y * T + (t - t_min)`` per node, -1 when unlabeled."""
        c = self.node_label * self.num_times + self.node_time
        c[self.node_label < 0] = -1
        return c

    @cached_property
    def sizes(self) -> np.ndarray:
        c = self.community
        flat = np.bincount(c[c >= 0], minlength=self.num_labels * self.num_times)
        return flat.reshape(self.num_labels, self.num_times)

    @cached_property
    def _buckets(self):
        c = self.community
        order = np.argsort(c, kind="stable")
        k = self.num_labels * self.num_times
        bounds = np.searchsorted(c[order], np.arange(-1, k + 1))
        return order, bounds

    def members(self, y: int, t: int) -> np.ndarray:
        """Node ids of community ``(y, t)``; ``t`` is an absolute timestamp."""
        ti = t - self.t_min
        if not (0 <= y < self.num_labels and 0 <= ti < self.num_times):
            return np.zeros(0, dtype=np.int64)
        order, bounds = self._buckets
        cid = y * self.num_times + ti
        return order[bounds[cid + 1]:bounds[cid + 2]]

    def time_members(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.node_time == t - self.t_min)

    def label_members(self, y: int) -> np.ndarray:
        return np.flatnonzero(self.node_label == y)

    @property
    def train_time_positions(self) -> np.ndarray:
        return np.arange(0, max(0, min(self.num_times, self.test_boundary - self.t_min)))


def community_index(g: TemporalGraph, visible_labels_only: bool = True) -> CommunityIndex:
    labels = g.train_labels() if visible_labels_only else g.oracle_labels().copy()
    return CommunityIndex(num_labels=g.num_labels, t_min=g.t_min, t_max=g.t_max,
                          test_boundary=g.test_boundary, node_label=labels,
                          node_time=g.time_index.copy())


def mean_degree_table(g: TemporalGraph, idx: CommunityIndex) -> np.ndarray:
    """Mean degree per community as a ``(Y, T)`` array, NaN for empty communities."""
    c = idx.community
    ok = c >= 0
    k = idx.num_labels * idx.num_times
    tot = np.bincount(c[ok], weights=g.degrees[ok].astype(np.float64), minlength=k)
    cnt = np.bincount(c[ok], minlength=k)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)
    return out.reshape(idx.num_labels, idx.num_times)


def mean_degree_per_community(g: TemporalGraph, idx: CommunityIndex) -> dict:
    table = mean_degree_table(g, idx)
    return {(y, t + idx.t_min): float(table[y, t])
            for y in range(table.shape[0]) for t in range(table.shape[1])
            if np.isfinite(table[y, t])}


# -- JSON ------------------------------------------------------------------

GRAPH_KEYS = ("n", "f", "t_min", "t_max", "test_boundary", "times", "labels", "features", "edges")


def graph_to_dict(g: TemporalGraph) -> dict:
    return {
        "n": g.n,
        "f": g.f,
        "t_min": g.t_min,
        "t_max": g.t_max,
        "test_boundary": g.test_boundary,
        "times": g.times.tolist(),
        "labels": g.oracle_labels().tolist(),
        "features": g.features.tolist(),
        "edges": g.edges.tolist(),
    }


def graph_from_dict(d: dict) -> TemporalGraph:
    missing = [k for k in GRAPH_KEYS if k not in d]
    if missing:
        raise GraphError(f"graph document is missing keys: {', '.join(missing)}")
    n, f = int(d["n"]), int(d["f"])
    if len(d["times"]) != n:
        raise GraphError(f"'times' has {len(d['times'])} entries, expected {n}")
    try:
        feats = np.asarray(d["features"], dtype=np.float64).reshape(n, f) if n else np.zeros((0, f))
    except ValueError:
        raise GraphError(f"'features' is not an {n} x {f} table") from None
    g = build_graph(d["times"], d["labels"], feats, d["edges"], d["test_boundary"],
                    t_min=d["t_min"], t_max=d["t_max"], num_labels=d.get("num_labels"))
    if g.f != f:
        raise GraphError(f"features have {g.f} columns, expected {f}")
    return g


def save_graph(g: TemporalGraph, path) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(g), separators=(",", ":")) + "\n")


def load_graph(path) -> TemporalGraph:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GraphError(f"{path}: not valid JSON ({exc})") from exc
    return graph_from_dict(doc)
