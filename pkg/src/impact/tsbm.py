"""Temporal stochastic block model: parameters, sampling and analytic oracles."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import TemporalGraph, build_graph
from .numerics import SeededRng

DENSE_SAMPLING_MAX_N = 4000


@dataclass(frozen=True)
class Fixed:
    gamma: float

    def describe(self) -> str:
        return f"fixed:{self.gamma:g}"


@dataclass(frozen=True)
class UniformRange:
    lo: float = 0.4
    hi: float = 0.7

    def describe(self) -> str:
        return f"random:{self.lo:g}-{self.hi:g}"


def parse_gamma_mode(spec) -> Fixed | UniformRange:
    """``0.55`` or ``"fixed:0.55"`` -> Fixed; ``"random"``, ``"random:0.4-0.7"`` or ``(lo, hi)`` -> UniformRange."""
    if isinstance(spec, (Fixed, UniformRange)):
        return spec
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return Fixed(float(spec))
    if isinstance(spec, (tuple, list)) and len(spec) == 2:
        return UniformRange(float(spec[0]), float(spec[1]))
    s = str(spec).strip().lower()
    try:
        if s.startswith("fixed:"):
            return Fixed(float(s[len("fixed:"):]))
        if s.startswith("random"):
            rest = s[len("random"):].lstrip(":")
            if not rest:
                return UniformRange()
            lo, hi = rest.split("-")
            return UniformRange(float(lo), float(hi))
        return Fixed(float(s))
    except ValueError:
        raise ValueError(f"cannot parse gamma mode {spec!r}") from None


@dataclass
class TsbmConfig:
    n: int = 2000
    f: int = 5
    num_times: int = 10
    num_labels: int = 10
    same_label_cap: float = 0.6
    diff_label_cap: float = 0.24
    gamma_mode: Fixed | UniformRange = field(default_factory=UniformRange)
    feature_noise_cap: float = 8.0
    test_boundary: int = 8
    seed: int = 0

    def validate(self) -> None:
        buckets = self.num_times * self.num_labels
        if self.n <= 0 or self.n % buckets:
            raise ValueError(f"n={self.n} must be a positive multiple of |T|*|Y|={buckets}")
        for name in ("same_label_cap", "diff_label_cap"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} must lie in [0, 1]")
        gm = self.gamma_mode
        if isinstance(gm, Fixed):
            if not 0.0 < gm.gamma <= 1.0:
                raise ValueError(f"gamma={gm.gamma} must lie in (0, 1]")
        elif not (0.0 < gm.lo <= gm.hi <= 1.0):
            raise ValueError(f"gamma range [{gm.lo}, {gm.hi}] must satisfy 0 < lo <= hi <= 1")
        if not 0 < self.test_boundary <= self.num_times:
            raise ValueError("test_boundary must fall inside the time range")
        if self.f <= 0 or self.feature_noise_cap < 0:
            raise ValueError("f must be positive and the noise cap non-negative")

    @property
    def community_size(self) -> int:
        return self.n // (self.num_times * self.num_labels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gamma_mode"] = self.gamma_mode.describe()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TsbmConfig":
        d = dict(d)
        if "gamma_mode" in d:
            d["gamma_mode"] = parse_gamma_mode(d["gamma_mode"])
        if "gamma" in d:
            d["gamma_mode"] = parse_gamma_mode(d.pop("gamma"))
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown TSBM config keys: {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass
class TsbmParams:
    mu: np.ndarray           # (Y, f) label centres
    k: np.ndarray            # (Y,) feature noise scales
    p_same_time: np.ndarray  # (Y, Y) symmetric same-time edge probabilities
    gamma: np.ndarray        # (Y, Y) symmetric temporal decay factors

    def edge_probability(self, y, t, y2, t2):
        return self.p_same_time[y, y2] * self.gamma[y, y2] ** np.abs(np.subtract(t, t2))

    def to_dict(self) -> dict:
        return {k: np.asarray(v).tolist() for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TsbmParams":
        return cls(**{k: np.asarray(d[k], dtype=np.float64) for k in ("mu", "k", "p_same_time", "gamma")})


def _symmetric_uniform(rng: SeededRng, size: int, diag_hi: float, off_hi: float,
                       diag_lo: float | None = None, off_lo: float = 0.0) -> np.ndarray:
    # one draw per unordered pair, mirrored
    out = np.zeros((size, size))
    iu = np.triu_indices(size, 1)
    d_lo = off_lo if diag_lo is None else diag_lo
    out[np.diag_indices(size)] = rng.uniform(d_lo, diag_hi, size)
    vals = rng.uniform(off_lo, off_hi, iu[0].size)
    out[iu] = vals
    out[(iu[1], iu[0])] = vals
    return out


def sample_params(cfg: TsbmConfig, rng: SeededRng) -> TsbmParams:
    cfg.validate()
    Y = cfg.num_labels
    mu = rng.normal(0.0, 1.0, size=(Y, cfg.f))
    k = rng.uniform(0.0, cfg.feature_noise_cap, size=Y)
    p = _symmetric_uniform(rng, Y, cfg.same_label_cap, cfg.diff_label_cap)
    gm = cfg.gamma_mode
    if isinstance(gm, Fixed):
        gamma = np.full((Y, Y), float(gm.gamma))
    else:
        gamma = _symmetric_uniform(rng, Y, gm.hi, gm.hi, diag_lo=gm.lo, off_lo=gm.lo)
    return TsbmParams(mu=mu, k=k, p_same_time=p, gamma=gamma)


def balanced_assignment(cfg: TsbmConfig):
    """Deterministic node layout: nodes are ordered by time, then label, in equal blocks."""
    s = cfg.community_size
    comm = np.repeat(np.arange(cfg.num_times * cfg.num_labels), s)
    times = comm // cfg.num_labels
    labels = comm % cfg.num_labels
    return times.astype(np.int64), labels.astype(np.int64)


def _sample_edges_dense(times, labels, params: TsbmParams, rng: SeededRng, chunk: int = 512):
    n = times.shape[0]
    out = []
    for start in range(0, n - 1, chunk):
        rows = np.arange(start, min(n - 1, start + chunk))
        cols = np.arange(start + 1, n)
        prob = params.edge_probability(labels[rows, None], times[rows, None],
                                       labels[None, cols], times[None, cols])
        u = rng.random((rows.size, cols.size))
        hit = (u < prob) & (cols[None, :] > rows[:, None])
        r, c = np.nonzero(hit)
        out.append(np.stack([rows[r], cols[c]], axis=1))
    return np.concatenate(out) if out else np.zeros((0, 2), np.int64)


def _sample_edges_blocks(cfg: TsbmConfig, params: TsbmParams, rng: SeededRng):
    # per community pair: binomial edge count, then a uniform choice of distinct pairs
    s = cfg.community_size
    C = cfg.num_times * cfg.num_labels
    iu = np.triu_indices(s, 1)
    out = []
    for a in range(C):
        ta, ya = divmod(a, cfg.num_labels)
        for b in range(a, C):
            tb, yb = divmod(b, cfg.num_labels)
            p = float(params.edge_probability(ya, ta, yb, tb))
            pairs = s * (s - 1) // 2 if a == b else s * s
            m = int(rng.binomial(pairs, p))
            if m == 0:
                continue
            pick = rng.choice(pairs, size=m, replace=False)
            if a == b:
                i, j = iu[0][pick], iu[1][pick]
            else:
                i, j = np.divmod(pick, s)
            out.append(np.stack([a * s + i, b * s + j], axis=1))
    return np.concatenate(out).astype(np.int64) if out else np.zeros((0, 2), np.int64)


def generate(cfg: TsbmConfig, rng: SeededRng | None = None,
             params: TsbmParams | None = None, strategy: str = "auto") -> TemporalGraph:
    """Sample a TSBM graph. Parameters are drawn from ``rng`` unless supplied."""
    cfg.validate()
    rng = SeededRng(cfg.seed) if rng is None else rng
    if params is None:
        params = sample_params(cfg, rng)
    times, labels = balanced_assignment(cfg)
    z = rng.normal(0.0, 1.0, size=(cfg.n, cfg.f))
    feats = params.mu[labels] + params.k[labels, None] * z
    if strategy == "auto":
        strategy = "dense" if cfg.n <= DENSE_SAMPLING_MAX_N else "blocks"
    if strategy == "dense":
        edges = _sample_edges_dense(times, labels, params, rng)
    elif strategy == "blocks":
        edges = _sample_edges_blocks(cfg, params, rng)
    else:
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    return build_graph(times, labels, feats, edges, cfg.test_boundary,
                       t_min=0, t_max=cfg.num_times - 1, num_labels=cfg.num_labels)


def make_tsbm(cfg: TsbmConfig, seed: int | None = None, strategy: str = "auto"):
    """Draw parameters and a graph from one seeded stream; returns ``(graph, params)``."""
    rng = SeededRng(cfg.seed if seed is None else seed)
    params = sample_params(cfg, rng)
    return generate(cfg, rng, params, strategy=strategy), params


# -- oracles ---------------------------------------------------------------

def oracle_relative_connectivity(params: TsbmParams, sizes, exclude_self: bool = True) -> np.ndarray:
    """Expected neighbour distribution ``P[y, t, y2, t2]`` of a node in community ``(y, t)``.

    ``sizes`` is the ``(Y, T)`` table of community sizes. Each row is the
    expected neighbour count per community, normalised to sum to 1.
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    Y, T = sizes.shape
    dt = np.abs(np.arange(T)[:, None] - np.arange(T)[None, :])          # (T, T)
    prob = params.p_same_time[:, None, :, None] * params.gamma[:, None, :, None] ** dt[None, :, None, :]
    cnt = np.broadcast_to(sizes[None, None], (Y, T, Y, T)).copy()
    if exclude_self:
        yy, tt = np.meshgrid(np.arange(Y), np.arange(T), indexing="ij")
        cnt[yy, tt, yy, tt] = np.maximum(sizes - 1.0, 0.0)
    raw = prob * cnt
    tot = raw.sum(axis=(2, 3), keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(tot > 0, raw / np.where(tot > 0, tot, 1.0), 0.0)


def oracle_message_mean(params: TsbmParams, p_rel: np.ndarray, time_weights: np.ndarray) -> np.ndarray:
    """Expected one-layer aggregated message per community under a time-weighted scheme.

    ``time_weights[t, t2]`` is the weight of a neighbour at time ``t2`` for a
    target at time ``t`` (all ones for plain averaging). Returns ``(Y, T, f)``.
    """
    w = p_rel * time_weights[None, :, None, :]
    label_mass = w.sum(axis=3)                                   # (Y, T, Y)
    norm = label_mass.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        label_mass = np.where(norm > 0, label_mass / np.where(norm > 0, norm, 1.0), 0.0)
    return label_mass @ params.mu
