"""Models trained with hand-written backpropagation: SGC (propagate once, then an MLP) and a 2-layer GCN."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .connectivity import ConnectivityEstimate, estimate_connectivity
from .graph import TemporalGraph, community_index
from .moments import (AffineAlignment, community_moments, expected_degrees, jjnorm_alignment,
                      pny_alignment)
from .numerics import SeededRng
from .propagation import Propagator, Scheme, rewrite, scheme_time_weights


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-4
    hidden: int = 16
    hops: int = 2
    seed: int = 0


@dataclass(frozen=True)
class Alignment:
    kind: str = "none"            # none | pny | jjnorm
    pny_mode: str = "per-layer"   # per-layer | final
    target: str = "pool"          # pool (all test times) | tmax

    def __post_init__(self):
        if self.kind not in ("none", "pny", "jjnorm"):
            raise ValueError(f"unknown alignment {self.kind!r}")
        if self.pny_mode not in ("per-layer", "final"):
            raise ValueError(f"unknown PNY mode {self.pny_mode!r}")
        if self.target not in ("pool", "tmax"):
            raise ValueError(f"unknown alignment target {self.target!r}")


@dataclass
class TrainReport:
    model: str
    scheme: str
    alignment: str
    seed: int
    losses: list
    train_acc: float
    test_acc: float
    wall_ms: float
    meta: dict = field(default_factory=dict)


# -- building blocks -------------------------------------------------------

def glorot_uniform(rng: SeededRng, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits (log-sum-exp stabilised)."""
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    n = logits.shape[0]
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def accuracy(logits: np.ndarray, labels: np.ndarray, mask) -> float:
    """Share of masked nodes whose argmax (lowest index on ties) equals the label."""
    mask = np.asarray(mask)
    sel = np.flatnonzero(mask) if mask.dtype == bool else mask
    if sel.size == 0:
        raise ValueError("accuracy over an empty node set")
    return float(np.mean(np.argmax(logits[sel], axis=1) == labels[sel]))


class Adam:
    """Adam with coupled L2 decay (the decay term is part of the gradient)."""

    def __init__(self, params: dict, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _l2(params: dict, wd: float) -> float:
    return 0.5 * wd * sum(float(np.sum(p * p)) for p in params.values())


class MLP:
    """``softmax(relu(X W1 + b1) W2 + b2)`` on fixed inputs; loss over the rows given."""

    def __init__(self, x, labels, rows, hidden: int, n_out: int, weight_decay: float = 5e-4):
        self.x_all = np.asarray(x, dtype=np.float64)
        self.rows = np.asarray(rows)
        self.x = self.x_all[self.rows]
        self.y = np.asarray(labels)[self.rows]
        self.hidden, self.n_out, self.wd = hidden, n_out, weight_decay

    def init_params(self, rng: SeededRng) -> dict:
        f = self.x.shape[1]
        return {"W1": glorot_uniform(rng, f, self.hidden), "b1": np.zeros(self.hidden),
                "W2": glorot_uniform(rng, self.hidden, self.n_out), "b2": np.zeros(self.n_out)}

    def logits(self, params, x=None) -> np.ndarray:
        x = self.x_all if x is None else x
        h = np.maximum(x @ params["W1"] + params["b1"], 0.0)
        return h @ params["W2"] + params["b2"]

    def loss_and_grad(self, params: dict):
        z1 = self.x @ params["W1"] + params["b1"]
        h = np.maximum(z1, 0.0)
        z2 = h @ params["W2"] + params["b2"]
        loss, dz2 = softmax_cross_entropy(z2, self.y)
        wd = self.wd
        dh = dz2 @ params["W2"].T
        dz1 = dh * (z1 > 0)
        grads = {"W1": self.x.T @ dz1 + wd * params["W1"], "b1": dz1.sum(0) + wd * params["b1"],
                 "W2": h.T @ dz2 + wd * params["W2"], "b2": dz2.sum(0) + wd * params["b2"]}
        return loss + _l2(params, wd), grads


class GCN:
    """Two propagation layers without biases: ``P relu(A1(P X) W1)``, aligned, then ``W2``.

    ``align1`` is a fixed alignment of the first aggregated messages.
    ``align2_fn(m2, h)`` returns an :class:`AffineAlignment` for the second layer
    from the current activations, or ``None``; its statistics are treated as
    constants during backpropagation.
    """

    def __init__(self, prop: Propagator, x, labels, rows, hidden: int, n_out: int,
                 weight_decay: float = 5e-4, align1: AffineAlignment | None = None, align2_fn=None):
        self.prop = prop
        m1 = prop.forward(np.asarray(x, dtype=np.float64))
        self.m1 = align1.apply(m1) if align1 is not None else m1
        self.rows = np.asarray(rows)
        self.y = np.asarray(labels)[self.rows]
        self.hidden, self.n_out, self.wd = hidden, n_out, weight_decay
        self.align2_fn = align2_fn
        self.last_alignment = None

    def init_params(self, rng: SeededRng) -> dict:
        f = self.m1.shape[1]
        return {"W1": glorot_uniform(rng, f, self.hidden), "W2": glorot_uniform(rng, self.hidden, self.n_out)}

    def _forward(self, params):
        z1 = self.m1 @ params["W1"]
        h = np.maximum(z1, 0.0)
        m2 = self.prop.forward(h)
        aln = self.align2_fn(m2, h) if self.align2_fn is not None else None
        self.last_alignment = aln
        m2a = aln.apply(m2) if aln is not None else m2
        return z1, h, m2a, aln

    def logits(self, params) -> np.ndarray:
        return self._forward(params)[2] @ params["W2"]

    def loss_and_grad(self, params: dict):
        z1, h, m2a, aln = self._forward(params)
        rows = self.rows
        z2 = m2a[rows] @ params["W2"]
        loss, dz2r = softmax_cross_entropy(z2, self.y)
        wd = self.wd
        dm2a = np.zeros_like(m2a)
        dm2a[rows] = dz2r @ params["W2"].T
        dm2 = aln.adjoint(dm2a) if aln is not None else dm2a
        dz1 = self.prop.adjoint(dm2) * (z1 > 0)
        grads = {"W1": self.m1.T @ dz1 + wd * params["W1"], "W2": m2a[rows].T @ dz2r + wd * params["W2"]}
        return loss + _l2(params, wd), grads


def gradient_check(model, params: dict, eps: float = 1e-5) -> float:
    """Largest relative error between analytic and central-difference gradients."""
    _, grads = model.loss_and_grad(params)
    worst = 0.0
    for k, p in params.items():
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + eps
            lp, _ = model.loss_and_grad(params)
            p[i] = old - eps
            lm, _ = model.loss_and_grad(params)
            p[i] = old
            num = (lp - lm) / (2 * eps)
            a = grads[k][i]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-8))
    return worst


def fit(model, params: dict, cfg: TrainConfig) -> list:
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    losses = []
    for _ in range(cfg.epochs):
        loss, grads = model.loss_and_grad(params)
        losses.append(loss)
        opt.step(params, grads)
    return losses


# -- end-to-end training ---------------------------------------------------

class _Context:
    """Per-graph inputs shared by the alignments: training view, connectivity, degrees."""

    def __init__(self, g: TemporalGraph, scheme: Scheme, alignment: Alignment,
                 conn: ConnectivityEstimate | None):
        self.g = g
        self.idx = community_index(g)
        self.alignment = alignment
        self.time_weights = scheme_time_weights(g, scheme)
        self.conn = conn
        self.n_yt = None
        if alignment.kind == "pny":
            if self.conn is None:
                self.conn = estimate_connectivity(g, self.idx)
            self.n_yt = expected_degrees(g, self.idx)
        self.pny_residual = 0.0
        self.alphas = []

    def align(self, m, h) -> AffineAlignment | None:
        kind = self.alignment.kind
        if kind == "pny":
            mom = community_moments(m, h, self.g, self.idx, self.conn, self.time_weights,
                                    self.n_yt, self.alignment.target)
            aln, info = pny_alignment(mom, self.idx)
            self.pny_residual = max(self.pny_residual, info.max_residual)
            return aln
        if kind == "jjnorm":
            aln, stats = jjnorm_alignment(m, self.g, self.idx, self.alignment.target)
            self.alphas.append(stats.alpha)
            return aln
        return None


def _describe(alignment: Alignment) -> str:
    return alignment.kind


def sgc_features(g: TemporalGraph, scheme: Scheme, alignment: Alignment = Alignment(),
                 hops: int = 2, conn: ConnectivityEstimate | None = None):
    """K rounds of propagation with optional per-round PNY and a final JJnorm."""
    ctx = _Context(g, scheme, alignment, conn)
    prop = Propagator(rewrite(g, scheme))
    h = g.features
    for k in range(hops):
        m = prop.forward(h)
        if alignment.kind == "pny" and (alignment.pny_mode == "per-layer" or k == hops - 1):
            m = ctx.align(m, h).apply(m)
        h = m
    if alignment.kind == "jjnorm":
        h = ctx.align(h, None).apply(h)
    return h, ctx, prop


def train_sgc(g: TemporalGraph, scheme: Scheme, alignment: Alignment = Alignment(),
              cfg: TrainConfig = TrainConfig(), conn: ConnectivityEstimate | None = None) -> TrainReport:
    t0 = time.perf_counter()
    x, ctx, prop = sgc_features(g, scheme, alignment, cfg.hops, conn)
    labels = g.oracle_labels()
    train_rows = np.flatnonzero(g.train_mask)
    model = MLP(x, g.train_labels(), train_rows, cfg.hidden, g.num_labels, cfg.weight_decay)
    params = model.init_params(SeededRng(cfg.seed))
    losses = fit(model, params, cfg)
    logits = model.logits(params)
    wall = (time.perf_counter() - t0) * 1e3
    return TrainReport(model="sgc", scheme=scheme.name, alignment=_describe(alignment), seed=cfg.seed,
                       losses=losses, train_acc=accuracy(logits, labels, g.train_mask),
                       test_acc=accuracy(logits, labels, g.test_mask), wall_ms=wall,
                       meta=_meta(ctx, prop))


def train_gcn(g: TemporalGraph, scheme: Scheme, alignment: Alignment = Alignment(),
              cfg: TrainConfig = TrainConfig(), conn: ConnectivityEstimate | None = None) -> TrainReport:
    t0 = time.perf_counter()
    ctx = _Context(g, scheme, alignment, conn)
    prop = Propagator(rewrite(g, scheme))
    align1 = None
    if alignment.kind != "none":
        # first-layer messages depend only on the fixed features: align once
        align1 = ctx.align(prop.forward(g.features), g.features)
    model = GCN(prop, g.features, g.train_labels(), np.flatnonzero(g.train_mask), cfg.hidden,
                g.num_labels, cfg.weight_decay, align1=align1,
                align2_fn=ctx.align if alignment.kind != "none" else None)
    params = model.init_params(SeededRng(cfg.seed))
    losses = fit(model, params, cfg)
    logits = model.logits(params)
    labels = g.oracle_labels()
    wall = (time.perf_counter() - t0) * 1e3
    return TrainReport(model="gcn", scheme=scheme.name, alignment=_describe(alignment), seed=cfg.seed,
                       losses=losses, train_acc=accuracy(logits, labels, g.train_mask),
                       test_acc=accuracy(logits, labels, g.test_mask), wall_ms=wall,
                       meta=_meta(ctx, prop))


def _meta(ctx: _Context, prop: Propagator) -> dict:
    meta = {"isolated_nodes": prop.n_fallback}
    if ctx.alignment.kind == "pny":
        meta["pny_max_residual"] = ctx.pny_residual
    if ctx.alignment.kind == "jjnorm" and ctx.alphas:
        a = np.concatenate([np.asarray(x) for x in ctx.alphas])
        meta["jj_alpha_range"] = [float(a.min()), float(a.max())]
    return meta


TRAINERS = {"sgc": train_sgc, "gcn": train_gcn}
