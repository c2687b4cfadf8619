import numpy as np
import pytest

from impact.graph import community_index
from impact.numerics import SeededRng
from impact.propagation import avg_time_weights, mmp_time_weights, pmp_time_weights
from impact.tsbm import (Fixed, TsbmConfig, TsbmParams, UniformRange, generate, make_tsbm,
                         oracle_message_mean, oracle_relative_connectivity, parse_gamma_mode, sample_params)


def test_default_config():
    cfg = TsbmConfig()
    assert (cfg.n, cfg.f, cfg.num_times, cfg.num_labels) == (2000, 5, 10, 10)
    assert (cfg.same_label_cap, cfg.diff_label_cap) == (0.6, 0.24)
    assert cfg.gamma_mode == UniformRange(0.4, 0.7)
    assert cfg.test_boundary == 8 and cfg.community_size == 20


@pytest.mark.parametrize("bad", [dict(n=1999), dict(same_label_cap=1.5), dict(gamma_mode=Fixed(0.0)),
                                 dict(gamma_mode=UniformRange(0.8, 0.4)), dict(test_boundary=11)])
def test_invalid_config(bad):
    with pytest.raises(ValueError):
        TsbmConfig(**bad).validate()


def test_parse_gamma_mode():
    assert parse_gamma_mode("0.55") == Fixed(0.55)
    assert parse_gamma_mode(0.4) == Fixed(0.4)
    assert parse_gamma_mode("random") == UniformRange()
    assert parse_gamma_mode("random:0.3-0.6") == UniformRange(0.3, 0.6)
    with pytest.raises(ValueError):
        parse_gamma_mode("often")


def test_sampled_params_ranges_and_symmetry():
    cfg = TsbmConfig()
    p = sample_params(cfg, SeededRng(0))
    assert p.mu.shape == (10, 5)
    assert np.all((p.k >= 0) & (p.k <= 8))
    assert np.array_equal(p.p_same_time, p.p_same_time.T)
    assert np.all(np.diag(p.p_same_time) <= 0.6)
    off = p.p_same_time[~np.eye(10, dtype=bool)]
    assert np.all((off >= 0) & (off <= 0.24))
    assert np.array_equal(p.gamma, p.gamma.T)
    assert np.all((p.gamma >= 0.4) & (p.gamma <= 0.7))
    fixed = sample_params(TsbmConfig(gamma_mode=Fixed(0.55)), SeededRng(0))
    assert np.all(fixed.gamma == 0.55)


def test_generation_is_deterministic():
    cfg = TsbmConfig(n=400)
    g1, p1 = make_tsbm(cfg, seed=3)
    g2, p2 = make_tsbm(cfg, seed=3)
    g3, _ = make_tsbm(cfg, seed=4)
    assert np.array_equal(g1.edges, g2.edges) and np.array_equal(g1.features, g2.features)
    assert np.array_equal(p1.mu, p2.mu)
    assert not np.array_equal(g1.edges, g3.edges)


def test_features_follow_label_distribution():
    cfg = TsbmConfig(n=20000, f=3)
    rng = SeededRng(2)
    params = sample_params(cfg, rng)
    params.p_same_time[:] = 0.0      # features only; skip edge work
    g = generate(cfg, rng, params)
    lab = g.oracle_labels()
    for y in range(10):
        x = g.features[lab == y]
        se = params.k[y] / np.sqrt(x.shape[0])
        assert np.all(np.abs(x.mean(0) - params.mu[y]) < 5 * se + 1e-12)
        assert np.allclose(x.std(0), params.k[y], rtol=0.1, atol=1e-9)


def _block_counts(g, Y):
    c = g.time_index * Y + g.oracle_labels()
    a, b = c[g.edges[:, 0]], c[g.edges[:, 1]]
    C = g.num_times * Y
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    return np.bincount(lo * C + hi, minlength=C * C).reshape(C, C)


@pytest.mark.parametrize("strategy", ["dense", "blocks"])
def test_edge_counts_match_expectation(strategy):
    cfg = TsbmConfig(n=600, num_times=3, num_labels=2, gamma_mode=Fixed(0.5), test_boundary=2)
    rng = SeededRng(11)
    params = sample_params(cfg, rng)
    s = cfg.community_size
    C = 6
    reps = 50
    tot = np.zeros((C, C))
    for r in range(reps):
        g = generate(cfg, SeededRng(100 + r), params, strategy=strategy)
        tot += _block_counts(g, 2)
    mean = tot / reps
    for a in range(C):
        for b in range(a, C):
            ta, ya = divmod(a, 2)
            tb, yb = divmod(b, 2)
            p = params.edge_probability(ya, ta, yb, tb)
            pairs = s * (s - 1) / 2 if a == b else s * s
            sd = np.sqrt(pairs * p * (1 - p) / reps)
            assert abs(mean[a, b] - pairs * p) < 3 * sd + 1e-9


def test_oracle_rows_are_distributions():
    cfg = TsbmConfig()
    params = sample_params(cfg, SeededRng(0))
    p = oracle_relative_connectivity(params, np.full((10, 10), 20))
    assert np.allclose(p.sum(axis=(2, 3)), 1.0, atol=1e-12)


def test_fixed_gamma_oracle_factorises():
    params = sample_params(TsbmConfig(gamma_mode=Fixed(0.6)), SeededRng(1))
    p = oracle_relative_connectivity(params, np.full((10, 10), 20), exclude_self=False)
    y, t = 2, 5
    for t2 in range(10):
        ratio = p[y, t, :, t2] / p[y, t, :, t]
        assert np.allclose(ratio, 0.6 ** abs(t2 - t), rtol=1e-12)


def _toy_params():
    # 2 labels, scalar features at +1 / -1, label-dependent decay
    return TsbmParams(mu=np.array([[1.0], [-1.0]]), k=np.zeros(2),
                      p_same_time=np.array([[0.5, 0.1], [0.1, 0.5]]),
                      gamma=np.array([[0.5, 0.9], [0.9, 0.5]]))


def test_avg_oracle_mean_varies_with_time_on_toy():
    params = _toy_params()
    p = oracle_relative_connectivity(params, np.full((2, 3), 10), exclude_self=False)
    mu = oracle_message_mean(params, p, avg_time_weights(0, 2))
    # hand computation, label 0:
    #   t=0: same-label mass 0.5(1+.5+.25)=.875, other .1(1+.9+.81)=.271 -> (.875-.271)/1.146
    #   t=1: same-label mass 0.5(1+.5+.5)=1.0,  other .1(1+.9+.9)=.28  -> (1-.28)/1.28
    assert mu[0, 0, 0] == pytest.approx(0.604 / 1.146, abs=1e-12)
    assert mu[0, 1, 0] == pytest.approx(0.5625, abs=1e-12)
    assert mu[0, 2, 0] == pytest.approx(mu[0, 0, 0], abs=1e-12)


def test_first_moment_invariance_under_fixed_gamma():
    # separable decay: every scheme's oracle mean is time-invariant
    params = sample_params(TsbmConfig(gamma_mode=Fixed(0.55)), SeededRng(3))
    p = oracle_relative_connectivity(params, np.full((10, 10), 20), exclude_self=False)
    for w in (avg_time_weights(0, 9), mmp_time_weights(0, 9),
              pmp_time_weights(0, 9, "upper"), pmp_time_weights(0, 9, "both")):
        mu = oracle_message_mean(params, p, w)
        assert np.max(np.abs(mu - mu[:, :1])) < 1e-12


def test_pmp_oracle_mean_at_tmax_equals_avg():
    params = sample_params(TsbmConfig(), SeededRng(4))
    p = oracle_relative_connectivity(params, np.full((10, 10), 20))
    a = oracle_message_mean(params, p, avg_time_weights(0, 9))
    b = oracle_message_mean(params, p, pmp_time_weights(0, 9, "upper"))
    assert np.allclose(a[:, 9], b[:, 9], atol=1e-12)


def test_empirical_connectivity_tracks_oracle():
    cfg = TsbmConfig(n=4000, gamma_mode=Fixed(0.5))
    g, params = make_tsbm(cfg, seed=0)
    idx = community_index(g, visible_labels_only=False)
    p = oracle_relative_connectivity(params, idx.sizes)
    lab = g.oracle_labels()
    # neighbour share of one community, counted directly
    members = idx.members(3, 4)
    nb = np.concatenate([g.adjacency.indices[g.adjacency.indptr[u]:g.adjacency.indptr[u + 1]] for u in members])
    emp = np.zeros((10, 10))
    np.add.at(emp, (lab[nb], g.times[nb]), 1.0)
    emp /= nb.size
    assert np.max(np.abs(emp - p[3, 4])) < 0.03


def test_tiny_gamma_keeps_edges_within_a_time():
    g, _ = make_tsbm(TsbmConfig(n=1000, gamma_mode=Fixed(1e-9)), seed=0)
    t = g.times[g.edges]
    assert np.mean(t[:, 0] == t[:, 1]) > 0.999


def test_oracle_rows_are_separable():
    # balanced sizes: each (y, y2) slice over (t, t2) is f(y, t) times a function of |t - t2|
    params = sample_params(TsbmConfig(), SeededRng(6))
    p = oracle_relative_connectivity(params, np.full((10, 10), 20), exclude_self=False)
    t = np.arange(10)
    d = np.abs(t[:, None] - t[None, :])
    for y in (0, 7):
        same = np.array([p[y, t, :, t].sum() for t in range(10)])     # f(y, t) up to a constant
        for y2 in (0, 3):
            ratio = p[y, :, y2, :] / same[:, None]
            for delta in range(10):
                vals = ratio[d == delta]
                assert np.allclose(vals, vals[0], rtol=1e-12)


def test_feature_means_do_not_depend_on_time():
    g, params = make_tsbm(TsbmConfig(n=20000, f=2), seed=3, strategy="blocks")
    lab = g.oracle_labels()
    z = []
    for y in range(10):
        for t in range(10):
            x = g.features[(lab == y) & (g.times == t)]
            z.append((x.mean(0) - params.mu[y]) / (params.k[y] / np.sqrt(x.shape[0]) + 1e-300))
    z = np.abs(np.concatenate(z))
    assert np.mean(z > 1.96) < 0.1 and z.max() < 5
