import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_graph
from oracles import brute_connectivity, brute_g
from impact.connectivity import (estimate_connectivity, estimate_g, estimate_train_connectivity,
                                 extend_to_tmax)
from impact.graph import build_graph, community_index
from impact.tsbm import Fixed, TsbmConfig, make_tsbm, oracle_relative_connectivity


def test_bipartite_pair_puts_all_mass_on_other_side():
    # label 0 and label 1 at time 0, edges only across
    g = build_graph([0, 0, 0, 0, 1], [0, 0, 1, 1, 0], np.zeros((5, 1)), [(0, 2), (1, 3), (0, 3)],
                    test_boundary=1, t_min=0, t_max=1)
    p, valid = estimate_train_connectivity(g)
    assert valid[0, 0] and valid[1, 0]
    assert p[0, 0, 1, 0] == 1.0 and p[0, 0, 0, 0] == 0.0
    assert p[1, 0, 0, 0] == 1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_counted_block_matches_brute_force(seed):
    g = random_graph(seed, n=40, T=4, Y=2, boundary=3)
    idx = community_index(g)
    p, valid = estimate_train_connectivity(g, idx)
    ref = brute_connectivity(g.times, g.oracle_labels(), g.edges, g.train_mask, 2, 4, 3)
    assert np.array_equal(np.isnan(p), np.isnan(ref))
    assert np.allclose(np.nan_to_num(p), np.nan_to_num(ref), atol=1e-14)
    # counted rows sum to 1 over their support when every neighbour is labelled
    g1 = random_graph(seed, n=30, T=3, Y=2, boundary=3)
    p1, v1 = estimate_train_connectivity(g1)
    assert np.allclose(np.nansum(p1, axis=(2, 3))[v1], 1.0, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_decay_profile_matches_brute_force(seed):
    g = random_graph(seed, n=50, T=5, Y=3, boundary=4)
    p, valid = estimate_train_connectivity(g)
    assert np.allclose(estimate_g(p, valid, 4), brute_g(p, 3, 5, 4), atol=1e-14)


def test_same_time_profile_on_toy():
    # 2 labels, 3 times, all counted; only same-time entries nonzero
    Y, T = 2, 3
    p = np.zeros((Y, T, Y, T))
    for t in range(T):
        p[0, t, 0, t], p[0, t, 1, t] = 0.75, 0.25
        p[1, t, 0, t], p[1, t, 1, t] = 0.25, 0.75
    g_hat = estimate_g(p, np.ones((Y, T), bool), T)
    # each t contributes twice (forward and backward at d=0) to both sums
    assert np.allclose(g_hat[:, :, 0], [[0.75, 0.25], [0.25, 0.75]])
    assert np.all(g_hat[:, :, 1:] == 0)


def test_zero_denominator_warns(caplog):
    p = np.full((1, 3, 1, 3), np.nan)
    valid = np.zeros((1, 3), bool)
    with caplog.at_level(logging.WARNING):
        g_hat = estimate_g(p, valid, 2)
    assert "undefined" in caplog.text
    assert np.all(g_hat == 0)


def test_one_label_two_times_extension():
    g_hat = np.array([[[0.6, 0.2]]])
    p = np.full((1, 2, 1, 2), np.nan)
    full = extend_to_tmax(p, np.zeros((1, 2), bool), g_hat)
    assert np.allclose(full[0, 0, 0], [0.75, 0.25])
    assert np.allclose(full[0, 1, 0], [0.25, 0.75])


def test_zero_profile_falls_back_to_uniform(caplog):
    g_hat = np.zeros((2, 2, 3))
    with caplog.at_level(logging.WARNING):
        full = extend_to_tmax(np.full((2, 3, 2, 3), np.nan), np.zeros((2, 3), bool), g_hat)
    assert "uniform" in caplog.text
    assert np.allclose(full, 1 / 6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_full_tensor_is_stochastic(seed):
    g = random_graph(seed, n=50, T=5, Y=3, boundary=3)
    est = estimate_connectivity(g)
    assert np.all(est.p_hat >= 0) and np.all(est.g_hat >= 0)
    assert np.allclose(est.p_hat.sum(axis=(2, 3)), 1.0, atol=1e-9)


def test_only_train_labels_are_read():
    g = random_graph(7, n=60, T=5, Y=3, boundary=3)
    scrambled = build_graph(g.times, np.where(g.test_mask, -1, g.oracle_labels()), g.features, g.edges,
                            g.test_boundary, t_min=g.t_min, t_max=g.t_max, num_labels=3)
    a, b = estimate_connectivity(g), estimate_connectivity(scrambled)
    assert np.array_equal(a.p_hat, b.p_hat)


@pytest.fixture(scope="module")
def big_fixed_graph():
    cfg = TsbmConfig(n=20000, gamma_mode=Fixed(0.5))
    return make_tsbm(cfg, seed=0)


def test_tsbm_train_block_close_to_oracle(big_fixed_graph):
    g, params = big_fixed_graph
    idx = community_index(g)
    est = estimate_connectivity(g, idx)
    full_idx = community_index(g, visible_labels_only=False)
    orc = oracle_relative_connectivity(params, full_idx.sizes)
    p, _ = estimate_train_connectivity(g, idx)
    # counted cells divide by the full degree, so they compare directly with the oracle shares
    assert np.nanmax(np.abs(p[:, :8, :, :8] - orc[:, :8, :, :8])) < 0.02
    assert np.max(np.abs(est.p_hat[:, 9] - orc[:, 9])) < 0.03


def test_tsbm_decay_ratio_tracks_gamma(big_fixed_graph):
    g, params = big_fixed_graph
    gh = estimate_connectivity(g).g_hat
    # pairs with a near-zero base rate have only a few edges at offset 4; judge those pooled
    dense = params.p_same_time >= 0.05
    for d in range(4):
        pooled = gh[:, :, d + 1].sum() / gh[:, :, d].sum()
        assert abs(pooled - 0.5) < 0.05
        r = gh[:, :, d + 1][dense] / gh[:, :, d][dense]
        assert np.all(np.abs(r - 0.5) < 0.05)
