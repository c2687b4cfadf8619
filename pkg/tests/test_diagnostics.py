import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import wasserstein_distance

from conftest import random_graph
from oracles import brute_w1_equal
from impact.diagnostics import compare_to_oracle, empirical_w1_per_dim, invariance_gap, w1_report
from impact.graph import build_graph
from impact.propagation import Scheme, propagate
from impact.tsbm import Fixed, TsbmConfig, make_tsbm


def test_w1_simple_values():
    assert empirical_w1_per_dim([0.0, 0.0], [1.0, 1.0]) == 1.0
    x = np.random.default_rng(0).normal(size=(50, 3))
    assert empirical_w1_per_dim(x, x) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 40))
def test_w1_equal_sizes_is_exact(seed, n):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=n), rng.exponential(size=n)
    w = empirical_w1_per_dim(a, b)
    assert w == pytest.approx(brute_w1_equal(a, b), abs=1e-12)
    assert w == pytest.approx(wasserstein_distance(a, b), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_w1_metric_properties(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.normal(loc=rng.normal(), size=(rng.integers(2, 30), 2)) for _ in range(3))
    assert empirical_w1_per_dim(a, b) == empirical_w1_per_dim(b, a)
    # equal-size triples: quantile summaries coincide with the exact metric
    a2, b2, c2 = rng.normal(size=(3, 20, 2))
    assert empirical_w1_per_dim(a2, c2) <= empirical_w1_per_dim(a2, b2) + empirical_w1_per_dim(b2, c2) + 1e-12
    assert empirical_w1_per_dim(a, c) >= 0


def test_w1_shifted_gaussians():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(20000, 2))
    b = rng.normal(size=(15000, 2)) + 0.8
    assert empirical_w1_per_dim(a, b) == pytest.approx(0.8, rel=0.05)


def test_w1_rejects_empty():
    with pytest.raises(ValueError):
        empirical_w1_per_dim(np.zeros((0, 2)), np.zeros((3, 2)))


def _invariant_graph():
    # identical per-label clouds at every time
    rng = np.random.default_rng(2)
    cloud = rng.normal(size=(12, 2))
    lab = np.tile([0, 1, 2], 4)
    T = 4
    x = np.vstack([cloud] * T)
    return build_graph(np.repeat(np.arange(T), 12), np.tile(lab, T), x, [], test_boundary=3)


def test_gap_zero_for_invariant_input():
    g = _invariant_graph()
    rep = invariance_gap(g.features, g)
    assert rep.max_gap < 1e-12 and rep.normalizer > 0


def test_gap_exactly_zero_on_single_timestamp():
    g = random_graph(3, single_time=True)
    rep = invariance_gap(propagate(g.features, g.adjacency), g)
    assert rep.max_gap == 0.0


def test_gap_detects_mean_shift():
    g = _invariant_graph()
    x = g.features.copy()
    x[g.time_index == 0] += 1.0
    rep = invariance_gap(x, g)
    assert rep.max_gap == pytest.approx(np.sqrt(2.0))
    assert np.all(np.array(rep.gap_per_label) >= 0)


def test_w1_report_structure():
    g, _ = make_tsbm(TsbmConfig(n=400), seed=0)
    rep = w1_report(g.features, g)
    assert set(rep) == {"mean", "max", "per_community"}
    assert len(rep["per_community"]) == 10 * 8
    assert 0 <= rep["mean"] <= rep["max"]


def test_oracle_error_shrinks_with_size():
    small = [compare_to_oracle(*make_tsbm(TsbmConfig(n=2000, gamma_mode=Fixed(0.55)), seed=s),
                               Scheme.parse("avg"))["mean_error"] for s in range(3)]
    big = [compare_to_oracle(*make_tsbm(TsbmConfig(n=20000, gamma_mode=Fixed(0.55)), seed=s),
                             Scheme.parse("avg"))["mean_error"] for s in range(3)]
    assert np.mean(big) < np.mean(small)


def test_oracle_error_on_one_label_graph():
    cfg = TsbmConfig(n=1000, num_labels=1, test_boundary=8)
    g, params = make_tsbm(cfg, seed=4)
    rep = compare_to_oracle(g, params, Scheme.parse("pmp", "both"))
    # messages average about 100 neighbours, so their mean over a community is very tight
    assert rep["max_error"] < 5 * params.k[0] / np.sqrt(100)
