import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from impact.graph import build_graph  # noqa: E402


def random_graph(seed, n=60, T=5, Y=3, f=4, p=0.15, boundary=None, single_time=False):
    rng = np.random.default_rng(seed)
    times = np.zeros(n, int) if single_time else rng.integers(0, T, n)
    if not single_time:
        times[:T] = np.arange(T)          # every timestamp present
    labels = rng.integers(0, Y, n)
    labels[:Y] = np.arange(Y)
    feats = rng.normal(size=(n, f))
    iu = np.triu_indices(n, 1)
    keep = rng.random(iu[0].size) < p
    edges = np.stack([iu[0][keep], iu[1][keep]], 1)
    b = (T - 1 if boundary is None else boundary) if not single_time else 1
    return build_graph(times, labels, feats, edges, b, t_min=0, t_max=0 if single_time else T - 1,
                       num_labels=Y)


@pytest.fixture
def small_graph():
    return random_graph(0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
