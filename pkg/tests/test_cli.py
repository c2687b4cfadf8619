import json

import numpy as np
import pytest

from conftest import random_graph
from impact.cli import main
from impact.experiment import (CSV_COLUMNS, CSV_HEADER, ConfigError, ExperimentConfig, Method, read_csv,
                               run_experiment, sweep_gamma)
from impact.graph import load_graph, save_graph
from impact.tsbm import TsbmConfig, make_tsbm

SMALL = ["--n", "400", "--epochs", "20"]


def test_generate_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["generate", "--seed", "5", "--n", "400", "--out", str(a)]) == 0
    assert main(["generate", "--seed", "5", "--n", "400", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.with_suffix(".params.json").read_bytes() == b.with_suffix(".params.json").read_bytes()
    g = load_graph(a)
    ref, _ = make_tsbm(TsbmConfig(n=400), seed=5)
    assert np.array_equal(g.edges, ref.edges) and np.array_equal(g.features, ref.features)


def test_generate_default_size(tmp_path):
    out = tmp_path / "g.json"
    assert main(["generate", "--out", str(out)]) == 0
    assert load_graph(out).n == 2000


def test_run_writes_schema(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["run", "--model", "sgc", "--scheme", "avg", "--reps", "1", *SMALL, "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert lines[1] == ",".join(CSV_COLUMNS)
    rows = read_csv(out)
    assert len(rows) == 1 and rows[0]["scheme"] == "avg" and rows[0]["alignment"] == "none"
    summary = json.loads((tmp_path / "r.summary.json").read_text())
    assert set(summary["methods"]) == {"avg"}


def _strip_wall(path):
    return [{k: v for k, v in r.items() if k != "wall_ms"} for r in read_csv(path)]


def test_run_is_deterministic(tmp_path):
    args = ["run", "--methods", "avg,pmp+jjnorm", "--reps", "2", *SMALL]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
    assert _strip_wall(tmp_path / "a.csv") == _strip_wall(tmp_path / "b.csv")


def test_parallel_matches_serial():
    base = dict(methods=["avg", "pmp"], reps=3, tsbm={"n": 400}, train={"epochs": 10})
    serial = run_experiment(ExperimentConfig(**base))
    par = run_experiment(ExperimentConfig(**base, jobs=2))
    key = lambda r: (r.seed, r.scheme, r.alignment)  # noqa: E731
    strip = lambda rs: sorted(((key(r), r.test_acc, r.train_acc) for r in rs))  # noqa: E731
    assert strip(serial) == strip(par)


def test_seed_policy():
    rows = run_experiment(ExperimentConfig(methods=["avg"], reps=3, seed=10, tsbm={"n": 400}, train={"epochs": 1}))
    assert [r.seed for r in rows] == [10, 11, 12]


@pytest.mark.parametrize("argv", [
    ["run", "--alignment", "pny+jjnorm"],
    ["run", "--methods", "pmp+pny+jjnorm"],
    ["run", "--reps", "0"],
    ["run", "--model", "gat"],
    ["run", "--gamma", "sometimes"],
    ["sweep-gamma", "--gammas", ""],
    ["sweep-gamma", "--gammas", "a,b"],
    ["frobnicate"],
    ["diagnose", "bogus", "--graph", "x.json"],
])
def test_config_errors_exit_2(argv):
    assert main(argv) == 2


def test_missing_config_file_exit_2(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"methods": ["avg"], "colour": "blue"}))
    assert main(["run", "--config", str(bad)]) == 2


def test_run_failure_exits_1(tmp_path):
    # every node is labelled for training, so there is nothing to evaluate on
    g = random_graph(0, single_time=True)
    path = tmp_path / "g.json"
    save_graph(g, path)
    out = tmp_path / "r.csv"
    assert main(["run", "--graph", str(path), "--methods", "avg,pmp", "--epochs", "2", "--out", str(out)]) == 1
    rows = read_csv(out)
    assert len(rows) == 2 and all(r["test_acc"] == "nan" for r in rows)


def test_sweep_single_gamma(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sweep-gamma", "--gammas", "0.55", "--methods", "avg", "--reps", "1", *SMALL,
                 "--out", str(out)]) == 0
    rows = read_csv(out)
    assert [r["gamma_mode"] for r in rows] == ["fixed:0.55"]
    summary = json.loads((tmp_path / "s.summary.json").read_text())
    assert list(summary["gammas"]) == ["0.55"]


def test_sweep_rejects_empty_list():
    with pytest.raises(ConfigError):
        sweep_gamma(ExperimentConfig(), [])


def test_method_parsing():
    assert Method.parse("PMP+JJnorm") == Method("pmp", "jjnorm")
    assert Method.parse("avg+none") == Method("avg", "none")
    with pytest.raises(ConfigError, match="cannot be combined"):
        Method.parse("pmp+pny+jjnorm")


def test_diagnose_sections(tmp_path):
    gpath = tmp_path / "g.json"
    assert main(["generate", "--n", "400", "--gamma", "0.55", "--out", str(gpath)]) == 0
    out = tmp_path / "d.json"
    assert main(["diagnose", "all", "--graph", str(gpath), "--params", str(gpath.with_suffix(".params.json")),
                 "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert {"connectivity", "moments", "invariance", "w1", "oracle"} <= set(rep)
    assert np.allclose(np.sum(rep["connectivity"]["p_hat"], axis=(2, 3)), 1.0)
    assert rep["moments"]["pny_max_residual"] < 1e-6
    assert set(rep["invariance"]["layer1"]) >= {"max_gap", "mean_gap", "normalizer", "gap_per_label"}
    assert rep["connectivity"]["oracle_error"]["train_block_max"] >= 0


def test_diagnose_single_timestamp(tmp_path):
    path = tmp_path / "g.json"
    save_graph(random_graph(1, single_time=True), path)
    out = tmp_path / "d.json"
    assert main(["diagnose", "--graph", str(path), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["invariance"]["layer1"]["max_gap"] == 0.0
    assert "skipped" in rep["moments"]


def test_diagnose_oracle_needs_params(tmp_path):
    path = tmp_path / "g.json"
    save_graph(random_graph(2), path)
    assert main(["diagnose", "oracle", "--graph", str(path)]) == 2
    assert main(["diagnose", "--graph", str(tmp_path / "missing.json")]) == 2
