"""Repeated TSBM experiments: method grid, seeding, result rows, CSV and summaries."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .graph import TemporalGraph, load_graph
from .nn import TRAINERS, Alignment, TrainConfig
from .propagation import Scheme, SchemeTag
from .tsbm import Fixed, TsbmConfig, UniformRange, make_tsbm, parse_gamma_mode

CSV_COLUMNS = ("model", "scheme", "alignment", "gamma_mode", "seed", "test_acc", "train_acc", "wall_ms")
CSV_HEADER = f"# impact results v1 (package {__version__})"
TABLE_METHODS = ("avg", "mmp", "pmp", "pmp+pny", "pmp+jjnorm")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Method:
    scheme: str = "avg"
    alignment: str = "none"

    @classmethod
    def parse(cls, text: str) -> "Method":
        parts = [p.strip().lower() for p in str(text).split("+") if p.strip()]
        if not parts:
            raise ConfigError("empty method name")
        scheme, extra = parts[0], parts[1:]
        if scheme not in {t.value for t in SchemeTag}:
            raise ConfigError(f"unknown scheme {scheme!r}")
        extra = [e for e in extra if e != "none"]
        if len(extra) > 1:
            raise ConfigError(f"method {text!r}: {' and '.join(extra)} cannot be combined")
        align = extra[0] if extra else "none"
        if align not in ("none", "pny", "jjnorm"):
            raise ConfigError(f"unknown alignment {align!r}")
        return cls(scheme, align)

    @property
    def label(self) -> str:
        return self.scheme if self.alignment == "none" else f"{self.scheme}+{self.alignment}"


@dataclass
class ExperimentConfig:
    model: str = "sgc"
    methods: tuple = ("avg",)
    gamma: object = field(default_factory=UniformRange)
    reps: int = 1
    seed: int = 0
    jobs: int = 1
    pmp_boundary: str = "both"
    pny_mode: str = "per-layer"
    target: str = "pool"
    tsbm: dict = field(default_factory=dict)     # overrides for TsbmConfig (n, f, ...)
    train: dict = field(default_factory=dict)    # overrides for TrainConfig (epochs, lr, ...)
    graph: str | None = None                     # run on a stored graph instead of TSBM

    def validate(self) -> None:
        if self.model not in TRAINERS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {', '.join(TRAINERS)}")
        if not self.methods:
            raise ConfigError("no methods given")
        self.methods = tuple(m if isinstance(m, Method) else Method.parse(m) for m in self.methods)
        try:
            self.gamma = parse_gamma_mode(self.gamma)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.pmp_boundary not in ("upper", "both"):
            raise ConfigError(f"unknown pmp boundary {self.pmp_boundary!r}")
        try:
            Alignment("none", self.pny_mode, self.target)
            self.tsbm_config(0).validate()
            self.train_config(0)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def tsbm_config(self, seed: int) -> TsbmConfig:
        return TsbmConfig(**{**self.tsbm, "gamma_mode": parse_gamma_mode(self.gamma), "seed": seed})

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(**{**self.train, "seed": seed})

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        d = dict(d)
        if "methods" in d:
            d["methods"] = tuple(d["methods"])
        return cls(**d)


@dataclass
class ResultRow:
    model: str
    scheme: str
    alignment: str
    gamma_mode: str
    seed: int
    test_acc: float
    train_acc: float
    wall_ms: float
    meta: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return "error" in self.meta


def _failed_row(cfg: ExperimentConfig, m: Method, seed: int, exc: Exception) -> ResultRow:
    return ResultRow(cfg.model, m.scheme, m.alignment, _gamma_label(cfg), seed, float("nan"), float("nan"),
                     0.0, {"error": f"{type(exc).__name__}: {exc}"})


def _gamma_label(cfg: ExperimentConfig) -> str:
    return "graph" if cfg.graph else parse_gamma_mode(cfg.gamma).describe()


def run_on_graph(g: TemporalGraph, cfg: ExperimentConfig, seed: int) -> list[ResultRow]:
    trainer = TRAINERS[cfg.model]
    rows = []
    for m in cfg.methods:
        scheme = Scheme.parse(m.scheme, cfg.pmp_boundary)
        try:
            rep = trainer(g, scheme, Alignment(m.alignment, cfg.pny_mode, cfg.target), cfg.train_config(seed))
        except (ArithmeticError, ValueError) as exc:
            rows.append(_failed_row(cfg, m, seed, exc))
            continue
        rows.append(ResultRow(cfg.model, m.scheme, m.alignment, _gamma_label(cfg), seed,
                              rep.test_acc, rep.train_acc, rep.wall_ms, rep.meta))
    return rows


def run_seed(cfg: ExperimentConfig, seed: int) -> list[ResultRow]:
    """All methods on one TSBM draw (or the stored graph) with graph and init seeded by ``seed``.

    A failing method yields a row with NaN accuracies and the error in ``meta``.
    """
    try:
        if cfg.graph:
            g = load_graph(cfg.graph)
        else:
            g, _ = make_tsbm(cfg.tsbm_config(seed), seed=seed)
    except (OSError, ValueError) as exc:
        return [_failed_row(cfg, m, seed, exc) for m in cfg.methods]
    return run_on_graph(g, cfg, seed)


def _run_seed_star(args):
    return run_seed(*args)


def run_experiment(cfg: ExperimentConfig) -> list[ResultRow]:
    """Run ``reps`` repetitions; repetition ``i`` uses seed ``cfg.seed + i``."""
    cfg.validate()
    seeds = [cfg.seed + i for i in range(cfg.reps)]
    if cfg.jobs == 1 or len(seeds) == 1:
        chunks = [run_seed(cfg, s) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            chunks = list(pool.map(_run_seed_star, [(cfg, s) for s in seeds]))
    return [r for chunk in chunks for r in chunk]


def summarize(rows: list[ResultRow]) -> dict:
    """Mean and standard deviation of accuracies per method; failed runs are counted, not averaged."""
    groups: dict = {}
    for r in rows:
        key = r.scheme if r.alignment == "none" else f"{r.scheme}+{r.alignment}"
        groups.setdefault(key, []).append(r)
    out = {}
    for key, all_rs in groups.items():
        rs = [r for r in all_rs if not r.failed]
        if not rs:
            out[key] = {"n": 0, "failed": len(all_rs)}
            continue
        te = np.array([r.test_acc for r in rs])
        tr = np.array([r.train_acc for r in rs])
        wall = np.array([r.wall_ms for r in rs])
        out[key] = {"n": len(rs), "test_acc_mean": float(te.mean()), "test_acc_std": float(te.std()),
                    "train_acc_mean": float(tr.mean()), "train_acc_std": float(tr.std()),
                    "wall_ms_mean": float(wall.mean()), "failed": len(all_rs) - len(rs)}
    return out


def rows_to_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([r.model, r.scheme, r.alignment, r.gamma_mode, r.seed,
                    repr(float(r.test_acc)), repr(float(r.train_acc)), f"{r.wall_ms:.3f}"])
    return buf.getvalue()


def write_csv(rows: list[ResultRow], path) -> None:
    Path(path).write_text(rows_to_csv(rows))


def read_csv(path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def sweep_gamma(cfg: ExperimentConfig, gammas) -> tuple[list[ResultRow], dict]:
    """Fixed-gamma runs for every value in ``gammas``; returns rows and per-gamma summaries."""
    gammas = list(gammas)
    if not gammas:
        raise ConfigError("gamma list is empty")
    rows, summary = [], {}
    for gm in gammas:
        sub = replace(cfg, gamma=Fixed(float(gm)))
        r = run_experiment(sub)
        rows.extend(r)
        summary[f"{float(gm):g}"] = summarize(r)
    return rows, summary


def config_to_json(cfg: ExperimentConfig) -> str:
    d = asdict(cfg)
    d["methods"] = [m.label if isinstance(m, Method) else m for m in cfg.methods]
    d["gamma"] = parse_gamma_mode(cfg.gamma).describe()
    return json.dumps(d, sort_keys=True)
