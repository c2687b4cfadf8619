"""Command line entry point: ``impact {generate,run,sweep-gamma,diagnose}``.

Exit codes: 0 success, 1 run failure, 2 configuration or usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .connectivity import estimate_connectivity
from .diagnostics import compare_to_oracle, invariance_gap, w1_report
from .experiment import (TABLE_METHODS, ConfigError, ExperimentConfig, Method, run_experiment,
                         summarize, sweep_gamma, write_csv)
from .graph import GraphError, community_index, graph_to_dict, load_graph
from .moments import AlignmentError, community_moments, expected_degrees, jjnorm_transform, pny_transform
from .propagation import Propagator, Scheme, rewrite, scheme_time_weights
from .tsbm import TsbmConfig, TsbmParams, make_tsbm, oracle_relative_connectivity

log = logging.getLogger("impact")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
SECTIONS = ("connectivity", "moments", "invariance", "w1", "oracle")


class UsageError(Exception):
    pass


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _dump(obj, path=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


# -- generate --------------------------------------------------------------

def cmd_generate(args) -> int:
    base = _read_json(args.config) if args.config else {}
    for key in ("n", "seed"):
        if getattr(args, key) is not None:
            base[key] = getattr(args, key)
    if args.gamma is not None:
        base["gamma_mode"] = args.gamma
    try:
        cfg = TsbmConfig.from_dict(base)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    g, params = make_tsbm(cfg)
    out = Path(args.out)
    out.write_text(json.dumps(graph_to_dict(g), separators=(",", ":")) + "\n")
    sidecar = out.with_suffix(".params.json")
    sidecar.write_text(json.dumps({"config": cfg.to_dict(), "params": params.to_dict()},
                                  sort_keys=True) + "\n")
    print(f"wrote {out} ({g.n} nodes, {g.num_edges} edges) and {sidecar}")
    return EXIT_OK


# -- run / sweep -----------------------------------------------------------

def _experiment_config(args) -> ExperimentConfig:
    base = _read_json(args.config) if args.config else {}
    if args.methods:
        base["methods"] = _csv_list(args.methods)
    elif args.scheme or args.alignment:
        align = args.alignment or "none"
        parts = [p for p in align.replace(",", "+").split("+") if p and p != "none"]
        if len(parts) > 1:
            raise ConfigError("pny and jjnorm cannot be combined")
        base["methods"] = [f"{args.scheme or 'pmp'}+{parts[0]}" if parts else (args.scheme or "avg")]
    for key, attr in (("model", "model"), ("reps", "reps"), ("seed", "seed"), ("jobs", "jobs"),
                      ("pmp_boundary", "pmp_boundary"), ("pny_mode", "pny_mode"),
                      ("target", "target"), ("graph", "graph")):
        val = getattr(args, attr, None)
        if val is not None:
            base[key] = val
    if getattr(args, "gamma", None) is not None:
        base["gamma"] = args.gamma
    if getattr(args, "n", None) is not None:
        base.setdefault("tsbm", {})["n"] = args.n
    if getattr(args, "epochs", None) is not None:
        base.setdefault("train", {})["epochs"] = args.epochs
    cfg = ExperimentConfig.from_dict(base)
    cfg.validate()
    return cfg


def _summary_path(out: Path) -> Path:
    return out.with_name(out.stem + ".summary.json")


def cmd_run(args) -> int:
    cfg = _experiment_config(args)
    rows = run_experiment(cfg)
    summary = {"model": cfg.model, "gamma_mode": rows[0].gamma_mode, "reps": cfg.reps,
               "base_seed": cfg.seed, "methods": summarize(rows)}
    if args.out:
        out = Path(args.out)
        write_csv(rows, out)
        _dump(summary, _summary_path(out))
    for name, s in summary["methods"].items():
        if not s["n"]:
            print(f"{cfg.model:4s} {name:12s} all {s['failed']} runs failed")
            continue
        print(f"{cfg.model:4s} {name:12s} test {s['test_acc_mean']:.4f} ± {s['test_acc_std']:.4f}  "
              f"train {s['train_acc_mean']:.4f}  ({s['n']} runs)")
    return _report_failures(rows)


def _report_failures(rows) -> int:
    bad = [r for r in rows if r.failed]
    for r in bad:
        print(f"run failed: {r.model} {r.scheme}+{r.alignment} seed {r.seed}: {r.meta['error']}", file=sys.stderr)
    return EXIT_FAIL if bad else EXIT_OK


def cmd_sweep(args) -> int:
    gammas = _csv_list(args.gammas) if args.gammas is not None else []
    if not gammas:
        raise UsageError("--gammas needs at least one value")
    try:
        values = [float(x) for x in gammas]
    except ValueError:
        raise UsageError(f"cannot parse gamma list {args.gammas!r}") from None
    if not args.methods and not args.config:
        args.methods = "avg,pmp"
    cfg = _experiment_config(args)
    rows, summary = sweep_gamma(cfg, values)
    if args.out:
        out = Path(args.out)
        write_csv(rows, out)
        _dump({"model": cfg.model, "reps": cfg.reps, "base_seed": cfg.seed, "gammas": summary},
              _summary_path(out))
    for gm, per in summary.items():
        line = "  ".join(f"{k} {v['test_acc_mean']:.4f}" if v["n"] else f"{k} failed" for k, v in per.items())
        print(f"gamma={gm}: {line}")
    return _report_failures(rows)


# -- diagnose --------------------------------------------------------------

def _finite(a):
    return np.where(np.isfinite(a), a, None).tolist()


def _moment_section(m1, g, idx, conn, scheme) -> dict:
    w = scheme_time_weights(g, scheme)
    mom = community_moments(m1, g.features, g, idx, conn, w, expected_degrees(g, idx))
    _, info = pny_transform(m1, mom, idx)
    _, jj = jjnorm_transform(m1, g, idx)
    return {"sigma_xx": mom.sigma_xx.tolist(), "sigma_target": mom.sigma_target.tolist(),
            "mean_degree": _finite(mom.n_yt), "pny_max_residual": info.max_residual,
            "jjnorm": {"alpha": _finite(jj.alpha), "nu_sq": _finite(jj.nu_sq),
                       "sigma_within_sq": _finite(jj.sigma_within_sq),
                       "sigma_total_sq": jj.sigma_total_sq}}


def cmd_diagnose(args) -> int:
    try:
        g = load_graph(args.graph)
    except (OSError, GraphError) as exc:
        raise ConfigError(str(exc)) from None
    params = None
    if args.params:
        doc = _read_json(args.params)
        params = TsbmParams.from_dict(doc.get("params", doc))
    try:
        scheme = Scheme.parse(args.scheme, args.pmp_boundary)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    sections = set(args.sections) if args.sections else set(SECTIONS) - {"oracle"}
    unknown = sections - set(SECTIONS) - {"all"}
    if unknown:
        raise UsageError(f"unknown diagnose section(s): {', '.join(sorted(unknown))}")
    if "all" in sections:
        sections = set(SECTIONS)
    report: dict = {"graph": {"n": g.n, "edges": g.num_edges, "t_min": g.t_min, "t_max": g.t_max,
                              "test_boundary": g.test_boundary}, "scheme": scheme.name}
    idx = community_index(g)
    conn = estimate_connectivity(g, idx)
    prop = Propagator(rewrite(g, scheme))
    m1 = prop.forward(g.features)
    m2 = prop.forward(m1)
    if "connectivity" in sections:
        sec = {"p_hat": conn.p_hat.tolist(), "g_hat": conn.g_hat.tolist(), "valid": conn.valid.tolist()}
        if params is not None:
            oracle = oracle_relative_connectivity(params, community_index(g, False).sizes)
            b = g.test_boundary - g.t_min
            diff = np.abs(conn.p_hat - oracle)
            sec["oracle_error"] = {"train_block_max": float(diff[:, :b, :, :b].max()),
                                   "extended_rows_max": float(diff[:, b:].max()) if b < g.num_times else 0.0}
        report["connectivity"] = sec
    if "moments" in sections:
        try:
            report["moments"] = _moment_section(m1, g, idx, conn, scheme)
        except AlignmentError as exc:
            report["moments"] = {"skipped": str(exc)}
    if "invariance" in sections:
        report["invariance"] = {"layer1": invariance_gap(m1, g).to_dict(),
                                "layer2": invariance_gap(m2, g).to_dict()}
    if "w1" in sections:
        report["w1"] = {"layer2_mean": w1_report(m2, g)["mean"], "layer1_mean": w1_report(m1, g)["mean"]}
    if "oracle" in sections:
        if params is None:
            raise ConfigError("the oracle section needs --params")
        report["oracle"] = compare_to_oracle(g, params, scheme)
    _dump(report, args.out)
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; flags override it")
    p.add_argument("--model", choices=["sgc", "gcn"])
    p.add_argument("--scheme", choices=["avg", "mmp", "pmp", "genpmp"])
    p.add_argument("--alignment", help="none, pny or jjnorm")
    p.add_argument("--methods", help=f"comma list, e.g. {','.join(TABLE_METHODS)}")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--pmp-boundary", dest="pmp_boundary", choices=["upper", "both"])
    p.add_argument("--pny-mode", dest="pny_mode", choices=["per-layer", "final"])
    p.add_argument("--target", choices=["pool", "tmax"])
    p.add_argument("--n", type=int, help="TSBM node count")
    p.add_argument("--epochs", type=int)
    p.add_argument("--graph", help="run on a stored graph JSON instead of sampling TSBM graphs")
    p.add_argument("--out", help="CSV path; a .summary.json is written next to it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="impact", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a TSBM graph to JSON")
    p.add_argument("--config", help="JSON TSBM config")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--gamma", help="fixed value, or 'random' / 'random:LO-HI'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="repeated training runs")
    _add_run_flags(p)
    p.add_argument("--gamma", help="fixed value, or 'random' / 'random:LO-HI'")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-gamma", help="fixed-gamma sweep")
    _add_run_flags(p)
    p.add_argument("--gammas", required=True, help="comma list of decay factors")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("diagnose", help="connectivity, moment, invariance and W1 report for a graph")
    p.add_argument("sections", nargs="*", metavar="SECTION",
                   help=f"any of {', '.join(('all',) + SECTIONS)}; default all but oracle")
    p.add_argument("--graph", required=True)
    p.add_argument("--params", help="TSBM params sidecar for oracle comparisons")
    p.add_argument("--scheme", default="pmp", choices=["avg", "mmp", "pmp", "genpmp"])
    p.add_argument("--pmp-boundary", dest="pmp_boundary", default="both", choices=["upper", "both"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report any run failure as exit code 1
        log.debug("run failed", exc_info=True)
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
