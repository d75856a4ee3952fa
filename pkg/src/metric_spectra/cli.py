"""Command-line entry point ``metric-spectra``.

Exit status: 0 when every asserted inequality holds, 1 on a violation (the
offending instance is written next to the report for replay), 2 on a
configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import MetricSpectraError
from .graph import (GraphDocument, Weight, diameter, graph_hash, graph_to_json, load_graph,
                    total_length)
from .kernels import KernelSpec, check_kernel_bounds
from .reports import SPECTRUM_COLUMNS, dumps, spectrum_rows, write_csv, write_json
from .spectral import (assemble, bound_check, build_mesh, dirichlet_ratios, sharpness_search, snumbers_halfinv,
                       solve_generalized, weyl_check, weyl_ratios)
from .suites import SUITES, run_suite, run_trial, trial_count
from .trees import approx_bound_check, graph_partition, phi_v

OK, VIOLATION, CONFIG_ERROR = 0, 1, 2
SEED_ENV = "METRIC_SPECTRA_SEED"


class ConfigError(Exception):
    pass


def resolve_seed(arg: int | None) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    return 0 if arg is None else arg


def _positive(name, value):
    if value is not None and not value > 0:
        raise ConfigError(f"--{name} must be positive")
    return value


def _load(args) -> GraphDocument:
    if not args.graph:
        raise ConfigError("--graph is required")
    doc = load_graph(args.graph)
    if getattr(args, "weight", None):
        with open(args.weight, encoding="utf-8") as fh:
            data = json.load(fh)
        data = data.get("weights", data) if isinstance(data, dict) else data
        if not isinstance(data, dict):
            raise ConfigError(f"{args.weight}: expected an object of per-edge weights")
        over = {eid: {"breakpoints": list(w.breakpoints), "values": list(w.values)}
                for eid, w in doc.weight.edges.items()}
        over.update(data)
        doc = GraphDocument(doc.graph, Weight.from_mapping(doc.graph, over), doc.root, doc.extra)
    return doc


def _out(args) -> Path:
    return Path(args.out or ".")


def _replay_argv(argv: list[str], graph: str) -> list[str]:
    """``argv`` with ``--graph``/``--weight`` pointing at the replay file and ``--out`` dropped."""
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        key = a.split("=", 1)[0]
        if key in ("--graph", "--weight", "--out"):
            skip = "=" not in a
            continue
        out.append(a)
    return out + ["--graph", graph]


def _replay(args, doc: GraphDocument, name: str) -> Path:
    """Write the instance together with the command that reproduces the violation."""
    path = _out(args) / f"{name}-replay.json"
    body = graph_to_json(doc.graph, doc.weight, doc.root)
    body["replay"] = {"command": _replay_argv(args.argv, str(path.resolve()))}
    write_json(path, body)
    return path


def _emit(args, name: str, report: dict) -> None:
    write_json(_out(args) / f"{name}.json", report)
    if not args.quiet:
        sys.stdout.write(dumps({"ok": report.get("ok"), "report": str(_out(args) / f"{name}.json")}))


def _default_h(doc: GraphDocument, h: float | None, per_length: int = 1000) -> float:
    return h if h is not None else total_length(doc.graph) / per_length


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------

def cmd_validate(args) -> int:
    doc = _load(args)
    g = doc.graph
    report = {"ok": True, "graph_hash": graph_hash(g, doc.weight), "vertices": len(g.vertices),
              "edges": len(g.edges), "total_length": total_length(g), "diameter": diameter(g),
              "cycle_rank": len(g.edges) - len(g.vertices) + 1, "root": doc.root.to_json(),
              "weight_integral": doc.weight.integral(), "weight_abs_integral": doc.weight.abs().integral()}
    _emit(args, "validate", report)
    return OK


def _spectrum_report(args, doc: GraphDocument):
    h = _positive("h", _default_h(doc, args.h))
    mesh = build_mesh(doc.graph, doc.weight, doc.root, h)
    s = solve_generalized(assemble(mesh, doc.weight), n_check=args.nmax or 50)
    b = bound_check(s, doc.graph, doc.weight, args.nmax)
    sm = doc.weight.positive_part().sqrt_integral()
    weyl = weyl_ratios(np.asarray(b["plus"]["lambda"]), sm).tolist()
    residual_ok = s.residual <= 1e-8
    report = {"graph_hash": graph_hash(doc.graph, doc.weight), "mesh_hash": mesh.digest(), "h": mesh.h,
              "dof": s.dof, "residual": s.residual, "residual_ok": residual_ok,
              "lambda_plus": b["plus"]["lambda"], "lambda_minus": b["minus"]["lambda"], "bounds": b,
              "weyl_ratio_plus": weyl,
              "weyl_ratio_minus": weyl_ratios(np.asarray(b["minus"]["lambda"]),
                                              doc.weight.negative_part().sqrt_integral()).tolist(),
              "ok": b["ok"] and residual_ok}
    return report, b, weyl


def cmd_spectrum(args, name: str = "spectrum") -> int:
    doc = _load(args)
    report, b, weyl = _spectrum_report(args, doc)
    _emit(args, name, report)
    write_csv(_out(args) / f"{name}.csv", SPECTRUM_COLUMNS, spectrum_rows(b, weyl))
    if not report["ok"]:
        _replay(args, doc, name)
        return VIOLATION
    return OK


def cmd_bounds(args) -> int:
    return cmd_spectrum(args, "bounds")


def cmd_weyl(args) -> int:
    doc = _load(args)
    n_max = args.nmax or 25
    h = _positive("h", _default_h(doc, args.h, 500))
    r = weyl_check(doc.graph, doc.weight, doc.root, n_max, h, args.levels)
    tol = args.tol if args.tol is not None else 0.03
    devs = [r[s]["deviation"] for s in ("plus", "minus") if r[s]["deviation"] is not None]
    r["tol"] = tol
    r["ok"] = r["ok"] and all(d <= tol for d in devs)
    r["graph_hash"] = graph_hash(doc.graph, doc.weight)
    _emit(args, "weyl", r)
    if not r["ok"]:
        _replay(args, doc, "weyl")
        return VIOLATION
    return OK


def cmd_partition(args) -> int:
    if args.n is None or args.n < 1:
        raise ConfigError("--n must be a positive integer")
    doc = _load(args)
    if not doc.weight.is_nonnegative():
        raise ConfigError("partition needs a nonnegative weight")
    pieces, rep, part = graph_partition(doc.graph, doc.weight, args.n)
    phi = phi_v(rep.pull_weight(doc.weight))
    cert = part.certificate(phi, rtol=args.tol if args.tol is not None else 1e-9)
    report = {"graph_hash": graph_hash(doc.graph, doc.weight), "n": args.n, "cuts": rep.cuts,
              "certificate": cert, "tree_partition": part.to_json(phi),
              "pieces": [{"puncture": p.point.to_json(), **p.tree.to_json()} for p in pieces],
              "ok": cert["ok"]}
    _emit(args, "partition", report)
    if not cert["ok"]:
        _replay(args, doc, "partition")
        return VIOLATION
    return OK


def cmd_approx(args) -> int:
    doc = _load(args)
    if not doc.weight.is_nonnegative():
        raise ConfigError("approx needs a nonnegative weight")
    seed = resolve_seed(args.seed)
    n_max = args.nmax or args.n or 8
    trials = args.trials or 20
    rows = []
    for n in ([args.n] if args.n else range(1, n_max + 1)):
        rows.append(approx_bound_check(doc.graph, doc.weight, n, trials, np.random.default_rng([seed, n])))
    ok = all(r["ok"] for r in rows)
    _emit(args, "approx", {"graph_hash": graph_hash(doc.graph, doc.weight), "seed": seed, "results": rows, "ok": ok})
    if not ok:
        _replay(args, doc, "approx")
        return VIOLATION
    return OK


def cmd_sharpness(args) -> int:
    L = _positive("length", args.length)
    w = _positive("width", args.width)
    if not w < L:
        raise ConfigError("--width must be smaller than --length")
    ratio = sharpness_search(L, w, args.h)
    dr = dirichlet_ratios(L, n_max=args.nmax or 10, h=args.h)
    ok = ratio <= 1 + 1e-10 and bool(np.all(dr <= 1 + 1e-10))
    report = {"length": L, "width": w, "ratio": ratio, "dirichlet_ratios": dr.tolist(), "ok": ok}
    _emit(args, "sharpness", report)
    return OK if report["ok"] else VIOLATION


def cmd_snumbers(args) -> int:
    doc = _load(args)
    h = _positive("h", _default_h(doc, args.h))
    r = snumbers_halfinv(doc.graph, doc.weight, doc.root, h)
    s = r["s"][: args.nmax] if args.nmax else r["s"]
    report = {"graph_hash": graph_hash(doc.graph, doc.weight), "h": h, "s": s, "bound": r["bound"][: len(s)],
              "worst_ratio": r["worst_ratio"], "ok": r["ok"]}
    _emit(args, "snumbers", report)
    if not r["ok"]:
        _replay(args, doc, "snumbers")
        return VIOLATION
    return OK


def cmd_kernel(args) -> int:
    if not args.kernel:
        raise ConfigError("--kernel is required")
    doc = _load(args)
    K = KernelSpec.parse(args.kernel)
    h = _positive("h", _default_h(doc, args.h, 400))
    r = check_kernel_bounds(K, doc.graph, doc.root, h, tail_tol=args.tol if args.tol is not None else 1e-3)
    report = {"graph_hash": graph_hash(doc.graph, doc.weight), "kernel": args.kernel, "h": h, **r.to_json()}
    _emit(args, "kernel", report)
    if not r.ok:
        _replay(args, doc, "kernel")
        return VIOLATION
    return OK


def cmd_suite(args) -> int:
    seed = resolve_seed(args.seed)
    if args.name not in SUITES:
        raise ConfigError(f"unknown suite {args.name!r}; choose from {', '.join(sorted(SUITES))}")
    overrides = {"n_max": args.nmax, "tol": args.tol}
    if args.trials is not None and args.trials < 1:
        raise ConfigError("--trials must be positive")
    if args.trial is not None:
        params = {**SUITES[args.name].defaults, **{k: v for k, v in overrides.items() if v is not None}}
        if args.trials is not None:
            params["trials"] = args.trials
        if not 0 <= args.trial < trial_count(args.name, params["trials"]):
            raise ConfigError("--trial is out of range")
        ok, stats, (g, V, root) = run_trial(args.name, seed, args.trial, params)
        report = {"suite": args.name, "seed": seed, "trial": args.trial, "params": params, "stats": stats,
                  "instance": graph_to_json(g, V, root), "ok": ok}
        _emit(args, f"suite-{args.name}-trial{args.trial}", report)
        return OK if ok else VIOLATION
    report = run_suite(args.name, seed, args.trials, workers=args.workers, **overrides)
    for v in report["violations"]:
        v["replay"] = ["suite", args.name, "--seed", str(seed), "--trials", str(report["params"]["trials"]),
                       "--trial", str(v["trial"])]
    _emit(args, f"suite-{args.name}", report)
    return OK if report["ok"] else VIOLATION


# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--graph", help="graph file (JSON)")
    common.add_argument("--weight", help="JSON file with per-edge weights overriding the graph file")
    common.add_argument("--h", type=float, help="mesh size")
    common.add_argument("--n", type=int, help="number of pieces / single index")
    common.add_argument("--nmax", type=int, help="largest index reported or checked")
    common.add_argument("--trials", type=int, help="number of random trials")
    common.add_argument("--seed", type=int, help=f"master seed (overridden by ${SEED_ENV})")
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("--tol", type=float, help="tolerance for the subcommand's check")
    common.add_argument("--kernel", help="kernel expression or sample file")
    common.add_argument("--quiet", action="store_true", help="do not echo a summary on stdout")

    p = argparse.ArgumentParser(prog="metric-spectra", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, extra in [
        ("validate", cmd_validate, None),
        ("spectrum", cmd_spectrum, None),
        ("bounds", cmd_bounds, None),
        ("weyl", cmd_weyl, "weyl"),
        ("partition", cmd_partition, None),
        ("approx", cmd_approx, None),
        ("sharpness", cmd_sharpness, "sharpness"),
        ("snumbers", cmd_snumbers, None),
        ("kernel", cmd_kernel, None),
        ("suite", cmd_suite, "suite"),
    ]:
        sp = sub.add_parser(name, parents=[common])
        sp.set_defaults(func=fn)
        if extra == "weyl":
            sp.add_argument("--levels", type=int, default=2, help="meshes in the nested refinement ladder")
        elif extra == "sharpness":
            sp.add_argument("--length", type=float, default=1.0)
            sp.add_argument("--width", type=float, default=0.01)
        elif extra == "suite":
            sp.add_argument("name", help=", ".join(sorted(SUITES)))
            sp.add_argument("--workers", type=int, default=1)
            sp.add_argument("--trial", type=int, help="run a single trial (replay)")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return CONFIG_ERROR if exc.code else OK
    args.argv = argv
    try:
        _positive("tol", args.tol)
        return args.func(args)
    except (ConfigError, MetricSpectraError, OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"metric-spectra: error: {exc}\n")
        return CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
