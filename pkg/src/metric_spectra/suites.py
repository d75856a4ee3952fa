"""Randomised suites.

Every trial draws its own generator from ``SeedSequence(seed, spawn_key=(trial,))``,
so a single trial can be replayed without rerunning the ones before it, and
results do not depend on the number of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .functions import PiecewiseLinear
from .graph import GraphPoint, MetricGraph, Weight, graph_to_json, scale_lengths, total_length
from .random_instances import random_graph, random_tree, random_weight
from .spectral import assemble, bound_check, build_mesh, laplacian_spectrum, snumbers_halfinv, solve_generalized
from .trees import (HolderProduct, Mass, Measure, RootedTree, approx_bound_check, check_superadditive, cut_cycles,
                    partition_n, phi_l, phi_v)

RESIDUAL_TOL = 1e-8
HOMOGENEITY_TOL = 1e-10


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def _random_root(rng: np.random.Generator, g: MetricGraph) -> GraphPoint:
    if rng.random() < 0.3:
        e = sorted(g.edges, key=lambda e: e.id)[int(rng.integers(len(g.edges)))]
        t = float(rng.uniform(0.05, 0.95)) * e.length
        return g.point(e.id, t)
    vs = sorted(g.vertices)
    return GraphPoint.at_vertex(vs[int(rng.integers(len(vs)))])


def spectral_instance(seed: int, trial: int, trials: int) -> tuple[MetricGraph, Weight, GraphPoint]:
    """Trials ``< trials`` are trees, the next ``trials // 4`` carry cycles."""
    rng = trial_rng(seed, trial)
    g = random_graph(rng, cyclic=trial >= trials)
    return g, random_weight(rng, g, signed=True), _random_root(rng, g)


def _mesh_size(g: MetricGraph, per_length: int) -> float:
    return total_length(g) / per_length


def _scaled_point(p: GraphPoint, c: float) -> GraphPoint:
    return p if p.vertex is not None else GraphPoint(edge=p.edge, t=p.t * c)


# ----------------------------------------------------------------------------
# trial bodies
# ----------------------------------------------------------------------------

def _trial_bounds(seed, trial, p):
    g, V, root = spectral_instance(seed, trial, p["trials"])
    s = solve_generalized(assemble(build_mesh(g, V, root, _mesh_size(g, p["per_length"])), V), n_check=p["n_max"])
    rep = bound_check(s, g, V, p["n_max"])
    form = total_length(g) * V.abs().integral()
    top = max([*s.lambda_plus[:1], *s.lambda_minus[:1], 0.0])
    ok = rep["ok"] and s.residual <= RESIDUAL_TOL and top <= form * (1 + 1e-10)
    worst = max(rep["plus"]["worst_ratio"], rep["minus"]["worst_ratio"])
    return ok, {"worst_ratio": worst, "residual": s.residual}, (g, V, root)


def _trial_laplacian(seed, trial, p):
    g, V, root = spectral_instance(seed, trial, p["trials"])
    rng = trial_rng(seed + 1, trial)
    h = _mesh_size(g, p["per_length"])
    n_max = p["n_max"]
    lap = laplacian_spectrum(g, root, h, n_max)

    def lam(graph, weight, point, hh):
        s = solve_generalized(assemble(build_mesh(graph, weight, point, hh), weight))
        return s.lambda_plus[:n_max], s.lambda_minus[:n_max]

    base = lam(g, V, root, h)
    c = float(rng.uniform(0.5, 2.0))
    gs, Vs = scale_lengths(g, V, c)
    scaled = lam(gs, Vs, _scaled_point(root, c), h * c)
    k = float(rng.uniform(0.5, 2.0))
    lin = lam(g, V.scaled(k), root, h)
    flip = lam(g, -V, root, h)

    def rel(a, b):
        if len(a) != len(b):
            return math.inf
        return float(np.max(np.abs(a / b - 1))) if len(a) else 0.0

    length_err = max(rel(scaled[i], base[i] * c * c) for i in (0, 1))
    linear_err = max(rel(lin[i], base[i] * k) for i in (0, 1))
    sign_err = max(rel(flip[0], base[1]), rel(flip[1], base[0]))
    ok = lap["ok"] and max(length_err, linear_err) <= HOMOGENEITY_TOL and sign_err <= HOMOGENEITY_TOL
    stats = {"min_ratio": float(np.min(lap["ratio"])), "length_scaling_err": length_err,
             "weight_scaling_err": linear_err, "sign_swap_err": sign_err}
    return ok, stats, (g, V, root)


def _trial_partition(seed, trial, p):
    rng = trial_rng(seed, trial)
    g = random_tree(rng)
    V = random_weight(rng, g, signed=False)
    root = sorted(g.vertices)[int(rng.integers(len(g.vertices)))]
    T = RootedTree(g, root)
    worst = -math.inf
    bad = []
    for phi in (phi_v(V), phi_l(V, 2), Measure()):
        for n in range(1, p["n_max"] + 1):
            cert = partition_n(T, phi, n).certificate(phi, rtol=p["tol"])
            if cert["bound"] > 0:
                worst = max(worst, cert["max_phi_tilde"] / cert["bound"] - 1.0)
            if not cert["ok"]:
                bad.append({"phi": phi.name, "n": n, "k": cert["k"], "max_phi_tilde": cert["max_phi_tilde"],
                            "bound": cert["bound"]})
    return not bad, {"worst_excess": worst, "failures": bad}, (g, V, GraphPoint.at_vertex(root))


def _trial_approx(seed, trial, p):
    rng = trial_rng(seed, trial)
    g = random_graph(rng, cyclic=bool(trial % 2))
    V = random_weight(rng, g, signed=False)
    worst = 0.0
    bad = []
    for n in range(1, p["n_max"] + 1):
        r = approx_bound_check(g, V, n, p["functions"], rng)
        worst = max(worst, r["max_ratio"])
        if not r["ok"]:
            bad.append({"n": n, "violations": r["violations"]})
    return not bad, {"max_ratio": worst, "failures": bad}, (g, V, None)


def _trial_superadditive(seed, trial, p):
    rng = trial_rng(seed, trial)
    g = random_tree(rng)
    V1 = random_weight(rng, g, signed=False)
    V2 = random_weight(rng, g, signed=False)
    alpha = float(rng.uniform(0.0, 1.0))
    kinds = [Measure(), Mass(V1), phi_v(V1), phi_l(V1, int(rng.integers(2, 5))),
             HolderProduct(Mass(V1), Mass(V2), alpha, f"holder({alpha:.3f})"),
             HolderProduct(phi_v(V1), Measure(), alpha, f"holder_nested({alpha:.3f})")]
    phi = kinds[trial % len(kinds)]
    r = check_superadditive(phi, g, 1, rng, rtol=p["tol"])
    worst = min(r["worst_sum_margin"], r["worst_monotone_margin"])
    if not math.isfinite(worst):
        worst = 0.0
    return r["ok"], {"phi": phi.name, "worst_margin": worst}, (g, V1, None)


def _trial_cycles(seed, trial, p):
    rng = trial_rng(seed, trial)
    g = random_graph(rng, cyclic=True)
    V = random_weight(rng, g, signed=True)
    rep = cut_cycles(g)
    RootedTree(rep.tree, sorted(rep.tree.vertices)[0])
    rank = len(g.edges) - len(g.vertices) + 1
    length_exact = total_length(rep.tree) == total_length(g)
    u = PiecewiseLinear.random(g, rng)
    lhs = u.weighted_sq_norm(V)
    rhs = rep.pull_function(u).weighted_sq_norm(rep.pull_weight(V))
    err = abs(lhs - rhs) / max(abs(lhs), 1e-300)
    ok = length_exact and rep.cuts == rank and err <= p["tol"]
    return ok, {"cuts": rep.cuts, "rank": rank, "length_exact": length_exact, "pullback_err": err}, (g, V, None)


def _trial_snumbers(seed, trial, p):
    rng = trial_rng(seed, trial)
    g = random_graph(rng, cyclic=bool(trial % 2))
    a = random_weight(rng, g, signed=True)
    root = _random_root(rng, g)
    r = snumbers_halfinv(g, a, root, _mesh_size(g, p["per_length"]))
    return r["ok"], {"worst_ratio": r["worst_ratio"]}, (g, a, root)


@dataclass(frozen=True)
class SuiteDef:
    body: object
    defaults: dict
    stat: str
    worst: str  # "max" or "min"


SUITES = {
    "bounds": SuiteDef(_trial_bounds, {"trials": 200, "n_max": 20, "per_length": 400}, "worst_ratio", "max"),
    "laplacian": SuiteDef(_trial_laplacian, {"trials": 200, "n_max": 20, "per_length": 400}, "min_ratio", "min"),
    "partition": SuiteDef(_trial_partition, {"trials": 100, "n_max": 10, "tol": 1e-9}, "worst_excess", "max"),
    "approx": SuiteDef(_trial_approx, {"trials": 200, "n_max": 8, "functions": 20}, "max_ratio", "max"),
    "superadditive": SuiteDef(_trial_superadditive, {"trials": 1000, "tol": 1e-12}, "worst_margin", "min"),
    "cycles": SuiteDef(_trial_cycles, {"trials": 50, "tol": 1e-12}, "pullback_err", "max"),
    "snumbers": SuiteDef(_trial_snumbers, {"trials": 50, "per_length": 400}, "worst_ratio", "max"),
}


def trial_count(name: str, trials: int) -> int:
    """The spectral suites append ``trials // 4`` cyclic graphs to ``trials`` trees."""
    return trials + trials // 4 if name in ("bounds", "laplacian") else trials


def run_trial(name: str, seed: int, trial: int, params: dict):
    return SUITES[name].body(seed, trial, params)


def _job(args):
    name, seed, trial, params = args
    ok, stats, inst = run_trial(name, seed, trial, params)
    g, V, root = inst
    replay = None if ok else graph_to_json(g, V, root)
    return ok, stats, replay


def run_suite(name: str, seed: int, trials: int | None = None, workers: int = 1, **overrides) -> dict:
    """Run every trial; the report lists violations with a replayable instance each."""
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(sorted(SUITES))}")
    sd = SUITES[name]
    params = {**sd.defaults, **{k: v for k, v in overrides.items() if v is not None}}
    if trials is not None:
        params["trials"] = trials
    count = trial_count(name, params["trials"])
    jobs = [(name, seed, t, params) for t in range(count)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, jobs, chunksize=max(1, count // (4 * workers))))
    else:
        results = [_job(j) for j in jobs]
    violations = []
    values = []
    for t, (ok, stats, replay) in enumerate(results):
        v = stats.get(sd.stat)
        if v is not None and math.isfinite(v):
            values.append(v)
        if not ok:
            violations.append({"trial": t, "stats": stats, "instance": replay})
    worst = (max(values) if sd.worst == "max" else min(values)) if values else None
    return {"suite": name, "seed": seed, "params": params, "trials": count, "violations": violations,
            "statistic": sd.stat, "worst": worst, "ok": not violations}
