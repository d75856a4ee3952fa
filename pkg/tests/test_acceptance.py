"""One test per acceptance criterion; each prints a PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from metric_spectra.graph import GraphPoint, Weight, interval_graph, load_graph, star_graph, total_length
from metric_spectra.kernels import KernelSpec, check_kernel_bounds
from metric_spectra.random_instances import random_weight
from metric_spectra.spectral import (
    dirichlet_ratios, exact_interval_spectrum, sharpness_search, snumbers_halfinv, spectrum, weyl_check,
)
from metric_spectra.suites import run_suite

SEED = 20240611
B_END = GraphPoint.at_vertex("b")


def min_kernel_series(terms=200_000):
    """sum n^2 s_n^2 with s_n = 1 / ((n - 1/2)^2 pi^2), the Green kernel of the interval."""
    n = np.arange(1, terms + 1, dtype=float)
    return math.fsum(n ** 2 / ((n - 0.5) ** 4 * math.pi ** 4)) + 1.0 / (math.pi ** 4 * (terms + 0.5))


def suite_line(r):
    return f"{r['suite']}: {r['trials']} trials, {len(r['violations'])} violations, {r['statistic']}={r['worst']:.6g}"


def test_c01_interval_oracle(verdict):
    g = interval_graph(1.0)
    t0 = time.perf_counter()
    s = spectrum(g, Weight.constant(g, 1.0), B_END, 1 / 2000)
    elapsed = time.perf_counter() - t0
    rel = np.abs(s.lambda_plus[:10] / exact_interval_spectrum(1.0, "one-point", 10) - 1)
    ok = rel.max() <= 1e-4 and elapsed < 30 and s.residual <= 1e-8
    verdict(1, ok, f"max rel err {rel.max():.3g} (n<=10), residual {s.residual:.2g}, {elapsed:.1f} s")


def test_c02_main_bound_suite(verdict):
    r = run_suite("bounds", SEED, trials=200)
    verdict(2, r["ok"] and r["trials"] == 250, suite_line(r))


def test_c03_weyl(verdict, configs):
    iv = interval_graph(1.0)
    star = star_graph([1.0, 1.0, 1.0])
    leaf = GraphPoint.at_vertex("l0")
    indefinite_iv = Weight.from_mapping(iv, {"e": {"breakpoints": [0.0, 0.25, 0.75, 1.0], "values": [1.0, -1.0, 1.0]}})
    star_doc = load_graph(configs / "star3.json")
    cases = [
        ("interval V=1", iv, Weight.constant(iv, 1.0), B_END, 1 / 500),
        ("interval +-", iv, indefinite_iv, B_END, 1 / 500),
        ("3-star V=1", star, Weight.constant(star, 1.0), leaf, 1 / 500),
        ("3-star +-", star_doc.graph, star_doc.weight, star_doc.root, 1 / 500),
    ]
    devs = []
    ok = True
    for name, g, V, root, h in cases:
        r = weyl_check(g, V, root, 25, h, levels=2)
        for sign in ("plus", "minus"):
            d = r[sign]["deviation"]
            if d is None:
                continue
            # second-order Richardson estimate of the ratio error on the finest mesh
            est = r[sign]["refinement_change"] / 2 / 3
            devs.append(f"{name}{'+' if sign == 'plus' else '-'} {d:.4f} (mesh err ~{est:.1e})")
            ok = ok and d <= 0.03 and r[sign]["monotone"] and est <= 0.1 * 0.03
    verdict(3, ok, "n=25 deviations: " + ", ".join(devs))


def test_c04_partition_suite(verdict):
    r = run_suite("partition", SEED, trials=100)
    verdict(4, r["ok"], suite_line(r))


def test_c05_approximation_suite(verdict):
    r = run_suite("approx", SEED, trials=200)
    verdict(5, r["ok"], suite_line(r))


def test_c06_superadditive_suite(verdict):
    r = run_suite("superadditive", SEED, trials=1000)
    verdict(6, r["ok"] and r["worst"] >= -1e-12, suite_line(r))


def test_c07_sharpness(verdict, rng):
    ratio = sharpness_search(1.0, 0.01)
    uniform = dirichlet_ratios(1.0, n_max=10, h=1 / 2000)
    g = interval_graph(1.0)
    worst = max(float(np.max(dirichlet_ratios(1.0, random_weight(rng, g, signed=False, zero_prob=0.0), 10, 1 / 1000)))
                for _ in range(10))
    ok = ratio >= 0.95 and np.all(uniform <= 1) and np.allclose(uniform, 4 / math.pi ** 2, rtol=1e-4) and worst <= 1
    verdict(7, ok, f"bump ratio {ratio:.5f}; Dirichlet V=1 ratio {uniform[0]:.6f} (4/pi^2={4 / math.pi ** 2:.6f}), "
                   f"random V worst {worst:.4f}")


def test_c08_snumbers(verdict):
    r = run_suite("snumbers", SEED, trials=50)
    g = interval_graph(1.0)
    s = snumbers_halfinv(g, Weight.constant(g, 1.0), B_END, 1 / 2000)["s"][:10]
    n = np.arange(1, 11)
    rel = np.abs(s / (2 / ((2 * n - 1) * math.pi)) - 1).max()
    verdict(8, r["ok"] and rel <= 1e-4, f"{suite_line(r)}; a=1 max rel err {rel:.3g}")


def test_c09_kernels(verdict):
    iv = interval_graph(1.0)
    a = GraphPoint.at_vertex("a")
    star = star_graph([1.0, 1.0, 1.0])
    cases = [("1", iv, a, False), ("x", iv, a, True), ("min(x, y)", iv, a, True),
             ("sin(pi*x)*cos(pi*y)", iv, a, True), ("min(rx, ry)", star, GraphPoint.at_vertex("l0"), True)]
    ok = True
    parts = []
    series_min = None
    for expr, g, root, vanishes in cases:
        r = check_kernel_bounds(KernelSpec(expression=expr), g, root, total_length(g) / 400)
        ok = ok and r.ok_z and r.ok_fin and r.vanishes == vanishes and (r.ok_zz is True) == vanishes
        parts.append(f"{expr}: C_z={r.constant_z:.3g}")
        if expr == "min(x, y)":
            series_min = r.series
    exact = min_kernel_series()
    ok = ok and abs(series_min - exact) <= 1e-3
    # the value 0.0564 quoted alongside the oracle disagrees with the oracle itself; see the ledger
    verdict(9, ok, f"min series {series_min:.6f} vs Green-kernel oracle {exact:.6f}; " + "; ".join(parts))


def test_c10_cycle_cutting(verdict):
    r = run_suite("cycles", SEED, trials=50)
    verdict(10, r["ok"], suite_line(r))


def test_c11_laplacian(verdict):
    r = run_suite("laplacian", SEED, trials=200)
    verdict(11, r["ok"] and r["trials"] == 250 and r["worst"] >= 1.0 - 1e-10, suite_line(r))


@pytest.mark.parametrize("seed", [1, 2])
def test_suites_reproducible(seed):
    assert run_suite("cycles", seed, trials=5) == run_suite("cycles", seed, trials=5)
