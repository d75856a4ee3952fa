import math

import numpy as np
import pytest
from scipy.optimize import brentq

from metric_spectra.errors import UnderResolvedError
from metric_spectra.graph import GraphPoint, Weight, interval_graph, path_graph, scale_lengths, total_length
from metric_spectra.random_instances import random_graph, random_weight
from metric_spectra.suites import spectral_instance
from metric_spectra.spectral import (
    assemble, bound_check, build_mesh, dirichlet_ratios, element_matrices, exact_interval_spectrum,
    jacobi_eigh, laplacian_spectrum, sharpness_search, snumbers_halfinv, solve_generalized, spectrum,
    weyl_check,
)

B_END = GraphPoint.at_vertex("b")


def star_leaf_wavenumbers(count):
    """Wavenumbers of -u'' = k^2 u on the unit 3-star, Dirichlet at one leaf.

    Symmetric modes solve tan(k)^2 = 1/2, antisymmetric ones have cos(k) = 0.
    """
    ks = []
    m = 0
    while len(ks) < 3 * count:
        lo, hi = m * math.pi, (m + 1) * math.pi
        f = lambda k: math.tan(k) ** 2 - 0.5
        ks.append(brentq(f, lo + 1e-9, lo + math.pi / 2 - 1e-9))
        ks.append(brentq(f, lo + math.pi / 2 + 1e-9, hi - 1e-9))
        ks.append(lo + math.pi / 2)
        m += 1
    return np.sort(ks)[:count]


# --- mesh and assembly ------------------------------------------------------------

def test_mesh_counts(unit_interval, star3):
    m = build_mesh(unit_interval, None, B_END, 0.5)
    assert m.n_nodes == 3 and len(m.elements) == 2
    m = build_mesh(star3, None, GraphPoint.at_vertex("l0"), 1.0)
    assert m.n_nodes == 4


def test_mesh_keeps_breakpoints(unit_interval):
    V = Weight.from_mapping(unit_interval, {"e": {"breakpoints": [0.0, 0.3, 1.0], "values": [1.0, 2.0]}})
    m = build_mesh(unit_interval, V, B_END, 0.5)
    assert 0.3 in m.positions["e"]
    assert m.h <= 0.5
    assert np.all(np.diff(m.positions["e"]) > 0)


def test_mesh_interior_root_is_node(theta):
    root = theta.point("e2", 0.75)
    m = build_mesh(theta, None, root, 0.1)
    assert m.node_index(root) == m.root_index
    assert m.dof == m.n_nodes - 1


def test_mesh_rejects_bad_h(unit_interval):
    with pytest.raises(ValueError):
        build_mesh(unit_interval, None, B_END, 0.0)


def test_refine_is_nested(theta):
    m = build_mesh(theta, None, GraphPoint.at_vertex("u"), 0.3)
    f = m.refine()
    for eid in m.positions:
        assert np.array_equal(f.positions[eid][0::2], m.positions[eid])
    assert f.h == pytest.approx(m.h / 2)


def test_element_matrices():
    K, M = element_matrices(0.25, 3.0)
    assert np.allclose(K, [[4, -4], [-4, 4]])
    assert np.allclose(M, 3.0 * 0.25 / 6 * np.array([[2, 1], [1, 2]]))


def test_assembly_single_element(unit_interval):
    V = Weight.constant(unit_interval, 3.0)
    p = assemble(build_mesh(unit_interval, V, B_END, 1.0), V)
    assert np.allclose(p.A_full.toarray(), [[1, -1], [-1, 1]])
    assert np.allclose(p.B_full.toarray(), 0.5 * np.array([[2, 1], [1, 2]]))


def test_constants_in_stiffness_kernel(theta):
    V = Weight.constant(theta, 1.0)
    p = assemble(build_mesh(theta, V, GraphPoint.at_vertex("u"), 0.2), V)
    assert np.allclose(p.A_full @ np.ones(p.mesh.n_nodes), 0.0, atol=1e-12)
    assert (p.A_full != p.A_full.T).nnz == 0
    assert (p.B_full != p.B_full.T).nnz == 0


def test_zero_weight_gives_zero_mass(theta):
    V = Weight.zero(theta)
    p = assemble(build_mesh(theta, V, GraphPoint.at_vertex("u"), 0.2), V)
    assert p.B_full.count_nonzero() == 0
    s = solve_generalized(p)
    assert len(s.lambda_plus) == 0 and len(s.lambda_minus) == 0


def test_missing_dirichlet_fails(unit_interval):
    V = Weight.constant(unit_interval, 1.0)
    m = build_mesh(unit_interval, V, B_END, 0.1)
    object.__setattr__(m, "dirichlet", ())
    with pytest.raises(np.linalg.LinAlgError):
        solve_generalized(assemble(m, V))


# --- solver --------------------------------------------------------------------------

def test_interval_closed_form(unit_interval):
    s = spectrum(unit_interval, Weight.constant(unit_interval, 1.0), B_END, 1 / 2000)
    exact = exact_interval_spectrum(1.0, "one-point", 10)
    assert s.lambda_plus[0] == pytest.approx(0.405285, abs=1e-6)
    assert s.lambda_plus[1] == pytest.approx(0.045032, abs=1e-6)
    assert np.all(np.abs(s.lambda_plus[:10] / exact - 1) <= 1e-4)
    assert s.residual <= 1e-8


def test_galerkin_eigenvalues_from_below(unit_interval):
    s = spectrum(unit_interval, Weight.constant(unit_interval, 1.0), B_END, 1 / 100)
    exact = exact_interval_spectrum(1.0, "one-point", 20)
    assert np.all(s.lambda_plus[:20] <= exact)


def test_jacobi_matches_lapack(theta, rng):
    V = random_weight(rng, theta)
    p = assemble(build_mesh(theta, V, GraphPoint.at_vertex("w"), 0.1), V)
    a = solve_generalized(p)
    b = solve_generalized(p, method="jacobi")
    assert np.allclose(a.lambda_plus, b.lambda_plus, rtol=1e-9, atol=1e-14)
    assert np.allclose(a.lambda_minus, b.lambda_minus, rtol=1e-9, atol=1e-14)


def test_jacobi_off_diagonal_tolerance(rng):
    X = rng.standard_normal((30, 30))
    C = X + X.T
    w, Q = jacobi_eigh(C)
    R = Q.T @ C @ Q
    off = np.linalg.norm(R - np.diag(np.diag(R)))
    assert off <= 1e-10 * np.linalg.norm(C)
    assert np.allclose(np.sort(w), np.linalg.eigvalsh(C))


def test_partial_spectrum_agrees(theta, rng):
    V = random_weight(rng, theta)
    p = assemble(build_mesh(theta, V, GraphPoint.at_vertex("w"), 0.01), V)
    full = solve_generalized(p)
    part = solve_generalized(p, n_max=10)
    assert np.allclose(part.lambda_plus[:10], full.lambda_plus[:10], rtol=1e-10)
    assert np.allclose(part.lambda_minus[:10], full.lambda_minus[:10], rtol=1e-10)


def test_negative_weight_swaps_signs(unit_interval):
    V = Weight.constant(unit_interval, -1.0)
    s = spectrum(unit_interval, V, B_END, 1 / 200)
    t = spectrum(unit_interval, -V, B_END, 1 / 200)
    assert len(s.lambda_plus) == 0
    assert np.allclose(s.lambda_minus, t.lambda_plus, rtol=1e-12)


def test_sign_symmetry_random(rng):
    g = random_graph(rng, cyclic=True)
    V = random_weight(rng, g)
    root = GraphPoint.at_vertex(sorted(g.vertices)[0])
    h = total_length(g) / 300
    a, b = spectrum(g, V, root, h), spectrum(g, -V, root, h)
    assert np.allclose(a.lambda_plus, b.lambda_minus, rtol=1e-10)
    assert np.allclose(a.lambda_minus, b.lambda_plus, rtol=1e-10)


# --- bounds ------------------------------------------------------------------------------

def test_interval_bound_margins(unit_interval):
    V = Weight.constant(unit_interval, 1.0)
    s = spectrum(unit_interval, V, B_END, 1 / 500)
    r = bound_check(s, unit_interval, V, 10)
    assert r["ok"]
    n = np.arange(1, 11)
    assert np.allclose(n ** 2 * np.array(r["plus"]["lambda"]), 4 * n ** 2 / ((2 * n - 1) ** 2 * math.pi ** 2), rtol=1e-3)
    assert r["plus"]["worst_ratio"] == pytest.approx(4 / math.pi ** 2, rel=1e-5)


def test_zero_weight_bound_is_vacuous(star3):
    V = Weight.zero(star3)
    r = bound_check(spectrum(star3, V, GraphPoint.at_vertex("l0"), 0.1), star3, V)
    assert r["ok"] and r["plus"]["lambda"] == []


def test_random_bounds_and_form_bound(rng):
    for _ in range(15):
        g = random_graph(rng, cyclic=bool(rng.integers(2)))
        V = random_weight(rng, g)
        s = spectrum(g, V, GraphPoint.at_vertex(sorted(g.vertices)[-1]), total_length(g) / 300)
        r = bound_check(s, g, V, 20)
        assert r["ok"]
        assert max(s.lambda_plus[0], s.lambda_minus[0]) <= total_length(g) * V.abs().integral()


def test_refinement_monotone_and_cauchy(star3):
    V = Weight.from_mapping(star3, {"e0": {"breakpoints": [0.0, 0.4, 1.0], "values": [3.0, 1.0]}})
    root = GraphPoint.at_vertex("l1")
    m = build_mesh(star3, V, root, 0.05)
    prev = None
    changes = []
    for _ in range(4):
        lam = solve_generalized(assemble(m, V)).lambda_plus[:5]
        if prev is not None:
            assert np.all(lam >= prev * (1 - 1e-12))
            changes.append(np.max(np.abs(lam / prev - 1)))
        prev = lam
        m = m.refine()
    # second-order convergence: each halving cuts the change by about four
    assert changes[1] / changes[0] < 0.3 and changes[2] / changes[1] < 0.3


def test_even_weight_matches_odd_dirichlet_modes():
    L = 1.0
    half = Weight.from_mapping(interval_graph(L), {"e": {"breakpoints": [0.0, 0.4, 1.0], "values": [2.0, 0.5]}})
    # one-point problem on [0, L] (Neumann at 0, Dirichlet at L)
    one = spectrum(interval_graph(L), half, B_END, 1 / 400).lambda_plus[:6]
    # the same weight mirrored on [-L, L] with both ends fixed
    g2 = interval_graph(2 * L)
    V2 = Weight.from_mapping(g2, {"e": {"breakpoints": [0.0, 0.6, 1.4, 2.0], "values": [0.5, 2.0, 0.5]}})
    mesh = build_mesh(g2, V2, GraphPoint.at_vertex("a"), 1 / 400, extra_dirichlet=[B_END])
    two = solve_generalized(assemble(mesh, V2)).lambda_plus
    assert np.allclose(one, two[0:12:2], rtol=1e-8)


# --- Laplacian ----------------------------------------------------------------------------

def test_laplacian_interval(unit_interval):
    r = laplacian_spectrum(unit_interval, B_END, 1 / 1000, 5)
    n = np.arange(1, 6)
    assert np.allclose(r["mu"], ((n - 0.5) * math.pi) ** 2, rtol=1e-4)
    assert r["ratio"][0] == pytest.approx(math.pi ** 2 / 4, rel=1e-5)
    assert r["ok"]


def test_laplacian_star_matches_secular_equation(star3):
    r = laplacian_spectrum(star3, GraphPoint.at_vertex("l0"), 1 / 1000, 6)
    k = star_leaf_wavenumbers(6)
    assert r["mu"][0] == pytest.approx(math.atan(1 / math.sqrt(2)) ** 2, rel=1e-4)
    assert np.allclose(r["mu"], k ** 2, rtol=1e-4)


def test_laplacian_scaling(theta):
    root = GraphPoint.at_vertex("w")
    a = laplacian_spectrum(theta, root, 0.01, 8)["mu"]
    g2, _ = scale_lengths(theta, Weight.zero(theta), 2.0)
    b = laplacian_spectrum(g2, root, 0.02, 8)["mu"]
    assert np.allclose(b, a / 4, rtol=1e-10)


# --- Weyl -------------------------------------------------------------------------------------

def test_weyl_interval_closed_form(unit_interval):
    r = weyl_check(unit_interval, Weight.constant(unit_interval, 1.0), B_END, 25, 1 / 500, levels=2)
    # exact ratio is 2n / (2n - 1); the mesh error at n = 25, h = 1/1000 is about 2.5e-4
    assert r["plus"]["ratios"][-1] == pytest.approx(50 / 49, abs=5e-4)
    assert r["plus"]["monotone"]


def test_weyl_ratio_scale_invariant(unit_interval):
    a = weyl_check(unit_interval, Weight.constant(unit_interval, 1.0), B_END, 10, 1 / 400)
    b = weyl_check(unit_interval, Weight.constant(unit_interval, 7.0), B_END, 10, 1 / 400)
    assert np.allclose(a["plus"]["ratios"], b["plus"]["ratios"], rtol=1e-10)


def test_weyl_under_resolved(unit_interval):
    with pytest.raises(UnderResolvedError):
        weyl_check(unit_interval, Weight.constant(unit_interval, 1.0), B_END, 25, 0.1)


# --- s-numbers and sharpness --------------------------------------------------------------------

def test_snumbers_unit_amplitude(unit_interval):
    r = snumbers_halfinv(unit_interval, Weight.constant(unit_interval, 1.0), B_END, 1 / 1000)
    n = np.arange(1, 11)
    assert np.allclose(r["s"][:10], 2 / ((2 * n - 1) * math.pi), rtol=1e-4)
    assert r["ok"]


def test_snumbers_zero_and_sign(rng, theta):
    assert len(snumbers_halfinv(theta, Weight.zero(theta), GraphPoint.at_vertex("u"), 0.1)["s"]) == 0
    a = random_weight(rng, theta)
    s1 = snumbers_halfinv(theta, a, GraphPoint.at_vertex("u"), 0.05)["s"]
    s2 = snumbers_halfinv(theta, a.abs(), GraphPoint.at_vertex("u"), 0.05)["s"]
    assert np.array_equal(s1, s2)


def test_sharpness_bump():
    ratio = sharpness_search(1.0, 0.01)
    assert ratio >= 0.95
    assert ratio <= 1.0
    # Rayleigh quotient of the exact discrete test function 1 - x: (1 - w + w^2/3) / (1 * 1)
    w = 0.01
    assert ratio >= 1 - w + w * w / 3 - 1e-12


def test_sharpness_uniform_limit():
    assert sharpness_search(1.0, 1.0 - 1e-9, h=1 / 1000) == pytest.approx(4 / math.pi ** 2, rel=1e-4)


def test_dirichlet_ratios_constant():
    r = dirichlet_ratios(1.0, n_max=5, h=1 / 2000)
    assert np.allclose(r, 4 / math.pi ** 2, rtol=1e-4)
    assert np.all(r <= 1)


def test_exact_interval_spectrum_scaling():
    assert exact_interval_spectrum(1.0, "one-point", 1)[0] == pytest.approx(4 / math.pi ** 2)
    assert exact_interval_spectrum(1.0, "two-point", 1)[0] == pytest.approx(1 / math.pi ** 2)
    assert np.allclose(exact_interval_spectrum(2.0, "one-point", 5), 4 * exact_interval_spectrum(1.0, "one-point", 5))
    with pytest.raises(ValueError):
        exact_interval_spectrum(1.0, "neumann", 3)


def test_path_and_interval_agree():
    # a degree-two vertex changes nothing
    a = spectrum(interval_graph(3.0), Weight.constant(interval_graph(3.0), 1.0), B_END, 0.01).lambda_plus[:5]
    g = path_graph([1.0, 2.0])
    b = spectrum(g, Weight.constant(g, 1.0), GraphPoint.at_vertex("v2"), 0.01).lambda_plus[:5]
    assert np.allclose(a, b, rtol=1e-10)


def test_star_weyl_oracle(star3):
    # converged 3-star value against the secular-equation roots
    k = star_leaf_wavenumbers(25)
    r_exact = 25 * math.pi / (3 * k[-1])
    assert r_exact == pytest.approx(1.0168, abs=1e-4)


def test_small_eigenvalues_keep_relative_accuracy():
    # the negative part is 3e5 times weaker, so lambda^-_20 sits near 1e-9 lambda^+_1
    g = path_graph([1.0, 2.0])
    V = Weight.from_mapping(g, {"e0": {"breakpoints": [0.0, 0.5 + 1e-7, 1.0], "values": [30.0, -1e-4]},
                                "e1": {"breakpoints": [0.0, 2.0], "values": [1.0]}})
    root = GraphPoint.at_vertex("v0")
    a, b = spectrum(g, V, root, 0.005), spectrum(g, -V, root, 0.005)
    assert a.lambda_minus[19] < 1e-8 * a.lambda_plus[0]
    assert np.allclose(a.lambda_minus[:20], b.lambda_plus[:20], rtol=1e-12, atol=0)


def test_residual_on_graded_mesh():
    # suite instance with an 8e-6 element next to 2e-2 ones
    g, V, root = spectral_instance(20240611, 156, 200)
    s = spectrum(g, V, root, total_length(g) / 400, n_check=20)
    assert s.residual <= 1e-8
