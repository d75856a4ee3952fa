"""Galerkin discretisation of ``-lambda u'' = V u`` on a metric graph.

Continuous piecewise-linear elements with shared vertex nodes; the Kirchhoff
conditions are natural for the form ``int |u'|^2`` and need no assembly.  The
Dirichlet point(s) are removed from the unknowns.  Because the discrete space
is a subspace of the form domain, every computed ``lambda_n^+-`` is a lower
bound for the exact one, so upper-bound inequalities can be checked soundly.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import UnderResolvedError
from .graph import GraphPoint, MetricGraph, Weight, diameter, interval_graph, total_length

ZERO_TOL = 1e-11


@dataclass(frozen=True, eq=False)
class Mesh:
    graph: MetricGraph
    positions: dict[str, np.ndarray]
    indices: dict[str, np.ndarray]
    n_nodes: int
    vertex_nodes: dict[str, int]
    elements: np.ndarray  # (m, 2) global node pairs
    element_edge: tuple[str, ...]
    element_span: np.ndarray  # (m, 2) offsets along the edge
    dirichlet: tuple[int, ...]
    dirichlet_points: tuple[GraphPoint, ...]

    @property
    def element_h(self) -> np.ndarray:
        return self.element_span[:, 1] - self.element_span[:, 0]

    @property
    def h(self) -> float:
        return float(self.element_h.max())

    @property
    def root_index(self) -> int:
        return self.dirichlet[0]

    @property
    def dof(self) -> int:
        return self.n_nodes - len(self.dirichlet)

    def node_index(self, p: GraphPoint) -> int:
        if p.vertex is not None:
            return self.vertex_nodes[p.vertex]
        pos = self.positions[p.edge]
        k = int(np.searchsorted(pos, p.t))
        if k < len(pos) and pos[k] == p.t:
            return int(self.indices[p.edge][k])
        raise KeyError(f"{p!r} is not a mesh node")

    @property
    def node_reps(self) -> list[tuple[str, float]]:
        """One ``(edge, offset)`` representative per global node."""
        reps: list = [None] * self.n_nodes
        for eid in sorted(self.positions):
            for t, i in zip(self.positions[eid], self.indices[eid]):
                if reps[i] is None:
                    reps[i] = (eid, float(t))
        return reps

    def quadrature_weights(self) -> np.ndarray:
        """Composite trapezoid weights on the global nodes."""
        w = np.zeros(self.n_nodes)
        h = self.element_h
        np.add.at(w, self.elements[:, 0], 0.5 * h)
        np.add.at(w, self.elements[:, 1], 0.5 * h)
        return w

    def digest(self) -> str:
        sha = hashlib.sha256()
        for eid in sorted(self.positions):
            sha.update(eid.encode())
            sha.update(np.ascontiguousarray(self.positions[eid], dtype="<f8").tobytes())
        return sha.hexdigest()[:16]

    def refine(self) -> "Mesh":
        """Halve every element (nested refinement)."""
        pos = {}
        for eid, x in self.positions.items():
            mids = 0.5 * (x[:-1] + x[1:])
            y = np.empty(2 * len(x) - 1)
            y[0::2] = x
            y[1::2] = mids
            pos[eid] = y
        return _mesh_from_positions(self.graph, pos, self.dirichlet_points)


def _mesh_from_positions(g: MetricGraph, positions: dict[str, np.ndarray],
                         dirichlet_points: Sequence[GraphPoint]) -> Mesh:
    vnodes = {v: i for i, v in enumerate(sorted(g.vertices))}
    nxt = len(vnodes)
    indices = {}
    elems, eedge, espan = [], [], []
    for eid in sorted(positions):
        e = g.edge_map[eid]
        x = positions[eid]
        idx = np.empty(len(x), dtype=np.int64)
        idx[0] = vnodes[e.tail]
        idx[-1] = vnodes[e.head]
        k = len(x) - 2
        idx[1:-1] = np.arange(nxt, nxt + k)
        nxt += k
        indices[eid] = idx
        elems.append(np.column_stack([idx[:-1], idx[1:]]))
        espan.append(np.column_stack([x[:-1], x[1:]]))
        eedge.extend([eid] * (len(x) - 1))
    mesh = Mesh(g, positions, indices, nxt, vnodes, np.vstack(elems), tuple(eedge), np.vstack(espan),
                (), tuple(dirichlet_points))
    dir_idx = tuple(dict.fromkeys(mesh.node_index(p) for p in dirichlet_points))
    object.__setattr__(mesh, "dirichlet", dir_idx)
    return mesh


def build_mesh(g: MetricGraph, V: Weight | None, root: GraphPoint, h: float,
               extra_dirichlet: Sequence[GraphPoint] = ()) -> Mesh:
    """Uniform refinement of every edge to spacing ``<= h``.

    Weight breakpoints and the Dirichlet points are always nodes.
    """
    if not h > 0:
        raise ValueError("mesh size h must be positive")
    V = V if V is not None else Weight.zero(g)
    pins: dict[str, set[float]] = {e.id: {0.0, e.length, *V[e.id].breakpoints} for e in g.edges}
    for p in (root, *extra_dirichlet):
        if p.edge is not None:
            pins[p.edge].add(p.t)
    positions = {}
    for e in g.edges:
        fixed = sorted(t for t in pins[e.id] if 0.0 <= t <= e.length)
        parts = [np.array([fixed[0]])]
        for a, b in zip(fixed, fixed[1:]):
            m = max(1, math.ceil((b - a) / h * (1 - 1e-12)))
            seg = np.linspace(a, b, m + 1)
            seg[-1] = b
            parts.append(seg[1:])
        positions[e.id] = np.concatenate(parts)
    return _mesh_from_positions(g, positions, (root, *extra_dirichlet))


@dataclass(frozen=True, eq=False)
class DiscreteProblem:
    mesh: Mesh
    weight: Weight
    A_full: sparse.csr_matrix
    B_full: sparse.csr_matrix
    free: np.ndarray

    @property
    def A(self) -> np.ndarray:
        return self.A_full[self.free][:, self.free].toarray()

    @property
    def B(self) -> np.ndarray:
        return self.B_full[self.free][:, self.free].toarray()


def element_matrices(h: float, v: float) -> tuple[np.ndarray, np.ndarray]:
    """Stiffness and weighted mass of one linear element of length ``h`` with constant weight ``v``."""
    K = np.array([[1.0, -1.0], [-1.0, 1.0]]) / h
    M = v * h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    return K, M


def assemble(mesh: Mesh, V: Weight) -> DiscreteProblem:
    """Stiffness ``int u'v'`` and weighted mass ``int u v V``; exact for piecewise-constant ``V``."""
    h = mesh.element_h
    mid = 0.5 * (mesh.element_span[:, 0] + mesh.element_span[:, 1])
    vals = np.array([V[e].value(m) for e, m in zip(mesh.element_edge, mid)])
    i, j = mesh.elements[:, 0], mesh.elements[:, 1]
    rows = np.concatenate([i, i, j, j])
    cols = np.concatenate([i, j, i, j])
    k = 1.0 / h
    kd = np.concatenate([k, -k, -k, k])
    m = vals * h / 6.0
    md = np.concatenate([2 * m, m, m, 2 * m])
    n = mesh.n_nodes
    A = sparse.csr_matrix((kd, (rows, cols)), shape=(n, n))
    B = sparse.csr_matrix((md, (rows, cols)), shape=(n, n))
    free = np.setdiff1d(np.arange(n), np.array(mesh.dirichlet, dtype=np.int64))
    return DiscreteProblem(mesh, V, A, B, free)


# ----------------------------------------------------------------------------
# eigensolvers
# ----------------------------------------------------------------------------

def jacobi_eigh(C: np.ndarray, tol: float = 1e-12, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi rotations until the off-diagonal norm is ``<= tol * ||C||_F``."""
    A = np.array(C, dtype=float, copy=True)
    n = A.shape[0]
    Q = np.eye(n)
    scale = np.linalg.norm(A)
    if n < 2 or scale == 0.0:
        return np.diag(A).copy(), Q
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                qp, qq = Q[:, p].copy(), Q[:, q].copy()
                Q[:, p] = c * qp - s * qq
                Q[:, q] = s * qp + c * qq
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    return np.diag(A).copy(), Q


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Positive and (absolute values of) negative eigenvalues, each sorted descending."""

    lambda_plus: np.ndarray
    lambda_minus: np.ndarray
    dof: int
    h: float
    residual: float
    vectors_plus: np.ndarray | None = field(default=None, repr=False)
    vectors_minus: np.ndarray | None = field(default=None, repr=False)

    def signed(self, sign: int) -> np.ndarray:
        return self.lambda_plus if sign > 0 else self.lambda_minus


def _extreme_pairs(C: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """The ``k`` largest and ``k`` smallest eigenpairs (merged when they would overlap)."""
    N = C.shape[0]
    if 2 * k >= N:
        return sla.eigh(C)
    wl, Yl = sla.eigh(C, subset_by_index=[0, k - 1])
    wh, Yh = sla.eigh(C, subset_by_index=[N - k, N - 1])
    return np.concatenate([wl, wh]), np.hstack([Yl, Yh])


def _refine_pairs(A: sparse.csc_matrix, B: sparse.csc_matrix, U: np.ndarray, lam: np.ndarray,
                  tol: float = 1e-10, steps: int = 2) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rayleigh quotients on the sparse pencil; inverse iteration where ``||Bu - lam Au|| > tol ||Au||``.

    The dense transform loses relative accuracy on eigenvalues far below the
    largest one and on smooth modes when element sizes vary a lot.
    """
    U = U.copy()
    lam = np.einsum("ij,ij->j", U, B @ U) / np.einsum("ij,ij->j", U, A @ U)
    res = np.empty(len(lam))
    for j in range(len(lam)):
        u, l = U[:, j], lam[j]
        Au = A @ u
        r = np.linalg.norm(B @ u - l * Au) / np.linalg.norm(Au)
        for _ in range(steps):
            if r <= tol:
                break
            try:
                z = splu((B - l * A).tocsc()).solve(Au)
            except RuntimeError:  # exactly singular shift
                break
            Az = A @ z
            lz = float(z @ (B @ z)) / float(z @ Az)
            rz = np.linalg.norm(B @ z - lz * Az) / np.linalg.norm(Az)
            # stay on this eigenpair: reject drift to a neighbour
            if not rz < r or abs(lz - l) > 1e-8 * abs(l):
                break
            u, l, Au, r = z / np.sqrt(z @ Az), lz, Az / np.sqrt(z @ Az), rz
        U[:, j], lam[j], res[j] = u, l, r
    return lam, U, res


def solve_generalized(p: DiscreteProblem, method: str = "lapack", n_check: int = 50,
                      keep_vectors: bool = False, n_max: int | None = None) -> Spectrum:
    """Solve ``B u = lambda A u``: Cholesky ``A = L L^T``, diagonalise ``L^-1 B L^-T``.

    With ``n_max`` only the ``n_max`` extreme eigenvalues of each sign are computed.
    """
    A, B = p.A, p.B
    try:
        L = sla.cholesky(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "stiffness matrix is not positive definite (missing Dirichlet point or disconnected graph)") from exc
    X = sla.solve_triangular(L, B, lower=True)
    C = sla.solve_triangular(L, X.T, lower=True)
    C = 0.5 * (C + C.T)
    if method == "lapack" and n_max is not None:
        w, Y = _extreme_pairs(C, n_max)
    elif method == "lapack":
        w, Y = sla.eigh(C)
    elif method == "jacobi":
        w, Y = jacobi_eigh(C)
    else:
        raise ValueError(f"unknown method {method!r}")
    scale = total_length(p.mesh.graph) * p.weight.abs().integral()
    cut = ZERO_TOL * scale
    pos = np.flatnonzero(w > cut)
    neg = np.flatnonzero(w < -cut)
    pos = pos[np.argsort(-w[pos], kind="stable")]
    neg = neg[np.argsort(w[neg], kind="stable")]
    check = np.concatenate([pos[:n_check], neg[:n_check]])
    residual = 0.0
    U = None
    if len(check) or keep_vectors:
        U = sla.solve_triangular(L.T, Y, lower=False)
        if len(check):
            As = p.A_full[p.free][:, p.free].tocsc()
            Bs = p.B_full[p.free][:, p.free].tocsc()
            w = w.copy()
            w[check], U[:, check], res = _refine_pairs(As, Bs, U[:, check], w[check])
            residual = float(np.max(res))
    return Spectrum(w[pos].copy(), -w[neg].copy(), A.shape[0], p.mesh.h, residual,
                    U[:, pos] if keep_vectors else None, U[:, neg] if keep_vectors else None)


def spectrum(g: MetricGraph, V: Weight, root: GraphPoint, h: float, **kw) -> Spectrum:
    return solve_generalized(assemble(build_mesh(g, V, root, h), V), **kw)


# ----------------------------------------------------------------------------
# checks
# ----------------------------------------------------------------------------

def bound_check(s: Spectrum, g: MetricGraph, V: Weight, n_max: int | None = None,
                rtol: float = 1e-10) -> dict:
    """``n^2 lambda_n^+- <= |G| int V_+-`` and ``lambda_n^+- <= min(|G|/n^2, diam) int V_+-``."""
    L, diam = total_length(g), diameter(g)
    out = {"total_length": L, "diameter": diam, "ok": True}
    for sign, name, part in ((1, "plus", V.positive_part()), (-1, "minus", V.negative_part())):
        lam = s.signed(sign)[:n_max]
        mass = part.integral()
        n = np.arange(1, len(lam) + 1)
        rhs = L * mass / n ** 2
        rhs_diam = np.minimum(L / n ** 2, diam) * mass
        ok1 = bool(np.all(lam <= rhs * (1 + rtol)))
        ok2 = bool(np.all(lam <= rhs_diam * (1 + rtol)))
        out[name] = {
            "mass": mass,
            "lambda": lam.tolist(),
            "rhs": rhs.tolist(),
            "margin": (1 - lam / rhs).tolist() if len(lam) else [],
            "rhs_diam": rhs_diam.tolist(),
            "worst_ratio": float(np.max(lam / rhs)) if len(lam) else 0.0,
            "ok": ok1 and ok2,
        }
        out["ok"] = out["ok"] and ok1 and ok2
    return out


def laplacian_spectrum(g: MetricGraph, root: GraphPoint, h: float, n_max: int | None = None) -> dict:
    """Eigenvalues ``mu_n`` of ``-Delta`` (Dirichlet at the root, Kirchhoff elsewhere) and ``|G|^2 mu_n >= n^2``."""
    one = Weight.constant(g, 1.0)
    s = spectrum(g, one, root, h)
    mu = 1.0 / s.lambda_plus[:n_max]
    L = total_length(g)
    n = np.arange(1, len(mu) + 1)
    ratio = L ** 2 * mu / n ** 2
    return {"mu": mu, "ratio": ratio, "ok": bool(np.all(ratio >= 1.0 - 1e-10)), "dof": s.dof}


def weyl_ratios(lam: np.ndarray, sqrt_mass: float) -> np.ndarray:
    """``n sqrt(lambda_n) pi / int sqrt(V)``; tends to 1."""
    n = np.arange(1, len(lam) + 1)
    if sqrt_mass == 0.0:
        return np.zeros(len(lam))
    return n * np.sqrt(lam) * math.pi / sqrt_mass


def weyl_check(g: MetricGraph, V: Weight, root: GraphPoint, n_max: int, h: float, levels: int = 2,
               nodes_per_wavelength: int = 20) -> dict:
    """Weyl ratios at ``n_max`` on a nested refinement ladder starting at mesh size ``h``."""
    parts = {"plus": V.positive_part(), "minus": V.negative_part()}
    mesh = build_mesh(g, V, root, h)
    ladder = [mesh]
    for _ in range(levels - 1):
        ladder.append(ladder[-1].refine())
    finest = ladder[-1]
    for name, part in parts.items():
        sm = part.sqrt_integral()
        if sm == 0.0:
            continue
        vmax = max(max(w.values) for w in part.edges.values())
        wavelength = 2.0 * sm / (n_max * math.sqrt(vmax))  # 2 pi / k with k = sqrt(vmax) n pi / sm
        if finest.h > wavelength / nodes_per_wavelength:
            raise UnderResolvedError(
                f"{name}: mesh size {finest.h:.3g} exceeds wavelength/{nodes_per_wavelength} "
                f"= {wavelength / nodes_per_wavelength:.3g} at n={n_max}")
    spectra = [solve_generalized(assemble(m, V), n_check=n_max, n_max=n_max) for m in ladder]
    out = {"n_max": n_max, "h": [m.h for m in ladder], "dof": [s.dof for s in spectra], "ok": True}
    for sign, name in ((1, "plus"), (-1, "minus")):
        sm = parts[name].sqrt_integral()
        lams = [s.signed(sign)[:n_max] for s in spectra]
        if sm == 0.0:
            out[name] = {"sqrt_mass": 0.0, "ratios": [], "deviation": None, "monotone": True}
            continue
        if len(lams[-1]) < n_max:
            raise UnderResolvedError(f"{name}: only {len(lams[-1])} eigenvalues resolved")
        monotone = all(
            bool(np.all(b[:n_max] >= a[:n_max] * (1 - 1e-9))) for a, b in zip(lams, lams[1:]))
        r = weyl_ratios(lams[-1], sm)
        out[name] = {"sqrt_mass": sm, "ratios": r.tolist(), "deviation": float(abs(r[-1] - 1.0)),
                     "monotone": monotone,
                     "refinement_change": float(abs(lams[-1][-1] / lams[-2][-1] - 1)) if len(lams) > 1 else None}
        out["ok"] = out["ok"] and monotone
    return out


def snumbers_halfinv(g: MetricGraph, a: Weight, root: GraphPoint, h: float, rtol: float = 1e-10) -> dict:
    """Singular numbers of ``a (-Delta)^(-1/2)`` as square roots of the eigenvalues for ``V = a^2``."""
    V = a.squared()
    s = spectrum(g, V, root, h)
    sn = np.sqrt(s.lambda_plus)
    n = np.arange(1, len(sn) + 1)
    bound = math.sqrt(total_length(g)) * a.l2_norm() / n
    return {"s": sn, "bound": bound, "ok": bool(np.all(sn <= bound * (1 + rtol))),
            "worst_ratio": float(np.max(sn / bound)) if len(sn) else 0.0}


def exact_interval_spectrum(L: float, boundary: str, n: int) -> np.ndarray:
    """Closed-form eigenvalues for ``V = 1`` on ``[0, L]``.

    ``"one-point"``: Dirichlet at one end, Neumann at the other.
    ``"two-point"``: Dirichlet at both ends.
    """
    k = np.arange(1, n + 1)
    if boundary == "one-point":
        return 4.0 * L ** 2 / ((2 * k - 1) ** 2 * math.pi ** 2)
    if boundary == "two-point":
        return L ** 2 / (k * math.pi) ** 2
    raise ValueError("boundary must be 'one-point' or 'two-point'")


def bump_weight(g: MetricGraph, width: float) -> Weight:
    """Unit mass ``(1/width) * chi_[0, width]`` at the free end of the interval graph."""
    L = g.edges[0].length
    return Weight.from_mapping(g, {g.edges[0].id: {"breakpoints": [0.0, width, L], "values": [1.0 / width, 0.0]}})


def sharpness_search(L: float, width: float, h: float | None = None) -> float:
    """``lambda_1 / (L int V)`` for a unit bump at the Neumann end of ``[0, L]``, Dirichlet at ``L``."""
    if not 0.0 < width < L:
        raise ValueError("need 0 < width < L")
    g = interval_graph(L)
    V = bump_weight(g, width)
    h = h if h is not None else min(width / 4.0, L / 1000.0)
    s = spectrum(g, V, GraphPoint.at_vertex("b"), h)
    return float(s.lambda_plus[0] / (L * V.integral()))


def dirichlet_ratios(L: float, V: Weight | None = None, n_max: int = 10, h: float | None = None) -> np.ndarray:
    """``4 n^2 Lambda_n / (L int V)`` for the problem with both ends of ``[0, L]`` fixed."""
    g = interval_graph(L)
    V = V if V is not None else Weight.constant(g, 1.0)
    h = h if h is not None else L / 1000.0
    mesh = build_mesh(g, V, GraphPoint.at_vertex("a"), h, extra_dirichlet=[GraphPoint.at_vertex("b")])
    s = solve_generalized(assemble(mesh, V))
    lam = s.lambda_plus[:n_max]
    n = np.arange(1, len(lam) + 1)
    return 4 * n ** 2 * lam / (L * V.integral())
