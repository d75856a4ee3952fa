"""Integral operators ``(K u)(x) = int K(x, y) u(y) dy`` on metric graphs.

Kernels come from a small expression language or from a dense sample file.
Expressions may use

* ``x``, ``y``: offsets along the edges carrying the two points;
* ``rx``, ``ry``: graph distance of the two points from the root;
* constants ``pi`` and ``e``, numeric literals;
* ``+ - * / **`` and unary minus;
* ``sin cos exp sqrt abs min max``.

A default expression may be overridden per ordered edge pair, keyed
``"ex,ey"``.  The kernel must be continuous in each variable: when the
values at a vertex disagree between incident edges a :class:`KernelError`
is raised.
"""

from __future__ import annotations

import ast
import io
import math
import os
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.linalg as sla

from .errors import KernelError, UnderResolvedError
from .graph import GraphPoint, MetricGraph, distance, total_length
from .reports import write_atomic
from .spectral import Mesh, build_mesh

_FUNCS = {
    "sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "abs": np.abs,
    "min": np.minimum, "max": np.maximum,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_VARS = ("x", "y", "rx", "ry")
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide, ast.Pow: np.power}

CONTINUITY_TOL = 1e-12
VANISH_TOL = 1e-12


def compile_expression(text: str):
    """Parse ``text`` into a function of a variable mapping; anything outside the grammar is rejected."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise KernelError(f"cannot parse kernel {text!r}: {exc.msg}") from exc

    def build(node):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            v = float(node.value)
            return lambda env: v
        if isinstance(node, ast.Name):
            if node.id in _VARS:
                name = node.id
                return lambda env: env[name]
            if node.id in _CONSTS:
                v = _CONSTS[node.id]
                return lambda env: v
            raise KernelError(f"unknown name {node.id!r} in kernel {text!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op, lhs, rhs = _BINOPS[type(node.op)], build(node.left), build(node.right)
            return lambda env: op(lhs(env), rhs(env))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            arg = build(node.operand)
            if isinstance(node.op, ast.USub):
                return lambda env: np.negative(arg(env))
            return arg
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS \
                and not node.keywords:
            fn = _FUNCS[node.func.id]
            args = [build(a) for a in node.args]
            want = 2 if node.func.id in ("min", "max") else 1
            if len(args) != want:
                raise KernelError(f"{node.func.id} takes {want} argument(s)")
            return lambda env: fn(*(a(env) for a in args))
        raise KernelError(f"unsupported construct {ast.dump(node)[:40]!r} in kernel {text!r}")

    return build(tree.body)


@dataclass(frozen=True)
class KernelSpec:
    expression: str | None = None
    overrides: Mapping[str, str] = field(default_factory=dict)
    samples: np.ndarray | None = field(default=None, repr=False)
    sample_hash: str | None = None
    vanishes: bool | None = None  # None: detect from the samples

    def __post_init__(self):
        if (self.expression is None) == (self.samples is None):
            raise KernelError("give exactly one of an expression or a sample matrix")
        if self.expression is not None:
            compile_expression(self.expression)
            for k, v in self.overrides.items():
                if len(k.split(",")) != 2:
                    raise KernelError(f"override key {k!r} must read 'edge_x,edge_y'")
                compile_expression(v)

    @classmethod
    def parse(cls, text: str) -> "KernelSpec":
        """Expression string, or a path to a sample file."""
        if os.path.exists(text):
            return read_samples(text)
        return cls(expression=text)

    def transposed(self) -> "KernelSpec":
        if self.samples is not None:
            return KernelSpec(samples=self.samples.T.copy(), sample_hash=self.sample_hash)
        swap = {"x": "y", "y": "x", "rx": "ry", "ry": "rx"}

        def flip(src):
            tree = ast.parse(src, mode="eval")
            for node in ast.walk(tree):
                if isinstance(node, ast.Name) and node.id in swap:
                    node.id = swap[node.id]
            return ast.unparse(tree)

        over = {",".join(reversed(k.split(","))): flip(v) for k, v in self.overrides.items()}
        return KernelSpec(expression=flip(self.expression), overrides=over)

    def matrix(self, mesh: Mesh, root: GraphPoint) -> np.ndarray:
        """``K(x_i, x_j)`` on the mesh nodes."""
        if self.samples is not None:
            if self.sample_hash is not None and self.sample_hash != mesh.digest():
                raise KernelError(f"sample file was written for mesh {self.sample_hash}, not {mesh.digest()}")
            if self.samples.shape != (mesh.n_nodes, mesh.n_nodes):
                raise KernelError(f"sample matrix has shape {self.samples.shape}, mesh has {mesh.n_nodes} nodes")
            return np.asarray(self.samples, dtype=float)
        return _evaluate(self, mesh, root)


def _root_distances(g: MetricGraph, root: GraphPoint, eid: str, ts: np.ndarray) -> np.ndarray:
    return np.array([distance(g, root, g.point(eid, float(t))) for t in ts])


def _evaluate(spec: KernelSpec, mesh: Mesh, root: GraphPoint) -> np.ndarray:
    g = mesh.graph
    n = mesh.n_nodes
    out = np.full((n, n), np.nan)
    default = compile_expression(spec.expression)
    over = {k: compile_expression(v) for k, v in spec.overrides.items()}
    eids = sorted(mesh.positions)
    r = {e: _root_distances(g, root, e, mesh.positions[e]) for e in eids}
    worst = 0.0
    for ex in eids:
        xs, ix = mesh.positions[ex], mesh.indices[ex]
        for ey in eids:
            ys, iy = mesh.positions[ey], mesh.indices[ey]
            fn = over.get(f"{ex},{ey}", default)
            env = {"x": xs[:, None], "y": ys[None, :], "rx": r[ex][:, None], "ry": r[ey][None, :]}
            with np.errstate(all="ignore"):
                block = np.broadcast_to(np.asarray(fn(env), dtype=float), (len(xs), len(ys)))
            if not np.all(np.isfinite(block)):
                raise KernelError(f"kernel is not finite on edges {ex},{ey}")
            old = out[np.ix_(ix, iy)]
            seen = ~np.isnan(old)
            if np.any(seen):
                worst = max(worst, float(np.max(np.abs(old[seen] - block[seen]))))
            out[np.ix_(ix, iy)] = block
    scale = max(1.0, float(np.max(np.abs(out))))
    if worst > CONTINUITY_TOL * scale:
        raise KernelError(f"kernel is discontinuous at a vertex (jump {worst:.3g})")
    return out


def write_samples(path, K: np.ndarray, mesh: Mesh) -> None:
    """Row-major dense samples with a header naming the mesh."""
    buf = io.StringIO()
    buf.write(f"# mesh {mesh.digest()} nodes {mesh.n_nodes}\n")
    for row in np.asarray(K, dtype=float):
        buf.write(" ".join(repr(float(v)) for v in row))
        buf.write("\n")
    write_atomic(path, buf.getvalue())


def read_samples(path) -> KernelSpec:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 5 or header[:2] != ["#", "mesh"] or header[3] != "nodes":
            raise KernelError(f"{path}: header must read '# mesh <hash> nodes <count>'")
        n = int(header[4])
        data = np.loadtxt(fh, dtype=float, ndmin=2)
    if data.shape != (n, n):
        raise KernelError(f"{path}: expected {n}x{n} samples, found {data.shape}")
    return KernelSpec(samples=data, sample_hash=header[2])


# ----------------------------------------------------------------------------
# quadrature
# ----------------------------------------------------------------------------

def _sym_matrix(K: np.ndarray, w: np.ndarray) -> np.ndarray:
    s = np.sqrt(w)
    return s[:, None] * K * s[None, :]


def singular_values(K: KernelSpec, g: MetricGraph, h: float, root: GraphPoint | None = None,
                    mesh: Mesh | None = None) -> np.ndarray:
    """Singular values of ``W^1/2 K W^1/2`` (trapezoid weights ``W``), descending.

    A direct SVD keeps small singular values accurate; squaring into the Gram
    matrix would floor them near ``1e-8 s_1``.
    """
    root = root if root is not None else GraphPoint.at_vertex(sorted(g.vertices)[0])
    mesh = mesh if mesh is not None else build_mesh(g, None, root, h)
    S = _sym_matrix(K.matrix(mesh, root), mesh.quadrature_weights())
    return sla.svdvals(S)


def _derivative_energy(Kmat: np.ndarray, mesh: Mesh, wy: np.ndarray) -> float:
    """``int int |d_x K|^2`` for the interpolant that is linear in ``x`` on each element."""
    i, j = mesh.elements[:, 0], mesh.elements[:, 1]
    hx = mesh.element_h
    D = (Kmat[j] - Kmat[i]) / hx[:, None]
    return float(np.sum(hx[:, None] * D * D * wy[None, :]))


def m_functional(K: KernelSpec, g: MetricGraph, h: float, root: GraphPoint | None = None,
                 mesh: Mesh | None = None, richardson_tol: float = 1e-3) -> tuple[float, float]:
    """``(M, D)`` with ``D = int int |d_x K|^2`` and ``M = int int |K|^2 + |G|^2 D``.

    For expression kernels ``D`` is recomputed with the ``x`` mesh halved; a
    relative change above ``richardson_tol`` raises :class:`UnderResolvedError`.
    """
    root = root if root is not None else GraphPoint.at_vertex(sorted(g.vertices)[0])
    mesh = mesh if mesh is not None else build_mesh(g, None, root, h)
    Kmat = K.matrix(mesh, root)
    w = mesh.quadrature_weights()
    sq = float(w @ (Kmat * Kmat) @ w)
    D = _derivative_energy(Kmat, mesh, w)
    if K.samples is None:
        fine = mesh.refine()
        Kf = _rows_on(K, fine, mesh, root)
        Df = _derivative_energy(Kf, fine, w)
        if abs(Df - D) > richardson_tol * max(abs(Df), 1e-300) and abs(Df - D) > 1e-14:
            raise UnderResolvedError(
                f"x-derivative of the kernel is not resolved: {D:.6g} vs {Df:.6g} after refinement")
        D = Df
    L = total_length(g)
    return sq + L * L * D, D


def _rows_on(K: KernelSpec, fine: Mesh, coarse: Mesh, root: GraphPoint) -> np.ndarray:
    """Kernel with ``x`` on ``fine`` nodes and ``y`` on ``coarse`` nodes."""
    full = K.matrix(fine, root)
    cols = np.empty(coarse.n_nodes, dtype=np.int64)
    for eid in coarse.positions:
        cols[coarse.indices[eid]] = fine.indices[eid][0::2]
    return full[:, cols]


# ----------------------------------------------------------------------------
# the series inequality
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelReport:
    s: np.ndarray
    truncation: int
    series_head: float
    tail_estimate: float
    series: float
    M: float
    D: float
    total_length: float
    vanishes: bool
    fin_margins: np.ndarray
    decay_monotone: bool
    ok_z: bool
    ok_zz: bool | None
    ok_fin: bool
    tail_ok: bool

    @property
    def ok(self) -> bool:
        return self.ok_z and self.ok_fin and self.ok_zz is not False

    @property
    def constant_z(self) -> float:
        """Smallest ``C`` with ``series <= C |G|^2 M`` on this kernel."""
        den = self.total_length ** 2 * self.M
        return self.series / den if den > 0 else 0.0

    @property
    def constant_zz(self) -> float | None:
        den = self.total_length ** 2 * self.D
        if not self.vanishes:
            return None
        return self.series / den if den > 0 else 0.0

    @property
    def constant_fin(self) -> float:
        """``max_n s_n n^(3/2) / M^(1/2)``."""
        if self.M <= 0 or self.truncation == 0:
            return 0.0
        n = np.arange(1, self.truncation + 1)
        return float(np.max(self.s[: self.truncation] * n ** 1.5) / math.sqrt(self.M))

    def to_json(self) -> dict:
        return {
            "s": self.s[: self.truncation].tolist(), "truncation": self.truncation,
            "series_head": self.series_head, "tail_estimate": self.tail_estimate, "series": self.series,
            "M": self.M, "D": self.D, "total_length": self.total_length, "vanishes": self.vanishes,
            "bound_z": 32 * self.total_length ** 2 * self.M,
            "bound_zz": 8 * self.total_length ** 2 * self.D if self.vanishes else None,
            "min_fin_margin": float(np.min(self.fin_margins)) if len(self.fin_margins) else None,
            "constant_z": self.constant_z, "constant_zz": self.constant_zz, "constant_fin": self.constant_fin,
            "decay_monotone": self.decay_monotone, "tail_ok": self.tail_ok,
            "ok_z": self.ok_z, "ok_zz": self.ok_zz, "ok_fin": self.ok_fin, "ok": self.ok,
        }


def _tail(terms: np.ndarray) -> float:
    """Power-law extrapolation of ``sum_{n>N} t_n`` from the last decade of terms."""
    N = len(terms)
    lo = max(1, N // 10)
    n = np.arange(lo, N + 1)
    t = terms[lo - 1:]
    keep = t > 0
    if N < 8 or keep.sum() < 4:
        return 0.0
    p, logc = np.polyfit(np.log(n[keep]), np.log(t[keep]), 1)
    if p >= -1.0:
        return math.inf
    return float(math.exp(logc) * (N + 0.5) ** (p + 1) / (-p - 1))


def check_kernel_bounds(K: KernelSpec, g: MetricGraph, root: GraphPoint, h: float, rtol: float = 1e-9,
                    tail_tol: float = 1e-3, rank_tol: float = 1e-10) -> KernelReport:
    """Series bound with constant 32, the vanishing-kernel bound with constant 8, and the per-index bound."""
    mesh = build_mesh(g, None, root, h)
    Kmat = K.matrix(mesh, root)
    L = total_length(g)
    s = singular_values(K, g, h, root, mesh)
    M, D = m_functional(K, g, h, root, mesh)
    if K.vanishes is None:
        r = mesh.node_index(root)
        vanishes = bool(np.all(np.abs(Kmat[r]) <= VANISH_TOL * np.max(np.abs(Kmat), initial=0.0)))
    else:
        vanishes = K.vanishes
    resolved = int(np.sum(s > rank_tol * s[0])) if len(s) and s[0] > 0 else 0
    N = min(resolved, mesh.n_nodes // 4)
    n = np.arange(1, N + 1)
    terms = n ** 2 * s[:N] ** 2
    head = math.fsum(terms)
    tail = _tail(terms) if N == mesh.n_nodes // 4 else 0.0
    tail_ok = tail <= tail_tol * head if head > 0 else True
    if not tail_ok:
        raise UnderResolvedError(f"series tail {tail:.3g} exceeds {tail_tol:g} of the head {head:.6g}; use a smaller h")
    series = head + tail
    ok_z = series <= 32 * L * L * M * (1 + rtol)
    ok_zz = series <= 8 * L * L * D * (1 + rtol) if vanishes else None
    fin_rhs = 4 * math.sqrt(6) * n ** -1.5 * math.sqrt(M)
    fin_margins = fin_rhs - s[:N]
    ok_fin = bool(np.all(s[:N] <= fin_rhs * (1 + rtol)))
    scaled = s[:N] * n ** 1.5
    decay = bool(np.all(np.diff(scaled) <= 1e-6 * scaled[:-1])) if N > 1 else True
    return KernelReport(s, N, head, tail, series, M, D, L, vanishes, fin_margins, decay,
                        bool(ok_z), ok_zz if ok_zz is None else bool(ok_zz), ok_fin, bool(tail_ok))
