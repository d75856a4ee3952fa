"""Rooted metric trees, superadditive set functions and the balanced tree partition.

The partition routine follows the constructive argument: walk from a boundary
vertex along the branch of largest ``phi`` until ``phi`` of the forward part
drops through the threshold, cut there, and recurse on the backward part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np

from .functions import PiecewiseLinear
from .graph import Edge, GraphPoint, MetricGraph, Weight, distance, insert_vertex, total_length, validate

__all__ = [
    "Fragment", "Subtree", "PuncturedSubtree", "Partition", "RootedTree", "CutReport", "SplitResult",
    "SuperadditiveFn", "Measure", "Mass", "HolderProduct", "SetFunction", "phi_v", "phi_l",
    "cut_cycles", "canonical_partition", "phi_tilde", "split_once", "partition_n",
    "split_at_points", "random_subtree", "check_superadditive", "StepFunction", "step_projection",
    "approx_bound_check", "higher_order_constant", "graph_partition",
]


# ----------------------------------------------------------------------------
# fragments and subtrees
# ----------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class Fragment:
    edge: str
    a: float
    b: float

    @property
    def length(self) -> float:
        return self.b - self.a


def _normalize(fragments: Iterable[Fragment]) -> tuple[Fragment, ...]:
    out: list[Fragment] = []
    for f in sorted(f for f in fragments if f.b > f.a):
        if out and out[-1].edge == f.edge and f.a <= out[-1].b:
            prev = out[-1]
            out[-1] = Fragment(f.edge, prev.a, max(prev.b, f.b))
        else:
            out.append(f)
    return tuple(out)


class Subtree:
    """Connected union of edge fragments of ``graph``.

    A subtree of measure zero is a single point, kept in ``anchor``.  After
    pushing a tree partition forward to a graph the same type also describes
    connected subgraphs that need not be trees.
    """

    def __init__(self, graph: MetricGraph, fragments: Iterable[Fragment] = (),
                 anchor: GraphPoint | None = None):
        self.graph = graph
        self.fragments = _normalize(fragments)
        if not self.fragments and anchor is None:
            raise ValueError("a one-point subtree needs an anchor point")
        self.anchor = None if self.fragments else anchor

    @classmethod
    def whole(cls, g: MetricGraph) -> "Subtree":
        return cls(g, [Fragment(e.id, 0.0, e.length) for e in g.edges])

    @classmethod
    def point(cls, g: MetricGraph, p: GraphPoint) -> "Subtree":
        return cls(g, (), anchor=p)

    def __eq__(self, other):
        return (isinstance(other, Subtree) and self.graph is other.graph
                and self.fragments == other.fragments and self.anchor == other.anchor)

    def __hash__(self):
        return hash((self.fragments, self.anchor))

    def __repr__(self):
        if self.anchor is not None:
            return f"Subtree(point={self.anchor!r})"
        inner = ", ".join(f"{f.edge}[{f.a:.6g},{f.b:.6g}]" for f in self.fragments)
        return f"Subtree({inner})"

    @property
    def is_point(self) -> bool:
        return self.anchor is not None

    @cached_property
    def measure(self) -> float:
        return math.fsum(f.length for f in self.fragments)

    def integral(self, V: Weight) -> float:
        return math.fsum(V[f.edge].integral(f.a, f.b) for f in self.fragments)

    def ends(self, f: Fragment) -> tuple[GraphPoint, GraphPoint]:
        return self.graph.point(f.edge, f.a), self.graph.point(f.edge, f.b)

    @cached_property
    def adjacency(self) -> dict[GraphPoint, list[tuple[Fragment, GraphPoint]]]:
        adj: dict[GraphPoint, list[tuple[Fragment, GraphPoint]]] = {}
        for f in self.fragments:
            p, q = self.ends(f)
            adj.setdefault(p, []).append((f, q))
            adj.setdefault(q, []).append((f, p))
        return adj

    @cached_property
    def boundary(self) -> list[GraphPoint]:
        if self.anchor is not None:
            return [self.anchor]
        return sorted((p for p, nb in self.adjacency.items() if len(nb) == 1), key=GraphPoint.sort_key)

    def degree(self, x: GraphPoint) -> int:
        if self.anchor is not None:
            return 0
        if self._interior_fragment(x) is not None:
            return 2
        return len(self.adjacency.get(x, ()))

    def _interior_fragment(self, x: GraphPoint) -> Fragment | None:
        if x.edge is None:
            return None
        for f in self.fragments:
            if f.edge == x.edge and f.a < x.t < f.b:
                return f
        return None

    def contains(self, x: GraphPoint) -> bool:
        if self.anchor is not None:
            return x == self.anchor
        return x in self.adjacency or self._interior_fragment(x) is not None

    def is_connected(self) -> bool:
        if self.anchor is not None:
            return True
        start = next(iter(self.adjacency))
        seen = {start}
        stack = [start]
        while stack:
            for _, q in self.adjacency[stack.pop()]:
                if q not in seen:
                    seen.add(q)
                    stack.append(q)
        return len(seen) == len(self.adjacency)

    def beyond(self, p: GraphPoint, exclude: Fragment | None) -> list[Fragment]:
        """Fragments reachable from ``p`` without crossing ``exclude`` (tree frames only)."""
        out: list[Fragment] = []
        seen = {exclude} if exclude is not None else set()
        stack = [p]
        visited = {p}
        while stack:
            q = stack.pop()
            for f, r in self.adjacency.get(q, ()):
                if f in seen:
                    continue
                seen.add(f)
                out.append(f)
                if r not in visited:
                    visited.add(r)
                    stack.append(r)
        return out

    def overlap_measure(self, other: "Subtree") -> float:
        total = 0.0
        for f in self.fragments:
            for h in other.fragments:
                if f.edge == h.edge:
                    total += max(0.0, min(f.b, h.b) - max(f.a, h.a))
        return total

    def to_json(self) -> dict:
        if self.anchor is not None:
            return {"point": self.anchor.to_json(), "fragments": []}
        return {"fragments": [{"edge": f.edge, "from": f.a, "to": f.b} for f in self.fragments]}


@dataclass(frozen=True, eq=False)
class PuncturedSubtree:
    tree: Subtree
    point: GraphPoint

    def __post_init__(self):
        if not self.tree.contains(self.point):
            raise ValueError(f"puncture {self.point!r} not in {self.tree!r}")


# ----------------------------------------------------------------------------
# superadditive set functions
# ----------------------------------------------------------------------------

class SuperadditiveFn:
    """Nonnegative continuous superadditive function of subtrees.

    Subclasses implement :meth:`evaluate` on a list of pairwise disjoint
    fragments; calling the object on a :class:`Subtree` delegates to it.
    """

    name = "phi"

    def evaluate(self, graph: MetricGraph, fragments: Sequence[Fragment]) -> float:
        raise NotImplementedError

    def __call__(self, T: Subtree) -> float:
        return self.evaluate(T.graph, T.fragments)


class Measure(SuperadditiveFn):
    name = "measure"

    def evaluate(self, graph, fragments):
        return math.fsum(f.b - f.a for f in fragments)


class Mass(SuperadditiveFn):
    """Integral of a nonnegative weight."""

    name = "mass"

    def __init__(self, V: Weight):
        if not V.is_nonnegative():
            raise ValueError("mass needs a nonnegative weight")
        self.V = V

    def evaluate(self, graph, fragments):
        V = self.V.edges
        return math.fsum(V[f.edge].integral(f.a, f.b) for f in fragments)


class HolderProduct(SuperadditiveFn):
    """``phi1 ** alpha * phi2 ** (1 - alpha)`` with ``0 < alpha < 1``."""

    def __init__(self, phi1: SuperadditiveFn, phi2: SuperadditiveFn, alpha: float, name: str | None = None):
        if not 0.0 < alpha < 1.0:
            raise ValueError("Hoelder exponent must lie strictly between 0 and 1")
        self.phi1, self.phi2, self.alpha = phi1, phi2, float(alpha)
        self.name = name or f"{phi1.name}^{alpha:g}*{phi2.name}^{1 - alpha:g}"

    def evaluate(self, graph, fragments):
        a = self.phi1.evaluate(graph, fragments)
        b = self.phi2.evaluate(graph, fragments)
        if a <= 0.0 or b <= 0.0:
            return 0.0
        return a ** self.alpha * b ** (1.0 - self.alpha)


class SetFunction(SuperadditiveFn):
    """Wrap an arbitrary callable ``Subtree -> float`` (the caller vouches for superadditivity)."""

    def __init__(self, fn: Callable[[Subtree], float], name: str = "custom"):
        self.fn = fn
        self.name = name

    def evaluate(self, graph, fragments):
        if not fragments:
            return 0.0
        return float(self.fn(Subtree(graph, fragments)))


def phi_v(V: Weight) -> HolderProduct:
    """``|T|^(1/2) (int_T V)^(1/2)``."""
    return HolderProduct(Measure(), Mass(V), 0.5, name="phi_V")


def phi_l(V: Weight, l: int) -> HolderProduct:
    """``|T|^(1 - 1/(2l)) (int_T V)^(1/(2l))``."""
    if l < 1:
        raise ValueError("l must be a positive integer")
    if l == 1:
        return phi_v(V)
    return HolderProduct(Measure(), Mass(V), 1.0 - 1.0 / (2 * l), name=f"phi_{l}")


# ----------------------------------------------------------------------------
# rooted trees
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RootedTree:
    graph: MetricGraph
    root: str

    def __post_init__(self):
        problems = validate(self.graph)
        if problems:
            raise ValueError("; ".join(problems))
        if len(self.graph.edges) != len(self.graph.vertices) - 1:
            raise ValueError("graph is not a tree (#edges != #vertices - 1)")
        if self.root not in self.graph.vertices:
            raise ValueError(f"unknown root {self.root!r}")

    @classmethod
    def from_point(cls, g: MetricGraph, root: GraphPoint, V: Weight | None = None
                   ) -> tuple["RootedTree", Weight]:
        """Root at ``root``; an interior root splits its edge first."""
        V = V if V is not None else Weight.zero(g)
        g2, V2, vid = insert_vertex(g, V, root)
        return cls(g2, vid), V2

    @cached_property
    def orientation(self) -> dict[str, tuple[str, str]]:
        """Edge id -> (parent vertex, child vertex)."""
        g = self.graph
        out = {}
        stack = [self.root]
        seen = {self.root}
        while stack:
            v = stack.pop()
            for eid in g.incident[v]:
                w = g.other_end(eid, v)
                if w not in seen:
                    seen.add(w)
                    out[eid] = (v, w)
                    stack.append(w)
        return out

    @property
    def root_point(self) -> GraphPoint:
        return GraphPoint.at_vertex(self.root)

    def whole(self) -> Subtree:
        return Subtree.whole(self.graph)

    def precedes(self, x: GraphPoint, y: GraphPoint, tol: float = 1e-12) -> bool:
        """``x`` lies on the path from the root to ``y``."""
        g, r = self.graph, self.root_point
        slack = tol * total_length(g)
        return distance(g, r, x) + distance(g, x, y) <= distance(g, r, y) + slack


# ----------------------------------------------------------------------------
# cycle cutting
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CutReport:
    """A tree obtained by cutting every independent cycle once, and the map back.

    ``tau[tree_edge] = (graph_edge, a, b)``: the tree edge is carried
    isometrically, in the same direction, onto ``[a, b]`` of the graph edge.
    """

    graph: MetricGraph
    tree: MetricGraph
    tau: dict[str, tuple[str, float, float]]
    pairs: tuple[tuple[str, str], ...]

    @property
    def cuts(self) -> int:
        return len(self.pairs)

    def map_point(self, p: GraphPoint) -> GraphPoint:
        if p.vertex is not None:
            for x1, x2 in self.pairs:
                if p.vertex in (x1, x2):
                    eid = self.tree.incident[p.vertex][0]
                    ge, a, _ = self.tau[eid]
                    return self.graph.point(ge, a + self.tree.vertex_offset(eid, p.vertex))
            return p
        ge, a, _ = self.tau[p.edge]
        return self.graph.point(ge, a + p.t)

    def push_fragment(self, f: Fragment) -> Fragment:
        ge, a, _ = self.tau[f.edge]
        return Fragment(ge, a + f.a, a + f.b)

    def push_subtree(self, T: Subtree) -> Subtree:
        if T.is_point:
            return Subtree.point(self.graph, self.map_point(T.anchor))
        return Subtree(self.graph, [self.push_fragment(f) for f in T.fragments])

    def pull_weight(self, V: Weight) -> Weight:
        return Weight({te: V[ge].restrict(a, b) if (a, b) != (0.0, self.graph.length(ge)) else V[ge]
                       for te, (ge, a, b) in self.tau.items()})

    def pull_function(self, u: PiecewiseLinear) -> PiecewiseLinear:
        nodes = {}
        for te, (ge, a, b) in self.tau.items():
            xs, ys = u.nodes[ge]
            inner = (xs > a) & (xs < b)
            pos = np.concatenate(([a], xs[inner], [b]))
            vals = np.concatenate(([u.edge_value(ge, a)], ys[inner], [u.edge_value(ge, b)]))
            nodes[te] = (pos - a, vals)
        return PiecewiseLinear(self.tree, nodes)


def _is_bridge(edges: list[Edge], vertices: Sequence[str], eid: str) -> bool:
    parent = {v: v for v in vertices}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for e in edges:
        if e.id != eid:
            parent[find(e.tail)] = find(e.head)
    roots = {find(v) for v in vertices}
    return len(roots) > 1


def cut_cycles(g: MetricGraph) -> CutReport:
    """Cut the smallest-id cycle edge at its midpoint until the graph is a tree."""
    vertices = list(g.vertices)
    edges = list(g.edges)
    tau = {e.id: (e.id, 0.0, e.length) for e in edges}
    pairs = []
    while len(edges) > len(vertices) - 1:
        for e in sorted(edges, key=lambda e: e.id):
            if not _is_bridge(edges, vertices, e.id):
                break
        else:  # pragma: no cover - a connected graph with a cycle has a non-bridge
            raise RuntimeError("no cycle edge found")
        ge, a, b = tau.pop(e.id)
        half = e.length / 2.0
        x1, x2 = f"{e.id}#1", f"{e.id}#2"
        e1 = Edge(f"{e.id}/1", e.tail, x1, half)
        e2 = Edge(f"{e.id}/2", x2, e.head, e.length - half)
        tau[e1.id] = (ge, a, a + half)
        tau[e2.id] = (ge, a + half, b)
        idx = edges.index(e)
        edges[idx:idx + 1] = [e1, e2]
        vertices += [x1, x2]
        pairs.append((x1, x2))
    return CutReport(g, MetricGraph(tuple(vertices), tuple(edges)), tau, tuple(pairs))


# ----------------------------------------------------------------------------
# canonical partition and the punctured function
# ----------------------------------------------------------------------------

def canonical_partition(T: Subtree, x: GraphPoint) -> list[Subtree]:
    """Branches of ``T`` at ``x``; each meets ``x`` with degree one."""
    if not T.contains(x):
        raise ValueError(f"{x!r} is not a point of {T!r}")
    if T.is_point:
        return []
    g = T.graph
    f = T._interior_fragment(x)
    if f is not None:
        pa, pb = T.ends(f)
        left = [Fragment(f.edge, f.a, x.t), *T.beyond(pa, f)]
        right = [Fragment(f.edge, x.t, f.b), *T.beyond(pb, f)]
        return [Subtree(g, left), Subtree(g, right)]
    return [Subtree(g, [h, *T.beyond(q, h)]) for h, q in T.adjacency[x]]


def phi_tilde(phi: SuperadditiveFn, T: Subtree, x: GraphPoint) -> float:
    return max((phi(b) for b in canonical_partition(T, x)), default=0.0)


# ----------------------------------------------------------------------------
# single split
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SplitResult:
    piece: PuncturedSubtree
    rest: Subtree
    eps: float
    start: GraphPoint
    trace: tuple[tuple[GraphPoint, float], ...] = field(repr=False)

    @property
    def point(self) -> GraphPoint:
        return self.piece.point


def _key(f: Fragment):
    return (f.edge, f.a)


def split_once(T: Subtree | RootedTree, phi: SuperadditiveFn, eps: float,
               root: GraphPoint | None = None, rtol: float = 1e-12) -> SplitResult:
    """Split ``T = piece U rest`` with ``phi(rest) <= phi(T) - eps`` and ``phi~(piece, x) <= eps``.

    ``trace`` lists the values of ``F(x) = phi(T_x^+)`` met along the walk,
    including right limits after each vertex; it is non-increasing.
    """
    if isinstance(T, RootedTree):
        root = T.root_point if root is None else root
        T = T.whole()
    g = T.graph
    total = phi(T)
    if not 0.0 < eps < total:
        raise ValueError(f"eps={eps} must lie in (0, phi(T)={total})")
    ev = phi.evaluate
    beyond_cache: dict[tuple[GraphPoint, Fragment], list[Fragment]] = {}

    def beyond(p, f):
        key = (p, f)
        if key not in beyond_cache:
            beyond_cache[key] = T.beyond(p, f)
        return beyond_cache[key]

    boundary = T.boundary
    v = root if root is not None and root in boundary else boundary[0]
    start = v
    incoming: Fragment | None = None
    trace = [(v, total)]
    while True:
        options = [(f, q) for f, q in T.adjacency[v] if f != incoming]
        if not options:  # pragma: no cover - F reaches 0 < eps before a leaf
            raise RuntimeError("walk reached a leaf without crossing eps")
        branches = [(ev(g, [f, *beyond(q, f)]), f, q) for f, q in sorted(options, key=lambda o: _key(o[0]))]
        best_val, best_f, best_q = branches[0]
        for b in branches[1:]:
            if b[0] > best_val:  # ties keep the smallest (edge id, offset)
                best_val, best_f, best_q = b
        if best_val <= eps:
            # accept the vertex v; F(v) >= eps holds by construction
            plus = [h for _, f, q in branches for h in (f, *beyond(q, f))]
            minus = [incoming, *beyond(_other(T, incoming, v), incoming)] if incoming else []
            rest = Subtree(g, minus) if minus else Subtree.point(g, v)
            trace.append((v, best_val))
            return SplitResult(PuncturedSubtree(Subtree(g, plus), v), rest, eps, start, tuple(trace))
        trace.append((v, best_val))
        # move along best_f from v towards best_q
        w = best_q
        after = beyond(w, best_f)
        F_w = ev(g, after) if after else 0.0
        if F_w >= eps:
            trace.append((w, F_w))
            incoming, v = best_f, w
            continue
        # crossing inside the open fragment: bisection on the edge parameter
        f = best_f
        forward = T.ends(f)[0] == v  # walking from f.a to f.b
        lo, hi = (f.a, f.b) if forward else (f.b, f.a)

        def F(t):
            part = Fragment(f.edge, t, f.b) if forward else Fragment(f.edge, f.a, t)
            return ev(g, [part, *after])

        tol = 1e-12 * (f.b - f.a)
        while abs(hi - lo) > tol:
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            if F(mid) >= eps:
                lo = mid
            else:
                hi = mid
        x = g.point(f.edge, lo)
        if x == v:
            # crossing within rounding of the vertex: cut at the vertex on this branch
            plus = [f, *after]
            minus = [h for h2, q in T.adjacency[v] if h2 != f for h in (h2, *beyond(q, h2))]
        else:
            plus = [Fragment(f.edge, lo, f.b) if forward else Fragment(f.edge, f.a, lo), *after]
            back = Fragment(f.edge, f.a, lo) if forward else Fragment(f.edge, lo, f.b)
            minus = [back, *beyond(v, f)]
        trace.append((x, F(lo)))
        rest = Subtree(g, minus) if minus else Subtree.point(g, x)
        return SplitResult(PuncturedSubtree(Subtree(g, plus), x), rest, eps, start, tuple(trace))


def _other(T: Subtree, f: Fragment, p: GraphPoint) -> GraphPoint:
    a, b = T.ends(f)
    return b if a == p else a


# ----------------------------------------------------------------------------
# partitions
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Partition:
    whole: Subtree
    pieces: tuple[PuncturedSubtree, ...]
    n: int
    total: float

    @property
    def k(self) -> int:
        return len(self.pieces)

    @property
    def bound(self) -> float:
        return self.total / (self.n + 1)

    def phi_tildes(self, phi: SuperadditiveFn) -> list[float]:
        return [phi_tilde(phi, p.tree, p.point) for p in self.pieces]

    def coverage_defect(self) -> float:
        return abs(math.fsum(p.tree.measure for p in self.pieces) - self.whole.measure)

    def max_overlap(self) -> float:
        ps = [p.tree for p in self.pieces]
        return max((ps[i].overlap_measure(ps[j]) for i in range(len(ps)) for j in range(i)), default=0.0)

    def certificate(self, phi: SuperadditiveFn, rtol: float = 1e-9) -> dict:
        tildes = self.phi_tildes(phi)
        worst = max(tildes, default=0.0)
        scale = self.whole.measure
        ok = (self.k <= self.n
              and worst <= self.bound + rtol * self.total
              and self.coverage_defect() <= 1e-12 * scale
              and self.max_overlap() <= 1e-12 * scale)
        return {"ok": bool(ok), "k": self.k, "n": self.n, "max_phi_tilde": worst,
                "bound": self.bound, "margin": self.bound - worst,
                "coverage_defect": self.coverage_defect(), "max_overlap": self.max_overlap()}

    def to_json(self, phi: SuperadditiveFn) -> dict:
        pieces = []
        for p in self.pieces:
            pieces.append({**p.tree.to_json(), "puncture": p.point.to_json(),
                           "phi": phi(p.tree), "phi_tilde": phi_tilde(phi, p.tree, p.point)})
        return {"n": self.n, "k": self.k, "phi": phi.name, "phi_total": self.total,
                "bound": self.bound, "pieces": pieces}


def partition_n(T: Subtree | RootedTree, phi: SuperadditiveFn, n: int,
                root: GraphPoint | None = None) -> Partition:
    """Split into ``k <= n`` punctured subtrees with ``max phi~ <= phi(T) / (n + 1)``."""
    if n < 1:
        raise ValueError("n must be a positive integer")
    if isinstance(T, RootedTree):
        root = T.root_point if root is None else root
        T = T.whole()
    total = phi(T)
    pieces = _partition(T, phi, n, root)
    return Partition(T, tuple(pieces), n, total)


def _partition(T: Subtree, phi: SuperadditiveFn, n: int, root: GraphPoint | None) -> list[PuncturedSubtree]:
    total = phi(T)
    if total <= 0.0:
        x = root if root is not None and T.contains(root) else (T.anchor or T.boundary[0])
        return [PuncturedSubtree(T, x)]
    if n == 1:
        s = split_once(T, phi, total / 2.0, root)
        return [PuncturedSubtree(T, s.point)]
    s = split_once(T, phi, total / (n + 1), root)
    sub_root = root if root is not None and s.rest.contains(root) else None
    return _partition(s.rest, phi, n - 1, sub_root) + [s.piece]


def graph_partition(g: MetricGraph, V: Weight, n: int) -> tuple[list[PuncturedSubtree], CutReport, Partition]:
    """Partition of an arbitrary graph: cut cycles, partition the tree with ``phi_V``, push forward."""
    rep = cut_cycles(g)
    tree = RootedTree(rep.tree, rep.tree.boundary[0])
    Vt = rep.pull_weight(V)
    part = partition_n(tree, phi_v(Vt), n)
    pieces = [PuncturedSubtree(rep.push_subtree(p.tree), rep.map_point(p.point)) for p in part.pieces]
    return pieces, rep, part


# ----------------------------------------------------------------------------
# random subtrees and the superadditivity checker
# ----------------------------------------------------------------------------

def random_subtree(g: MetricGraph, rng: np.random.Generator, budget: float | None = None) -> Subtree:
    """Grow a connected fragment set from a random point until a length budget is spent (trees only)."""
    edges = sorted(g.edges, key=lambda e: e.id)
    lengths = np.array([e.length for e in edges])
    e = edges[int(rng.choice(len(edges), p=lengths / lengths.sum()))]
    t = float(rng.uniform(0.0, e.length))
    if budget is None:
        budget = float(rng.uniform(0.0, 1.2)) * total_length(g)
    frontier = [(e.id, t, +1), (e.id, t, -1)]
    frags = []
    while frontier and budget > 0.0:
        eid, s, d = frontier.pop(int(rng.integers(len(frontier))))
        L = g.length(eid)
        room = L - s if d > 0 else s
        step = min(room, budget)
        budget -= step
        if step <= 0.0:
            continue
        full = step == room
        if d > 0:
            frags.append(Fragment(eid, s, L if full else min(s + step, L)))
        else:
            frags.append(Fragment(eid, 0.0 if full else max(s - step, 0.0), s))
        if full:
            v = g.edge_map[eid].head if d > 0 else g.edge_map[eid].tail
            for f in g.incident[v]:
                if f != eid:
                    fe = g.edge_map[f]
                    frontier.append((f, 0.0, +1) if fe.tail == v else (f, fe.length, -1))
    if not frags:
        return Subtree.point(g, g.point(e.id, t))
    return Subtree(g, frags)


def split_at_points(T: Subtree, points: Iterable[GraphPoint]) -> list[Subtree]:
    """Partition ``T`` by cutting it at the given points."""
    g = T.graph
    cuts = {p for p in points if T.contains(p)}
    if T.is_point:
        return [T]
    pieces: list[Fragment] = []
    for f in T.fragments:
        ts = sorted({p.t for p in cuts if p.edge == f.edge and f.a < p.t < f.b})
        grid = [f.a, *ts, f.b]
        pieces.extend(Fragment(f.edge, a, b) for a, b in zip(grid, grid[1:]))
    parent = list(range(len(pieces)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    at: dict[GraphPoint, list[int]] = {}
    for i, f in enumerate(pieces):
        for p in (g.point(f.edge, f.a), g.point(f.edge, f.b)):
            at.setdefault(p, []).append(i)
    for p, idx in at.items():
        if p not in cuts:
            for i in idx[1:]:
                parent[find(i)] = find(idx[0])
    groups: dict[int, list[Fragment]] = {}
    for i, f in enumerate(pieces):
        groups.setdefault(find(i), []).append(f)
    return [Subtree(g, fs) for _, fs in sorted(groups.items())]


def _random_points(T: Subtree, rng: np.random.Generator, k: int) -> list[GraphPoint]:
    lengths = np.array([f.length for f in T.fragments])
    out = []
    vertices = [p for p in T.adjacency if p.vertex is not None]
    for _ in range(k):
        if vertices and rng.random() < 0.2:
            out.append(vertices[int(rng.integers(len(vertices)))])
            continue
        f = T.fragments[int(rng.choice(len(lengths), p=lengths / lengths.sum()))]
        t = float(rng.uniform(f.a, f.b))
        if f.a < t < f.b:
            out.append(T.graph.point(f.edge, t))
    return out


def check_superadditive(phi: SuperadditiveFn, tree: RootedTree | MetricGraph, trials: int,
                        rng: np.random.Generator, max_cuts: int = 6, rtol: float = 1e-12) -> dict:
    """Randomised test of superadditivity and monotonicity; worst relative margin reported."""
    g = tree.graph if isinstance(tree, RootedTree) else tree
    worst_sum = math.inf
    worst_mono = math.inf
    violations = []
    for trial in range(trials):
        T = random_subtree(g, rng)
        if T.is_point:
            continue
        whole = phi(T)
        parts = split_at_points(T, _random_points(T, rng, int(rng.integers(1, max_cuts + 1))))
        vals = [phi(p) for p in parts]
        scale = max(whole, 1e-300)
        m_sum = (whole - math.fsum(vals)) / scale
        m_mono = min((whole - v) / scale for v in vals)
        worst_sum = min(worst_sum, m_sum)
        worst_mono = min(worst_mono, m_mono)
        if m_sum < -rtol or m_mono < -rtol:
            violations.append({"trial": trial, "subtree": T.to_json(), "parts": [p.to_json() for p in parts],
                               "sum_margin": m_sum, "monotone_margin": m_mono})
    return {"phi": phi.name, "trials": trials, "worst_sum_margin": worst_sum,
            "worst_monotone_margin": worst_mono, "violations": violations, "ok": not violations}


# ----------------------------------------------------------------------------
# step projection and the approximation bound
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StepFunction:
    """Constant ``values[j]`` on ``pieces[j]``."""

    pieces: tuple[PuncturedSubtree, ...]
    values: tuple[float, ...]

    @property
    def rank(self) -> int:
        return len(set(self.values)) if self.values else 0

    def value_at(self, p: GraphPoint) -> float:
        for piece, v in zip(self.pieces, self.values):
            if piece.tree.contains(p):
                return v
        raise ValueError(f"{p!r} is not covered")


def step_projection(pieces: Partition | Sequence[PuncturedSubtree], u) -> StepFunction:
    """``u -> sum_j u(x_j) chi_j``; ``u`` is a callable on points or a step function on the same pieces."""
    if isinstance(pieces, Partition):
        pieces = pieces.pieces
    pieces = tuple(pieces)
    if isinstance(u, StepFunction):
        if tuple(id(p) for p in u.pieces) != tuple(id(p) for p in pieces):
            raise ValueError("step function lives on a different partition")
        return StepFunction(pieces, u.values)
    return StepFunction(pieces, tuple(float(u(p.point)) for p in pieces))


def projection_error(u: PiecewiseLinear, V: Weight, pieces: Sequence[PuncturedSubtree]) -> float:
    """Exact ``int |u - Pu|^2 V``."""
    total = []
    for p in pieces:
        c = u(p.point)
        total.extend(u.weighted_sq_integral(V, f.edge, f.a, f.b, c) for f in p.tree.fragments)
    return math.fsum(total)


def approx_bound_check(g: MetricGraph, V: Weight, n: int, trials: int, rng: np.random.Generator,
                       rtol: float = 1e-9) -> dict:
    """Check ``int |u - Pu|^2 V <= |G| int V (n+1)^-2 ||u'||^2`` on random piecewise-linear ``u``."""
    if not V.is_nonnegative():
        raise ValueError("approximation bound needs a nonnegative weight")
    pieces, rep, _ = graph_partition(g, V, n)
    L, mass = total_length(g), V.integral()
    factor = L * mass / (n + 1) ** 2
    worst = 0.0
    violations = []
    for trial in range(trials):
        u = PiecewiseLinear.random(g, rng)
        lhs = projection_error(u, V, pieces)
        rhs = factor * u.dirichlet_energy()
        if rhs > 0:
            worst = max(worst, lhs / rhs)
        if lhs > rhs * (1 + rtol) + 1e-300:
            violations.append({"trial": trial, "lhs": lhs, "rhs": rhs})
    return {"n": n, "k": len(pieces), "trials": trials, "cuts": rep.cuts, "max_ratio": worst,
            "violations": violations, "ok": not violations}


def higher_order_constant(l: int) -> float:
    """``l^(2l) / (((l-1)!)^2 (2l-1))``."""
    if l < 1:
        raise ValueError("l must be a positive integer")
    exact = Fraction(l ** (2 * l), math.factorial(l - 1) ** 2 * (2 * l - 1))
    try:
        return float(exact)
    except OverflowError as exc:
        raise OverflowError(f"C({l}) exceeds the floating-point range") from exc
