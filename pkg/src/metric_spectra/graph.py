"""Finite metric graphs: data model, validation, file format and metric geometry."""

from __future__ import annotations

import bisect
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .errors import GraphFormatError, GraphValidationError


@dataclass(frozen=True)
class Edge:
    id: str
    tail: str
    head: str
    length: float


@dataclass(frozen=True, order=True)
class GraphPoint:
    """A location on a metric graph.

    Vertex points carry ``vertex`` and leave ``edge`` empty; interior points
    carry ``edge`` and the arclength offset ``t`` measured from the edge tail.
    Use :meth:`MetricGraph.point` to build points so that offsets 0 and
    ``length`` collapse onto the endpoint vertex.
    """

    vertex: str | None = None
    edge: str | None = None
    t: float = 0.0

    @classmethod
    def at_vertex(cls, v: str) -> "GraphPoint":
        return cls(vertex=v)

    @property
    def is_vertex(self) -> bool:
        return self.vertex is not None

    def sort_key(self) -> tuple:
        if self.vertex is not None:
            return (0, self.vertex, "", 0.0)
        return (1, "", self.edge, self.t)

    def to_json(self) -> dict:
        if self.vertex is not None:
            return {"vertex": self.vertex}
        return {"edge": self.edge, "offset": self.t}

    def __repr__(self) -> str:
        if self.vertex is not None:
            return f"GraphPoint({self.vertex!r})"
        return f"GraphPoint({self.edge!r}, t={self.t!r})"


@dataclass(frozen=True)
class MetricGraph:
    """Finite metric graph; parallel edges allowed, loops rejected by :func:`validate`."""

    vertices: tuple[str, ...]
    edges: tuple[Edge, ...]

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "edges", tuple(self.edges))

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[str, str, str, float]],
                   vertices: Sequence[str] | None = None) -> "MetricGraph":
        es = tuple(Edge(i, u, v, float(L)) for i, u, v, L in edges)
        if vertices is None:
            seen: dict[str, None] = {}
            for e in es:
                seen.setdefault(e.tail)
                seen.setdefault(e.head)
            vertices = tuple(seen)
        return cls(tuple(vertices), es)

    @cached_property
    def edge_map(self) -> dict[str, Edge]:
        return {e.id: e for e in self.edges}

    @cached_property
    def incident(self) -> dict[str, tuple[str, ...]]:
        inc: dict[str, list[str]] = {v: [] for v in self.vertices}
        for e in self.edges:
            for v in (e.tail, e.head):
                inc.setdefault(v, []).append(e.id)
        return {v: tuple(sorted(ids)) for v, ids in inc.items()}

    @cached_property
    def vertex_index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(sorted(self.vertices))}

    def degree(self, v: str) -> int:
        e = self.edge_map
        return sum(2 if e[i].tail == e[i].head else 1 for i in self.incident.get(v, ()))

    @property
    def boundary(self) -> list[str]:
        return sorted(v for v in self.vertices if self.degree(v) == 1)

    def other_end(self, edge_id: str, v: str) -> str:
        e = self.edge_map[edge_id]
        return e.head if e.tail == v else e.tail

    def length(self, edge_id: str) -> float:
        return self.edge_map[edge_id].length

    def point(self, edge_id: str, t: float) -> GraphPoint:
        e = self.edge_map[edge_id]
        t = float(t)
        if not (0.0 <= t <= e.length):
            raise ValueError(f"offset {t} outside edge {edge_id!r} of length {e.length}")
        if t == 0.0:
            return GraphPoint(vertex=e.tail)
        if t == e.length:
            return GraphPoint(vertex=e.head)
        return GraphPoint(edge=edge_id, t=t)

    def vertex_offset(self, edge_id: str, v: str) -> float:
        e = self.edge_map[edge_id]
        if v == e.tail:
            return 0.0
        if v == e.head:
            return e.length
        raise ValueError(f"vertex {v!r} is not an endpoint of {edge_id!r}")

    def contains(self, p: GraphPoint) -> bool:
        if p.vertex is not None:
            return p.vertex in self.vertices
        e = self.edge_map.get(p.edge)
        return e is not None and 0.0 < p.t < e.length

    @cached_property
    def vertex_distances(self) -> np.ndarray:
        idx = self.vertex_index
        n = len(idx)
        W = np.full((n, n), np.inf)
        np.fill_diagonal(W, 0.0)
        for e in self.edges:
            i, j = idx[e.tail], idx[e.head]
            if i != j and e.length < W[i, j]:
                W[i, j] = W[j, i] = e.length
        W[np.isinf(W)] = 0.0  # csgraph: zero means no edge
        return shortest_path(W, method="D", directed=False)


@dataclass(frozen=True)
class EdgeWeight:
    breakpoints: tuple[float, ...]
    values: tuple[float, ...]

    @cached_property
    def _cumulative(self) -> list[float]:
        out = [0.0]
        for i, v in enumerate(self.values):
            out.append(out[-1] + v * (self.breakpoints[i + 1] - self.breakpoints[i]))
        return out

    def value(self, t: float) -> float:
        i = bisect.bisect_right(self.breakpoints, t) - 1
        return self.values[min(max(i, 0), len(self.values) - 1)]

    def antiderivative(self, t: float) -> float:
        bp = self.breakpoints
        i = min(max(bisect.bisect_right(bp, t) - 1, 0), len(self.values) - 1)
        return self._cumulative[i] + self.values[i] * (t - bp[i])

    def integral(self, a: float, b: float) -> float:
        return self.antiderivative(b) - self.antiderivative(a)

    def pieces(self, a: float, b: float) -> list[tuple[float, float, float]]:
        """Constant pieces ``(lo, hi, value)`` covering ``[a, b]``."""
        if b <= a:
            return []
        bp = self.breakpoints
        out = []
        i = min(max(bisect.bisect_right(bp, a) - 1, 0), len(self.values) - 1)
        lo = a
        while lo < b:
            hi = min(b, bp[i + 1]) if i + 1 < len(bp) - 1 else b
            if hi > lo:
                out.append((lo, hi, self.values[i]))
            lo = hi
            i += 1
        return out

    def map_values(self, f) -> "EdgeWeight":
        return EdgeWeight(self.breakpoints, tuple(float(f(v)) for v in self.values))

    def restrict(self, a: float, b: float) -> "EdgeWeight":
        """Restriction to ``[a, b]`` re-parametrised to start at 0."""
        ps = self.pieces(a, b)
        bps = [0.0] + [hi - a for _, hi, _ in ps]
        bps[-1] = b - a
        return EdgeWeight(tuple(bps), tuple(v for _, _, v in ps))


@dataclass(frozen=True)
class Weight:
    """Signed piecewise-constant weight, one :class:`EdgeWeight` per edge."""

    edges: Mapping[str, EdgeWeight]

    @classmethod
    def constant(cls, g: MetricGraph, c: float = 0.0) -> "Weight":
        return cls({e.id: EdgeWeight((0.0, e.length), (float(c),)) for e in g.edges})

    @classmethod
    def zero(cls, g: MetricGraph) -> "Weight":
        return cls.constant(g, 0.0)

    @classmethod
    def from_mapping(cls, g: MetricGraph, data: Mapping[str, Mapping]) -> "Weight":
        """Build from ``{edge: {"breakpoints": [...], "values": [...]}}``; missing edges get 0."""
        out = dict(cls.zero(g).edges)
        for eid, spec in data.items():
            if eid not in g.edge_map:
                raise GraphValidationError([f"weight on unknown edge {eid!r}"])
            bps = [float(b) for b in spec["breakpoints"]]
            vals = [float(v) for v in spec["values"]]
            out[eid] = _checked_edge_weight(eid, g.edge_map[eid].length, bps, vals)
        return cls(out)

    def __getitem__(self, edge_id: str) -> EdgeWeight:
        return self.edges[edge_id]

    def value(self, p: GraphPoint, g: MetricGraph) -> float:
        if p.vertex is not None:
            eid = g.incident[p.vertex][0]
            return self.edges[eid].value(g.vertex_offset(eid, p.vertex))
        return self.edges[p.edge].value(p.t)

    def map(self, f) -> "Weight":
        return Weight({k: w.map_values(f) for k, w in self.edges.items()})

    def positive_part(self) -> "Weight":
        return self.map(lambda v: max(v, 0.0))

    def negative_part(self) -> "Weight":
        return self.map(lambda v: max(-v, 0.0))

    def abs(self) -> "Weight":
        return self.map(abs)

    def scaled(self, c: float) -> "Weight":
        return self.map(lambda v: c * v)

    def squared(self) -> "Weight":
        return self.map(lambda v: v * v)

    def __neg__(self) -> "Weight":
        return self.scaled(-1.0)

    def is_nonnegative(self) -> bool:
        return all(v >= 0 for w in self.edges.values() for v in w.values)

    def integral(self) -> float:
        return math.fsum(w.integral(w.breakpoints[0], w.breakpoints[-1]) for w in self.edges.values())

    def sqrt_integral(self) -> float:
        """Integral of the square root of a nonnegative weight."""
        if not self.is_nonnegative():
            raise ValueError("sqrt_integral needs a nonnegative weight")
        return math.fsum(
            math.sqrt(v) * (w.breakpoints[i + 1] - w.breakpoints[i])
            for w in self.edges.values() for i, v in enumerate(w.values)
        )

    def l2_norm(self) -> float:
        return math.sqrt(self.squared().integral())

    def to_json(self, skip_zero: bool = True) -> dict:
        out = {}
        for eid in sorted(self.edges):
            w = self.edges[eid]
            if skip_zero and all(v == 0.0 for v in w.values):
                continue
            out[eid] = {"breakpoints": list(w.breakpoints), "values": list(w.values)}
        return out


def _checked_edge_weight(eid: str, length: float, bps: list[float], vals: list[float]) -> EdgeWeight:
    problems = []
    if len(bps) < 2 or len(vals) != len(bps) - 1:
        problems.append(f"weight on {eid!r}: need len(values) == len(breakpoints) - 1 >= 1")
    else:
        if bps[0] != 0.0:
            problems.append(f"weight on {eid!r}: first breakpoint must be 0")
        if abs(bps[-1] - length) > 1e-12 * max(1.0, length):
            problems.append(f"weight on {eid!r}: last breakpoint must equal edge length {length}")
        if any(b1 <= b0 for b0, b1 in zip(bps, bps[1:])):
            problems.append(f"weight on {eid!r}: breakpoints not strictly increasing")
        if not all(math.isfinite(v) for v in vals):
            problems.append(f"weight on {eid!r}: non-finite value")
    if problems:
        raise GraphValidationError(problems)
    bps[-1] = length
    return EdgeWeight(tuple(bps), tuple(vals))


@dataclass(frozen=True)
class GraphDocument:
    """Contents of a graph file."""

    graph: MetricGraph
    weight: Weight
    root: GraphPoint
    extra: dict = field(default_factory=dict, compare=False)


def validate(g: MetricGraph) -> list[str]:
    """List of invariant violations; empty iff ``g`` is a valid metric graph."""
    out = []
    if not g.vertices:
        out.append("graph has no vertices")
    if len(set(g.vertices)) != len(g.vertices):
        out.append("duplicate vertex ids")
    vs = set(g.vertices)
    ids = [e.id for e in g.edges]
    for dup in sorted({i for i in ids if ids.count(i) > 1}):
        out.append(f"duplicate edge id {dup!r}")
    for e in g.edges:
        if e.tail not in vs or e.head not in vs:
            out.append(f"edge {e.id!r}: unknown endpoint")
        if e.tail == e.head:
            out.append(f"edge {e.id!r}: loop (identical endpoints)")
        if not math.isfinite(e.length):
            out.append(f"edge {e.id!r}: non-finite length")
        elif e.length <= 0:
            out.append(f"edge {e.id!r}: nonpositive length")
    for v in g.vertices:
        if not g.incident.get(v):
            out.append(f"vertex {v!r}: isolated (degree 0)")
    if vs and not out:
        adj: dict[str, set[str]] = {v: set() for v in vs}
        for e in g.edges:
            adj[e.tail].add(e.head)
            adj[e.head].add(e.tail)
        start = g.vertices[0]
        seen = {start}
        stack = [start]
        while stack:
            for w in adj[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(seen) != len(vs):
            out.append(f"disconnected: {len(vs) - len(seen)} vertices unreachable from {start!r}")
    return out


def require_valid(g: MetricGraph) -> MetricGraph:
    problems = validate(g)
    if problems:
        raise GraphValidationError(problems)
    return g


def total_length(g: MetricGraph) -> float:
    return math.fsum(e.length for e in g.edges)


def _anchors(g: MetricGraph, p: GraphPoint) -> list[tuple[str, float]]:
    if p.vertex is not None:
        return [(p.vertex, 0.0)]
    e = g.edge_map[p.edge]
    return [(e.tail, p.t), (e.head, e.length - p.t)]


def distance(g: MetricGraph, p: GraphPoint, q: GraphPoint) -> float:
    """Shortest-path distance between two points of ``g``."""
    if p == q:
        return 0.0
    D = g.vertex_distances
    idx = g.vertex_index
    best = math.inf
    for a, da in _anchors(g, p):
        for b, db in _anchors(g, q):
            best = min(best, da + D[idx[a], idx[b]] + db)
    if p.edge is not None and p.edge == q.edge:
        best = min(best, abs(p.t - q.t))
    return float(best)


def diameter(g: MetricGraph) -> float:
    """Exact supremum of pairwise distances, including interior points of cycle edges.

    For ``x`` on edge ``e`` at offset ``s`` the farthest point of another edge
    ``f = (c, d)`` lies at distance ``(d_c(s) + d_d(s) + |f|) / 2``, a concave
    piecewise linear function of ``s`` whose maximum sits at ``s`` in
    {0, |e|} or at a kink of ``d_c`` or ``d_d``.
    """
    D = g.vertex_distances
    idx = g.vertex_index
    best = 0.0
    for e in g.edges:
        a, b, L = idx[e.tail], idx[e.head], e.length
        best = max(best, 0.5 * (L + D[a, b]))
        for f in g.edges:
            if f.id == e.id:
                continue
            c, d, M = idx[f.tail], idx[f.head], f.length
            cands = {0.0, L}
            for w in (c, d):
                s = 0.5 * (L + D[b, w] - D[a, w])
                if 0.0 < s < L:
                    cands.add(s)
            for s in cands:
                dc = min(s + D[a, c], L - s + D[b, c])
                dd = min(s + D[a, d], L - s + D[b, d])
                best = max(best, 0.5 * (dc + dd + M))
    return float(best)


def insert_vertex(g: MetricGraph, V: Weight, p: GraphPoint) -> tuple[MetricGraph, Weight, str]:
    """Split the edge carrying interior point ``p`` into two edges meeting at a new vertex."""
    if p.vertex is not None:
        return g, V, p.vertex
    e = g.edge_map[p.edge]
    vid = f"{e.id}@{p.t!r}"
    e0 = Edge(f"{e.id}:0", e.tail, vid, p.t)
    e1 = Edge(f"{e.id}:1", vid, e.head, e.length - p.t)
    edges = []
    for x in g.edges:
        edges.extend((e0, e1) if x.id == e.id else (x,))
    weights = {k: w for k, w in V.edges.items() if k != e.id}
    weights[e0.id] = V[e.id].restrict(0.0, p.t)
    weights[e1.id] = V[e.id].restrict(p.t, e.length)
    return MetricGraph(g.vertices + (vid,), tuple(edges)), Weight(weights), vid


def scale_lengths(g: MetricGraph, V: Weight, c: float) -> tuple[MetricGraph, Weight]:
    """Dilate every edge by ``c``; weight values are transported pointwise."""
    g2 = MetricGraph(g.vertices, tuple(Edge(e.id, e.tail, e.head, e.length * c) for e in g.edges))
    V2 = Weight({k: EdgeWeight(tuple(b * c for b in w.breakpoints), w.values) for k, w in V.edges.items()})
    return g2, V2


# ----------------------------------------------------------------------------
# file format
# ----------------------------------------------------------------------------

def _field(cond: bool, path: str, msg: str):
    if not cond:
        raise GraphFormatError(f"{path}: {msg}", field=path)


def _number(x, path: str) -> float:
    _field(isinstance(x, (int, float)) and not isinstance(x, bool), path, "expected a number")
    return float(x)


def parse_graph(text: str) -> GraphDocument:
    """Parse and validate graph-file contents."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                               line=exc.lineno) from exc
    _field(isinstance(doc, dict), "$", "expected an object")
    verts = doc.get("vertices")
    _field(isinstance(verts, list) and all(isinstance(v, str) for v in verts),
           "vertices", "expected a list of strings")
    raw_edges = doc.get("edges")
    _field(isinstance(raw_edges, list), "edges", "expected a list")
    edges = []
    for i, item in enumerate(raw_edges):
        path = f"edges[{i}]"
        _field(isinstance(item, dict), path, "expected an object")
        for key in ("id", "from", "to"):
            _field(isinstance(item.get(key), str), f"{path}.{key}", "expected a string")
        _field("length" in item, f"{path}.length", "missing")
        edges.append(Edge(item["id"], item["from"], item["to"], _number(item["length"], f"{path}.length")))
    g = require_valid(MetricGraph(tuple(verts), tuple(edges)))

    weights = doc.get("weights", {})
    _field(isinstance(weights, dict), "weights", "expected an object")
    for eid, spec in weights.items():
        path = f"weights.{eid}"
        _field(isinstance(spec, dict), path, "expected an object")
        for key in ("breakpoints", "values"):
            _field(isinstance(spec.get(key), list), f"{path}.{key}", "expected a list")
            for j, x in enumerate(spec[key]):
                _number(x, f"{path}.{key}[{j}]")
    V = Weight.from_mapping(g, weights)

    root_spec = doc.get("root")
    if root_spec is None:
        root = GraphPoint.at_vertex(g.vertices[0])
    else:
        root = parse_point(g, root_spec, "root")
    extra = {k: v for k, v in doc.items() if k not in {"vertices", "edges", "weights", "root"}}
    return GraphDocument(g, V, root, extra)


def parse_point(g: MetricGraph, spec, path: str = "point") -> GraphPoint:
    _field(isinstance(spec, dict), path, "expected an object")
    if "vertex" in spec:
        _field(spec["vertex"] in g.vertices, f"{path}.vertex", f"unknown vertex {spec['vertex']!r}")
        return GraphPoint.at_vertex(spec["vertex"])
    _field(spec.get("edge") in g.edge_map, f"{path}.edge", "unknown edge")
    t = _number(spec.get("offset"), f"{path}.offset")
    _field(0.0 <= t <= g.length(spec["edge"]), f"{path}.offset", "outside the edge")
    return g.point(spec["edge"], t)


def load_graph(path) -> GraphDocument:
    with open(path, encoding="utf-8") as fh:
        return parse_graph(fh.read())


def graph_to_json(g: MetricGraph, V: Weight | None = None, root: GraphPoint | None = None) -> dict:
    doc: dict = {
        "vertices": list(g.vertices),
        "edges": [{"id": e.id, "from": e.tail, "to": e.head, "length": e.length} for e in g.edges],
    }
    if root is not None:
        doc["root"] = root.to_json()
    if V is not None:
        doc["weights"] = V.to_json()
    return doc


def emit_graph(g: MetricGraph, V: Weight | None = None, root: GraphPoint | None = None) -> str:
    return json.dumps(graph_to_json(g, V, root), indent=1)


def graph_hash(g: MetricGraph, V: Weight | None = None) -> str:
    text = json.dumps(graph_to_json(g, V), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# ----------------------------------------------------------------------------
# small constructors
# ----------------------------------------------------------------------------

def interval_graph(L: float = 1.0) -> MetricGraph:
    return MetricGraph.from_edges([("e", "a", "b", L)])


def path_graph(lengths: Sequence[float]) -> MetricGraph:
    return MetricGraph.from_edges(
        [(f"e{i}", f"v{i}", f"v{i + 1}", L) for i, L in enumerate(lengths)])


def star_graph(lengths: Sequence[float], center: str = "c") -> MetricGraph:
    return MetricGraph.from_edges(
        [(f"e{i}", center, f"l{i}", L) for i, L in enumerate(lengths)])
