"""Continuous piecewise-linear functions on metric graphs, with exact weighted integrals."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .graph import GraphPoint, MetricGraph, Weight


@dataclass(frozen=True, eq=False)
class PiecewiseLinear:
    """Nodal representation: per edge, sorted positions (0 and length included) and values.

    Values at an edge's end nodes must agree with the vertex values, which is
    what makes the function continuous on the graph.
    """

    graph: MetricGraph
    nodes: Mapping[str, tuple[np.ndarray, np.ndarray]]

    @classmethod
    def from_vertex_values(cls, g: MetricGraph, vertex_values: Mapping[str, float],
                           interior: Mapping[str, tuple[Iterable[float], Iterable[float]]] | None = None
                           ) -> "PiecewiseLinear":
        interior = interior or {}
        nodes = {}
        for e in g.edges:
            pos, val = interior.get(e.id, ((), ()))
            pos = [float(p) for p in pos]
            val = [float(v) for v in val]
            xs = np.array([0.0, *pos, e.length])
            ys = np.array([float(vertex_values[e.tail]), *val, float(vertex_values[e.head])])
            order = np.argsort(xs, kind="stable")
            nodes[e.id] = (xs[order], ys[order])
        return cls(g, nodes)

    @classmethod
    def constant(cls, g: MetricGraph, c: float) -> "PiecewiseLinear":
        return cls.from_vertex_values(g, {v: c for v in g.vertices})

    @classmethod
    def from_callable(cls, g: MetricGraph, f, per_edge: int = 8) -> "PiecewiseLinear":
        """Interpolant of ``f(edge_id, t)`` on a uniform grid of ``per_edge`` elements per edge."""
        vals = {}
        for v in g.vertices:
            eid = g.incident[v][0]
            vals[v] = f(eid, g.vertex_offset(eid, v))
        inner = {}
        for e in g.edges:
            ts = np.linspace(0.0, e.length, per_edge + 1)[1:-1]
            inner[e.id] = (ts, [f(e.id, t) for t in ts])
        return cls.from_vertex_values(g, vals, inner)

    @classmethod
    def random(cls, g: MetricGraph, rng: np.random.Generator, max_interior: int = 6,
               scale: float = 1.0) -> "PiecewiseLinear":
        vals = {v: scale * rng.standard_normal() for v in sorted(g.vertices)}
        inner = {}
        for e in sorted(g.edges, key=lambda e: e.id):
            k = int(rng.integers(0, max_interior + 1))
            pos = np.sort(rng.uniform(0.0, e.length, size=k))
            pos = pos[(pos > 0.0) & (pos < e.length)]
            inner[e.id] = (pos, scale * rng.standard_normal(len(pos)))
        return cls.from_vertex_values(g, vals, inner)

    def edge_value(self, edge_id: str, t):
        xs, ys = self.nodes[edge_id]
        return np.interp(t, xs, ys)

    def __call__(self, p: GraphPoint) -> float:
        if p.vertex is not None:
            eid = self.graph.incident[p.vertex][0]
            return float(self.edge_value(eid, self.graph.vertex_offset(eid, p.vertex)))
        return float(self.edge_value(p.edge, p.t))

    def dirichlet_energy(self) -> float:
        """Squared L2 norm of the derivative."""
        total = []
        for xs, ys in self.nodes.values():
            dx = np.diff(xs)
            keep = dx > 0
            total.append(float(np.sum(np.diff(ys)[keep] ** 2 / dx[keep])))
        return math.fsum(total)

    def weighted_sq_integral(self, V: Weight, edge_id: str, a: float, b: float, c: float = 0.0) -> float:
        """Exact integral over ``[a, b]`` of edge ``edge_id`` of ``(u - c)^2 V``."""
        if b <= a:
            return 0.0
        xs, ys = self.nodes[edge_id]
        w = V[edge_id]
        cuts = [a, b, *xs[(xs > a) & (xs < b)], *(bp for bp in w.breakpoints if a < bp < b)]
        grid = np.unique(np.asarray(cuts, dtype=float))
        d = np.interp(grid, xs, ys) - c
        mids = 0.5 * (grid[:-1] + grid[1:])
        vals = np.array([w.value(m) for m in mids])
        h = np.diff(grid)
        return float(np.sum(vals * h / 3.0 * (d[:-1] ** 2 + d[:-1] * d[1:] + d[1:] ** 2)))

    def weighted_sq_norm(self, V: Weight) -> float:
        return math.fsum(self.weighted_sq_integral(V, e.id, 0.0, e.length) for e in self.graph.edges)
