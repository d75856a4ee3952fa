"""Random graphs and weights for the randomised suites."""

from __future__ import annotations

import numpy as np

from .graph import Edge, MetricGraph, Weight

LENGTH_RANGE = (0.1, 3.0)


def random_tree(rng: np.random.Generator, n_edges: int | None = None, max_edges: int = 15) -> MetricGraph:
    """Random recursive tree: vertex ``k`` attaches to a uniformly chosen earlier vertex."""
    m = int(n_edges if n_edges is not None else rng.integers(1, max_edges + 1))
    edges = []
    for k in range(1, m + 1):
        parent = int(rng.integers(0, k))
        edges.append(Edge(f"e{k:02d}", f"v{parent:02d}", f"v{k:02d}", float(rng.uniform(*LENGTH_RANGE))))
    return MetricGraph(tuple(f"v{k:02d}" for k in range(m + 1)), tuple(edges))


def random_cyclic_graph(rng: np.random.Generator, max_edges: int = 15) -> MetricGraph:
    """Random spanning tree plus at least one extra edge (parallel edges allowed, loops never)."""
    if max_edges < 2:
        raise ValueError("a cyclic graph without loops needs at least two edges")
    m = int(rng.integers(2, max_edges + 1))
    extra = int(rng.integers(1, max(2, m // 3) + 1))
    extra = min(extra, m - 1)
    tree = random_tree(rng, n_edges=m - extra)
    nv = len(tree.vertices)
    edges = list(tree.edges)
    for k in range(extra):
        u, v = (int(i) for i in rng.choice(nv, size=2, replace=False))
        edges.append(Edge(f"e{len(edges) + 1:02d}", f"v{u:02d}", f"v{v:02d}", float(rng.uniform(*LENGTH_RANGE))))
    return MetricGraph(tree.vertices, tuple(edges))


def random_weight(rng: np.random.Generator, g: MetricGraph, signed: bool = True, max_pieces: int = 3,
                  zero_prob: float = 0.15) -> Weight:
    """Piecewise-constant weight with up to ``max_pieces`` pieces per edge.

    Signed weights are forced to take both signs somewhere on the graph.
    """
    data = {}
    for e in sorted(g.edges, key=lambda e: e.id):
        k = int(rng.integers(1, max_pieces + 1))
        inner = np.sort(rng.uniform(0.0, e.length, size=k - 1))
        bps = [0.0, *(float(t) for t in inner if 0.0 < t < e.length), e.length]
        vals = rng.exponential(1.0, size=len(bps) - 1)
        if signed:
            vals *= rng.choice([-1.0, 1.0], size=len(vals))
        vals[rng.random(len(vals)) < zero_prob] = 0.0
        data[e.id] = {"breakpoints": bps, "values": [float(v) for v in vals]}
    if signed:
        flat = [(eid, i) for eid in sorted(data) for i in range(len(data[eid]["values"]))]
        if len(flat) == 1:
            eid = flat[0][0]
            L = g.length(eid)
            data[eid] = {"breakpoints": [0.0, L / 2, L], "values": [1.0, -1.0]}
            flat = [(eid, 0), (eid, 1)]
        get = lambda k: data[k[0]]["values"][k[1]]
        pos = [k for k in flat if get(k) > 0]
        i = pos[0] if pos else flat[int(rng.integers(len(flat)))]
        data[i[0]]["values"][i[1]] = abs(get(i)) or 1.0
        if not any(get(k) < 0 for k in flat):
            rest = [k for k in flat if k != i]
            j = rest[int(rng.integers(len(rest)))]
            data[j[0]]["values"][j[1]] = -(abs(get(j)) or 1.0)
    return Weight.from_mapping(g, data)


def random_graph(rng: np.random.Generator, cyclic: bool, max_edges: int = 15) -> MetricGraph:
    return random_cyclic_graph(rng, max_edges) if cyclic else random_tree(rng, max_edges=max_edges)
