"""Parse-graph transformations: transitive reduction, leveling, balancing."""
from __future__ import annotations

from dataclasses import dataclass
from graphlib import CycleError, TopologicalSorter

from .model import END, ParseGraph


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class LeveledGraph:
    base: ParseGraph
    level: dict[str, int]
    longest_path: tuple[str, ...]

    @property
    def depth(self) -> int:
        """Pipeline stages, i.e. edges on the longest path."""
        return len(self.longest_path) - 1


def _adjacency(g: ParseGraph) -> dict[str, list[str]]:
    adj: dict[str, list[str]] = {n: [] for n in g.nodes}
    for u, v in sorted(g.edges):
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, [])
    return adj


def topological_order(g: ParseGraph) -> list[str]:
    ts = TopologicalSorter({n: set() for n in g.nodes})
    for u, v in sorted(g.edges):
        ts.add(v, u)
    try:
        ts.prepare()
    except CycleError as exc:
        raise GraphError("cycle: " + " -> ".join(exc.args[1])) from None
    # static_order would do, but a sorted ready-set keeps the result reproducible
    order = []
    while ts.is_active():
        ready = sorted(ts.get_ready())
        order.extend(ready)
        ts.done(*ready)
    return order


def transitive_reduction(g: ParseGraph) -> ParseGraph:
    """Drop every edge u->v that is implied by a longer path u->w->...->v."""
    order = topological_order(g)
    adj = _adjacency(g)
    desc: dict[str, frozenset[str]] = {}
    for n in reversed(order):
        d = set()
        for v in adj[n]:
            d.add(v)
            d |= desc[v]
        desc[n] = frozenset(d)
    kept = set()
    for u, v in g.edges:
        if not any(v in desc[w] for w in adj[u] if w != v):
            kept.add((u, v))
    return g.with_edges(kept)


def compute_levels(g: ParseGraph) -> dict[str, int]:
    """Longest distance (in edges) from the root to each node."""
    adj = _adjacency(g)
    level = {g.root: 0}
    for n in topological_order(g):
        if n not in level:
            continue
        for v in adj[n]:
            level[v] = max(level.get(v, 0), level[n] + 1)
    return level


def longest_path(g: ParseGraph, levels: dict[str, int]) -> list[str]:
    """One maximal root->END path; ties go to the smallest node name."""
    adj = _adjacency(g)
    height: dict[str, int] = {}
    for n in reversed(topological_order(g)):
        height[n] = 0 if n == END else max((height[v] + 1 for v in adj[n] if v in height), default=-1)
    total = levels[END]
    path = [g.root]
    while path[-1] != END:
        u = path[-1]
        cands = [v for v in adj[u]
                 if levels.get(v) == levels[u] + 1 and height.get(v, -1) >= 0
                 and levels[v] + height[v] == total]
        path.append(min(cands))
    return path


def balance_graph(g: ParseGraph, path: list[str], levels: dict[str, int] | None = None) -> LeveledGraph:
    """Rewire off-path nodes so that every edge spans exactly one level.

    Off-path nodes lose their successors and get a single spare edge to the
    longest-path node one level below them.  Edges from path nodes that skip
    levels are folded onto the next path node, which acts as the bypass carrier.
    """
    if levels is None:
        levels = compute_levels(g)
    on_path = set(path)
    edges = {(u, v) for u, v in g.edges if u in on_path}
    for n in g.states:
        if n in on_path:
            continue
        nxt = levels[n] + 1
        assert nxt < len(path), f"{n}: level {levels[n]} has no successor on the longest path"
        edges.add((n, path[nxt]))
    for u, v in list(edges):
        if u in on_path and levels[v] > levels[u] + 1:
            edges.discard((u, v))
            edges.add((u, path[levels[u] + 1]))
    return LeveledGraph(g.with_edges(edges), dict(levels), tuple(path))


def transform(g: ParseGraph) -> tuple[ParseGraph, LeveledGraph]:
    """Reduce then balance; returns (reduced graph, balanced leveled graph)."""
    reduced = transitive_reduction(g)
    levels = compute_levels(reduced)
    path = longest_path(reduced, levels)
    return reduced, balance_graph(reduced, path, levels)


def assign_header_ids(g: ParseGraph) -> dict[str, int]:
    """Dense ids in topological order: by level, then by name."""
    levels = compute_levels(g)
    names = sorted(g.states, key=lambda n: (levels[n], n))
    return {n: i for i, n in enumerate(names)}


def to_dot(g: ParseGraph, levels: dict[str, int], name: str = "parser") -> str:
    lines = [f'digraph "{name}" {{', "  rankdir=TB;", "  node [shape=circle];",
             f'  "{END}" [shape=doublecircle];']
    by_level: dict[int, list[str]] = {}
    for n in g.nodes:
        by_level.setdefault(levels[n], []).append(n)
    for lvl in sorted(by_level):
        members = " ".join(f'"{n}";' for n in sorted(by_level[lvl]))
        lines.append(f"  {{ rank=same; {members} }}")
    for u, v in sorted(g.edges, key=lambda e: (levels[e[0]], e[0], levels[e[1]], e[1])):
        lines.append(f'  "{u}" -> "{v}";')
    lines.append("}")
    return "\n".join(lines) + "\n"


def stage_graph(g: ParseGraph, stage: str) -> tuple[ParseGraph, dict[str, int]]:
    """The graph (and levels) shown for one of the original/reduced/balanced stages."""
    if stage == "original":
        return g, compute_levels(g)
    reduced, lg = transform(g)
    if stage == "reduced":
        return reduced, lg.level
    if stage == "balanced":
        return lg.base, lg.level
    raise ValueError(f"unknown stage {stage!r}")
