"""Edge appearance probabilities and edge-uniform spanning-tree certificates."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from fracbp.model import Graph, build_complete

Edge = tuple[int, int]


@dataclass(frozen=True)
class SpanningTreeSet:
    """Weighted multiset of spanning trees, trees given as tuples of edge ids.

    Weights are exact fractions so induced appearance probabilities can be
    compared without rounding.
    """

    graph: Graph
    trees: tuple[tuple[int, ...], ...]
    weights: tuple[Fraction, ...]

    def induced_rho(self) -> list[Fraction]:
        rho = [Fraction(0)] * self.graph.edge_count
        for tree, w in zip(self.trees, self.weights):
            for k in tree:
                rho[k] += w
        return rho

    def appearance_counts(self) -> list[int]:
        counts = [0] * self.graph.edge_count
        for tree in self.trees:
            for k in tree:
                counts[k] += 1
        return counts


@dataclass(frozen=True)
class EdgeAppearance:
    rho: np.ndarray
    certificate: SpanningTreeSet | None = None

    def __post_init__(self):
        rho = np.array(self.rho, dtype=float)
        rho.setflags(write=False)
        if np.any(rho <= 0) or np.any(rho > 1):
            raise ValueError("edge appearance probabilities must lie in (0, 1]")
        if self.certificate is not None:
            induced = np.array([float(r) for r in self.certificate.induced_rho()])
            if not np.array_equal(induced, rho):
                raise ValueError("certificate does not induce the stored rho")
        object.__setattr__(self, "rho", rho)

    @classmethod
    def from_certificate(cls, cert: SpanningTreeSet) -> "EdgeAppearance":
        return cls(np.array([float(r) for r in cert.induced_rho()]), cert)


def edge_uniform_rho(graph: Graph) -> EdgeAppearance:
    """rho_ab = (|V| - 1) / |E| on every edge.

    Degree >= 2 is required but not sufficient for these values to come
    from a distribution over spanning trees: each node also needs
    deg(a) * (|V| - 1) >= |E|.  ``build_edge_uniform_certificate`` checks
    that condition and produces an explicit witness.
    """
    deg = graph.degrees()
    low = np.flatnonzero(deg < 2)
    if low.size:
        raise ValueError(
            f"nodes {low.tolist()} have degree < 2; sum out tree-like branches "
            "before assigning edge-uniform weights"
        )
    if not graph.is_connected():
        raise ValueError("graph is disconnected")
    value = (graph.node_count - 1) / graph.edge_count
    return EdgeAppearance(np.full(graph.edge_count, value))


def rho_lambda(rho: EdgeAppearance | np.ndarray, lam: float) -> np.ndarray:
    """Interpolate rho toward 1: rho + lam * (1 - rho)."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    base = rho.rho if isinstance(rho, EdgeAppearance) else np.asarray(rho, dtype=float)
    out = base + lam * (1.0 - base)
    if lam == 1.0:
        out = np.ones_like(base)
    return out


# -- validation --------------------------------------------------------------


def _components(node_count: int, edges: Sequence[Edge]) -> list[int]:
    parent = list(range(node_count))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    return [find(x) for x in range(node_count)]


def _is_spanning_tree(node_count: int, edges: Sequence[Edge]) -> bool:
    if len(edges) != node_count - 1:
        return False
    return len(set(_components(node_count, edges))) == 1


def validate_tree_set(graph: Graph, tree_set: SpanningTreeSet) -> list[str]:
    """Return a list of human-readable violations; empty means valid."""
    problems = []
    for i, tree in enumerate(tree_set.trees):
        if any(not 0 <= k < graph.edge_count for k in tree):
            problems.append(f"tree {i}: edge id out of range")
            continue
        if len(set(tree)) != len(tree):
            problems.append(f"tree {i}: repeated edge")
            continue
        if not _is_spanning_tree(graph.node_count, [graph.edges[k] for k in tree]):
            problems.append(f"tree {i}: not spanning")
    if len(tree_set.weights) != len(tree_set.trees):
        problems.append("weights and trees differ in length")
    if any(w <= 0 for w in tree_set.weights):
        problems.append("weights not positive")
    total = sum(tree_set.weights, Fraction(0))
    if total != 1:
        problems.append(f"weights not normalized (sum {total})")
    if not problems:
        for k, r in enumerate(tree_set.induced_rho()):
            if not 0 < r <= 1:
                problems.append(f"edge {k} {graph.edges[k]}: induced rho {r} outside (0, 1]")
    return problems


# -- edge-uniform construction -----------------------------------------------


def zigzag_paths(n: int) -> list[list[Edge]]:
    """|E(K_n)| Hamiltonian paths of K_n with every edge used n - 1 times.

    The zigzag path 0, 1, n-1, 2, n-2, ... on Z_n and its rotations cover
    each edge twice (n odd, all n rotations) or once (n even, first n/2
    rotations).  That base family is repeated under vertex relabelings,
    which keeps the per-edge counts and avoids duplicate trees.
    """
    base = [0]
    lo, hi = 1, n - 1
    while len(base) < n:
        base.append(lo)
        lo += 1
        if len(base) < n:
            base.append(hi)
            hi -= 1
    rotations = range(n) if n % 2 else range(n // 2)
    repeat = (n - 1) // 2 if n % 2 else n - 1
    relabel = np.random.Generator(np.random.PCG64(n))
    paths = []
    for j in range(repeat):
        perm = np.arange(n) if j == 0 else relabel.permutation(n)
        for r in rotations:
            seq = [int(perm[(v + r) % n]) for v in base]
            paths.append([(min(a, b), max(a, b)) for a, b in zip(seq, seq[1:])])
    return paths


def _match(candidates: list[list[int]], slots: int) -> list[int] | None:
    """Perfect matching of rows to distinct slots.

    Rows are tried greedily with the lowest legal slot first; rows the greedy
    pass cannot place are inserted with augmenting paths.
    """
    owner = [-1] * slots
    assign = [-1] * len(candidates)

    def augment(row, seen):
        for s in candidates[row]:
            if s in seen:
                continue
            seen.add(s)
            if owner[s] == -1 or augment(owner[s], seen):
                owner[s] = row
                assign[row] = s
                return True
        return False

    pending = []
    for row, cands in enumerate(candidates):
        free = next((s for s in cands if owner[s] == -1), None)
        if free is None:
            pending.append(row)
        else:
            owner[free] = row
            assign[row] = free
    for row in pending:
        if not augment(row, set()):
            return None
    return assign


def _tree_path(tree: set[Edge], u: int, v: int) -> list[Edge] | None:
    """Edges on the path from u to v inside a forest, or None if disconnected."""
    adj: dict[int, list[int]] = {}
    for a, b in tree:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    prev = {u: None}
    stack = [u]
    while stack:
        a = stack.pop()
        if a == v:
            break
        for b in adj.get(a, ()):
            if b not in prev:
                prev[b] = a
                stack.append(b)
    if v not in prev:
        return None
    path = []
    while prev[v] is not None:
        path.append((min(v, prev[v]), max(v, prev[v])))
        v = prev[v]
    return path


def _place_by_exchange(trees: list[set[Edge]], x: Edge) -> bool:
    """Insert edge x into the tree family through a shortest exchange chain.

    This is matroid-partition augmentation for graphic matroids: x enters
    some tree, displacing an edge on the cycle it closes, which enters
    another tree, and so on until an edge lands in a forest that still has
    room.  Shortest chains keep every tree acyclic.
    """
    # BFS state: (edge, tree it currently sits in or -1 for the new edge)
    start = (x, -1)
    parent: dict[tuple[Edge, int], tuple[tuple[Edge, int], int] | None] = {start: None}
    queue = [start]
    head = 0
    while head < len(queue):
        item = queue[head]
        head += 1
        edge, owner = item
        for i, tree in enumerate(trees):
            if i == owner or edge in tree:
                continue
            path = _tree_path(tree, *edge)
            if path is None:
                # chain ends: tree i has room for this edge
                chain = [(item, i)]
                while parent[chain[-1][0]] is not None:
                    chain.append(parent[chain[-1][0]])
                for (moved, _), dest in chain:
                    if dest >= 0:
                        trees[dest].add(moved)
                for (moved, src), _ in chain:
                    if src >= 0:
                        trees[src].discard(moved)
                return True
            for y in path:
                nxt = (y, i)
                if nxt not in parent:
                    parent[nxt] = (item, i)
                    queue.append(nxt)
    return False


def _eliminate(node_count: int, edges: list[Edge], trees: list[set[Edge]], e: Edge, step: int):
    remaining = [x for x in edges if x != e]
    deg = [0] * node_count
    for a, b in remaining:
        deg[a] += 1
        deg[b] += 1
    if min(deg) < 2:
        raise ValueError(f"elimination step {step} (edge {e}) leaves a node of degree < 2")
    _check_balance(node_count, remaining, step)
    order = {x: i for i, x in enumerate(remaining)}
    broken = [i for i, t in enumerate(trees) if e in t]
    for drop in broken:
        deficit = sorted(trees[drop] - {e}, key=order.__getitem__)
        rest = [i for i in broken if i != drop]
        candidates = []
        for i in rest:
            comp = _components(node_count, list(trees[i] - {e}))
            candidates.append([j for j, (a, b) in enumerate(deficit) if comp[a] != comp[b]])
        assign = _match(candidates, len(deficit))
        if assign is None:
            continue
        new_trees = []
        for i, t in enumerate(trees):
            if i == drop:
                continue
            if i in rest:
                t = (t - {e}) | {deficit[assign[rest.index(i)]]}
            new_trees.append(t)
        return remaining, new_trees
    # no single-edge repair exists; fall back to exchange chains
    drop = broken[0]
    deficit = sorted(trees[drop] - {e}, key=order.__getitem__)
    new_trees = [set(t - {e}) for i, t in enumerate(trees) if i != drop]
    for d in deficit:
        if not _place_by_exchange(new_trees, d):
            raise ValueError(f"elimination step {step} (edge {e}): edge {d} cannot be re-placed")
    return remaining, new_trees


def _as_pairs(order: Sequence, kn: Graph) -> list[Edge]:
    pairs = []
    for item in order:
        if isinstance(item, (int, np.integer)):
            pairs.append(kn.edges[int(item)])
        else:
            a, b = item
            pairs.append((min(a, b), max(a, b)))
    return pairs


def default_elimination_order(graph: Graph) -> list[Edge]:
    """Edges of K_N missing from ``graph``, removed from the densest spots first.

    Each step removes the missing edge whose endpoints currently have the
    largest smaller degree (ties by canonical order).  Keeping degrees
    balanced matters: a node of degree d can serve at most d * (N - 1) of
    the |E| trees, so a lopsided intermediate graph has no edge-uniform
    tree set at all.
    """
    n = graph.node_count
    present = set(graph.edges)
    missing = [e for e in build_complete(n).edges if e not in present]
    deg = [n - 1] * n
    order = []
    while missing:
        best = max(missing, key=lambda e: (min(deg[e[0]], deg[e[1]]), deg[e[0]] + deg[e[1]], [-e[0], -e[1]]))
        missing.remove(best)
        deg[best[0]] -= 1
        deg[best[1]] -= 1
        order.append(best)
    return order


def _check_balance(node_count: int, edges: list[Edge], step: int) -> None:
    deg = [0] * node_count
    for a, b in edges:
        deg[a] += 1
        deg[b] += 1
    for a, d in enumerate(deg):
        if d * (node_count - 1) < len(edges):
            raise ValueError(
                f"elimination step {step}: node {a} has degree {d}, too low to appear in "
                f"all {len(edges)} trees ({d} * {node_count - 1} < {len(edges)})"
            )


def build_edge_uniform_certificate(graph: Graph, elimination_order: Sequence | None = None) -> SpanningTreeSet:
    """Spanning trees realizing rho_ab = (|V|-1)/|E| by elimination from K_N.

    ``elimination_order`` lists the K_N edges to remove, as ``(a, b)`` pairs
    or as K_N edge ids; ``None`` uses ``default_elimination_order``.
    """
    n = graph.node_count
    kn = build_complete(n)
    order = default_elimination_order(graph) if elimination_order is None else _as_pairs(elimination_order, kn)
    if kn.without_edges(order) != graph:
        raise ValueError("removing the elimination order from K_N does not give the input graph")
    edges = list(kn.edges)
    trees = [set(p) for p in zigzag_paths(n)]
    for step, e in enumerate(order, 1):
        edges, trees = _eliminate(n, edges, trees, e, step)
    ids = {e: k for k, e in enumerate(graph.edges)}
    weight = Fraction(1, graph.edge_count)
    cert = SpanningTreeSet(
        graph,
        tuple(tuple(sorted(ids[e] for e in t)) for t in trees),
        tuple(weight for _ in trees),
    )
    problems = validate_tree_set(graph, cert)
    target = Fraction(n - 1, graph.edge_count)
    if not problems and any(r != target for r in cert.induced_rho()):
        problems.append("induced rho is not edge-uniform")
    if problems:
        raise RuntimeError("certificate failed validation: " + "; ".join(problems))
    return cert


# -- certificate files -------------------------------------------------------

_CERT_HEADER = "# spanning-tree certificate v1"


def dumps_certificate(cert: SpanningTreeSet) -> str:
    lines = [_CERT_HEADER, f"nodes {cert.graph.node_count}"]
    lines += [f"edge {k} {a} {b}" for k, (a, b) in enumerate(cert.graph.edges)]
    lines += [f"tree {w} " + " ".join(map(str, sorted(t))) for t, w in zip(cert.trees, cert.weights)]
    return "\n".join(lines) + "\n"


def loads_certificate(text: str) -> SpanningTreeSet:
    n = None
    edges: list[Edge] = []
    trees: list[tuple[int, ...]] = []
    weights: list[Fraction] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if parts[0] == "nodes":
                n = int(parts[1])
            elif parts[0] == "edge":
                if int(parts[1]) != len(edges):
                    raise ValueError("edge ids must be listed in order 0, 1, ...")
                edges.append((int(parts[2]), int(parts[3])))
            elif parts[0] == "tree":
                weights.append(Fraction(parts[1]))
                trees.append(tuple(int(p) for p in parts[2:]))
            else:
                raise ValueError(f"unknown record {parts[0]!r}")
        except (IndexError, ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    if n is None:
        raise ValueError("missing 'nodes' record")
    graph = Graph(n, tuple(edges))
    if list(graph.edges) != [(min(a, b), max(a, b)) for a, b in edges]:
        raise ValueError("edges must be listed in canonical (lexicographic) order")
    return SpanningTreeSet(graph, tuple(trees), tuple(weights))


def write_certificate(cert: SpanningTreeSet, path: str | Path) -> None:
    Path(path).write_text(dumps_certificate(cert))


def read_certificate(path: str | Path) -> SpanningTreeSet:
    return loads_certificate(Path(path).read_text())
