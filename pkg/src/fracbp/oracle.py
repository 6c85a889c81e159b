"""Exact reference computations.

Two exact routes are available for sums over all 2^N spin states of a
product of pairwise factors:

* enumeration, vectorized over chunks of states (also yields marginals);
* variable elimination with a min-fill order, for graphs too large to
  enumerate but of small treewidth (square grids up to ~20 x 20).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from fracbp.model import SPINS, Graph, IsingModel

ENUMERATION_CAP = 20
ENUMERATION_CEILING = 25
_CHUNK_BITS = 16
_MAX_FACTOR_ENTRIES = 1 << 22


@dataclass(frozen=True)
class ExactResult:
    log_z: float
    node_marginals: np.ndarray  # (N, 2), column index follows SPINS
    edge_marginals: np.ndarray  # (E, 2, 2)


def _check_size(n: int, cap: int) -> None:
    if n > ENUMERATION_CEILING:
        raise ValueError(f"{n} nodes exceeds the enumeration ceiling of {ENUMERATION_CEILING}")
    if n > cap:
        warnings.warn(f"enumerating 2^{n} states; this may take a while", RuntimeWarning, stacklevel=3)


def _state_chunks(n: int):
    """Yield (M, n) arrays of 0/1 indices covering all 2^n states in order."""
    chunk = 1 << min(n, _CHUNK_BITS)
    shifts = np.arange(n, dtype=np.int64)
    for start in range(0, 1 << n, chunk):
        idx = np.arange(start, start + chunk, dtype=np.int64)
        yield (idx[:, None] >> shifts) & 1


def brute_force(model: IsingModel, cap: int = ENUMERATION_CAP) -> ExactResult:
    """log Z and exact marginals by enumerating every state."""
    n = model.node_count
    _check_size(n, cap)
    ends = model.graph.edge_array
    A, B = ends[:, 0], ends[:, 1]
    parts = []
    for bits in _state_chunks(n):
        x = SPINS[bits]
        logw = (x[:, A] * x[:, B]) @ model.couplings + x @ model.fields
        top = logw.max()
        w = np.exp(logw - top)
        up = bits.astype(float)
        parts.append((top, w.sum(), w @ up, w @ (up[:, A] * up[:, B])))
    top = max(p[0] for p in parts)
    scale = [math.exp(p[0] - top) for p in parts]
    total = math.fsum(s * p[1] for s, p in zip(scale, parts))
    node_up = np.array([math.fsum(col) for col in zip(*(s * p[2] for s, p in zip(scale, parts)))]) / total
    both = np.array([math.fsum(col) for col in zip(*(s * p[3] for s, p in zip(scale, parts)))]) / total
    node = np.stack([1.0 - node_up, node_up], axis=1)
    edge = np.empty((model.edge_count, 2, 2))
    edge[:, 1, 1] = both
    edge[:, 1, 0] = node_up[A] - both
    edge[:, 0, 1] = node_up[B] - both
    edge[:, 0, 0] = 1.0 - node_up[A] - node_up[B] + both
    return ExactResult(top + math.log(total), node, edge)


def log_sum_enumerate(graph: Graph, edge_log: np.ndarray, node_log: np.ndarray | None = None,
                      cap: int = ENUMERATION_CAP) -> float:
    """log sum_x exp(sum_k edge_log[k, x_a, x_b] + sum_a node_log[a, x_a])."""
    n = graph.node_count
    _check_size(n, cap)
    ends = graph.edge_array
    A, B = ends[:, 0], ends[:, 1]
    k = np.arange(graph.edge_count)
    chunks = []
    for bits in _state_chunks(n):
        s = edge_log[k, bits[:, A], bits[:, B]].sum(axis=1)
        if node_log is not None:
            s = s + node_log[np.arange(n), bits].sum(axis=1)
        chunks.append(logsumexp(s))
    return float(logsumexp(chunks))


# -- variable elimination ----------------------------------------------------


def _min_fill_order(n: int, edges) -> list[int]:
    nbrs = [set() for _ in range(n)]
    for a, b in edges:
        nbrs[a].add(b)
        nbrs[b].add(a)
    order = []
    alive = set(range(n))
    while alive:
        def cost(v):
            ns = list(nbrs[v])
            fill = sum(1 for i in range(len(ns)) for j in range(i + 1, len(ns)) if ns[j] not in nbrs[ns[i]])
            return (fill, len(ns), v)
        v = min(alive, key=cost)
        ns = list(nbrs[v])
        for i in range(len(ns)):
            for j in range(i + 1, len(ns)):
                nbrs[ns[i]].add(ns[j])
                nbrs[ns[j]].add(ns[i])
        for u in ns:
            nbrs[u].discard(v)
        nbrs[v] = set()
        alive.remove(v)
        order.append(v)
    return order


def _aligned(vars_, table, target):
    """Broadcast a factor table onto the axis order ``target``."""
    perm = sorted(range(len(vars_)), key=lambda i: target.index(vars_[i]))
    t = np.transpose(table, perm)
    present = {vars_[i] for i in perm}
    shape = [2 if v in present else 1 for v in target]
    return t.reshape(shape)


def log_sum_eliminate(graph: Graph, edge_log: np.ndarray, node_log: np.ndarray | None = None) -> float:
    """Same sum as ``log_sum_enumerate``, by variable elimination."""
    factors: list[tuple[tuple[int, ...], np.ndarray]] = []
    for (a, b), t in zip(graph.edges, edge_log):
        factors.append(((a, b), np.asarray(t, dtype=float)))
    if node_log is not None:
        for a in range(graph.node_count):
            factors.append(((a,), np.asarray(node_log[a], dtype=float)))
    total = 0.0
    for v in _min_fill_order(graph.node_count, graph.edges):
        touching = [f for f in factors if v in f[0]]
        factors = [f for f in factors if v not in f[0]]
        if not touching:
            total += math.log(2.0)
            continue
        scope = sorted({u for vs, _ in touching for u in vs})
        if 1 << len(scope) > _MAX_FACTOR_ENTRIES:
            raise ValueError(f"elimination needs a factor over {len(scope)} variables; graph too wide")
        acc = sum(_aligned(vs, t, scope) for vs, t in touching)
        acc = np.broadcast_to(acc, (2,) * len(scope))
        out = logsumexp(acc, axis=scope.index(v))
        rest = tuple(u for u in scope if u != v)
        if rest:
            factors.append((rest, out))
        else:
            total += float(out)
    return total


def log_sum_product(graph: Graph, edge_log: np.ndarray, node_log: np.ndarray | None = None,
                    cap: int = ENUMERATION_CAP) -> float:
    """Exact log-sum of a pairwise factor product; enumerates up to ``cap`` nodes."""
    if graph.node_count <= cap:
        return log_sum_enumerate(graph, edge_log, node_log, cap)
    return log_sum_eliminate(graph, edge_log, node_log)


def model_log_tables(model: IsingModel) -> tuple[np.ndarray, np.ndarray]:
    """Log-weight tables (edge couplings, node fields) of exp(-E(x))."""
    xx = SPINS[:, None] * SPINS[None, :]
    edge = model.couplings[:, None, None] * xx
    node = model.fields[:, None] * SPINS[None, :]
    return edge, node


def exact_log_z(model: IsingModel, cap: int = ENUMERATION_CAP) -> float:
    """Exact log Z by enumeration (N <= cap) or variable elimination."""
    if model.node_count <= cap:
        return brute_force(model, cap).log_z
    edge, node = model_log_tables(model)
    return log_sum_eliminate(model.graph, edge, node)


def exact_route(model: IsingModel, cap: int = ENUMERATION_CAP) -> str:
    return "enumeration" if model.node_count <= cap else "elimination"


def to_zero_field(model: IsingModel) -> tuple[IsingModel, int]:
    """Absorb fields into couplings to an extra spin connected to every node.

    The auxiliary spin gets index N and coupling J_{a*} = h_a; all fields
    become zero.  Then log Z(J, h) = log Z*(J*, 0) - log 2.
    """
    n = model.node_count
    star = n
    coupling = {e: J for e, J in zip(model.graph.edges, model.couplings)}
    coupling.update({(a, star): h for a, h in enumerate(model.fields)})
    graph = Graph(n + 1, tuple(coupling))
    J = np.array([coupling[e] for e in graph.edges])
    return IsingModel(graph, J, np.zeros(n + 1)), star
