"""Ising instances over undirected graphs.

Spins take values in {-1, +1}.  Wherever a spin is used as an array index,
index 0 stands for -1 and index 1 for +1 (see ``SPINS``).

The model energy is the global form

    E(x) = -sum_{(a,b)} J_ab x_a x_b - sum_a h_a x_a

and the Boltzmann weight is exp(-E(x)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from fracbp.rng import make_rng

SPINS = np.array([-1.0, 1.0])

Topology = Literal["grid", "complete"]
CouplingDist = Literal["attractive", "mixed", "attractive-sq"]
FieldDist = Literal["zero", "uniform-sym", "uniform-pos"]


def _readonly(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph with canonically ordered edges.

    Edges are stored as ``(min, max)`` pairs sorted lexicographically, so an
    edge id is stable for a given edge set regardless of input order.
    """

    node_count: int
    edges: tuple[tuple[int, int], ...]
    adjacency: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError(f"node_count must be positive, got {self.node_count}")
        canon = []
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValueError(f"self-loop at node {a}")
            if not (0 <= a < self.node_count and 0 <= b < self.node_count):
                raise ValueError(f"edge ({a}, {b}) references a node outside 0..{self.node_count - 1}")
            canon.append((min(a, b), max(a, b)))
        canon.sort()
        for prev, cur in zip(canon, canon[1:]):
            if prev == cur:
                raise ValueError(f"parallel edge {cur}")
        object.__setattr__(self, "edges", tuple(canon))
        adj: list[list[int]] = [[] for _ in range(self.node_count)]
        for k, (a, b) in enumerate(canon):
            adj[a].append(k)
            adj[b].append(k)
        object.__setattr__(self, "adjacency", tuple(tuple(x) for x in adj))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def edge_array(self) -> np.ndarray:
        """(E, 2) integer array of endpoints."""
        return np.array(self.edges, dtype=np.int64).reshape(-1, 2)

    def degrees(self) -> np.ndarray:
        return np.array([len(adj) for adj in self.adjacency], dtype=np.int64)

    def edge_id(self, a: int, b: int) -> int:
        key = (min(a, b), max(a, b))
        for k in self.adjacency[a]:
            if self.edges[k] == key:
                return k
        raise KeyError(f"no edge ({a}, {b})")

    def neighbors(self, a: int) -> list[int]:
        return [self.edges[k][0] + self.edges[k][1] - a for k in self.adjacency[a]]

    def is_connected(self) -> bool:
        seen = {0}
        stack = [0]
        while stack:
            a = stack.pop()
            for b in self.neighbors(a):
                if b not in seen:
                    seen.add(b)
                    stack.append(b)
        return len(seen) == self.node_count

    def without_edges(self, removed: Iterable[tuple[int, int]]) -> "Graph":
        drop = {(min(a, b), max(a, b)) for a, b in removed}
        missing = drop.difference(self.edges)
        if missing:
            raise ValueError(f"edges not in graph: {sorted(missing)}")
        return Graph(self.node_count, tuple(e for e in self.edges if e not in drop))


def build_grid(n: int) -> Graph:
    """Non-periodic n x n lattice, node (i, j) -> i*n + j."""
    if n < 2:
        raise ValueError("grid side must be >= 2; smaller grids have degree-one nodes")
    edges = []
    for i in range(n):
        for j in range(n):
            a = i * n + j
            if j + 1 < n:
                edges.append((a, a + 1))
            if i + 1 < n:
                edges.append((a, a + n))
    return Graph(n * n, tuple(edges))


def build_complete(n: int) -> Graph:
    if n < 3:
        raise ValueError("complete graph needs n >= 3")
    return Graph(n, tuple((a, b) for a in range(n) for b in range(a + 1, n)))


def build_cycle(n: int) -> Graph:
    if n < 3:
        raise ValueError("cycle needs n >= 3")
    return Graph(n, tuple((a, (a + 1) % n) for a in range(n)))


def build_path(n: int) -> Graph:
    if n < 2:
        raise ValueError("path needs n >= 2")
    return Graph(n, tuple((a, a + 1) for a in range(n - 1)))


@dataclass(frozen=True)
class IsingModel:
    graph: Graph
    couplings: np.ndarray
    fields: np.ndarray

    def __post_init__(self):
        J = _readonly(self.couplings)
        h = _readonly(self.fields)
        if J.shape != (self.graph.edge_count,):
            raise ValueError(f"expected {self.graph.edge_count} couplings, got shape {J.shape}")
        if h.shape != (self.graph.node_count,):
            raise ValueError(f"expected {self.graph.node_count} fields, got shape {h.shape}")
        if not (np.all(np.isfinite(J)) and np.all(np.isfinite(h))):
            raise ValueError("couplings and fields must be finite")
        object.__setattr__(self, "couplings", J)
        object.__setattr__(self, "fields", h)

    @property
    def node_count(self) -> int:
        return self.graph.node_count

    @property
    def edge_count(self) -> int:
        return self.graph.edge_count

    @property
    def is_attractive(self) -> bool:
        return bool(np.all(self.couplings >= 0))

    def __eq__(self, other):
        if not isinstance(other, IsingModel):
            return NotImplemented
        return (
            self.graph == other.graph
            and np.array_equal(self.couplings, other.couplings)
            and np.array_equal(self.fields, other.fields)
        )

    __hash__ = None


def uniform_model(graph: Graph, coupling: float = 0.0, field: float = 0.0) -> IsingModel:
    return IsingModel(graph, np.full(graph.edge_count, coupling), np.full(graph.node_count, field))


def total_energy(model: IsingModel, x: np.ndarray) -> np.ndarray:
    """Global-form energy of one state (shape (N,)) or a batch (shape (M, N))."""
    x = np.asarray(x, dtype=float)
    ends = model.graph.edge_array
    pair = x[..., ends[:, 0]] * x[..., ends[:, 1]]
    return -(pair @ model.couplings) - x @ model.fields


def edge_energy(model: IsingModel, edge: int, xa: int, xb: int) -> float:
    """Per-edge energy with each endpoint's field halved.

    Summing this over edges reproduces ``total_energy`` only when every node
    has degree two; see ``factor_energy_tables`` for the split used by the
    solvers.
    """
    if not 0 <= edge < model.edge_count:
        raise IndexError(f"edge id {edge} out of range")
    if xa not in (-1, 1) or xb not in (-1, 1):
        raise ValueError("spins must be -1 or +1")
    a, b = model.graph.edges[edge]
    return -model.couplings[edge] * xa * xb - (model.fields[a] * xa + model.fields[b] * xb) / 2


def factor_energy_tables(model: IsingModel) -> np.ndarray:
    """Per-edge energy tables ``T[k, i, j]`` for ``x_a = SPINS[i], x_b = SPINS[j]``.

    Each node's field is divided evenly among its incident edges, so the
    tables sum to ``total_energy`` on every state of a graph without isolated
    nodes.
    """
    deg = model.graph.degrees()
    if np.any(deg == 0) and model.edge_count:
        bad = np.flatnonzero(deg == 0).tolist()
        raise ValueError(f"isolated nodes {bad} cannot carry a field on edge factors")
    ends = model.graph.edge_array
    share = model.fields / np.maximum(deg, 1)
    xa = SPINS[:, None]
    xb = SPINS[None, :]
    J = model.couplings[:, None, None]
    ha = share[ends[:, 0]][:, None, None]
    hb = share[ends[:, 1]][:, None, None]
    return -J * xa * xb - ha * xa - hb * xb


@dataclass(frozen=True)
class EnsembleSpec:
    topology: Topology
    size: int
    coupling_dist: CouplingDist = "attractive"
    field_dist: FieldDist = "zero"
    seed: int = 0

    def __post_init__(self):
        if self.topology not in ("grid", "complete"):
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.coupling_dist not in ("attractive", "mixed", "attractive-sq"):
            raise ValueError(f"unknown coupling distribution {self.coupling_dist!r}")
        if self.field_dist not in ("zero", "uniform-sym", "uniform-pos"):
            raise ValueError(f"unknown field distribution {self.field_dist!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    def graph(self) -> Graph:
        return build_grid(self.size) if self.topology == "grid" else build_complete(self.size)


def sample_instance(spec: EnsembleSpec) -> IsingModel:
    """Draw couplings then fields i.i.d.; a pure function of ``spec``.

    ``attractive``: J ~ U(0,1); ``mixed``: J ~ U(-1,1); ``attractive-sq``:
    J**2 ~ U(0,1).  Fields: ``zero``, ``uniform-sym`` U(-1,1), ``uniform-pos``
    U(0,1).
    """
    graph = spec.graph()
    rng = make_rng(spec.seed, 0)
    u = rng.random(graph.edge_count)
    if spec.coupling_dist == "attractive":
        J = u
    elif spec.coupling_dist == "mixed":
        J = 2.0 * u - 1.0
    else:
        J = np.sqrt(u)
    if spec.field_dist == "zero":
        h = np.zeros(graph.node_count)
    else:
        v = rng.random(graph.node_count)
        h = v if spec.field_dist == "uniform-pos" else 2.0 * v - 1.0
    return IsingModel(graph, J, h)


# -- text serialization ------------------------------------------------------

_MODEL_HEADER = "# ising-model v1"


def dumps_model(model: IsingModel) -> str:
    lines = [_MODEL_HEADER, f"nodes {model.node_count}"]
    lines += [f"h {a} {float(v).hex()}" for a, v in enumerate(model.fields)]
    lines += [f"J {a} {b} {float(v).hex()}" for (a, b), v in zip(model.graph.edges, model.couplings)]
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> IsingModel:
    n = None
    fields: dict[int, float] = {}
    edges: list[tuple[int, int]] = []
    couplings: list[float] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if parts[0] == "nodes":
                n = int(parts[1])
            elif parts[0] == "h":
                fields[int(parts[1])] = float.fromhex(parts[2])
            elif parts[0] == "J":
                edges.append((int(parts[1]), int(parts[2])))
                couplings.append(float.fromhex(parts[3]))
            else:
                raise ValueError(f"unknown record {parts[0]!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    if n is None:
        raise ValueError("missing 'nodes' record")
    if sorted(fields) != list(range(n)):
        raise ValueError("every node needs exactly one 'h' record")
    graph = Graph(n, tuple(edges))
    # couplings follow the file's edge order; re-key them to canonical ids
    by_edge = {(min(a, b), max(a, b)): J for (a, b), J in zip(edges, couplings)}
    J = [by_edge[e] for e in graph.edges]
    return IsingModel(graph, np.array(J), np.array([fields[a] for a in range(n)]))


def write_model(model: IsingModel, path: str | Path) -> None:
    Path(path).write_text(dumps_model(model))


def read_model(path: str | Path) -> IsingModel:
    return loads_model(Path(path).read_text())


def state_from_bits(bits: Sequence[int]) -> np.ndarray:
    """Map 0/1 indices to -1/+1 spins."""
    return SPINS[np.asarray(bits, dtype=np.int64)]


def log2cosh(x: float) -> float:
    """log(2 cosh x) without overflow."""
    x = abs(x)
    return x + math.log1p(math.exp(-2 * x))
