"""Reduced feature graph built from strongest pairwise correlations."""

from __future__ import annotations

import csv
import re
from collections import deque
from dataclasses import dataclass, field
from io import StringIO
from typing import Iterable, Sequence

import numpy as np

from .data import CorrelationMatrix, _frozen, _matrix_csv


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureGraph:
    """Undirected, loop-free graph over feature indices ``0..M-1``."""

    adjacency: np.ndarray
    weights: CorrelationMatrix | None = field(default=None, repr=False, compare=False)
    # (i, j, phase) in the order edges were admitted; empty if hand-built
    admission: tuple[tuple[int, int, int], ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        A = np.asarray(self.adjacency, dtype=bool)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise GraphError("adjacency must be square")
        if not np.array_equal(A, A.T):
            raise GraphError("adjacency must be symmetric")
        if A.diagonal().any():
            raise GraphError("self-loops are not allowed")
        if self.weights is not None and self.weights.size != A.shape[0]:
            raise GraphError("weight matrix size does not match node count")
        object.__setattr__(self, "adjacency", _frozen(A))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]], weights=None):
        A = np.zeros((n, n), dtype=bool)
        for i, j in edges:
            if i == j:
                raise GraphError(f"self-loop at node {i}")
            A[i, j] = A[j, i] = True
        return cls(A, weights)

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]

    def edges(self) -> list[tuple[int, int]]:
        """Edges as ``(i, j)`` with ``i < j``, lexicographically ordered."""
        i, j = np.nonzero(np.triu(self.adjacency, k=1))
        return list(zip(i.tolist(), j.tolist()))

    def neighbors(self, i: int) -> list[int]:
        return np.flatnonzero(self.adjacency[i]).tolist()

    def degree(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def to_csv(self, names: Sequence[str] | None = None) -> str:
        names = names or [str(i) for i in range(self.node_count)]
        return _matrix_csv(self.adjacency.astype(int), names, str)


def _sorted_edge_list(W: np.ndarray) -> list[tuple[int, int]]:
    n = W.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    mag = np.abs(W[iu, ju])
    # lexsort: last key is primary -> |W| desc, then i asc, then j asc
    order = np.lexsort((ju, iu, -mag))
    return list(zip(iu[order].tolist(), ju[order].tolist()))


class _Components:
    def __init__(self, n):
        self.parent = list(range(n))
        self.count = n

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb
            self.count -= 1


def build_feature_graph(w: CorrelationMatrix) -> FeatureGraph:
    """Sparse connected graph covering every feature.

    Edges are scanned by descending absolute correlation (ties: smaller
    index first). An edge is admitted while one of its endpoints is still
    uncovered. If the covered graph is disconnected, a second scan over
    the same order admits edges that join two different components until
    one component remains. Zero-correlation edges are only admitted in the
    second scan.
    """
    W = w.values
    n = w.size
    A = np.zeros((n, n), dtype=bool)
    if n <= 1:
        return FeatureGraph(A, w)

    order = _sorted_edge_list(W)
    comps = _Components(n)
    covered = np.zeros(n, dtype=bool)
    admitted = []
    n_covered = 0

    for i, j in order:
        if n_covered == n:
            break
        if W[i, j] == 0.0:
            # remaining edges are all zero-weight
            break
        if not (covered[i] and covered[j]):
            A[i, j] = A[j, i] = True
            comps.union(i, j)
            n_covered += int(not covered[i]) + int(not covered[j])
            covered[i] = covered[j] = True
            admitted.append((i, j, 1))

    if comps.count > 1:
        for i, j in order:
            if comps.count == 1:
                break
            if comps.find(i) != comps.find(j):
                A[i, j] = A[j, i] = True
                comps.union(i, j)
                admitted.append((i, j, 2))

    return FeatureGraph(A, w, tuple(admitted))


def _bfs_depths(g: FeatureGraph, source: int, limit: int | None = None) -> dict[int, int]:
    depth = {source: 0}
    queue = deque([source])
    A = g.adjacency
    while queue:
        u = queue.popleft()
        if limit is not None and depth[u] >= limit:
            continue
        for v in np.flatnonzero(A[u]).tolist():
            if v not in depth:
                depth[v] = depth[u] + 1
                queue.append(v)
    return depth


def neighborhood(g: FeatureGraph, i: int, d_max: int = 1) -> tuple[int, ...]:
    """Nodes within ``d_max`` hops of ``i``, excluding ``i``, ascending."""
    if not 0 <= i < g.node_count:
        raise GraphError(f"node index {i} out of range for {g.node_count} nodes")
    if d_max < 1:
        raise GraphError(f"d_max must be >= 1, got {d_max}")
    depths = _bfs_depths(g, i, d_max)
    return tuple(sorted(v for v in depths if v != i))


def is_connected(g: FeatureGraph) -> bool:
    if g.node_count <= 1:
        return True
    return len(_bfs_depths(g, 0)) == g.node_count


def induced_edge_weight_sum(
    w: CorrelationMatrix, g: FeatureGraph, s: Iterable[int]
) -> float:
    """Sum of signed correlations over graph edges with both ends in ``s``."""
    nodes = sorted(set(int(x) for x in s))
    n = g.node_count
    for x in nodes:
        if not 0 <= x < n:
            raise GraphError(f"node index {x} out of range for {n} nodes")
    total = 0.0
    A, W = g.adjacency, w.values
    for a, j in enumerate(nodes):
        for k in nodes[a + 1:]:
            if A[j, k]:
                total += W[j, k]
    return float(total)


_DOT_ID = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _dot_id(name: str) -> str:
    if _DOT_ID.match(name):
        return name
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(g: FeatureGraph, names: Sequence[str]) -> str:
    if len(names) != g.node_count:
        raise GraphError(f"{len(names)} names for {g.node_count} nodes")
    lines = ["graph features {"]
    for name in names:
        lines.append(f"  {_dot_id(name)};")
    W = g.weights.values if g.weights is not None else None
    for i, j in g.edges():
        label = f' [label="{W[i, j]:.3f}"]' if W is not None else ""
        lines.append(f"  {_dot_id(names[i])} -- {_dot_id(names[j])}{label};")
    lines.append("}")
    return "\n".join(lines) + "\n"


_TOKEN = r'(?:[A-Za-z_][A-Za-z0-9_]*|"(?:[^"\\]|\\.)*")'
_EDGE_RE = re.compile(rf"^\s*({_TOKEN})\s*--\s*({_TOKEN})")


def _unquote(tok: str) -> str:
    if tok.startswith('"'):
        return re.sub(r"\\(.)", r"\1", tok[1:-1])
    return tok


def parse_dot_edges(text: str, names: Sequence[str]) -> FeatureGraph:
    """Read back the edge statements written by :func:`export_dot`."""
    index = {n: k for k, n in enumerate(names)}
    edges = []
    for line in text.splitlines():
        m = _EDGE_RE.match(line)
        if m:
            a, b = _unquote(m.group(1)), _unquote(m.group(2))
            edges.append((index[a], index[b]))
    return FeatureGraph.from_edges(len(names), edges)


def read_adjacency_csv(text: str) -> tuple[list[str], FeatureGraph]:
    rows = list(csv.reader(StringIO(text)))
    names = rows[0][1:]
    A = np.array([[int(c) for c in r[1:]] for r in rows[1:]], dtype=bool)
    return names, FeatureGraph(A)
