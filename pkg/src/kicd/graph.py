"""DAG representation, random DAG sampling, reachability and recovery metrics."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import CycleError, InvalidConfigError, InvalidInputError


def _as_square_binary(adj) -> np.ndarray:
    a = np.asarray(adj)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"adjacency must be a square matrix, got shape {a.shape}")
    if not np.isin(a, (0, 1)).all():
        raise InvalidInputError("adjacency entries must be exactly 0 or 1")
    return a.astype(np.uint8)


def _find_cycle(adj: np.ndarray, nodes) -> list[int]:
    # every node in `nodes` has an in-edge from `nodes`; walking parents backwards must repeat
    nodes = set(int(v) for v in nodes)
    v = min(nodes)
    seen: dict[int, int] = {}
    path: list[int] = []
    while v not in seen:
        seen[v] = len(path)
        path.append(v)
        v = next(int(u) for u in np.flatnonzero(adj[:, v]) if int(u) in nodes)
    cycle = path[seen[v]:]
    cycle.reverse()
    return cycle


def topological_order(adj) -> list[int]:
    """Kahn ordering of an adjacency matrix (or Dag); ties broken by node index.

    Raises CycleError naming one directed cycle if none exists.
    """
    a = adj.adj if isinstance(adj, Dag) else _as_square_binary(adj)
    n = a.shape[0]
    indeg = a.sum(axis=0).astype(int)
    ready = deque(int(v) for v in np.flatnonzero(indeg == 0))
    order = []
    while ready:
        v = ready.popleft()
        order.append(v)
        for w in np.flatnonzero(a[v]):
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(int(w))
    if len(order) < n:
        rest = np.setdiff1d(np.arange(n), order)
        raise CycleError(_find_cycle(a, rest))
    return order


def is_acyclic(adj) -> bool:
    a = _as_square_binary(adj)
    try:
        topological_order(a)
    except CycleError:
        return False
    return True


@dataclass(frozen=True, eq=False)
class Dag:
    """Binary adjacency matrix; adj[i, j] == 1 iff edge i -> j."""

    adj: np.ndarray

    def __post_init__(self):
        a = _as_square_binary(self.adj)
        if np.any(np.diag(a)):
            raise InvalidInputError("adjacency must have a zero diagonal")
        topological_order(a)
        a.setflags(write=False)
        object.__setattr__(self, "adj", a)

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    @property
    def num_edges(self) -> int:
        return int(self.adj.sum())

    def edges(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.adj))]

    def __eq__(self, other):
        return isinstance(other, Dag) and np.array_equal(self.adj, other.adj)

    def __hash__(self):
        return hash((self.n, self.adj.tobytes()))

    def __repr__(self):
        return f"Dag(n={self.n}, edges={self.edges()})"

    @classmethod
    def empty(cls, n: int) -> "Dag":
        return cls(np.zeros((n, n), dtype=np.uint8))

    @classmethod
    def from_edges(cls, n: int, edges) -> "Dag":
        a = np.zeros((n, n), dtype=np.uint8)
        for i, j in edges:
            a[i, j] = 1
        return cls(a)

    def to_record(self) -> dict:
        return {"n": self.n, "edges": [list(e) for e in sorted(self.edges())]}

    @classmethod
    def from_record(cls, rec: dict) -> "Dag":
        return cls.from_edges(int(rec["n"]), rec["edges"])

    def dumps(self) -> str:
        return json.dumps(self.to_record(), separators=(",", ":"))

    @classmethod
    def loads(cls, text: str) -> "Dag":
        return cls.from_record(json.loads(text))


def sample_er_dag(n: int, edge_range: tuple[int, int], seed) -> Dag:
    """Random DAG with an exact edge count drawn uniformly from ``edge_range``.

    A uniform node permutation fixes a causal order; edges are then chosen
    without replacement among the n(n-1)/2 pairs that respect it.
    """
    if n < 1:
        raise InvalidConfigError(f"node count must be >= 1, got {n}")
    lo, hi = int(edge_range[0]), int(edge_range[1])
    max_edges = n * (n - 1) // 2
    if lo < 0 or lo > hi:
        raise InvalidConfigError(f"invalid edge range {edge_range}")
    if hi > max_edges:
        raise InvalidConfigError(
            f"edge range upper bound {hi} exceeds n(n-1)/2 = {max_edges} for n={n}"
        )
    rng = np.random.default_rng(seed)
    k = int(rng.integers(lo, hi + 1))
    perm = rng.permutation(n)
    src, dst = np.triu_indices(n, k=1)
    pick = rng.choice(max_edges, size=k, replace=False)
    adj = np.zeros((n, n), dtype=np.uint8)
    adj[perm[src[pick]], perm[dst[pick]]] = 1
    return Dag(adj)


@dataclass(frozen=True, eq=False)
class ReachabilityMatrix:
    reach: np.ndarray

    @property
    def n(self) -> int:
        return self.reach.shape[0]


def transitive_closure(dag: Dag) -> ReachabilityMatrix:
    """reach[i, j] = 1 iff a directed path of length >= 1 leads from i to j."""
    a = dag.adj.astype(bool)
    reach = a.copy()
    # Warshall: allow k as an intermediate node
    for k in range(dag.n):
        reach |= reach[:, k:k + 1] & reach[k:k + 1, :]
    out = reach.astype(np.uint8)
    out.setflags(write=False)
    return ReachabilityMatrix(out)


def _check_same_size(pred: Dag, truth: Dag):
    if pred.n != truth.n:
        raise InvalidInputError(f"graph sizes differ: {pred.n} vs {truth.n}")


def shd(pred: Dag, truth: Dag) -> int:
    """Structural Hamming distance; a reversed edge counts as one edit."""
    _check_same_size(pred, truth)
    p = pred.adj.astype(np.int8)
    t = truth.adj.astype(np.int8)
    # per unordered pair, compare the (i->j, j->i) status
    diff = (p != t) | (p.T != t.T)
    return int(np.triu(diff, k=1).sum())


def f1(pred: Dag, truth: Dag) -> float:
    """Directed-edge F1; two empty graphs score 1.0."""
    _check_same_size(pred, truth)
    n_pred = pred.num_edges
    n_true = truth.num_edges
    if n_pred == 0 and n_true == 0:
        return 1.0
    tp = int((pred.adj & truth.adj).sum())
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_true if n_true else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)
