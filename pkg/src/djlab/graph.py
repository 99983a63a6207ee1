"""Undirected graphs, their operator matrices, Dirichlet energy and homophily."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected weighted graph on nodes ``0..n-1``.

    ``edges`` is an (m, 2) integer array with ``u < v`` per row, sorted
    lexicographically; ``weights`` is the matching (m,) float array.
    Use :meth:`from_edges` rather than the raw constructor.
    """

    n: int
    edges: np.ndarray
    weights: np.ndarray
    _adj: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if len(w) != len(e):
            raise GraphError("edges and weights differ in length")
        if len(e) and (e.min() < 0 or e.max() >= self.n):
            raise GraphError(f"edge endpoint out of range for n={self.n}")
        if np.any(w <= 0):
            raise GraphError("edge weights must be positive")
        A = np.zeros((self.n, self.n))
        A[e[:, 0], e[:, 1]] = w
        A[e[:, 1], e[:, 0]] = w
        e.setflags(write=False)
        w.setflags(write=False)
        A.setflags(write=False)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "_adj", A)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence], weights=None, allow_self_loops=False) -> "Graph":
        """Build a graph from (u, v) or (u, v, w) tuples.

        Duplicate edges are merged by summing weights. Self-loops raise unless
        ``allow_self_loops`` is set, in which case they are dropped.
        """
        rows = [tuple(e) for e in edges]
        if weights is None:
            weights = [float(r[2]) if len(r) > 2 else 1.0 for r in rows]
        acc: dict[tuple[int, int], float] = {}
        for r, w in zip(rows, weights):
            u, v = int(r[0]), int(r[1])
            if u == v:
                if allow_self_loops:
                    continue
                raise GraphError(f"self-loop at node {u}")
            key = (u, v) if u < v else (v, u)
            acc[key] = acc.get(key, 0.0) + float(w)
        keys = sorted(acc)
        e = np.array(keys, dtype=np.int64).reshape(-1, 2)
        w = np.array([acc[k] for k in keys], dtype=np.float64)
        return cls(n, e, w)

    @classmethod
    def from_adjacency(cls, A: np.ndarray) -> "Graph":
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise GraphError("adjacency must be square")
        if not np.allclose(A, A.T, atol=1e-12):
            raise GraphError("adjacency must be symmetric")
        if np.any(np.diag(A) != 0):
            raise GraphError("adjacency has self-loops")
        iu, ju = np.nonzero(np.triu(A, 1))
        return cls(A.shape[0], np.stack([iu, ju], axis=1), A[iu, ju])

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def adjacency(self) -> np.ndarray:
        return self._adj

    @property
    def degrees(self) -> np.ndarray:
        return self._adj.sum(axis=1)

    @property
    def volume(self) -> float:
        return float(self.degrees.sum())

    def permute(self, perm: Sequence[int]) -> "Graph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm)
        e = perm[self.edges]
        return Graph.from_edges(self.n, [tuple(r) for r in e], weights=self.weights)


@dataclass(frozen=True, eq=False)
class SplitMasks:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        masks = [np.asarray(m, dtype=bool) for m in (self.train, self.val, self.test)]
        if len({len(m) for m in masks}) != 1:
            raise GraphError("split masks differ in length")
        if np.any(masks[0] & masks[1]) or np.any(masks[0] & masks[2]) or np.any(masks[1] & masks[2]):
            raise GraphError("split masks overlap")
        for name, m in zip(("train", "val", "test"), masks):
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @property
    def border(self) -> np.ndarray:
        return self.train

    @property
    def unknown(self) -> np.ndarray:
        return ~self.train


def n_classes(labels: np.ndarray) -> int:
    labels = np.asarray(labels)
    return int(labels.max()) + 1 if labels.size else 0


def one_hot(labels: np.ndarray, C: int | None = None) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    C = n_classes(labels) if C is None else C
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise GraphError(f"labels outside [0, {C})")
    Y = np.zeros((len(labels), C))
    Y[np.arange(len(labels)), labels] = 1.0
    return Y


def laplacian(g: Graph) -> np.ndarray:
    """Combinatorial Laplacian D - A."""
    A = g.adjacency
    return np.diag(A.sum(axis=1)) - A


def normalized_operators(g: Graph) -> tuple[np.ndarray, np.ndarray]:
    """Return the symmetric normalized Laplacian and the transition matrix D^-1 A."""
    d = g.degrees
    isolated = np.flatnonzero(d <= 0)
    if len(isolated):
        raise GraphError(f"isolated node {int(isolated[0])} has degree 0")
    A = g.adjacency
    s = 1.0 / np.sqrt(d)
    L_norm = np.eye(g.n) - s[:, None] * A * s[None, :]
    P = A / d[:, None]
    return L_norm, P


def dirichlet_energy(x: np.ndarray, g: Graph) -> float:
    """Sum over edges of w_ij * ||x_i - x_j||^2.

    ``x`` is a node vector or an (n, C) matrix (e.g. one-hot labels, in which
    case every cut edge contributes 2).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != g.n:
        raise GraphError(f"expected {g.n} rows, got {x.shape[0]}")
    X = x.reshape(g.n, -1)
    return float(np.trace(X.T @ laplacian(g) @ X))


def dirichlet_energy_edges(x: np.ndarray, g: Graph) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(g.n, -1)
    diff = x[g.edges[:, 0]] - x[g.edges[:, 1]]
    return float(np.sum(g.weights * np.sum(diff * diff, axis=1)))


def homophily_stats(g: Graph, labels: np.ndarray) -> tuple[float, float, float]:
    """Edge, node and class-normalized homophily (unweighted edge counts)."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != g.n:
        raise GraphError("label vector length differs from node count")
    if g.m == 0:
        raise GraphError("homophily undefined on a graph with no edges")
    u, v = g.edges[:, 0], g.edges[:, 1]
    same = labels[u] == labels[v]
    edge_h = float(same.mean())

    deg = np.bincount(u, minlength=g.n) + np.bincount(v, minlength=g.n)
    same_cnt = np.bincount(u, weights=same, minlength=g.n) + np.bincount(v, weights=same, minlength=g.n)
    has = deg > 0
    node_h = float(np.mean(same_cnt[has] / deg[has]))

    C = n_classes(labels)
    if C < 2:
        return edge_h, node_h, 0.0
    excess = []
    for k in range(C):
        members = labels == k
        dk = deg[members].sum()
        hk = same_cnt[members].sum() / dk if dk > 0 else 0.0
        excess.append(max(0.0, hk - members.sum() / g.n))
    class_h = float(sum(excess) / (C - 1))
    return edge_h, node_h, class_h
