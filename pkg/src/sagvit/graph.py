"""Patch-graph construction: grid connectivity, spatial k-nearest neighbors,
and Gaussian feature-similarity edge weights."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .backbone import ConfigError
from .patching import PatchGrid, PatchMatrix
from .tensor import Tensor


@dataclass(frozen=True)
class NeighborhoodSpec:
    mode: str = "moore"  # "moore" (8-connectivity grid) or "knn"
    k: int = 8  # neighbor count, knn mode only

    def __post_init__(self):
        if self.mode not in ("moore", "knn"):
            raise ConfigError(f"unknown neighborhood mode {self.mode!r}")


@dataclass
class PatchGraph:
    num_nodes: int
    edges: list[tuple[int, int]]  # directed (u, v)
    weights: np.ndarray  # per-edge similarity in (0, 1]
    node_features: PatchMatrix
    sigma_sq: float

    def src(self) -> np.ndarray:
        return np.array([u for u, _ in self.edges], dtype=np.int64)

    def dst(self) -> np.ndarray:
        return np.array([v for _, v in self.edges], dtype=np.int64)


def moore_edges(grid: PatchGrid) -> list[tuple[int, int]]:
    """Directed edges to all in-bounds 8-neighborhood cells, both directions."""
    edges = []
    for r in range(grid.rows):
        for c in range(grid.cols):
            u = r * grid.cols + c
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    if dr == 0 and dc == 0:
                        continue
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < grid.rows and 0 <= cc < grid.cols:
                        edges.append((u, rr * grid.cols + cc))
    return edges


def knn_edges(grid: PatchGrid, k: int) -> list[tuple[int, int]]:
    """Directed edges u -> v for the k spatially nearest v != u.

    Ties at equal Euclidean distance break by ascending node index.
    """
    n = grid.num_patches
    if not 1 <= k < n:
        raise ConfigError(f"knn neighbor count {k} out of range [1, {n - 1}]")
    coords = np.array([(u // grid.cols, u % grid.cols) for u in range(n)], dtype=np.float64)
    edges = []
    for u in range(n):
        d2 = ((coords - coords[u]) ** 2).sum(axis=1)
        order = sorted(v for v in range(n) if v != u)
        order.sort(key=lambda v: d2[v])  # stable: index order breaks ties
        edges.extend((u, v) for v in order[:k])
    return edges


def weight_edges(edges: list[tuple[int, int]], pm: PatchMatrix,
                 sigma_sq: float | str = "auto") -> PatchGraph:
    """Attach Gaussian similarity weights exp(-||x_u - x_v||^2 / sigma^2).

    ``sigma_sq="auto"`` uses the median squared feature distance over the
    edge set (falling back to 1.0 when that median is 0).
    """
    x = pm.features.data
    if edges:
        u = np.array([e[0] for e in edges])
        v = np.array([e[1] for e in edges])
        d2 = ((x[u] - x[v]) ** 2).sum(axis=1)
    else:
        d2 = np.zeros(0)
    if sigma_sq == "auto":
        med = float(np.median(d2)) if d2.size else 0.0
        ssq = med if med > 0 else 1.0
    else:
        ssq = float(sigma_sq)
        if ssq <= 0:
            raise ConfigError(f"sigma_sq must be positive, got {ssq}")
    weights = np.exp(-d2 / ssq)
    return PatchGraph(num_nodes=pm.grid.num_patches, edges=list(edges), weights=weights,
                      node_features=pm, sigma_sq=ssq)


def build_graph(pm: PatchMatrix, spec: NeighborhoodSpec,
                sigma_sq: float | str = "auto") -> PatchGraph:
    if spec.mode == "moore":
        edges = moore_edges(pm.grid)
    else:
        edges = knn_edges(pm.grid, spec.k)
    return weight_edges(edges, pm, sigma_sq)


def adjacency_dense(g: PatchGraph) -> np.ndarray:
    a = np.zeros((g.num_nodes, g.num_nodes))
    for (u, v), w in zip(g.edges, g.weights):
        a[u, v] = w
    return a
