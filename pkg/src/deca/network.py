"""Random node deployment over a grid and communication-graph construction."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

DEFAULT_COMM_RADIUS = 5.0


class ConnectivityError(RuntimeError):
    """Raised when the communication graph is disconnected."""

    def __init__(self, message, num_components):
        super().__init__(message)
        self.num_components = num_components


@dataclass(frozen=True)
class Deployment:
    """Node cells (at most one node per cell), sink index, and draw parameters."""

    grid_dims: tuple
    node_cells: np.ndarray
    sink_id: int
    coverage_ratio: float
    seed: int

    def __post_init__(self):
        cells = np.asarray(self.node_cells, dtype=int)
        if cells.ndim != 2 or cells.shape[1] != 2:
            raise ValueError("node_cells must be an (n, 2) array")
        a, b = self.grid_dims
        flat = cells[:, 0] * b + cells[:, 1]
        if len(np.unique(flat)) != len(flat):
            raise ValueError("node cells must be pairwise distinct")
        if cells.size and (
            cells.min() < 0 or cells[:, 0].max() >= a or cells[:, 1].max() >= b
        ):
            raise ValueError("node cells out of grid")
        if not (0 <= self.sink_id < len(cells)):
            raise ValueError("sink_id out of range")
        cells = np.ascontiguousarray(cells)
        cells.flags.writeable = False
        object.__setattr__(self, "grid_dims", (int(a), int(b)))
        object.__setattr__(self, "node_cells", cells)

    @property
    def n(self) -> int:
        return len(self.node_cells)

    @property
    def positions(self) -> np.ndarray:
        """Cell centers in cell units."""
        return self.node_cells + 0.5


@dataclass(frozen=True)
class NetworkGraph:
    """Undirected unit-disk communication graph with cubic-distance link costs."""

    n: int
    edges: np.ndarray
    link_cost: np.ndarray
    positions: np.ndarray
    adjacency: tuple

    def cost_of(self, i: int, j: int) -> float:
        nbrs, costs = self.adjacency[i]
        idx = np.searchsorted(nbrs, j)
        if idx >= len(nbrs) or nbrs[idx] != j:
            raise KeyError(f"no edge ({i}, {j})")
        return float(costs[idx])

    def neighbors(self, i: int) -> np.ndarray:
        return self.adjacency[i][0]


def deploy(grid_dims, rho: float, seed: int) -> Deployment:
    """Choose round(rho*a*b) distinct cells uniformly; sink nearest grid center.

    Ties for the sink break toward the lowest node id. Node ids follow
    row-major cell order.
    """
    a, b = grid_dims
    if not (0 < rho <= 1):
        raise ValueError("coverage ratio must lie in (0, 1]")
    n = int(round(rho * a * b))
    if n < 1:
        raise ValueError("coverage ratio too small: no nodes")
    rng = np.random.default_rng(seed)
    flat = rng.choice(a * b, size=n, replace=False)
    flat.sort()
    cells = np.stack([flat // b, flat % b], axis=1)
    centers = cells + 0.5
    center = np.array([a / 2.0, b / 2.0])
    d2 = ((centers - center) ** 2).sum(axis=1)
    sink_id = int(np.argmin(d2))
    return Deployment(
        grid_dims=(a, b),
        node_cells=cells,
        sink_id=sink_id,
        coverage_ratio=rho,
        seed=seed,
    )


def build_graph(deployment: Deployment, comm_radius: float = DEFAULT_COMM_RADIUS) -> NetworkGraph:
    """Unit-disk graph on cell centers: edge iff d(i,j) <= radius, cost d^3."""
    if comm_radius <= 0:
        raise ValueError("comm_radius must be positive")
    pos = deployment.positions
    n = deployment.n
    if n == 1:
        return NetworkGraph(
            n=1,
            edges=np.empty((0, 2), dtype=int),
            link_cost=np.empty(0),
            positions=pos,
            adjacency=((np.empty(0, dtype=int), np.empty(0)),),
        )
    tree = cKDTree(pos)
    pairs = tree.query_pairs(comm_radius, output_type="ndarray")
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    d = np.linalg.norm(pos[pairs[:, 0]] - pos[pairs[:, 1]], axis=1)
    cost = d**3

    graph = csr_matrix(
        (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)
    )
    ncomp, _ = connected_components(graph, directed=False)
    if ncomp > 1:
        raise ConnectivityError(
            f"communication graph has {ncomp} components at radius {comm_radius}",
            num_components=ncomp,
        )

    nbr_lists = [[] for _ in range(n)]
    for (i, j), c in zip(pairs, cost):
        nbr_lists[i].append((j, c))
        nbr_lists[j].append((i, c))
    adjacency = []
    for lst in nbr_lists:
        lst.sort()
        ids = np.array([x[0] for x in lst], dtype=int)
        cs = np.array([x[1] for x in lst])
        ids.flags.writeable = False
        cs.flags.writeable = False
        adjacency.append((ids, cs))

    edges = np.ascontiguousarray(pairs)
    edges.flags.writeable = False
    cost = np.ascontiguousarray(cost)
    cost.flags.writeable = False
    pos_frozen = np.ascontiguousarray(pos)
    pos_frozen.flags.writeable = False
    return NetworkGraph(
        n=n,
        edges=edges,
        link_cost=cost,
        positions=pos_frozen,
        adjacency=tuple(adjacency),
    )


def save_deployment_json(deployment: Deployment, path) -> None:
    doc = {
        "grid": [deployment.grid_dims[0], deployment.grid_dims[1]],
        "rho": deployment.coverage_ratio,
        "seed": deployment.seed,
        "sink": deployment.sink_id,
        "cells": deployment.node_cells.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_deployment_json(path) -> Deployment:
    with open(path) as fh:
        doc = json.load(fh)
    return Deployment(
        grid_dims=tuple(doc["grid"]),
        node_cells=np.array(doc["cells"], dtype=int),
        sink_id=doc["sink"],
        coverage_ratio=doc["rho"],
        seed=doc["seed"],
    )
