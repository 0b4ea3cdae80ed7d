"""Aggregation trees and traffic accounting for the three collection schemes.

NON_AGG forwards raw samples along a shortest path tree. PLAIN_CS sends k
coded items on every link. HYBRID_CS lets a node forward raw samples until
k or more gather on its subtree, after which partial coded sums flow, so
link (i, parent) carries min(|subtree(i)|, k) items.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from types import MappingProxyType

import numpy as np

from .network import NetworkGraph

NON_AGG = "NON_AGG"
PLAIN_CS = "PLAIN_CS"
HYBRID_CS = "HYBRID_CS"
_SCHEMES = (NON_AGG, PLAIN_CS, HYBRID_CS)


@dataclass(frozen=True)
class TreeRecord:
    """One aggregation tree: members exclude the sink, root uploads to it."""

    tree_id: int
    root: int
    members: tuple
    parents: MappingProxyType
    k: int | None

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(sorted(self.members)))
        parents = self.parents
        if not isinstance(parents, MappingProxyType):
            object.__setattr__(self, "parents", MappingProxyType(dict(parents)))


@dataclass(frozen=True)
class AggregationForest:
    scheme: str
    sink: int
    trees: tuple

    def __post_init__(self):
        if self.scheme not in _SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        seen = set()
        for t in self.trees:
            overlap = seen.intersection(t.members)
            if overlap:
                raise ValueError(f"trees share nodes {sorted(overlap)[:5]}")
            seen.update(t.members)
        if self.sink in seen:
            raise ValueError("sink cannot be a tree member")

    @property
    def all_members(self):
        out = []
        for t in self.trees:
            out.extend(t.members)
        return sorted(out)


@dataclass(frozen=True)
class TrafficReport:
    per_link_items: MappingProxyType
    total_items: int
    total_energy: float


def _dijkstra(graph: NetworkGraph, sources) -> tuple[np.ndarray, np.ndarray]:
    """Multi-source Dijkstra under link costs; ties reparent to the lower id."""
    n = graph.n
    dist = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=int)
    heap = []
    for s in sources:
        dist[s] = 0.0
        heapq.heappush(heap, (0.0, int(s)))
    while heap:
        d0, u = heapq.heappop(heap)
        if d0 > dist[u]:
            continue
        nbrs, costs = graph.adjacency[u]
        for v, c in zip(nbrs, costs):
            nd = d0 + c
            if nd < dist[v]:
                dist[v] = nd
                parent[v] = u
                heapq.heappush(heap, (nd, v))
            elif nd == dist[v] and parent[v] >= 0 and u < parent[v]:
                parent[v] = u
    return dist, parent


def _subtree_sizes(parent: np.ndarray, skip) -> np.ndarray:
    """Subtree node counts over the forest, treating `skip` nodes as roots."""
    n = len(parent)
    size = np.ones(n, dtype=int)
    indeg = np.zeros(n, dtype=int)
    for v in range(n):
        if v in skip:
            continue
        p = parent[v]
        if p >= 0 and p not in skip:
            indeg[p] += 1
    stack = [v for v in range(n) if v not in skip and indeg[v] == 0]
    while stack:
        v = stack.pop()
        p = parent[v]
        if p >= 0 and p not in skip:
            size[p] += size[v]
            indeg[p] -= 1
            if indeg[p] == 0:
                stack.append(p)
    return size


def _single_tree_record(parent: np.ndarray, sink: int, n: int, k) -> TreeRecord:
    members = [v for v in range(n) if v != sink]
    sink_children = [v for v in members if parent[v] == sink]
    root = min(sink_children) if sink_children else sink
    parents = {v: int(parent[v]) for v in members}
    return TreeRecord(tree_id=0, root=root, members=tuple(members), parents=parents, k=k)


def build_spt(graph: NetworkGraph, sink: int) -> AggregationForest:
    """Shortest path tree under cubic link costs (non-aggregation baseline)."""
    _, parent = _dijkstra(graph, [sink])
    record = _single_tree_record(parent, sink, graph.n, None)
    return AggregationForest(scheme=NON_AGG, sink=sink, trees=(record,))


def _grow_hybrid(graph: NetworkGraph, sink: int, k: int, nodes=None):
    """Greedy core growth; returns the final parent array restricted to `nodes`.

    Within the node subset (default: whole graph), non-core nodes route to the
    nearest core node; each step promotes the frontier node whose switch from
    raw forwarding to coded upload cuts estimated traffic the most.
    """
    if nodes is None:
        allowed = None
    else:
        allowed = np.zeros(graph.n, dtype=bool)
        allowed[list(nodes)] = True
        allowed[sink] = True

    def adjacency(u):
        nbrs, costs = graph.adjacency[u]
        if allowed is None:
            return nbrs, costs
        m = allowed[nbrs]
        return nbrs[m], costs[m]

    n = graph.n
    core = {sink}
    core_parent = {}
    while True:
        dist = np.full(n, np.inf)
        parent = np.full(n, -1, dtype=int)
        heap = []
        for s in core:
            dist[s] = 0.0
            heapq.heappush(heap, (0.0, int(s)))
        while heap:
            d0, u = heapq.heappop(heap)
            if d0 > dist[u]:
                continue
            nbrs, costs = adjacency(u)
            for v, c in zip(nbrs, costs):
                if v in core:
                    continue
                nd = d0 + c
                if nd < dist[v]:
                    dist[v] = nd
                    parent[v] = u
                    heapq.heappush(heap, (nd, v))
                elif nd == dist[v] and parent[v] >= 0 and u < parent[v]:
                    parent[v] = u

        size = _subtree_sizes(parent, core)
        best_gain = 0.0
        best_v = -1
        candidates = range(n) if allowed is None else np.flatnonzero(allowed)
        for v in candidates:
            if v in core or parent[v] < 0 or parent[v] not in core:
                continue
            gain = (size[v] - k) * dist[v]
            if gain > best_gain or (gain == best_gain and best_v >= 0 and v < best_v):
                if gain > 0:
                    best_gain = gain
                    best_v = int(v)
        if best_v < 0:
            full = parent.copy()
            for v, p in core_parent.items():
                full[v] = p
            return full, core
        # cheapest direct edge into the core becomes the permanent uplink
        nbrs, costs = adjacency(best_v)
        in_core = [(c, int(u)) for u, c in zip(nbrs, costs) if u in core]
        core_parent[best_v] = min(in_core)[1]
        core.add(best_v)


def build_hybrid_tree(graph: NetworkGraph, sink: int, k: int) -> AggregationForest:
    """Spanning tree with a greedily grown coding core (single coding group)."""
    if not (1 <= k <= graph.n):
        raise ValueError(f"k must lie in [1, {graph.n}]")
    parent, _ = _grow_hybrid(graph, sink, k)
    record = _single_tree_record(parent, sink, graph.n, k)
    return AggregationForest(scheme=HYBRID_CS, sink=sink, trees=(record,))


def _pick_region_seeds(graph: NetworkGraph, sink: int, num_trees: int):
    nbrs = graph.neighbors(sink)
    if len(nbrs) < num_trees:
        raise ValueError(
            f"sink has {len(nbrs)} neighbors, fewer than {num_trees} requested trees"
        )
    rel = graph.positions[nbrs] - graph.positions[sink]
    ang = np.arctan2(rel[:, 1], rel[:, 0])
    order = np.lexsort((nbrs, ang))
    picks = [int(nbrs[order[(i * len(nbrs)) // num_trees]]) for i in range(num_trees)]
    if len(set(picks)) != num_trees:
        # angle collisions on tiny graphs: fall back to the first distinct ids
        picks = [int(nbrs[order[i]]) for i in range(num_trees)]
    return picks


def _grow_regions(graph: NetworkGraph, sink: int, seeds):
    """Balanced region growing: the smallest region claims one node at a time.

    Claims are ordered by angular alignment with the region's seed direction,
    so each wave grows outward into its own sector instead of racing rivals
    for the cheap central nodes; smallest-first scheduling keeps the counts
    even regardless of local density.
    """
    n = graph.n
    num = len(seeds)
    rel = graph.positions - graph.positions[sink]
    theta = np.arctan2(rel[:, 1], rel[:, 0])
    region = np.full(n, -1, dtype=int)

    def alignment(t, v):
        d = abs(theta[v] - theta[seeds[t]]) % (2 * math.pi)
        return min(d, 2 * math.pi - d)

    heaps = [[(0.0, int(s))] for s in seeds]
    counts = [0] * num
    live = set(range(num))
    while live:
        t = min(live, key=lambda t: (counts[t], t))
        heap = heaps[t]
        claimed = False
        while heap:
            _, v = heapq.heappop(heap)
            if region[v] >= 0 or v == sink:
                continue
            region[v] = t
            counts[t] += 1
            for u in graph.adjacency[v][0]:
                if region[u] < 0 and u != sink:
                    heapq.heappush(heap, (alignment(t, u), int(u)))
            claimed = True
            break
        if not claimed:
            live.discard(t)
    if np.sum(region >= 0) != n - 1:
        raise ValueError("region growing could not cover the graph")
    _rebalance_regions(graph, sink, region, seeds)
    return region


def _region_stays_connected(graph: NetworkGraph, region, t, root, removed):
    """True if region t minus `removed` is still connected from its root."""
    members = np.flatnonzero(region == t)
    want = len(members) - 1
    seen = {root}
    stack = [root]
    while stack:
        v = stack.pop()
        for u in graph.adjacency[v][0]:
            u = int(u)
            if u != removed and region[u] == t and u not in seen:
                seen.add(u)
                stack.append(u)
    return len(seen) == want


def _rebalance_regions(graph: NetworkGraph, sink: int, region, seeds):
    """Even out region sizes by shifting removable boundary nodes.

    A node may move from region d to an adjacent region r only when the size
    deviations differ by at least 2, so every move strictly reduces the sum
    of squared deviations and the loop terminates.
    """
    num = len(seeds)
    seedset = {int(s) for s in seeds}
    assigned = int(np.sum(region >= 0))
    base, rem = divmod(assigned, num)
    targets = [base + (1 if t < rem else 0) for t in range(num)]
    counts = [int(np.sum(region == t)) for t in range(num)]
    for _ in range(8 * graph.n):
        devs = [counts[t] - targets[t] for t in range(num)]
        if max(devs) - min(devs) <= 1:
            break
        candidates = []
        for v in range(graph.n):
            d = region[v]
            if d < 0 or v in seedset:
                continue
            adj_regions = {int(region[u]) for u in graph.adjacency[v][0]}
            adj_regions.discard(d)
            adj_regions.discard(-1)
            if not adj_regions:
                continue
            r = min(adj_regions, key=lambda t: (devs[t], t))
            if devs[d] - devs[r] >= 2:
                candidates.append((-devs[d], v, r))
        moved = False
        for _, v, r in sorted(candidates):
            d = region[v]
            if _region_stays_connected(graph, region, d, int(seeds[d]), v):
                region[v] = r
                counts[d] -= 1
                counts[r] += 1
                moved = True
                break
        if not moved:
            # no legal move left; the balance check below decides if that
            # local optimum is good enough
            break
    share = graph.n / num
    if max(abs(c - share) for c in counts) > 0.10 * share:
        raise ValueError("could not balance regions on this topology")


def partition_forest(
    graph: NetworkGraph, sink: int, num_trees: int, budgets
) -> AggregationForest:
    """Split the network into balanced regions, each with its own hybrid tree."""
    budgets = list(budgets)
    if len(budgets) != num_trees:
        raise ValueError("need one budget per tree")
    if num_trees < 1:
        raise ValueError("num_trees must be >= 1")
    if num_trees == 1:
        return build_hybrid_tree(graph, sink, budgets[0])
    seeds = _pick_region_seeds(graph, sink, num_trees)
    region = _grow_regions(graph, sink, seeds)
    records = []
    for t, (seed, k) in enumerate(zip(seeds, budgets)):
        members = np.flatnonzero(region == t)
        if not (1 <= k <= len(members)):
            raise ValueError(f"budget {k} outside [1, {len(members)}] for tree {t}")
        parent, _ = _grow_hybrid(graph, seed, k, nodes=members)
        parents = {int(v): int(parent[v]) for v in members if v != seed}
        parents[seed] = sink
        records.append(
            TreeRecord(
                tree_id=t,
                root=seed,
                members=tuple(int(v) for v in members),
                parents=parents,
                k=k,
            )
        )
    return AggregationForest(scheme=HYBRID_CS, sink=sink, trees=tuple(records))


def _tree_subtree_counts(tree: TreeRecord):
    size = dict.fromkeys(tree.members, 1)
    indeg = dict.fromkeys(tree.members, 0)
    for child in tree.members:
        par = tree.parents[child]
        if par in indeg:
            indeg[par] += 1
    stack = [v for v in tree.members if indeg[v] == 0]
    while stack:
        v = stack.pop()
        par = tree.parents[v]
        if par in size:
            size[par] += size[v]
            indeg[par] -= 1
            if indeg[par] == 0:
                stack.append(par)
    return size


def account_traffic(forest: AggregationForest, graph: NetworkGraph) -> TrafficReport:
    """Per-link data items and total energy under the forest's scheme."""
    per_link = {}
    total_items = 0
    total_energy = 0.0
    for tree in forest.trees:
        if forest.scheme != NON_AGG and tree.k is None:
            raise ValueError(f"scheme {forest.scheme} requires a budget k")
        size = _tree_subtree_counts(tree)
        for child in tree.members:
            par = tree.parents[child]
            if forest.scheme == NON_AGG:
                items = size[child]
            elif forest.scheme == PLAIN_CS:
                items = tree.k
            else:
                items = min(size[child], tree.k)
            per_link[(child, par)] = items
            total_items += items
            total_energy += items * graph.cost_of(child, par)
    return TrafficReport(
        per_link_items=MappingProxyType(per_link),
        total_items=int(total_items),
        total_energy=float(total_energy),
    )


def save_forest_json(forest: AggregationForest, path) -> None:
    doc = {
        "scheme": forest.scheme,
        "sink": forest.sink,
        "trees": [
            {
                "tree_id": t.tree_id,
                "root": t.root,
                "k": t.k,
                "parents": sorted([int(c), int(p)] for c, p in t.parents.items()),
            }
            for t in forest.trees
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_forest_json(path) -> AggregationForest:
    with open(path) as fh:
        doc = json.load(fh)
    trees = []
    for td in doc["trees"]:
        parents = {c: p for c, p in td["parents"]}
        trees.append(
            TreeRecord(
                tree_id=td["tree_id"],
                root=td["root"],
                members=tuple(parents.keys()),
                parents=parents,
                k=td["k"],
            )
        )
    return AggregationForest(scheme=doc["scheme"], sink=doc["sink"], trees=tuple(trees))
