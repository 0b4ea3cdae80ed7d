import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.csgraph import bellman_ford

from deca import network, routing


def line_deployment(n):
    """n nodes in a row at unit spacing, sink at the left end."""
    cells = np.array([[0, j] for j in range(n)])
    return network.Deployment(
        grid_dims=(1, n), node_cells=cells, sink_id=0, coverage_ratio=1.0, seed=0
    )


def plus_deployment():
    """Four arms around a central sink; only center-arm links fit radius 1."""
    cells = np.array([[1, 1], [0, 1], [2, 1], [1, 0], [1, 2]])
    return network.Deployment(
        grid_dims=(3, 3), node_cells=cells, sink_id=0, coverage_ratio=5 / 9, seed=0
    )


def simulate_messages(forest, graph):
    """Independent per-node message count: leaves up, clipping at the budget."""
    per_link = {}
    energy = 0.0
    for tree in forest.trees:
        children = {v: [] for v in tree.members}
        children[forest.sink] = []
        for v in tree.members:
            children.setdefault(tree.parents[v], []).append(v)

        def sent(v):
            raw = 1 + sum(sent(c) for c in children.get(v, []))
            if forest.scheme == routing.NON_AGG:
                return raw
            if forest.scheme == routing.PLAIN_CS:
                return tree.k
            return min(raw, tree.k)

        for v in tree.members:
            items = sent(v)
            per_link[(v, tree.parents[v])] = items
            energy += items * graph.cost_of(v, tree.parents[v])
    return per_link, energy


class TestChainLoads:
    """Five nodes in a row: link loads are easy to enumerate by hand."""

    def setup_method(self):
        dep = line_deployment(5)
        self.graph = network.build_graph(dep, comm_radius=1.0)

    def test_non_agg_loads_grow_toward_sink(self):
        forest = routing.build_spt(self.graph, 0)
        report = routing.account_traffic(forest, self.graph)
        expected = {(4, 3): 1, (3, 2): 2, (2, 1): 3, (1, 0): 4}
        assert dict(report.per_link_items) == expected
        assert report.total_items == 10
        assert report.total_energy == pytest.approx(10.0)

    def test_plain_cs_every_link_carries_k(self):
        hybrid = routing.build_hybrid_tree(self.graph, 0, 2)
        plain = routing.AggregationForest(
            scheme=routing.PLAIN_CS, sink=0, trees=hybrid.trees
        )
        report = routing.account_traffic(plain, self.graph)
        assert set(report.per_link_items.values()) == {2}
        assert report.total_items == 8

    def test_hybrid_clips_at_budget(self):
        forest = routing.build_hybrid_tree(self.graph, 0, 2)
        report = routing.account_traffic(forest, self.graph)
        assert dict(report.per_link_items) == {(4, 3): 1, (3, 2): 2, (2, 1): 2, (1, 0): 2}
        assert report.total_items == 7
        assert report.total_energy == pytest.approx(7.0)

    def test_missing_budget_rejected(self):
        spt = routing.build_spt(self.graph, 0)
        broken = routing.AggregationForest(
            scheme=routing.HYBRID_CS, sink=0, trees=spt.trees
        )
        with pytest.raises(ValueError):
            routing.account_traffic(broken, self.graph)


class TestStarTopology:
    def test_spt_parents_all_sink(self):
        graph = network.build_graph(plus_deployment(), comm_radius=1.0)
        forest = routing.build_spt(graph, 0)
        assert all(p == 0 for p in forest.trees[0].parents.values())
        report = routing.account_traffic(forest, graph)
        assert set(report.per_link_items.values()) == {1}
        assert report.total_items == 4

    def test_unit_budget_keeps_star_shape(self):
        graph = network.build_graph(plus_deployment(), comm_radius=1.0)
        forest = routing.build_hybrid_tree(graph, 0, 1)
        assert all(p == 0 for p in forest.trees[0].parents.values())


class TestUnitBudget:
    def test_every_link_carries_one(self):
        dep = network.deploy((10, 10), 0.6, seed=4)
        graph = network.build_graph(dep, comm_radius=2.0)
        forest = routing.build_hybrid_tree(graph, dep.sink_id, 1)
        report = routing.account_traffic(forest, graph)
        assert set(report.per_link_items.values()) == {1}
        assert report.total_items == graph.n - 1


class TestShortestPathOptimality:
    def test_tree_paths_match_bellman_ford(self):
        dep = network.deploy((20, 20), 0.5, seed=2)
        graph = network.build_graph(dep, comm_radius=3.0)
        forest = routing.build_spt(graph, dep.sink_id)
        parents = forest.trees[0].parents

        rows = graph.edges[:, 0]
        cols = graph.edges[:, 1]
        mat = sp.coo_matrix(
            (
                np.concatenate([graph.link_cost, graph.link_cost]),
                (np.concatenate([rows, cols]), np.concatenate([cols, rows])),
            ),
            shape=(graph.n, graph.n),
        )
        dist = bellman_ford(mat, directed=False, indices=dep.sink_id)

        for v in forest.trees[0].members:
            cost = 0.0
            node = v
            while node != dep.sink_id:
                par = parents[node] if node != dep.sink_id else None
                cost += graph.cost_of(node, par)
                node = par
            assert cost == pytest.approx(dist[v], abs=1e-9)

    def test_cost_decreases_toward_sink(self):
        dep = network.deploy((20, 20), 0.5, seed=2)
        graph = network.build_graph(dep, comm_radius=3.0)
        forest = routing.build_spt(graph, dep.sink_id)
        parents = forest.trees[0].parents

        rows = graph.edges[:, 0]
        cols = graph.edges[:, 1]
        mat = sp.coo_matrix(
            (
                np.concatenate([graph.link_cost, graph.link_cost]),
                (np.concatenate([rows, cols]), np.concatenate([cols, rows])),
            ),
            shape=(graph.n, graph.n),
        )
        dist = bellman_ford(mat, directed=False, indices=dep.sink_id)
        for child, par in parents.items():
            parent_dist = 0.0 if par == dep.sink_id else dist[par]
            assert parent_dist < dist[child]


class TestAccountingMatchesSimulation:
    """Accounting via subtree sizes must agree with leaf-up message passing."""

    def test_single_tree_random_deployments(self):
        tested = 0
        for seed in range(30):
            dep = network.deploy((8, 8), 0.8, seed=seed)
            try:
                graph = network.build_graph(dep, comm_radius=2.0)
            except network.ConnectivityError:
                continue
            tested += 1
            for scheme, k in [
                (routing.NON_AGG, None),
                (routing.PLAIN_CS, 2),
                (routing.HYBRID_CS, 2),
                (routing.HYBRID_CS, 5),
            ]:
                if scheme == routing.NON_AGG:
                    forest = routing.build_spt(graph, dep.sink_id)
                else:
                    forest = routing.build_hybrid_tree(graph, dep.sink_id, k)
                    if scheme == routing.PLAIN_CS:
                        forest = routing.AggregationForest(
                            scheme=scheme, sink=dep.sink_id, trees=forest.trees
                        )
                report = routing.account_traffic(forest, graph)
                per_link, energy = simulate_messages(forest, graph)
                assert dict(report.per_link_items) == per_link
                assert report.total_items == sum(per_link.values())
                assert report.total_energy == pytest.approx(energy, rel=1e-12)
        assert tested >= 20

    def test_multi_tree_forest(self):
        dep = network.deploy((12, 12), 0.7, seed=1)
        graph = network.build_graph(dep, comm_radius=2.0)
        forest = routing.partition_forest(graph, dep.sink_id, 2, [3, 4])
        report = routing.account_traffic(forest, graph)
        per_link, energy = simulate_messages(forest, graph)
        assert dict(report.per_link_items) == per_link
        assert report.total_energy == pytest.approx(energy, rel=1e-12)


class TestPartition:
    def setup_method(self):
        self.dep = network.deploy((30, 30), 0.5, seed=0)
        self.graph = network.build_graph(self.dep, comm_radius=2.0)

    def test_regions_cover_and_balance(self):
        forest = routing.partition_forest(self.graph, self.dep.sink_id, 4, [30] * 4)
        members = forest.all_members
        assert members == [v for v in range(self.graph.n) if v != self.dep.sink_id]
        sizes = [len(t.members) for t in forest.trees]
        mean = sum(sizes) / len(sizes)
        assert max(abs(s - mean) for s in sizes) <= 0.10 * mean

    def test_roots_upload_directly_to_sink(self):
        forest = routing.partition_forest(self.graph, self.dep.sink_id, 4, [30] * 4)
        for tree in forest.trees:
            assert tree.parents[tree.root] == self.dep.sink_id
            # one-hop root: the uplink must be a real link
            self.graph.cost_of(tree.root, self.dep.sink_id)

    def test_parents_stay_inside_the_tree(self):
        forest = routing.partition_forest(self.graph, self.dep.sink_id, 4, [30] * 4)
        for tree in forest.trees:
            members = set(tree.members)
            for child, par in tree.parents.items():
                if child == tree.root:
                    assert par == self.dep.sink_id
                else:
                    assert par in members
            # every member reaches the root without leaving the tree
            for v in tree.members:
                node, hops = v, 0
                while node != tree.root:
                    node = tree.parents[node]
                    hops += 1
                    assert hops <= len(members)

    def test_single_tree_matches_direct_build(self):
        forest = routing.partition_forest(self.graph, self.dep.sink_id, 1, [10])
        direct = routing.build_hybrid_tree(self.graph, self.dep.sink_id, 10)
        assert dict(forest.trees[0].parents) == dict(direct.trees[0].parents)

    def test_budget_count_mismatch(self):
        with pytest.raises(ValueError):
            routing.partition_forest(self.graph, self.dep.sink_id, 2, [5])

    def test_budget_out_of_range(self):
        with pytest.raises(ValueError):
            routing.partition_forest(self.graph, self.dep.sink_id, 2, [0, 5])
        with pytest.raises(ValueError):
            routing.build_hybrid_tree(self.graph, self.dep.sink_id, 0)
        with pytest.raises(ValueError):
            routing.build_hybrid_tree(self.graph, self.dep.sink_id, self.graph.n + 1)

    def test_more_trees_than_sink_neighbors(self):
        graph = network.build_graph(plus_deployment(), comm_radius=1.0)
        with pytest.raises(ValueError, match="fewer"):
            routing.partition_forest(graph, 0, 5, [1] * 5)


class TestForestJson:
    def test_round_trip(self, tmp_path):
        dep = network.deploy((12, 12), 0.7, seed=1)
        graph = network.build_graph(dep, comm_radius=2.0)
        forest = routing.partition_forest(graph, dep.sink_id, 2, [3, 4])
        path = tmp_path / "forest.json"
        routing.save_forest_json(forest, path)
        loaded = routing.load_forest_json(path)
        assert loaded.scheme == forest.scheme
        assert loaded.sink == forest.sink
        for a, b in zip(loaded.trees, forest.trees):
            assert a.tree_id == b.tree_id
            assert a.root == b.root
            assert a.k == b.k
            assert dict(a.parents) == dict(b.parents)
        before = routing.account_traffic(forest, graph)
        after = routing.account_traffic(loaded, graph)
        assert after.total_energy == before.total_energy


class TestEnergyOrdering:
    def test_hybrid_never_beats_plain_per_link(self):
        for seed in (0, 3, 7):
            dep = network.deploy((10, 10), 0.7, seed=seed)
            try:
                graph = network.build_graph(dep, comm_radius=2.0)
            except network.ConnectivityError:
                continue
            for k in (2, 5, 10):
                hybrid = routing.build_hybrid_tree(graph, dep.sink_id, k)
                plain = routing.AggregationForest(
                    scheme=routing.PLAIN_CS, sink=dep.sink_id, trees=hybrid.trees
                )
                e_h = routing.account_traffic(hybrid, graph).total_energy
                e_p = routing.account_traffic(plain, graph).total_energy
                assert e_h <= e_p + 1e-12

    def test_shared_nodes_rejected(self):
        rec = routing.TreeRecord(
            tree_id=0, root=1, members=(1, 2), parents={1: 0, 2: 1}, k=1
        )
        dup = routing.TreeRecord(
            tree_id=1, root=2, members=(2, 3), parents={2: 0, 3: 2}, k=1
        )
        with pytest.raises(ValueError, match="share"):
            routing.AggregationForest(scheme=routing.HYBRID_CS, sink=0, trees=(rec, dup))
