#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved
import os
import tempfile
import unittest

import networkx as nx
import numpy as np
from distsum.graph import (
    DisconnectedGraphError,
    Graph,
    GraphSpec,
    MixingProfile,
    bfs_tree,
    diameter,
    generate,
    load_edge_list,
    mixing_time,
    save_edge_list,
)
from hypothesis import given, settings
from hypothesis import strategies as st


@st.composite
def connected_graphs(draw, max_nodes=12):
    n = draw(st.integers(2, max_nodes))
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=2 * n))
    edges = [(v, v + 1) for v in range(n - 1)] + [(u, v) for u, v in extra if u != v]
    perm = draw(st.permutations(range(n)))
    return Graph.from_edges(n, [(perm[u], perm[v]) for u, v in edges])


class Graph_test(unittest.TestCase):
    def test_clique_shape(self):
        g = generate(GraphSpec("clique", (5,)))
        self.assertEqual(g.n, 5)
        self.assertEqual(g.m, 10)
        self.assertEqual(set(g.degrees.tolist()), {4})

    def test_rejects_asymmetric_adjacency(self):
        with self.assertRaises(ValueError):
            Graph(2, ((1,), ()))

    def test_rejects_self_loop(self):
        with self.assertRaises(ValueError):
            Graph.from_edges(2, [(0, 0), (0, 1)])

    def test_rejects_disconnected(self):
        with self.assertRaises(DisconnectedGraphError):
            Graph.from_edges(4, [(0, 1), (2, 3)])

    def test_edge_ids(self):
        g = generate(GraphSpec("path", (3,)))
        self.assertEqual(g.indices.tolist(), [1, 0, 2, 1])
        self.assertEqual(g.edge_ids([0, 1, 0], [1, 2, 2]).tolist(), [0, 2, -1])
        self.assertEqual(g.edge_tails.tolist(), [0, 1, 1, 2])

    @given(connected_graphs())
    @settings(deadline=None, max_examples=50)
    def test_degree_sum(self, g):
        self.assertEqual(int(g.degrees.sum()), 2 * g.m)
        self.assertEqual(len(g.indices), 2 * g.m)
        self.assertTrue(np.array_equal(g.edge_ids(g.edge_tails, g.indices), np.arange(2 * g.m)))


class Tree_test(unittest.TestCase):
    def test_path_rooted_in_middle(self):
        tree = bfs_tree(generate(GraphSpec("path", (5,))), 2)
        self.assertEqual(tree.parent, (1, 2, -1, 2, 3))
        self.assertEqual(tree.children[2], (1, 3))
        self.assertEqual(tree.preorder, (2, 1, 0, 3, 4))
        self.assertEqual(tree.depth, 2)
        self.assertEqual(int(tree.height[2]), 2)
        self.assertEqual(tree.subtree_size.tolist(), [1, 2, 5, 2, 1])
        self.assertEqual(tree.path_to_root(0), [0, 1, 2])
        self.assertEqual(tree.nodes_at_level(1).tolist(), [1, 3])

    def test_clique_star_tree(self):
        tree = bfs_tree(generate(GraphSpec("clique", (6,))), 0)
        self.assertEqual(tree.depth, 1)
        self.assertEqual(tree.children[0], (1, 2, 3, 4, 5))

    def test_root_out_of_range(self):
        with self.assertRaises(ValueError):
            bfs_tree(generate(GraphSpec("clique", (3,))), 3)

    @given(connected_graphs())
    @settings(deadline=None, max_examples=50)
    def test_levels_are_distances(self, g):
        tree = bfs_tree(g, 0)
        distances = nx.single_source_shortest_path_length(g.to_networkx(), 0)
        self.assertEqual(tree.level.tolist(), [distances[v] for v in range(g.n)])
        for v in range(1, g.n):
            self.assertTrue(g.has_edge(v, tree.parent[v]))


class GraphSpec_test(unittest.TestCase):
    def test_parse(self):
        spec = GraphSpec.parse("random-regular:64:8:7")
        self.assertEqual((spec.family, spec.params, spec.seed), ("random-regular", (64, 8), 7))
        self.assertEqual(str(spec), "random-regular:64:8:7")
        self.assertEqual(GraphSpec.parse("clique:16").params, (16,))

    def test_unknown_family(self):
        with self.assertRaises(ValueError):
            GraphSpec.parse("torus:4")

    def test_dumbbell(self):
        g = generate(GraphSpec("dumbbell", (3, 2)))
        self.assertEqual((g.n, g.m), (8, 13))
        joined = generate(GraphSpec("dumbbell", (3, 0)))
        self.assertEqual((joined.n, joined.m), (6, 7))
        self.assertEqual(diameter(g), 4)

    def test_blackboard(self):
        g = generate(GraphSpec("blackboard", (3, 4)))
        self.assertEqual((g.n, g.m), (13, 21))
        self.assertEqual(int(g.degrees[12]), 3)

    def test_star_path_cycle(self):
        self.assertEqual(generate(GraphSpec("star", (5,))).m, 4)
        self.assertEqual(diameter(generate(GraphSpec("path", (5,)))), 4)
        self.assertEqual(generate(GraphSpec("cycle", (7,))).m, 7)
        with self.assertRaises(ValueError):
            generate(GraphSpec("cycle", (2,)))

    def test_random_regular_is_deterministic(self):
        a = generate(GraphSpec("random-regular", (64, 8), 3))
        b = generate(GraphSpec("random-regular", (64, 8), 3))
        self.assertEqual(set(a.degrees.tolist()), {8})
        self.assertEqual(a.edges(), b.edges())

    def test_edge_list_file(self):
        g = generate(GraphSpec("dumbbell", (3, 1)))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "g.txt")
            save_edge_list(g, path)
            with open(path) as f:
                self.assertEqual(f.readline().split(), [str(g.n), str(g.m)])
            self.assertEqual(load_edge_list(path).edges(), g.edges())
            self.assertEqual(generate(GraphSpec.parse(f"file:{path}")).m, g.m)


class MixingTime_test(unittest.TestCase):
    def test_two_nodes(self):
        self.assertEqual(mixing_time(generate(GraphSpec("clique", (2,)))), 1)

    def test_clique_16(self):
        self.assertEqual(mixing_time(generate(GraphSpec("clique", (16,)))), 8)

    def test_exact_threshold_is_tight(self):
        g = generate(GraphSpec("cycle", (9,)))
        profile = MixingProfile(g)
        tau = profile.tau_exact
        self.assertTrue(profile.satisfies(tau))
        self.assertFalse(profile.satisfies(tau - 1))

    def test_threshold_monotone(self):
        g = generate(GraphSpec("random-regular", (32, 4), 1))
        self.assertLessEqual(mixing_time(g, 1e-1), mixing_time(g, 1e-3))
        self.assertLessEqual(mixing_time(g, 1e-3), mixing_time(g, 1e-6))

    def test_distribution_converges(self):
        g = generate(GraphSpec("dumbbell", (4, 1)))
        profile = MixingProfile(g)
        p = profile.distribution(0, 400)
        self.assertAlmostEqual(float(p.sum()), 1.0)
        self.assertTrue(np.allclose(p, g.degrees / (2 * g.m), atol=1e-6))
