#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved
import math
import os
import unittest

import numpy as np
from distsum.engines import CongestEngine, ProtocolViolation, TrialCapExceeded
from distsum.graph import Graph, GraphSpec, bfs_tree, diameter, generate
from distsum.primitives import (
    CostModelRouter,
    HashFunction,
    TreeRouter,
    aggregate_sum,
    aggregate_sum_blocks,
    broadcast_words,
    elect_leader_and_ids,
    evaluate_hashes,
    is_prime,
    make_router,
    next_prime,
    upcast_k_smallest_grouped,
)
from hypothesis import given, settings
from hypothesis import strategies as st


SLOW = os.environ.get("DISTSUM_SLOW_TESTS") == "1"


def _random_graph(rng, n):
    edges = [(v, int(rng.integers(0, v))) for v in range(1, n)]
    edges += [tuple(rng.integers(0, n, size=2).tolist()) for _ in range(n // 2)]
    return Graph.from_edges(n, [(u, v) for u, v in edges if u != v])


class Prime_test(unittest.TestCase):
    @given(st.integers(0, 5000))
    @settings(deadline=None)
    def test_is_prime_matches_trial_division(self, x):
        expected = x >= 2 and all(x % d for d in range(2, int(x ** 0.5) + 1))
        self.assertEqual(is_prime(x), expected)

    def test_next_prime(self):
        self.assertEqual(next_prime(1_000_000), 1_000_003)
        self.assertEqual(next_prime(2), 2)
        self.assertTrue(is_prime(2 ** 61 - 1))
        self.assertFalse(is_prime(561))


class HashFunction_test(unittest.TestCase):
    def test_range_and_words(self):
        h = HashFunction.random("pairwise", 100, np.random.default_rng(0))
        self.assertEqual(h.modulus, 1_000_003)
        values = h(np.arange(1, 101))
        self.assertTrue(((values >= 0) & (values < h.modulus)).all())
        self.assertEqual(h.words(), h.coefficients + (h.modulus,))
        self.assertEqual(h.word_bits, 20)

    def test_big_modulus_is_exact(self):
        domain = 1 << 22
        h = HashFunction.random("fourwise", domain, np.random.default_rng(1))
        x = np.array([1, 12345, domain])
        expected = []
        for v in x.tolist():
            acc = 0
            for c in h.coefficients:
                acc = (acc * v + c) % h.modulus
            expected.append(acc)
        self.assertEqual([int(v) for v in h(x)], expected)

    def test_batch_evaluation(self):
        rng = np.random.default_rng(2)
        hashes = [HashFunction.random("fourwise", 50, rng) for _ in range(5)]
        x = np.arange(1, 51)
        batch = evaluate_hashes(hashes, x)
        for row, h in zip(batch, hashes):
            self.assertTrue(np.array_equal(row, h(x)))
        self.assertTrue(set(np.unique(hashes[0].sign(x)).tolist()) <= {-1, 1})

    def test_pairwise_collisions(self):
        rng = np.random.default_rng(3)
        collisions = 0
        trials = 2000
        for _ in range(trials):
            h = HashFunction.random("pairwise", 64, rng)
            collisions += int(h(np.array([3]))[0] == h(np.array([40]))[0])
        self.assertLessEqual(collisions, 2)

    def test_min_modulus(self):
        rng = np.random.default_rng(4)
        self.assertEqual(HashFunction.random("pairwise", 1, rng).modulus, 11)
        self.assertEqual(HashFunction.random("pairwise", 1, rng, min_modulus=1000).modulus, 1009)

    def test_unknown_family(self):
        with self.assertRaises(ValueError):
            HashFunction.random("threewise", 10, np.random.default_rng(0))


class Election_test(unittest.TestCase):
    def _check(self, g):
        leader, tree, ids, stats = elect_leader_and_ids(CongestEngine(g))
        self.assertEqual(leader, 0)
        self.assertEqual(tree.level.tolist(), bfs_tree(g, 0).level.tolist())
        self.assertEqual(sorted(ids.tolist()), list(range(g.n)))
        for position, v in enumerate(tree.preorder):
            self.assertEqual(int(ids[v]), position)
        self.assertLessEqual(stats.rounds, 3 * diameter(g) + 4)

    def test_path(self):
        self._check(generate(GraphSpec("path", (9,))))

    def test_random_regular(self):
        self._check(generate(GraphSpec("random-regular", (32, 4), 2)))

    def test_random_graphs(self):
        rng = np.random.default_rng(4)
        for n in (2, 7, 20):
            self._check(_random_graph(rng, n))


class Aggregate_test(unittest.TestCase):
    def test_single_counter(self):
        g = generate(GraphSpec("dumbbell", (4, 3)))
        tree = bfs_tree(g, 0)
        values = np.arange(g.n)
        total, stats = aggregate_sum(CongestEngine(g), tree, values)
        self.assertEqual(int(total[0]), int(values.sum()))
        self.assertLessEqual(stats.rounds, 2 * tree.depth)

    def test_many_counters(self):
        g = generate(GraphSpec("random-regular", (16, 3), 1))
        tree = bfs_tree(g, 0)
        values = np.random.default_rng(5).integers(0, 10, size=(16, 6))
        total, stats = aggregate_sum(CongestEngine(g), tree, values)
        self.assertEqual(total.tolist(), values.sum(axis=0).tolist())
        self.assertLessEqual(stats.rounds, 2 * tree.depth + 6 - 1)

    def test_root_only(self):
        g = generate(GraphSpec("path", (5,)))
        _, stats = aggregate_sum(CongestEngine(g), bfs_tree(g, 0), np.ones(5), broadcast=False)
        self.assertEqual(stats.rounds, 4)

    def test_big_integers(self):
        g = generate(GraphSpec("path", (3,)))
        values = np.array([2 ** 70, 1, 2 ** 70], dtype=object)
        engine = CongestEngine(g)
        total, stats = aggregate_sum(engine, bfs_tree(g, 0), values, broadcast=False)
        self.assertEqual(int(total[0]), 2 ** 71 + 1)
        self.assertEqual(stats.rounds, 1 + math.ceil(73 / engine.budget))

    def test_blocks_share_one_schedule(self):
        g = generate(GraphSpec("random-regular", (16, 3), 1))
        tree = bfs_tree(g, 0)
        values = np.random.default_rng(6).integers(0, 10, size=(16, 7))
        whole, expected = aggregate_sum(CongestEngine(g), tree, values, broadcast=False)
        blocks = (values[:, i : i + 3] for i in range(0, 7, 3))
        total, stats = aggregate_sum_blocks(CongestEngine(g), tree, blocks, broadcast=False)
        self.assertEqual(total.tolist(), whole.tolist())
        self.assertEqual((stats.rounds, stats.messages_sent), (expected.rounds, expected.messages_sent))

    def test_no_blocks(self):
        g = generate(GraphSpec("path", (3,)))
        total, stats = aggregate_sum_blocks(CongestEngine(g), bfs_tree(g, 0), [])
        self.assertEqual((len(total), stats.rounds), (0, 0))

    def test_overflow(self):
        g = generate(GraphSpec("path", (3,)))
        with self.assertRaises(ValueError):
            aggregate_sum(CongestEngine(g), bfs_tree(g, 0), [5, 5, 5], value_range=10)

    def test_broadcast_words(self):
        g = generate(GraphSpec("path", (4,)))
        self.assertEqual(broadcast_words(CongestEngine(g), bfs_tree(g, 0), [7]).rounds, 3)
        self.assertEqual(broadcast_words(CongestEngine(g), bfs_tree(g, 0), [7, 1, 2]).rounds, 5)


class GroupedUpcast_test(unittest.TestCase):
    def test_matches_sort(self):
        rng = np.random.default_rng(6)
        for _ in range(1000 if SLOW else 150):
            g = _random_graph(rng, int(rng.integers(1, 25)))
            tree = bfs_tree(g, 0)
            k, t = int(rng.integers(1, 4)), int(rng.integers(1, 5))
            distinct = bool(rng.integers(0, 2))
            items = [
                [(int(rng.integers(0, k)), int(rng.integers(0, 30))) for _ in range(int(rng.integers(0, 4)))]
                for _ in range(g.n)
            ]
            result, stats = upcast_k_smallest_grouped(
                CongestEngine(g), tree, items, k, t, value_bits=5, distinct=distinct
            )
            for j in range(k):
                values = [x for node in items for group, x in node if group == j]
                if distinct:
                    values = set(values)
                self.assertEqual(result[j], sorted(values)[:t])
            self.assertLessEqual(stats.rounds, 2 * tree.depth + k * t + 4)

    def test_rejects_bad_group(self):
        g = generate(GraphSpec("path", (2,)))
        with self.assertRaises(ValueError):
            upcast_k_smallest_grouped(CongestEngine(g), bfs_tree(g, 0), [[(2, 1)], []], 2, 1, value_bits=2)


class Router_test(unittest.TestCase):
    def test_tree_router_delivers_permutation(self):
        g = generate(GraphSpec("path", (6,)))
        engine = CongestEngine(g)
        router = TreeRouter(engine, bfs_tree(g, 0))
        src = np.arange(6)
        dst = src[::-1].copy()
        deliveries, stats = router.route(src, dst, bits=8, payloads=[f"m{v}" for v in src])
        for s, d in zip(src.tolist(), dst.tolist()):
            self.assertIn((s, f"m{s}"), deliveries[d])
        self.assertGreaterEqual(stats.rounds, 5)
        self.assertEqual(router.path(0, 5), [0, 1, 2, 3, 4, 5])
        self.assertEqual(router.path(3, 1), [3, 2, 1])

    def test_tree_router_queues(self):
        g = generate(GraphSpec("star", (6,)))
        router = TreeRouter(CongestEngine(g), bfs_tree(g, 0))
        _, stats = router.route([1, 2, 3, 4], [5, 5, 5, 5], bits=4)
        self.assertEqual(stats.max_edge_congestion, 4)
        self.assertEqual(stats.rounds, 5)

    def test_cost_model(self):
        engine = CongestEngine(generate(GraphSpec("clique", (16,))))
        router = CostModelRouter(engine)
        self.assertEqual(router.rounds_per_batch, 32)
        _, stats = router.route([1, 2], [2, 1], bits=8)
        self.assertEqual((stats.rounds, stats.messages_sent), (32, 2))
        self.assertEqual(router.route([3], [3], bits=8)[1].rounds, 0)
        with self.assertRaises(ProtocolViolation):
            router.route([1], [2], bits=engine.budget + 1)

    def test_cost_model_counts_against_round_cap(self):
        engine = CongestEngine(generate(GraphSpec("clique", (16,))), round_cap=40)
        router = CostModelRouter(engine)
        router.route([1, 2], [2, 1], bits=8)
        self.assertEqual(engine.rounds_used, 32)
        with self.assertRaises(TrialCapExceeded):
            router.route([1, 2], [2, 1], bits=8)

    def test_load_warning(self):
        g = generate(GraphSpec("path", (4,)))
        router = make_router("tree", CongestEngine(g), bfs_tree(g, 0))
        with self.assertWarns(UserWarning):
            router.route(np.zeros(40, dtype=int), np.full(40, 3), bits=4)

    def test_unknown_router(self):
        g = generate(GraphSpec("path", (3,)))
        with self.assertRaises(ValueError):
            make_router("teleport", CongestEngine(g), bfs_tree(g, 0))
