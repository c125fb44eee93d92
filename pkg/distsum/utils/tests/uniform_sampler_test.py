#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved
import unittest

import numpy as np
from distsum.utils.uniform_sampler import UniformPartnerSampler
from scipy import stats as scipy_stats


class UniformPartnerSampler_test(unittest.TestCase):
    def test_shape_and_range(self):
        sampler = UniformPartnerSampler(6, np.random.default_rng(0))
        maps = sampler.sample(10)
        self.assertEqual(maps.shape, (10, 6))
        self.assertTrue(((maps >= 0) & (maps < 6)).all())
        self.assertEqual(len(sampler), 6)
        self.assertEqual(next(iter(sampler)).shape, (6,))

    def test_pairs_are_uniform(self):
        n, rounds = 8, 20_000
        maps = UniformPartnerSampler(n, np.random.default_rng(1)).sample(rounds)
        pairs = np.bincount((np.arange(n)[None, :] * n + maps).ravel(), minlength=n * n)
        _, p = scipy_stats.chisquare(pairs)
        self.assertGreater(p, 1e-4)

    def test_self_partner_allowed(self):
        maps = UniformPartnerSampler(2, np.random.default_rng(2)).sample(200)
        self.assertTrue((maps == np.arange(2)).any())

    def test_seeded(self):
        a = UniformPartnerSampler(5, np.random.default_rng(3)).sample(4)
        b = UniformPartnerSampler(5, np.random.default_rng(3)).sample(4)
        self.assertTrue(np.array_equal(a, b))

    def test_rejects(self):
        with self.assertRaises(ValueError):
            UniformPartnerSampler(0)
