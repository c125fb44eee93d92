#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved
import unittest

from distsum.utils import stats
from distsum.utils.stats import Stat, StatType


class RecordingWriter:
    def __init__(self):
        self.scalars = []

    def add_scalar(self, tag, value, step):
        self.scalars.append((tag, value, step))


class Stat_test(unittest.TestCase):
    def setUp(self):
        self.writer = RecordingWriter()
        stats.set_global_summary_writer(self.writer)
        stats.clear()

    def tearDown(self):
        stats.clear()
        stats.set_global_summary_writer(None)

    def test_reports_every_window(self):
        stat = Stat(StatType.ROUNDS, "f0", frequency=0.25)
        for value in range(8):
            stat.log({"rounds": value})
        self.assertEqual(stat.reported, [{"rounds": 1.5}, {"rounds": 5.5}])
        self.assertEqual(self.writer.scalars[0], ("ROUNDS:f0/rounds", 1.5, 4))

    def test_reductions(self):
        peak = Stat(StatType.CONGESTION, "sort", frequency=0.5, reduction="max")
        latest = Stat(StatType.ERROR, "sort", frequency=0.5, reduction="sample")
        for value in (3, 1):
            peak.log({"c": value})
            latest.log({"e": value})
        self.assertEqual(peak.reported, [{"c": 3.0}])
        self.assertEqual(latest.reported, [{"e": 1.0}])

    def test_rejects(self):
        with self.assertRaises(ValueError):
            Stat(StatType.ROUNDS, "x", frequency=0)
        with self.assertRaises(ValueError):
            Stat(StatType.ROUNDS, "x", reduction="median")

    def test_update_filters(self):
        rounds = Stat(StatType.ROUNDS, "f2")
        other = Stat(StatType.ROUNDS, "top_k")
        errors = Stat(StatType.ERROR, "f2")
        stats.add(rounds, other, errors)
        stats.update(StatType.ROUNDS, "f2", rounds=10)
        self.assertEqual((rounds.count, other.count, errors.count), (1, 0, 0))
        stats.update(name="f2", rel_error=0.1)
        self.assertEqual((rounds.count, errors.count), (2, 1))
        stats.remove("f2")
        self.assertEqual(stats.Stats, [other])
