#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved
import dataclasses
import json
import os
import tempfile
import unittest

import numpy as np
import pandas as pd
import yaml
from distsum.harness import (
    CSV_COLUMNS,
    SCHEMA_VERSION,
    ConfigInspector,
    Constants,
    ExperimentConfig,
    InvalidConfigException,
    expand_grid,
    generate_values,
    load_document,
    register_stats,
    run_experiment,
    run_trial,
    sweep,
    write_records,
)
from distsum.utils import stats
from distsum.utils.stats import StatType


def _f0_config(**overrides) -> ExperimentConfig:
    data = dict(algorithm="f0", graph="clique:16", N=16, params={"eps": 0.5}, seeds=[0, 1])
    data.update(overrides)
    return ExperimentConfig.from_dict(data)


class Constants_test(unittest.TestCase):
    def test_defaults(self):
        constants = Constants.from_env({})
        self.assertEqual((constants.c0, constants.C, constants.C_prime), (8, 4, 8))
        self.assertEqual((constants.c_med, constants.c_ams, constants.c1, constants.cap_factor), (2, 8, 6, 50))

    def test_overrides(self):
        constants = Constants.from_env({"DISTSUM_CONSTANTS": "c0=10, C=6, c1=2.5"})
        self.assertEqual((constants.c0, constants.C, constants.c1), (10, 6.0, 2.5))
        self.assertIsInstance(constants.c0, int)

    def test_rejects(self):
        for text in ("bogus=1", "c0"):
            with self.assertRaises(ValueError):
                Constants.from_env({"DISTSUM_CONSTANTS": text})


class ExperimentConfig_test(unittest.TestCase):
    def test_digest_ignores_seeds(self):
        a = _f0_config(seeds=[0])
        b = _f0_config(seeds=[5, 6, 7])
        self.assertEqual(a.digest, b.digest)
        self.assertEqual(len(a.digest), 16)
        self.assertNotEqual(a.digest, a.with_value("params.eps", 0.25).digest)

    def test_with_value(self):
        config = _f0_config()
        changed = config.with_value("params.median_width", 9).with_value("graph", "cycle:8")
        self.assertEqual(changed.params, {"eps": 0.5, "median_width": 9})
        self.assertEqual(changed.graph, "cycle:8")
        self.assertEqual(config.params, {"eps": 0.5})

    def test_unknown_field(self):
        with self.assertRaises(ValueError):
            ExperimentConfig.from_dict({"algorithm": "f0", "graph": "clique:4", "N": 4, "colour": "red"})

    def test_load_json_and_yaml(self):
        data = _f0_config().to_dict()
        with tempfile.TemporaryDirectory() as tmp:
            json_path = os.path.join(tmp, "exp.json")
            yaml_path = os.path.join(tmp, "exp.yaml")
            with open(json_path, "w") as f:
                json.dump(data, f)
            with open(yaml_path, "w") as f:
                yaml.safe_dump(data, f)
            self.assertEqual(ExperimentConfig.load(json_path), _f0_config())
            self.assertEqual(ExperimentConfig.load(yaml_path), _f0_config())


class GenerateValues_test(unittest.TestCase):
    def test_null_fraction(self):
        vals = generate_values(40, 100, {"kind": "all-distinct"}, 0.25, np.random.default_rng(0))
        self.assertEqual(int(vals.nonempty.sum()), 30)
        self.assertEqual(len(set(vals.values[vals.nonempty].tolist())), 30)
        self.assertEqual(vals.N, 100)

    def test_kinds(self):
        rng = np.random.default_rng(1)
        single = generate_values(10, 5, {"kind": "single", "value": 4}, 0.0, rng)
        self.assertEqual(set(single.values.tolist()), {4})
        uniform = generate_values(200, 50, {"kind": "uniform", "support": 6}, 0.0, rng)
        self.assertTrue(set(uniform.values.tolist()) <= set(range(1, 7)))
        zipf = generate_values(2000, 50, {"kind": "zipf", "alpha": 2.0, "support": 10}, 0.0, rng)
        counts = np.bincount(zipf.values, minlength=11)
        self.assertEqual(int(counts.argmax()), 1)
        self.assertTrue(set(zipf.values.tolist()) <= set(range(1, 11)))

    def test_same_seed_same_instance(self):
        a = generate_values(64, 64, {"kind": "zipf", "alpha": 1.2}, 0.3, np.random.default_rng(3))
        b = generate_values(64, 64, {"kind": "zipf", "alpha": 1.2}, 0.3, np.random.default_rng(3))
        self.assertEqual(a.values.tolist(), b.values.tolist())

    def test_rejects(self):
        with self.assertRaises(ValueError):
            generate_values(10, 5, {"kind": "all-distinct"}, 0.0, np.random.default_rng(0))
        with self.assertRaises(ValueError):
            generate_values(10, 5, {"kind": "gaussian"}, 0.0, np.random.default_rng(0))


class RunTrial_test(unittest.TestCase):
    def test_congest_trial(self):
        record = run_trial(_f0_config(), 0, Constants())
        self.assertEqual(record.status, "ok")
        self.assertEqual(record.truth, 16.0)
        self.assertLessEqual(record.rel_error, 0.5)
        self.assertGreater(record.rounds, 0)
        self.assertGreater(record.messages, 0)
        self.assertEqual(record.schema_version, SCHEMA_VERSION)

    def test_deterministic(self):
        a = run_trial(_f0_config(), 3, Constants())
        b = run_trial(_f0_config(), 3, Constants())
        self.assertEqual((a.estimate, a.rounds, a.messages), (b.estimate, b.rounds, b.messages))

    def test_gossip_count(self):
        config = ExperimentConfig(
            "push_sum_count", "clique:16", 8, model="gossip-ideal", values={"kind": "uniform"}, null_fraction=0.5
        )
        record = run_trial(config, 2, Constants())
        self.assertEqual(record.status, "ok")
        self.assertEqual((record.estimate, record.truth, record.rel_error), (8.0, 8.0, 0.0))
        self.assertIsNone(record.congest_rounds)

    def test_top_k_detail(self):
        config = ExperimentConfig(
            "top_k", "random-regular:32:4:1", 8, values={"kind": "zipf", "alpha": 1.5}, params={"k": 3}
        )
        record = run_trial(config, 0, Constants())
        self.assertTrue(record.detail["exact"])
        self.assertEqual(len(record.detail["top"]), 3)
        self.assertEqual(record.rel_error, 0.0)

    def test_round_cap(self):
        record = run_trial(_f0_config(round_cap=1), 0, Constants())
        self.assertEqual(record.status, "failed")
        self.assertTrue(record.reason.startswith("TrialCapExceeded"))
        self.assertIn("cap", record.reason)
        self.assertEqual(record.rounds, 0)

    def test_round_cap_stops_gossip(self):
        config = ExperimentConfig("push_sum_count", "clique:16", 16, model="gossip-ideal", round_cap=3)
        record = run_trial(config, 0, Constants())
        self.assertEqual(record.status, "failed")
        self.assertTrue(record.reason.startswith("TrialCapExceeded"))

    def test_generous_round_cap(self):
        record = run_trial(_f0_config(round_cap=10 ** 6), 0, Constants())
        self.assertEqual(record.status, "ok")
        self.assertLessEqual(record.rounds, 10 ** 6)

    def test_disconnected_topology(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "edges.txt")
            with open(path, "w") as f:
                f.write("4 2\n1 2\n3 4\n")
            record = run_trial(_f0_config(graph=f"file:{path}"), 0, Constants())
        self.assertEqual(record.status, "failed")
        self.assertTrue(record.reason.startswith("DisconnectedGraphError"))

    def test_unusable_instance(self):
        record = run_trial(_f0_config(N=8), 0, Constants())
        self.assertEqual(record.status, "failed")
        self.assertTrue(record.reason.startswith("ValueError"))

    def test_protocol_violation(self):
        config = ExperimentConfig("push_sum_count", "clique:16", 16, model="gossip-ideal")
        record = run_trial(config, 0, Constants(c0=1))
        self.assertEqual(record.status, "failed")
        self.assertTrue(record.reason.startswith("ProtocolViolation"))

    def test_empty_instance(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "empty.txt")
            with open(path, "w") as f:
                f.write("# no values\n")
            config = ExperimentConfig(
                "fp_ams", "cycle:4", 3, values={"kind": "file", "path": path}, params={"p": 2, "eps": 0.5}
            )
            record = run_trial(config, 0, Constants())
        self.assertEqual(record.status, "failed")
        self.assertTrue(record.reason.startswith("EmptyInstanceError"))


class _NullWriter:
    def add_scalar(self, *args, **kwargs):
        pass


class RunExperiment_test(unittest.TestCase):
    def setUp(self):
        stats.set_global_summary_writer(_NullWriter())

    def tearDown(self):
        stats.clear()
        stats.set_global_summary_writer(None)

    def test_failed_trials_do_not_abort(self):
        records = run_experiment(_f0_config(N=8), constants=Constants(), progress=False)
        self.assertEqual([r.status for r in records], ["failed", "failed"])

    def test_track_stats(self):
        run_experiment(_f0_config(), constants=Constants(), progress=False, track_stats=True)
        registered = {(s.type, s.name): s for s in stats.Stats}
        self.assertEqual(set(registered), {(t, "f0") for t in StatType})
        self.assertEqual(registered[(StatType.ROUNDS, "f0")].count, 2)
        self.assertEqual(len(registered[(StatType.ERROR, "f0")].reported), 2)
        register_stats("f0")
        self.assertEqual(len(stats.Stats), len(StatType))

    def test_stats_off_by_default(self):
        run_experiment(_f0_config(), constants=Constants(), progress=False)
        self.assertEqual(stats.Stats, [])

    def test_records_in_seed_order(self):
        records = run_experiment(_f0_config(seeds=[4, 1, 2]), constants=Constants(), progress=False)
        self.assertEqual([r.seed for r in records], [4, 1, 2])
        self.assertEqual(len({r.config_digest for r in records}), 1)

    def test_identical_reruns(self):
        def strip(records):
            return [dataclasses.replace(r, wall_time=0.0).to_json() for r in records]

        first = run_experiment(_f0_config(), constants=Constants(), progress=False)
        second = run_experiment(_f0_config(), constants=Constants(), progress=False)
        self.assertEqual(strip(first), strip(second))

    def test_invalid_config(self):
        with self.assertRaises(InvalidConfigException):
            run_experiment(_f0_config(params={"eps": 2.0}), progress=False)

    def test_expand_grid(self):
        configs = expand_grid(_f0_config(), {"params.eps": [0.5, 0.25], "graph": ["clique:16", "cycle:16"]})
        self.assertEqual(len(configs), 4)
        self.assertEqual(
            [(c.graph, c.params["eps"]) for c in configs],
            [("clique:16", 0.5), ("clique:16", 0.25), ("cycle:16", 0.5), ("cycle:16", 0.25)],
        )
        self.assertEqual(len({c.digest for c in configs}), 4)

    def test_sweep_is_sorted(self):
        records = sweep(_f0_config(seeds=[1, 0]), {"params.eps": [0.5, 0.75]}, constants=Constants(), progress=False)
        keys = [(r.config_digest, r.seed) for r in records]
        self.assertEqual(keys, sorted(keys))
        self.assertEqual(len(records), 4)


class WriteRecords_test(unittest.TestCase):
    def setUp(self):
        self.records = run_experiment(_f0_config(), constants=Constants(), progress=False)

    def test_csv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "out.csv")
            write_records(self.records, path)
            frame = pd.read_csv(path)
        self.assertEqual(list(frame.columns), CSV_COLUMNS)
        self.assertEqual(frame["seed"].tolist(), [0, 1])
        self.assertEqual(frame["rounds"].tolist(), [r.rounds for r in self.records])

    def test_jsonl(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "out.jsonl")
            write_records(self.records, path)
            with open(path) as f:
                rows = [json.loads(line) for line in f]
        self.assertEqual(len(rows), 2)
        self.assertEqual(rows[0]["schema_version"], SCHEMA_VERSION)
        self.assertEqual(rows[1]["estimate"], self.records[1].estimate)


EXPERIMENTS = os.path.join(os.path.dirname(__file__), "..", "..", "experiments")


@unittest.skipUnless(os.path.isdir(EXPERIMENTS), "experiment configs are not checked out")
class ExperimentFiles_test(unittest.TestCase):
    def test_configs_are_valid(self):
        inspector = ConfigInspector()
        names = sorted(os.listdir(EXPERIMENTS))
        self.assertGreater(len(names), 0)
        for name in names:
            document = load_document(os.path.join(EXPERIMENTS, name))
            if "grid" in document:
                configs = expand_grid(ExperimentConfig.from_dict(document["base"]), document["grid"])
            else:
                configs = [ExperimentConfig.from_dict(document)]
            for config in configs:
                self.assertTrue(inspector.validate(config), name)
