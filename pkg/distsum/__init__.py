#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved

from . import utils
from .congest_sketches import ValueAssignment, f0_estimate, f2_estimate, fp_ams_estimate
from .engines import CongestEngine, GossipEngine, ProtocolViolation, RoundStats, TrialCapExceeded
from .exact_sum import exact_g_sum, top_k
from .gossip_algorithms import fk_estimate, fp_estimate, lp_sample, preprocess_duplicate, push_sum
from .gossip_emulation import emulate_setup, emulated_engine
from .graph import Graph, GraphSpec, generate, mixing_time
from .harness import ExperimentConfig, run_experiment
from .version import __version__


__all__ = [
    "CongestEngine",
    "ExperimentConfig",
    "GossipEngine",
    "Graph",
    "GraphSpec",
    "ProtocolViolation",
    "RoundStats",
    "TrialCapExceeded",
    "ValueAssignment",
    "emulate_setup",
    "emulated_engine",
    "exact_g_sum",
    "f0_estimate",
    "f2_estimate",
    "fk_estimate",
    "fp_ams_estimate",
    "fp_estimate",
    "generate",
    "lp_sample",
    "mixing_time",
    "preprocess_duplicate",
    "push_sum",
    "run_experiment",
    "top_k",
    "utils",
    "__version__",
]
