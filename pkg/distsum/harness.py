#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved
r"""
Experiment orchestration: configuration, instance generation, trial
execution against the oracle and result persistence.
"""
import dataclasses
import hashlib
import itertools
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
import yaml
from joblib import Parallel, delayed
from tqdm import tqdm

from . import oracles
from .congest_sketches import NULL, EmptyInstanceError, ValueAssignment, f0_estimate, f2_estimate, fp_ams_estimate
from .engines import GossipEngine, ProtocolViolation, TrialCapExceeded
from .exact_sum import GFunction, exact_g_sum, top_k
from .gossip_algorithms import count_nonempty, fk_estimate, fp_estimate, l0_sample, lp_sample
from .gossip_emulation import emulated_engine
from .graph import DisconnectedGraphError, Graph, GraphSpec, generate
from .utils import stats
from .utils.inspection import Inspector
from .utils.stats import Stat, StatType


logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CONSTANTS_ENV = "DISTSUM_CONSTANTS"
INSTANCE_STREAM = 0

MODELS = ("congest", "gossip-ideal", "gossip-emulated")
ROUTERS = ("tree", "cost-model")
VALUE_KINDS = ("all-distinct", "single", "zipf", "uniform", "file")
CONGEST_ALGORITHMS = ("f0", "f2", "fp_ams", "exact_g_sum", "top_k")
GOSSIP_ALGORITHMS = ("push_sum_count", "l0", "lp", "fk", "fp")
SAMPLERS = ("l0", "lp")
CSV_COLUMNS = [
    "config_digest",
    "seed",
    "algorithm",
    "estimate",
    "truth",
    "rel_error",
    "rounds",
    "messages",
    "max_congestion",
]


@dataclass(frozen=True)
class Constants:
    r"""
    Tunable constants of the algorithms.

    Example:
        >>> Constants.from_env({"DISTSUM_CONSTANTS": "c0=10,C=6"}).c0
        10
    """

    c0: int = 8
    C: float = 4
    C_prime: float = 8
    c_med: float = 2
    c_ams: float = 8
    c1: float = 6
    router_c: float = 1
    cap_factor: float = 50

    @classmethod
    def from_env(cls, environ: Optional[Dict[str, str]] = None) -> "Constants":
        environ = os.environ if environ is None else environ
        text = environ.get(CONSTANTS_ENV, "").strip()
        if not text:
            return cls()
        defaults = cls()
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        overrides = {}
        for item in text.split(","):
            name, sep, value = item.partition("=")
            name = name.strip()
            if not sep or not hasattr(defaults, name):
                raise ValueError(f"Unknown constant '{item}' in {CONSTANTS_ENV}")
            number = float(value)
            overrides[name] = int(number) if kinds[name] is int else number
        return dataclasses.replace(defaults, **overrides)


@dataclass
class ExperimentConfig:
    r"""
    One experiment: a topology, a value distribution, an algorithm with its
    parameters and the seeds to run.

    ``values`` holds the distribution: ``{"kind": "zipf", "alpha": 1.5,
    "support": 50}``, ``{"kind": "uniform", "support": 20}``,
    ``{"kind": "all-distinct"}``, ``{"kind": "single"}`` or
    ``{"kind": "file", "path": ...}``.
    """

    algorithm: str
    graph: str
    N: int
    model: str = "congest"
    values: Dict[str, Any] = field(default_factory=lambda: {"kind": "all-distinct"})
    null_fraction: float = 0.0
    params: Dict[str, Any] = field(default_factory=dict)
    router: str = "tree"
    seeds: List[int] = field(default_factory=lambda: [0])
    round_cap: Optional[int] = None
    name: str = ""

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"Unknown config fields {unknown}")
        return cls(**data)

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        return cls.from_dict(load_document(path))

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @property
    def digest(self) -> str:
        r"""
        SHA-256 of the canonical JSON form without the seeds.
        """
        body = self.to_dict()
        body.pop("seeds")
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_value(self, path: str, value: Any) -> "ExperimentConfig":
        r"""
        Copy with one field replaced; ``params.eps`` style paths reach into
        the dictionaries.
        """
        data = json.loads(json.dumps(self.to_dict()))
        head, _, rest = path.partition(".")
        if rest:
            data.setdefault(head, {})[rest] = value
        else:
            data[head] = value
        return ExperimentConfig.from_dict(data)


def load_document(path: str) -> Dict[str, Any]:
    with open(path) as f:
        if path.endswith((".yaml", ".yml")):
            return yaml.safe_load(f)
        return json.load(f)


class InvalidConfigException(Exception):
    r"""
    Exception class to be thrown in case
    the given experiment config violates an algorithm precondition.
    """

    pass


def _positive_eps(config: ExperimentConfig) -> bool:
    if config.algorithm not in ("f0", "f2", "fp_ams", "fk", "fp"):
        return True
    eps = config.params.get("eps")
    return isinstance(eps, (int, float)) and 0 < eps <= 1


def _moment_orders(config: ExperimentConfig) -> bool:
    p, k = config.params.get("p"), config.params.get("k")
    if config.algorithm in ("fp_ams", "lp"):
        return isinstance(p, int) and p >= 1
    if config.algorithm == "fk":
        return isinstance(k, int) and k >= 2
    if config.algorithm == "fp":
        return isinstance(p, int) and isinstance(k, int) and 2 <= k <= p
    return True


def _algorithm_fits_model(config: ExperimentConfig) -> bool:
    if config.model == "congest":
        return config.algorithm in CONGEST_ALGORITHMS
    return config.algorithm in GOSSIP_ALGORITHMS


def _values_known(config: ExperimentConfig) -> bool:
    kind = config.values.get("kind")
    if kind not in VALUE_KINDS:
        return False
    if kind == "zipf" and not isinstance(config.values.get("alpha"), (int, float)):
        return False
    if kind in ("zipf", "uniform"):
        support = config.values.get("support", config.N)
        return isinstance(support, int) and 1 <= support <= config.N
    return kind != "file" or bool(config.values.get("path"))


def _g_known(config: ExperimentConfig) -> bool:
    if config.algorithm != "exact_g_sum":
        return True
    try:
        GFunction.from_config(config.params.get("g", "distinct"))
    except ValueError:
        return False
    return True


def _graph_parses(config: ExperimentConfig) -> bool:
    try:
        GraphSpec.parse(config.graph)
    except ValueError:
        return False
    return True


class ConfigInspector:
    r"""
    Class to validate if an experiment config meets the preconditions of its
    algorithm before any trial runs.

    Active checks are listed in the ``ConfigInspector.inspectors`` attribute.
    """

    def __init__(self, should_throw: bool = True):
        r"""
        Args:
            should_throw: Whether the inspector should throw an exception or
                return False in case of validation error
        """
        self.should_throw = should_throw

        self.inspectors = [
            Inspector("model", lambda c: c.model in MODELS, f"model must be one of {MODELS}."),
            Inspector(
                "algorithm",
                _algorithm_fits_model,
                f"algorithm must be one of {CONGEST_ALGORITHMS} for congest "
                f"and one of {GOSSIP_ALGORITHMS} for the gossip models.",
            ),
            Inspector("graph", _graph_parses, "graph is not a valid topology description."),
            Inspector("domain", lambda c: isinstance(c.N, int) and c.N >= 1, "N must be a positive integer."),
            Inspector("values", _values_known, f"values kind must be one of {VALUE_KINDS} with support <= N."),
            Inspector("null_fraction", lambda c: 0 <= c.null_fraction < 1, "null_fraction must lie in [0, 1)."),
            Inspector("eps", _positive_eps, "params.eps must lie in (0, 1]."),
            Inspector("orders", _moment_orders, "params.p and params.k must satisfy 2 <= k <= p (p >= 1 alone)."),
            Inspector("g", _g_known, "params.g names no known g function."),
            Inspector("router", lambda c: c.router in ROUTERS, f"router must be one of {ROUTERS}."),
            Inspector(
                "seeds",
                lambda c: len(c.seeds) > 0 and all(isinstance(s, int) for s in c.seeds),
                "seeds must be a non-empty list of integers.",
            ),
            Inspector(
                "round_cap",
                lambda c: c.round_cap is None or (isinstance(c.round_cap, int) and c.round_cap > 0),
                "round_cap must be a positive integer.",
            ),
        ]

    def validate(self, config: ExperimentConfig) -> bool:
        r"""
        Runs every inspector on ``config``.

        Returns:
            True if successful. False if validation fails and ``should_throw == False``

        Raises:
            InvalidConfigException
                If the validation fails and ``should_throw == True``. Exception message will
                contain one line per violated check.
        """
        valid = all([inspector.validate([(config.name or config.algorithm, config)]) for inspector in self.inspectors])
        if self.should_throw and not valid:
            message = "Config is invalid:"
            for inspector in self.inspectors:
                if inspector.violators:
                    message += f"\n* {inspector.name}: {inspector.message}"
            raise InvalidConfigException(message)
        return valid


def zipf_probabilities(support: int, alpha: float) -> np.ndarray:
    weights = np.arange(1, support + 1, dtype=np.float64) ** -alpha
    return weights / weights.sum()


def generate_values(
    n: int,
    N: int,
    distribution: Dict[str, Any],
    null_fraction: float,
    rng: np.random.Generator,
) -> ValueAssignment:
    r"""
    Draws an instance: ``floor(null_fraction * n)`` random nodes are NULL and
    the others take values from ``distribution``.

    Example:
        >>> vals = generate_values(8, 8, {"kind": "all-distinct"}, 0.5, np.random.default_rng(0))
        >>> int(vals.nonempty.sum()), len(set(vals.values[vals.nonempty].tolist()))
        (4, 4)
    """
    kind = distribution.get("kind")
    if kind == "file":
        return oracles.load_instance(distribution["path"], n, N)
    empty = rng.choice(n, size=math.floor(null_fraction * n), replace=False)
    holders = np.setdiff1d(np.arange(n), empty)
    count = len(holders)
    if kind == "all-distinct":
        if count > N:
            raise ValueError(f"{count} distinct values do not fit in [1, {N}]")
        drawn = rng.choice(N, size=count, replace=False) + 1
    elif kind == "single":
        drawn = np.full(count, int(distribution.get("value", 1)))
    elif kind == "zipf":
        support = int(distribution.get("support", N))
        drawn = rng.choice(support, size=count, p=zipf_probabilities(support, float(distribution["alpha"]))) + 1
    elif kind == "uniform":
        drawn = rng.integers(1, int(distribution.get("support", N)) + 1, size=count)
    else:
        raise ValueError(f"Unknown value distribution '{kind}'")
    values = np.full(n, NULL, dtype=np.int64)
    values[holders] = drawn
    return ValueAssignment(values, N)


@dataclass
class TrialRecord:
    r"""
    Outcome of one (config, seed) trial.
    """

    config_digest: str
    seed: int
    algorithm: str
    estimate: Optional[float] = None
    truth: Optional[float] = None
    rel_error: Optional[float] = None
    rounds: int = 0
    messages: int = 0
    max_congestion: int = 0
    congest_rounds: Optional[int] = None
    status: str = "ok"
    reason: str = ""
    detail: Dict[str, Any] = field(default_factory=dict)
    wall_time: float = 0.0
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


def _rel_error(estimate: float, truth: float) -> float:
    if truth == 0:
        return 0.0 if estimate == 0 else math.inf
    return abs(estimate - truth) / abs(truth)


def _gossip_engine(config: ExperimentConfig, g: Graph, seed: int, constants: Constants) -> GossipEngine:
    if config.model == "gossip-emulated":
        lam = float(config.params.get("lam", g.n ** -3))
        return emulated_engine(
            g,
            lam,
            seed=seed,
            max_value=config.N,
            c0=constants.c0,
            cap_factor=constants.cap_factor,
            round_cap=config.round_cap,
        )
    return GossipEngine(g.n, seed=seed, max_value=config.N, c0=constants.c0, round_cap=config.round_cap)


def _run_congest(config: ExperimentConfig, g: Graph, vals: ValueAssignment, seed: int, constants: Constants, record: TrialRecord):
    params = config.params
    fv = oracles.exact_stats(vals)
    if config.algorithm in ("f0", "f2", "fp_ams"):
        common = dict(seed=seed, c0=constants.c0, median_width=params.get("median_width"), round_cap=config.round_cap)
        if config.algorithm == "f0":
            est = f0_estimate(g, vals, params["eps"], c_med=constants.c_med, **common)
        elif config.algorithm == "f2":
            est = f2_estimate(g, vals, params["eps"], c_med=constants.c_med, **common)
        else:
            est = fp_ams_estimate(g, vals, params["p"], params["eps"], c_ams=constants.c_ams, **common)
        return est.value, est.truth, est.stats
    common = dict(
        router=config.router, seed=seed, c0=constants.c0, router_c=constants.router_c, round_cap=config.round_cap
    )
    if config.algorithm == "exact_g_sum":
        gfun = GFunction.from_config(params.get("g", "distinct"))
        value, run = exact_g_sum(g, vals, gfun, **common)
        return float(value), float(gfun.oracle(fv)), run
    k = int(params.get("top_k", params.get("k", 10)))
    pairs, run = top_k(g, vals, k, **common)
    expected = fv.top_k(k)
    record.detail = {"top": [list(p) for p in pairs], "exact": pairs == expected}
    return float(sum(c for _, c in pairs)), float(sum(c for _, c in expected)), run


def _run_gossip(config: ExperimentConfig, g: Graph, vals: ValueAssignment, seed: int, constants: Constants, record: TrialRecord):
    params = config.params
    engine = _gossip_engine(config, g, seed, constants)
    fv = oracles.exact_stats(vals)
    if config.algorithm == "push_sum_count":
        value, truth = count_nonempty(engine, vals, c1=constants.c1), fv.F1
    elif config.algorithm == "l0":
        value, _ = l0_sample(engine, vals)
        truth = math.nan
    elif config.algorithm == "lp":
        value, _ = lp_sample(engine, vals, params["p"], cap_factor=constants.cap_factor)
        truth = math.nan
    elif config.algorithm == "fk":
        est = fk_estimate(engine, vals, params["k"], params["eps"], C=constants.C, c1=constants.c1)
        value, truth = est.value, est.truth
    else:
        est = fp_estimate(
            engine,
            vals,
            params["p"],
            params["k"],
            params["eps"],
            preprocess=params.get("preprocess", True),
            C=constants.C,
            C_prime=constants.C_prime,
            c1=constants.c1,
            cap_factor=constants.cap_factor,
        )
        value, truth = est.value, est.truth
    if config.model == "gossip-emulated":
        record.congest_rounds = engine.partners.congest_stats.rounds
    return float(value), float(truth), engine.stats


def run_trial(config: ExperimentConfig, seed: int, constants: Optional[Constants] = None) -> TrialRecord:
    r"""
    Generates the instance of ``seed``, runs the algorithm and compares it
    with the oracle. Protocol violations, exhausted trial or round caps,
    empty instances and unusable topologies or instances give a failed
    record; ``config.round_cap`` is enforced inside the engines.
    """
    constants = constants or Constants.from_env()
    record = TrialRecord(config.digest, seed, config.algorithm)
    started = time.perf_counter()
    try:
        g = generate(GraphSpec.parse(config.graph))
        vals = generate_values(
            g.n, config.N, config.values, config.null_fraction, np.random.default_rng([seed, INSTANCE_STREAM])
        )
        run = _run_congest if config.model == "congest" else _run_gossip
        value, truth, run_stats = run(config, g, vals, seed, constants, record)
        record.estimate, record.truth = value, truth
        record.rel_error = None if config.algorithm in SAMPLERS else _rel_error(value, truth)
        record.rounds = run_stats.rounds
        record.messages = run_stats.messages_sent
        record.max_congestion = run_stats.max_edge_congestion
    except (ProtocolViolation, TrialCapExceeded, EmptyInstanceError, DisconnectedGraphError, ValueError) as e:
        record.status = "failed"
        record.reason = f"{type(e).__name__}: {e}"
        logger.warning("Trial %d of %s failed: %s", seed, config.algorithm, record.reason)
    record.wall_time = time.perf_counter() - started
    return record


def register_stats(name: str, frequency: float = 1.0):
    r"""
    Registers one :class:`~distsum.utils.stats.Stat` per ``StatType`` for
    ``name`` (an algorithm), skipping those already registered.
    """
    present = {(stat.type, stat.name) for stat in stats.Stats}
    stats.add(*(Stat(stat_type, name, frequency) for stat_type in StatType if (stat_type, name) not in present))


def _report(record: TrialRecord):
    if record.status != "ok":
        return
    stats.update(StatType.ROUNDS, record.algorithm, rounds=record.rounds)
    stats.update(StatType.MESSAGES, record.algorithm, messages=record.messages)
    stats.update(StatType.CONGESTION, record.algorithm, congestion=record.max_congestion)
    if record.rel_error is not None and math.isfinite(record.rel_error):
        stats.update(StatType.ERROR, record.algorithm, rel_error=record.rel_error)


def run_experiment(
    config: ExperimentConfig,
    *,
    constants: Optional[Constants] = None,
    n_jobs: int = 1,
    progress: bool = True,
    track_stats: bool = False,
) -> List[TrialRecord]:
    r"""
    One record per seed, in seed order; deterministic per (config, seed).
    With ``track_stats`` the algorithm's run statistics are registered and
    every successful trial is reported to them.

    Raises:
        InvalidConfigException: If ``config`` fails validation.
    """
    ConfigInspector().validate(config)
    constants = constants or Constants.from_env()
    if track_stats:
        register_stats(config.algorithm)
    seeds = tqdm(config.seeds, desc=config.name or config.algorithm, disable=not progress)
    records = Parallel(n_jobs=n_jobs)(delayed(run_trial)(config, seed, constants) for seed in seeds)
    for record in records:
        _report(record)
    failed = sum(r.status != "ok" for r in records)
    logger.info("%s: %d trials, %d failed", config.name or config.algorithm, len(records), failed)
    return records


def expand_grid(base: ExperimentConfig, grid: Dict[str, Sequence[Any]]) -> List[ExperimentConfig]:
    r"""
    Every combination of the ``grid`` values applied to ``base``.

    Example:
        >>> base = ExperimentConfig("f0", "clique:16", 16, params={"eps": 0.5})
        >>> [c.params["eps"] for c in expand_grid(base, {"params.eps": [0.5, 0.25]})]
        [0.5, 0.25]
    """
    keys = sorted(grid)
    configs = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        config = base
        for key, value in zip(keys, combo):
            config = config.with_value(key, value)
        configs.append(config)
    return configs


def sweep(
    base: ExperimentConfig,
    grid: Dict[str, Sequence[Any]],
    *,
    constants: Optional[Constants] = None,
    n_jobs: int = 1,
    progress: bool = True,
    track_stats: bool = False,
) -> List[TrialRecord]:
    r"""
    Runs every grid point; records ordered by (config digest, seed).
    """
    records: List[TrialRecord] = []
    for config in expand_grid(base, grid):
        records.extend(
            run_experiment(config, constants=constants, n_jobs=n_jobs, progress=progress, track_stats=track_stats)
        )
    return sorted(records, key=lambda r: (r.config_digest, r.seed))


def records_frame(records: Iterable[TrialRecord]) -> pd.DataFrame:
    rows = [dataclasses.asdict(r) for r in records]
    frame = pd.DataFrame(rows, columns=[f.name for f in dataclasses.fields(TrialRecord)])
    return frame[CSV_COLUMNS]


def write_records(records: Sequence[TrialRecord], path: str):
    r"""
    Writes ``.jsonl`` files as one JSON record per line and anything else as
    CSV with the columns in ``CSV_COLUMNS``.
    """
    if path.endswith(".jsonl"):
        with open(path, "w") as f:
            for record in records:
                f.write(record.to_json() + "\n")
    else:
        records_frame(records).to_csv(path, index=False)
