#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved
r"""
Algorithms of the GOSSIP model: push-sum aggregation, value duplication,
l0/l1/lp samplers and frequency moment estimation.

Every algorithm runs on a :class:`~distsum.engines.GossipEngine`, so the same
code executes over ideal uniform partners and over the CONGEST emulation.
Batched variants run many independent instances, each on its own rounds,
with the instances of a chunk advanced together as numpy arrays.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .congest_sketches import NULL, EmptyInstanceError, Estimate, FrequencyVector, ValueAssignment
from .engines import GossipEngine, RoundStats, TrialCapExceeded, field_bits
from .primitives import HashFunction, evaluate_hashes


logger = logging.getLogger(__name__)

DEFAULT_C = 4
DEFAULT_C_PRIME = 8
DEFAULT_C1 = 6
DEFAULT_CAP_FACTOR = 50
SPREAD_FACTOR = 4


def _log2n(n: int) -> float:
    return math.log2(max(n, 2))


def _since(engine: GossipEngine, start: RoundStats) -> RoundStats:
    return RoundStats.charged(
        engine.stats.rounds - start.rounds,
        engine.stats.messages_sent - start.messages_sent,
    )


def _ranks_within(nodes: np.ndarray) -> np.ndarray:
    r"""
    Position of every entry among the entries with the same node, in index
    order. A node holding ``b`` items sends them in rounds ``0..b-1``.
    """
    order = np.argsort(nodes, kind="stable")
    sorted_nodes = nodes[order]
    first = np.r_[0, np.flatnonzero(sorted_nodes[1:] != sorted_nodes[:-1]) + 1]
    lengths = np.diff(np.r_[first, len(nodes)])
    ranks = np.empty(len(nodes), dtype=np.int64)
    ranks[order] = np.arange(len(nodes)) - np.repeat(first, lengths)
    return ranks


def _pull_min(engine: GossipEngine, keys: np.ndarray, rounds: int, bits: int, *extra: np.ndarray):
    r"""
    Min-diffusion by PULL on ``keys`` of shape ``(instances, n)``, each
    instance on its own ``rounds`` rounds. ``extra`` arrays travel with the
    key and break ties in order.
    """
    instances, n = keys.shape
    maps = engine.draw(instances * rounds, bits=bits, pull=True).reshape(instances, rounds, n)
    keys = keys.copy()
    extra = [e.copy() for e in extra]
    for r in range(rounds):
        t = maps[:, r, :]
        pulled = np.take_along_axis(keys, t, axis=1)
        pulled_extra = [np.take_along_axis(e, t, axis=1) for e in extra]
        better = pulled < keys
        tie = pulled == keys
        for e, pe in zip(extra, pulled_extra):
            better |= tie & (pe < e)
            tie &= pe == e
        keys = np.where(better, pulled, keys)
        extra = [np.where(better, pe, e) for e, pe in zip(extra, pulled_extra)]
    return (keys, *extra)


def push_sum_rounds(n: int, max_sum: int, c1: float = DEFAULT_C1) -> int:
    r"""
    Round budget ``ceil(c1 log2 n + log2(1 / delta))`` with
    ``delta = 1 / (8 n max_sum)``, enough for integer rounding to recover an
    exact sum bounded by ``max_sum``.
    """
    return math.ceil(c1 * _log2n(n) + math.log2(8 * n * max(max_sum, 1)))


@dataclass
class PushSumState:
    r"""
    Integer fixed-point masses of push-sum. ``s`` starts at ``value << scale``
    and ``w`` at ``1 << scale``; a round keeps the floor half and pushes the
    rest, so both totals are conserved exactly.
    """

    s: np.ndarray
    w: np.ndarray
    scale: int
    delta: float
    rounds: int = 0

    @classmethod
    def start(cls, values: np.ndarray, delta: float) -> "PushSumState":
        values = np.asarray(values, dtype=np.int64)
        n = len(values)
        scale = 62 - math.ceil(math.log2(n + int(np.abs(values).sum()) + 1)) - 1
        if scale < 1:
            raise ValueError("Push-sum inputs too large for 64-bit fixed point")
        return cls(values << scale, np.full(n, 1 << scale, dtype=np.int64), scale, delta)

    @property
    def estimates(self) -> np.ndarray:
        r"""
        Every node's estimate ``n * s / w`` of the sum.
        """
        n = len(self.s)
        s = self.s.astype(np.float64)
        w = self.w.astype(np.float64)
        return np.divide(n * s, w, out=np.full(n, np.nan), where=w > 0)

    @property
    def total(self) -> int:
        return int(self.s.sum())


def push_sum(
    engine: GossipEngine,
    values,
    *,
    rounds: Optional[int] = None,
    max_sum: Optional[int] = None,
    c1: float = DEFAULT_C1,
) -> Tuple[np.ndarray, PushSumState]:
    r"""
    Push-sum estimate of ``sum(values)`` at every node.

    Args:
        engine: GOSSIP engine over ``len(values)`` nodes.
        values: Integer value per node.
        rounds: Rounds to run; defaults to :func:`push_sum_rounds`.
        max_sum: Bound on the sum used for the default budget and message
            width; defaults to the actual ``sum(|values|)``.

    Example:
        >>> estimates, state = push_sum(GossipEngine(16, seed=0), [3] * 16, rounds=5)
        >>> estimates.round().tolist() == [48.0] * 16
        True
    """
    values = np.asarray(values, dtype=np.int64)
    n = len(values)
    if n != engine.n:
        raise ValueError(f"Engine has {engine.n} nodes, got {n} values")
    if max_sum is None:
        max_sum = int(np.abs(values).sum())
    if rounds is None:
        rounds = push_sum_rounds(n, max_sum, c1)
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    state = PushSumState.start(values, 1 / (8 * n * max(max_sum, 1)))
    bits = 2 * field_bits(max(max_sum, n) * n)
    for _ in range(rounds):
        state.s, state.w = engine.push_sum_round(state.s, state.w, bits=bits)
        state.rounds += 1
    return state.estimates, state


def exact_total(engine: GossipEngine, values, *, max_sum: Optional[int] = None, c1: float = DEFAULT_C1) -> int:
    r"""
    Integer sum of ``values`` as learnt by the minimum-identifier node from a
    rounded push-sum.
    """
    estimates, _ = push_sum(engine, values, max_sum=max_sum, c1=c1)
    return int(round(estimates[0]))


def count_nonempty(engine: GossipEngine, vals: ValueAssignment, *, c1: float = DEFAULT_C1) -> int:
    r"""
    Number ``z`` of non-empty nodes via push-sum on indicators.
    """
    return exact_total(engine, vals.nonempty.astype(np.int64), max_sum=vals.n, c1=c1)


@dataclass
class DuplicationPlan:
    r"""
    Outcome of the duplication preprocessing: every value occurrence is
    replicated ``dup_factor`` times onto previously empty nodes.
    """

    z: int
    dup_factor: int
    splitting_stages: int = 0
    distributing_trials: int = 0
    stats: RoundStats = field(default_factory=RoundStats)

    @property
    def token_count(self) -> int:
        return self.z * self.dup_factor


def duplication_factor(n: int, z: int) -> int:
    r"""
    ``ceil((n / 3) / z)``, or 1 once ``z >= n / 3``.

    Example:
        >>> duplication_factor(12, 3)
        2
    """
    if z <= 0 or 3 * z >= n:
        return 1
    return -(-n // (3 * z))


def preprocess_duplicate(
    engine: GossipEngine,
    vals: ValueAssignment,
    *,
    c1: float = DEFAULT_C1,
    cap_factor: float = DEFAULT_CAP_FACTOR,
) -> Tuple[ValueAssignment, DuplicationPlan]:
    r"""
    Replicates every occurrence ``dup_factor`` times so that at least a third
    of the nodes hold a value, preserving frequency ratios exactly.

    Each non-empty node forms a token ``(value, dup_factor)``. Splitting
    stages halve every multiplicity above one and push the split-off half to
    a uniform partner. Distributing trials then let every node without a
    token keep the first token it holds; surplus tokens are pushed to uniform
    partners and settle if they land on an empty node with no other arrival.

    Raises:
        TrialCapExceeded: After ``cap_factor * log2 n`` distributing trials.
    """
    start = engine.stats
    z = count_nonempty(engine, vals, c1=c1)
    dup = duplication_factor(vals.n, z)
    plan = DuplicationPlan(z, dup)
    if dup == 1:
        plan.stats = _since(engine, start)
        return vals, plan

    bits = field_bits(vals.N + 1) + field_bits(dup + 1)
    origin = np.flatnonzero(vals.nonempty)
    pos = origin.copy()
    value = vals.values[origin].copy()
    weight = np.full(len(origin), dup, dtype=np.int64)
    plan.splitting_stages = math.ceil(math.log2(dup))
    for _ in range(plan.splitting_stages):
        idx = np.flatnonzero(weight > 1)
        ranks = _ranks_within(pos[idx])
        maps = engine.draw(int(ranks.max()) + 1, bits=bits, messages=len(idx))
        half = weight[idx] // 2
        weight[idx] -= half
        pos = np.r_[pos, maps[ranks, pos[idx]]]
        value = np.r_[value, value[idx]]
        weight = np.r_[weight, half]

    occupied = np.zeros(vals.n, dtype=bool)
    resting = np.zeros(len(pos), dtype=bool)
    cap = max(1, math.ceil(cap_factor * _log2n(vals.n)))
    for trial in range(1, cap + 1):
        waiting = np.flatnonzero(~resting)
        _, first = np.unique(pos[waiting], return_index=True)
        keep = waiting[first]
        keep = keep[~occupied[pos[keep]]]
        resting[keep] = True
        occupied[pos[keep]] = True
        surplus = np.flatnonzero(~resting)
        if len(surplus) == 0:
            break
        ranks = _ranks_within(pos[surplus])
        maps = engine.draw(int(ranks.max()) + 1, bits=bits, messages=len(surplus))
        dest = maps[ranks, pos[surplus]]
        arrivals = np.bincount(dest, minlength=vals.n)
        settled = ~occupied[dest] & (arrivals[dest] == 1)
        pos[surplus] = dest
        resting[surplus[settled]] = True
        occupied[dest[settled]] = True
        plan.distributing_trials = trial
    else:
        raise TrialCapExceeded(f"Duplicated tokens not distributed after {cap} trials")

    out = np.full(vals.n, NULL, dtype=np.int64)
    out[pos] = value
    plan.stats = _since(engine, start)
    logger.debug(
        "Duplicated z=%d occurrences %dx in %d rounds", z, dup, plan.stats.rounds
    )
    return ValueAssignment(out, vals.N), plan


def _require_values(vals: ValueAssignment):
    if not vals.nonempty.any():
        raise EmptyInstanceError("Sampling needs at least one non-empty node")


def l0_sample_many(
    engine: GossipEngine,
    vals: ValueAssignment,
    count: int,
    *,
    spread_factor: float = SPREAD_FACTOR,
    chunk: int = 128,
) -> Tuple[np.ndarray, RoundStats]:
    r"""
    ``count`` independent l0-samples (uniform over the distinct values).

    In each instance node ``0`` draws a pairwise hash and spreads its words
    by PUSH rumor spreading, one word per round for ``spread_factor * log2 n``
    rounds per word. Then every node PULLs for ``spread_factor * log2 n``
    rounds to learn the smallest ``(h(value), value)`` held by an informed
    non-empty node; node ``0`` outputs that value.

    Raises:
        EmptyInstanceError: If every node is NULL.
        TrialCapExceeded: If the minimum did not reach node ``0``.
    """
    _require_values(vals)
    start = engine.stats
    n = vals.n
    steps = max(1, math.ceil(spread_factor * _log2n(n)))
    support, inverse = np.unique(vals.values, return_inverse=True)
    out = np.empty(count, dtype=np.int64)
    for lo in range(0, count, chunk):
        size = min(chunk, count - lo)
        hashes = [HashFunction.random("pairwise", vals.N, engine.rng) for _ in range(size)]
        width = len(hashes[0].words())
        sentinel = hashes[0].modulus

        spread = width * steps
        maps = engine.draw(size * spread, bits=hashes[0].word_bits, messages=0).reshape(size, spread, n)
        has = np.zeros((size, width, n), dtype=bool)
        has[:, :, 0] = True
        sent = 0
        for r in range(spread):
            word = r % width
            rows, cols = np.nonzero(has[:, word, :])
            has[rows, word, maps[rows, r, cols]] = True
            sent += len(rows)
        engine.charge(0, messages=sent)

        informed = has.all(axis=1)
        keys = np.asarray(evaluate_hashes(hashes, support), dtype=np.int64)[:, inverse]
        keys = np.where(informed & vals.nonempty, keys, sentinel)
        held = np.broadcast_to(vals.values, (size, n))
        bits = field_bits(sentinel + 1) + field_bits(vals.N + 1)
        keys, held = _pull_min(engine, keys, steps, bits, held)
        if (keys[:, 0] == sentinel).any():
            raise TrialCapExceeded("Minimum hash did not reach node 0")
        out[lo : lo + size] = held[:, 0]
    return out, _since(engine, start)


def l0_sample(engine: GossipEngine, vals: ValueAssignment, **kwargs) -> Tuple[int, RoundStats]:
    r"""
    A value drawn uniformly from the distinct values. See
    :func:`l0_sample_many`.
    """
    out, stats = l0_sample_many(engine, vals, 1, **kwargs)
    return int(out[0]), stats


def l1_sample(
    engine: GossipEngine, vals: ValueAssignment, *, cap_factor: float = DEFAULT_CAP_FACTOR
) -> Tuple[int, RoundStats]:
    r"""
    A value drawn with probability ``f_i / F1``: node ``0`` PULLs uniform
    partners until it meets a non-empty one.

    Raises:
        EmptyInstanceError: If every node is NULL.
        TrialCapExceeded: After ``cap_factor * log2 n`` empty partners.
    """
    _require_values(vals)
    start = engine.stats
    cap = max(1, math.ceil(cap_factor * _log2n(vals.n)))
    for _ in range(cap):
        t = engine.draw(1, bits=field_bits(vals.N + 1), pull=True, senders=1)[0]
        sample = int(vals.values[t[0]])
        if sample != NULL:
            return sample, _since(engine, start)
    raise TrialCapExceeded(f"l1 sampling met only NULL partners in {cap} pulls")


def _lp_attempt(engine: GossipEngine, vals: ValueAssignment, p: int, instances: int):
    r"""
    One attempt per instance: every node PULLs ``p`` partners and succeeds
    iff all of them hold the same non-NULL value. Returns the success matrix
    and the sampled values, both ``(instances, n)``.
    """
    n = vals.n
    maps = engine.draw(instances * p, bits=field_bits(vals.N + 1), pull=True).reshape(instances, p, n)
    pulled = vals.values[maps]
    success = (pulled[:, 0] != NULL) & (pulled == pulled[:, :1]).all(axis=1)
    return success, pulled[:, 0]


def lp_success_rate(engine: GossipEngine, vals: ValueAssignment, p: int, attempts: int) -> float:
    r"""
    Fraction of (node, attempt) pairs whose ``p`` partners all hold one
    non-NULL value; in expectation ``sum_i (f_i / n)^p``.
    """
    success, _ = _lp_attempt(engine, vals, p, attempts)
    return float(success.mean())


def lp_sample_many(
    engine: GossipEngine,
    vals: ValueAssignment,
    p: int,
    count: int,
    *,
    spread_factor: float = SPREAD_FACTOR,
    cap_factor: float = DEFAULT_CAP_FACTOR,
    chunk: int = 256,
) -> Tuple[np.ndarray, RoundStats]:
    r"""
    ``count`` independent lp-samples: value ``i`` with probability
    ``f_i^p / F_p``.

    An attempt is ``p`` PULL rounds followed by min-diffusion of the
    smallest successful node identifier; the sample of that node is the
    output. Attempts repeat until one succeeds.

    Raises:
        EmptyInstanceError: If every node is NULL.
        TrialCapExceeded: After ``cap_factor * log2 n`` failed attempts.
    """
    if p < 1 or int(p) != p:
        raise ValueError(f"p must be a positive integer, got {p}")
    _require_values(vals)
    start = engine.stats
    n = vals.n
    steps = max(1, math.ceil(spread_factor * _log2n(n)))
    cap = max(1, math.ceil(cap_factor * _log2n(n)))
    bits = field_bits(n + 1) + field_bits(vals.N + 1)
    out = np.empty(count, dtype=np.int64)
    for lo in range(0, count, chunk):
        pending = np.arange(lo, min(lo + chunk, count))
        for _ in range(cap):
            success, pulled = _lp_attempt(engine, vals, p, len(pending))
            keys = np.where(success, np.arange(n), n)
            (keys,) = _pull_min(engine, keys, steps, bits)
            winner = keys[:, 0]
            done = winner < n
            out[pending[done]] = pulled[np.flatnonzero(done), winner[done]]
            pending = pending[~done]
            if len(pending) == 0:
                break
        else:
            raise TrialCapExceeded(f"lp sampling failed {cap} attempts in a row")
    return out, _since(engine, start)


def lp_sample(engine: GossipEngine, vals: ValueAssignment, p: int, **kwargs) -> Tuple[int, RoundStats]:
    r"""
    One lp-sample. See :func:`lp_sample_many`.

    Example:
        >>> lp_sample(GossipEngine(4, seed=2), ValueAssignment.of([5, 5, 5, 5]), 2)[0]
        5
    """
    out, stats = lp_sample_many(engine, vals, p, 1, **kwargs)
    return int(out[0]), stats


def fk_phases(n: int, eps: float, C: float = DEFAULT_C) -> int:
    return math.ceil(C * _log2n(n) / eps ** 2)


def fk_estimate(
    engine: GossipEngine,
    vals: ValueAssignment,
    k: int,
    eps: float,
    *,
    C: float = DEFAULT_C,
    c1: float = DEFAULT_C1,
    chunk: int = 256,
) -> Estimate:
    r"""
    Unbiased estimate ``n^(k-1) / T * sum_j sum_v I_jv`` of ``F_k``.

    In each of ``T = ceil(C log2 n / eps^2)`` phases every non-empty node
    PULLs ``k - 1`` uniform partners; ``I_jv = 1`` iff they all hold
    ``val(v)``. One push-sum aggregates the counts.
    """
    if k < 2 or int(k) != k:
        raise ValueError(f"k must be an integer >= 2, got {k}")
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    start = engine.stats
    n = vals.n
    phases = fk_phases(n, eps, C)
    f1 = int(vals.nonempty.sum())
    hits = np.zeros(n, dtype=np.int64)
    for lo in range(0, phases, chunk):
        size = min(chunk, phases - lo)
        rounds = size * (k - 1)
        maps = engine.draw(rounds, bits=field_bits(vals.N + 1), pull=True, messages=2 * f1 * rounds)
        pulled = vals.values[maps.reshape(size, k - 1, n)]
        hits += ((pulled == vals.values).all(axis=1) & vals.nonempty).sum(axis=0)
    total = exact_total(engine, hits, max_sum=n * phases, c1=c1)
    value = float(n ** (k - 1)) * total / phases
    truth = FrequencyVector.from_values(vals).moment(k)
    return Estimate(value, truth, _since(engine, start))


def fp_repetitions(n: int, p: int, k: int, eps: float, C_prime: float = DEFAULT_C_PRIME) -> int:
    r"""
    Estimators per median group, ``ceil(C' n^(1 - k/p) / eps^2)``.
    """
    return math.ceil(C_prime * n ** (1 - k / p) / eps ** 2)


def moment_floor_constant(p: int) -> int:
    r"""
    ``K = 3^p``: ``F_p >= n^(p-1) / K`` whenever ``F1 >= n / 3`` and
    ``F0 <= n^(1/(p-1))``.
    """
    return 3 ** p


@dataclass
class MomentEstimatorState:
    r"""
    Intermediate results of the ``F_p`` estimator: the ``F_k`` estimate, the
    lk-samples with their exact frequencies and the estimators
    ``Z_r = F_k * f_(i_r)^(p-k)`` arranged as ``(groups, per_group)``.
    """

    p: int
    k: int
    eps: float
    phases: int
    fk: float
    samples: np.ndarray
    frequencies: np.ndarray
    estimators: np.ndarray

    @property
    def groups(self) -> int:
        return self.estimators.shape[0]

    def median_of_means(self) -> float:
        return float(np.median(self.estimators.mean(axis=1)))


def _frequencies(engine: GossipEngine, vals: ValueAssignment, samples: np.ndarray, c1: float) -> np.ndarray:
    r"""
    Exact count of every sampled value by an indicator push-sum. A value met
    again reuses the known count while its rounds are still charged.
    """
    known: Dict[int, int] = {}
    rounds = push_sum_rounds(vals.n, vals.n, c1)
    out = np.empty(len(samples), dtype=np.int64)
    for r, value in enumerate(samples.tolist()):
        if value in known:
            engine.charge(rounds, messages=vals.n * rounds)
        else:
            known[value] = exact_total(engine, (vals.values == value).astype(np.int64), max_sum=vals.n, c1=c1)
        out[r] = known[value]
    return out


def fp_estimators(
    engine: GossipEngine,
    vals: ValueAssignment,
    p: int,
    k: int,
    eps: float,
    *,
    C: float = DEFAULT_C,
    C_prime: float = DEFAULT_C_PRIME,
    c1: float = DEFAULT_C1,
    per_group: Optional[int] = None,
    groups: Optional[int] = None,
) -> MomentEstimatorState:
    r"""
    Computes ``F_k`` once, draws the lk-samples and forms every estimator.
    ``E[Z_r] = F_p`` up to the error of the ``F_k`` estimate.
    """
    if not (2 <= k <= p) or int(k) != k or int(p) != p:
        raise ValueError(f"Need integers 2 <= k <= p, got k={k}, p={p}")
    n = vals.n
    per_group = per_group or fp_repetitions(n, p, k, eps, C_prime)
    groups = groups or math.ceil(_log2n(n))
    fk = fk_estimate(engine, vals, k, eps, C=C, c1=c1)
    samples, _ = lp_sample_many(engine, vals, k, per_group * groups)
    freqs = _frequencies(engine, vals, samples, c1)
    z = fk.value * freqs.astype(np.float64) ** (p - k)
    return MomentEstimatorState(p, k, eps, fk_phases(n, eps, C), fk.value, samples, freqs, z.reshape(groups, per_group))


def fp_estimate(
    engine: GossipEngine,
    vals: ValueAssignment,
    p: int,
    k: int,
    eps: float,
    *,
    preprocess: bool = True,
    C: float = DEFAULT_C,
    C_prime: float = DEFAULT_C_PRIME,
    c1: float = DEFAULT_C1,
    cap_factor: float = DEFAULT_CAP_FACTOR,
    per_group: Optional[int] = None,
) -> Estimate:
    r"""
    ``1 +- eps`` estimate of ``F_p``: the median over ``ceil(log2 n)`` groups
    of the mean of ``Z_r``. With ``preprocess`` the instance is first
    duplicated and the result divided by ``dup_factor^p``.
    """
    start = engine.stats
    truth = FrequencyVector.from_values(vals).moment(p)
    work, dup = vals, 1
    if preprocess:
        work, plan = preprocess_duplicate(engine, vals, c1=c1, cap_factor=cap_factor)
        dup = plan.dup_factor
    state = fp_estimators(engine, work, p, k, eps, C=C, C_prime=C_prime, c1=c1, per_group=per_group)
    value = state.median_of_means() / dup ** p
    stats = _since(engine, start)
    logger.debug("F%d estimate %.4g (truth %d) in %d gossip rounds", p, value, truth, stats.rounds)
    return Estimate(value, truth, stats)
