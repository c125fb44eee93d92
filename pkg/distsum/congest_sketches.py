#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved
r"""
Frequency-moment sketches in the CONGEST model.

Every estimator elects a leader, builds its BFS tree, lets the leader draw
and broadcast the random hash functions, and then aggregates per-node sketch
contributions over the tree with pipelining. The median over independent
repetitions amplifies the constant success probability of one repetition.

Values are integers in ``[1, N]``; ``0`` encodes an empty (NULL) node.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .engines import ALGORITHM_STREAM, DEFAULT_C0, CongestEngine, RoundStats, field_bits
from .graph import Graph, Tree
from .primitives import (
    HashFunction,
    aggregate_sum,
    aggregate_sum_blocks,
    broadcast_words,
    elect_leader_and_ids,
    evaluate_hashes,
    next_prime,
    upcast_k_smallest_grouped,
)


logger = logging.getLogger(__name__)

DEFAULT_C_MED = 2
DEFAULT_C_AMS = 8
KMV_T_FACTOR = 100
TUG_OF_WAR_FACTOR = 16
AMS_BLOCK = 2048
# sign hashes use at least this modulus; parity signs are biased by 1 / (2 * modulus)
SIGN_MODULUS_FLOOR = 2 ** 20
NULL = 0


class EmptyInstanceError(ValueError):
    r"""
    Exception raised when an operation needs at least one non-empty node.
    """

    pass


@dataclass(frozen=True, eq=False)
class ValueAssignment:
    r"""
    ``values[v]`` is the value held by node ``v`` (``0`` for NULL), every
    non-NULL value lying in ``[1, N]``.

    Example:
        >>> vals = ValueAssignment.of([3, 0, 3, 1])
        >>> vals.N, int(vals.nonempty.sum())
        (3, 3)
    """

    values: np.ndarray
    N: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.int64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or len(values) == 0:
            raise ValueError("A value assignment needs a non-empty 1-d array of values")
        if self.N < 1:
            raise ValueError(f"Value domain bound N must be >= 1, got {self.N}")
        if ((values < 0) | (values > self.N)).any():
            bad = int(np.flatnonzero((values < 0) | (values > self.N))[0])
            raise ValueError(f"Node {bad} holds {int(values[bad])}, outside [1, {self.N}] or NULL")

    @classmethod
    def of(cls, values: Sequence[int], N: Optional[int] = None) -> "ValueAssignment":
        values = np.asarray(values, dtype=np.int64)
        if N is None:
            N = max(int(values.max()) if len(values) else 1, 1)
        return cls(values, N)

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def nonempty(self) -> np.ndarray:
        return self.values != NULL


@dataclass(frozen=True)
class FrequencyVector:
    r"""
    Occurrence counts ``f_i`` of the values present in an assignment, as
    ``(value, count)`` pairs sorted by value. Moments use exact integers.

    Example:
        >>> fv = FrequencyVector.from_values(ValueAssignment.of([1, 1, 2]))
        >>> fv.F0, fv.F1, fv.moment(2), fv.moment(3)
        (2, 3, 5, 9)
    """

    counts: Tuple[Tuple[int, int], ...]
    n: int

    @classmethod
    def from_values(cls, vals: ValueAssignment) -> "FrequencyVector":
        present = vals.values[vals.nonempty]
        support, freq = np.unique(present, return_counts=True)
        return cls(tuple(zip(support.tolist(), freq.tolist())), vals.n)

    @property
    def support(self) -> np.ndarray:
        return np.array([value for value, _ in self.counts], dtype=np.int64)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([f for _, f in self.counts], dtype=np.int64)

    def __getitem__(self, value: int) -> int:
        return dict(self.counts).get(value, 0)

    @property
    def F0(self) -> int:
        return len(self.counts)

    @property
    def F1(self) -> int:
        return sum(f for _, f in self.counts)

    @property
    def z(self) -> int:
        r"""
        Number of non-empty nodes.
        """
        return self.F1

    def moment(self, p: int) -> int:
        if p == 0:
            return self.F0
        return sum(f ** p for _, f in self.counts)

    def norm(self, q: float) -> float:
        return float(sum(float(f) ** q for _, f in self.counts) ** (1.0 / q))

    def entropy(self) -> float:
        r"""
        ``-sum_i (f_i / F1) ln(f_i / F1)``; ``0`` for an all-NULL assignment.
        """
        total = self.F1
        if total == 0:
            return 0.0
        share = self.frequencies / total
        return float(-(share * np.log(share)).sum())

    def top_k(self, k: int) -> List[Tuple[int, int]]:
        r"""
        The ``k`` most frequent ``(value, count)`` pairs, ties by smaller value.
        """
        return sorted(self.counts, key=lambda item: (-item[1], item[0]))[:k]


@dataclass
class Estimate:
    r"""
    An estimator output next to the oracle truth and the rounds it used.
    """

    value: float
    truth: float
    stats: RoundStats

    @property
    def rounds_used(self) -> int:
        return self.stats.rounds

    @property
    def rel_error(self) -> float:
        if self.truth == 0:
            return 0.0 if self.value == 0 else math.inf
        return abs(self.value - self.truth) / abs(self.truth)


def median_repetitions(n: int, c_med: float = DEFAULT_C_MED, override: Optional[int] = None) -> int:
    r"""
    Number of independent repetitions combined by a median,
    ``ceil(c_med * log2 n)`` rounded up to an odd number.
    """
    if override is not None:
        if override < 1:
            raise ValueError(f"median_width must be >= 1, got {override}")
        return override
    width = max(1, math.ceil(c_med * math.log2(max(n, 2))))
    return width if width % 2 else width + 1


@dataclass(frozen=True)
class KmvParams:
    r"""
    Parameters of the t-th smallest hash sketch: ``t = ceil(100 / eps^2)``,
    hash range ``M`` (smallest prime ``>= N^3``) and ``repetitions`` hashes.

    Example:
        >>> KmvParams.for_accuracy(0.1, 8, 1024).t
        10000
    """

    t: int
    modulus: int
    repetitions: int

    @classmethod
    def for_accuracy(
        cls,
        eps: float,
        N: int,
        n: int,
        *,
        c_med: float = DEFAULT_C_MED,
        median_width_override: Optional[int] = None,
    ) -> "KmvParams":
        _check_eps(eps)
        return cls(
            t=math.ceil(KMV_T_FACTOR / eps ** 2),
            modulus=next_prime(max(N, 2) ** 3),
            repetitions=median_repetitions(n, c_med, median_width_override),
        )


def _check_eps(eps: float):
    if not 0 < eps <= 1:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")


def kmv_estimate(hash_values, t: int, modulus: int) -> float:
    r"""
    One repetition of the distinct-count sketch: ``t * M / w`` where ``w`` is
    the ``t``-th smallest distinct hash value in ``[1, M]``, or the number of
    distinct hash values when there are fewer than ``t``.

    Example:
        >>> kmv_estimate([5, 5, 9], 4, 101)
        2.0
    """
    distinct = np.unique(np.asarray(hash_values))
    if len(distinct) < t:
        return float(len(distinct))
    return t * modulus / float(distinct[t - 1])


def _elect(
    g: Graph, vals: ValueAssignment, seed: int, c0: int, round_cap: Optional[int] = None
) -> Tuple[CongestEngine, Tree, np.ndarray, RoundStats]:
    if g.n != vals.n:
        raise ValueError(f"Graph has {g.n} nodes but {vals.n} values were given")
    engine = CongestEngine(g, max_value=vals.N, c0=c0, round_cap=round_cap)
    _, tree, ids, stats = elect_leader_and_ids(engine, seed=seed)
    return engine, tree, ids, stats


def _announce(engine: CongestEngine, tree: Tree, value: float) -> RoundStats:
    word = max(int(round(value)), 0)
    return broadcast_words(engine, tree, [word], bits=field_bits(word + 1))


def f0_estimate(
    g: Graph,
    vals: ValueAssignment,
    eps: float,
    *,
    seed: int = 0,
    c_med: float = DEFAULT_C_MED,
    median_width: Optional[int] = None,
    c0: int = DEFAULT_C0,
    round_cap: Optional[int] = None,
) -> Estimate:
    r"""
    Estimates the number of distinct values within ``1 +- eps``.

    The leader broadcasts ``s`` pairwise independent hashes; the grouped
    upcast delivers the ``t`` smallest distinct hash values of each hash to
    the leader, which takes the median of the per-hash estimates
    (:func:`kmv_estimate`) and broadcasts it.
    """
    truth = FrequencyVector.from_values(vals).F0
    params = KmvParams.for_accuracy(
        eps, vals.N, g.n, c_med=c_med, median_width_override=median_width
    )
    engine, tree, _, stats = _elect(g, vals, seed, c0, round_cap)
    present, count_stats = aggregate_sum(engine, tree, vals.nonempty.astype(np.int64), value_range=g.n)
    stats = stats.then(count_stats)
    if int(present[0]) == 0:
        return Estimate(0.0, truth, stats)

    rng = np.random.default_rng([seed, ALGORITHM_STREAM])
    hashes = [HashFunction.random("pairwise", vals.N, rng) for _ in range(params.repetitions)]
    words = [w for h in hashes for w in h.coefficients] + [params.modulus]
    stats = stats.then(broadcast_words(engine, tree, words, bits=field_bits(params.modulus)))

    support, inverse = np.unique(vals.values, return_inverse=True)
    hashed = (evaluate_hashes(hashes, support) + 1)[:, inverse]
    items = [
        [(j, int(hashed[j, v])) for j in range(params.repetitions)] if vals.nonempty[v] else []
        for v in range(g.n)
    ]
    smallest, upcast = upcast_k_smallest_grouped(
        engine,
        tree,
        items,
        params.repetitions,
        params.t,
        value_bits=field_bits(params.modulus + 1),
        distinct=True,
        broadcast_back=False,
    )
    per_hash = [kmv_estimate(w, params.t, params.modulus) for w in smallest]
    value = float(np.median(per_hash))
    stats = stats.then(upcast).then(_announce(engine, tree, value))
    logger.debug("F0 estimate %.1f (truth %d) in %d rounds", value, truth, stats.rounds)
    return Estimate(value, truth, stats)


def f2_estimate(
    g: Graph,
    vals: ValueAssignment,
    eps: float,
    *,
    seed: int = 0,
    c_med: float = DEFAULT_C_MED,
    median_width: Optional[int] = None,
    c0: int = DEFAULT_C0,
    round_cap: Optional[int] = None,
) -> Estimate:
    r"""
    Tug-of-war estimate of ``F2``: ``s1 = ceil(16 / eps^2)`` sign sums per
    group are squared and averaged, and the median over the groups is
    returned. All ``s1 * s2`` sums are pipelined in one tree aggregation.
    """
    _check_eps(eps)
    truth = FrequencyVector.from_values(vals).moment(2)
    s1 = math.ceil(TUG_OF_WAR_FACTOR / eps ** 2)
    s2 = median_repetitions(g.n, c_med, median_width)
    engine, tree, _, stats = _elect(g, vals, seed, c0, round_cap)

    rng = np.random.default_rng([seed, ALGORITHM_STREAM])
    hashes = [
        HashFunction.random("fourwise", vals.N, rng, min_modulus=SIGN_MODULUS_FLOOR) for _ in range(s1 * s2)
    ]
    words = [w for h in hashes for w in h.coefficients] + [hashes[0].modulus]
    stats = stats.then(broadcast_words(engine, tree, words, bits=field_bits(hashes[0].modulus)))

    support, inverse = np.unique(vals.values, return_inverse=True)
    # parity over an odd modulus: E[sign] = 1 / modulus, at most 2^-20
    signs = (1 - 2 * (evaluate_hashes(hashes, support) % 2))[:, inverse]
    contributions = np.where(vals.nonempty[None, :], signs, 0).T
    sums, aggregation = aggregate_sum(engine, tree, contributions, value_range=g.n, broadcast=False)
    squares = sums.astype(np.float64) ** 2
    value = float(np.median(squares.reshape(s2, s1).mean(axis=1)))
    stats = stats.then(aggregation).then(_announce(engine, tree, value))
    return Estimate(value, truth, stats)


def suffix_counts(vals: ValueAssignment, ids: np.ndarray) -> np.ndarray:
    r"""
    ``r[v] = |{u : ids[u] >= ids[v], val(u) = val(v)}|`` for non-empty ``v``
    (``0`` for empty nodes). Centralized reference for
    :func:`sampled_suffix_counts`.

    Example:
        >>> suffix_counts(ValueAssignment.of([2, 2, 1, 2]), np.arange(4)).tolist()
        [3, 2, 1, 1]
    """
    ids = np.asarray(ids)
    nodes = np.flatnonzero(vals.nonempty)
    order = np.lexsort((-ids[nodes], vals.values[nodes]))
    ranked = nodes[order]
    ranked_values = vals.values[ranked]
    starts = np.flatnonzero(np.r_[True, ranked_values[1:] != ranked_values[:-1]])
    group_start = np.repeat(starts, np.diff(np.r_[starts, len(ranked)]))
    r = np.zeros(vals.n, dtype=np.int64)
    r[ranked] = np.arange(len(ranked)) - group_start + 1
    return r


def sampled_suffix_counts(
    engine: CongestEngine,
    tree: Tree,
    vals: ValueAssignment,
    ids: np.ndarray,
    sampled: np.ndarray,
    *,
    block: int = AMS_BLOCK,
) -> Tuple[np.ndarray, RoundStats]:
    r"""
    For every sampled node ``v`` counts the nodes holding ``val(v)`` at
    identifiers ``>= ID(v)``.

    The sampled values are summed up the tree and broadcast back; every node
    then sets one indicator counter per sample and a second aggregation
    delivers the counts to the leader. Counters are built ``block`` samples
    at a time.

    Returns:
        The counts in sample order and the accounting of both aggregations.
    """
    ids = np.asarray(ids)
    sampled = np.asarray(sampled, dtype=np.int64)
    n, count = vals.n, len(sampled)
    spans = [slice(start, min(start + block, count)) for start in range(0, count, block)]

    def value_block(span):
        out = np.zeros((n, span.stop - span.start), dtype=np.int64)
        out[sampled[span], np.arange(out.shape[1])] = vals.values[sampled[span]]
        return out

    chosen, up_down = aggregate_sum_blocks(
        engine, tree, (value_block(s) for s in spans), value_range=vals.N
    )

    def indicator_block(span):
        match = vals.values[:, None] == chosen[None, span]
        later = ids[:, None] >= ids[sampled[span]][None, :]
        return (match & later & vals.nonempty[:, None]).astype(np.int64)

    r, upcast = aggregate_sum_blocks(
        engine, tree, (indicator_block(s) for s in spans), value_range=n, broadcast=False
    )
    return r, up_down.then(upcast)


def ams_repetitions(n: int, N: int, p: int, eps: float, c_ams: float = DEFAULT_C_AMS) -> int:
    r"""
    ``ceil(c_ams * eps^-2 * min(n, N)^(1 - 1/p) * log2 n)``.
    """
    return math.ceil(c_ams / eps ** 2 * min(n, N) ** (1 - 1 / p) * math.log2(max(n, 2)))


def fp_ams_estimate(
    g: Graph,
    vals: ValueAssignment,
    p: int,
    eps: float,
    *,
    seed: int = 0,
    c_ams: float = DEFAULT_C_AMS,
    median_width: Optional[int] = None,
    c0: int = DEFAULT_C0,
    round_cap: Optional[int] = None,
) -> Estimate:
    r"""
    AMS sampling estimate of ``F_p`` for an integer ``p >= 1``.

    Each repetition draws a uniform non-empty node ``v`` (the leader samples
    a rank among non-empty nodes in DFS identifier order), broadcasts
    ``val(v)``, counts ``r`` = occurrences of ``val(v)`` at identifiers
    ``>= ID(v)`` and sets ``X = F1 * (r^p - (r-1)^p)``. Group means are
    combined by a median over ``ceil(log2 n)`` (odd) groups; repetitions
    share pipelined aggregations.

    Raises:
        EmptyInstanceError: If every node is NULL.
    """
    _check_eps(eps)
    if p < 1 or int(p) != p:
        raise ValueError(f"p must be a positive integer, got {p}")
    truth = FrequencyVector.from_values(vals).moment(p)
    engine, tree, ids, stats = _elect(g, vals, seed, c0, round_cap)
    present, count_stats = aggregate_sum(engine, tree, vals.nonempty.astype(np.int64), value_range=g.n)
    f1 = int(present[0])
    stats = stats.then(count_stats)
    if f1 == 0:
        raise EmptyInstanceError("AMS sampling needs at least one non-empty node")

    groups = median_repetitions(g.n, 1, median_width)
    per_group = math.ceil(ams_repetitions(g.n, vals.N, p, eps, c_ams) / groups)
    count = per_group * groups
    rng = np.random.default_rng([seed, ALGORITHM_STREAM])
    ranks = rng.integers(0, f1, size=count)
    stats = stats.then(broadcast_words(engine, tree, ranks.tolist(), bits=field_bits(f1)))

    by_id = np.flatnonzero(vals.nonempty)
    by_id = by_id[np.argsort(ids[by_id])]
    r, counting = sampled_suffix_counts(engine, tree, vals, ids, by_id[ranks])
    r = r.astype(np.float64)
    stats = stats.then(counting)
    x = f1 * (r ** p - (r - 1) ** p)
    value = float(np.median(x.reshape(groups, per_group).mean(axis=1)))
    stats = stats.then(_announce(engine, tree, value))
    return Estimate(value, truth, stats)


def tug_of_war_samples(vals: ValueAssignment, count: int, rng: np.random.Generator, *, chunk: int = 4096) -> np.ndarray:
    r"""
    ``count`` independent single estimators ``X = Z^2``, each with a fresh
    4-wise independent sign function. ``E[X] = F2``.
    """
    fv = FrequencyVector.from_values(vals)
    if fv.F0 == 0:
        return np.zeros(count)
    out = []
    for start in range(0, count, chunk):
        size = min(chunk, count - start)
        hashes = [
            HashFunction.random("fourwise", vals.N, rng, min_modulus=SIGN_MODULUS_FLOOR) for _ in range(size)
        ]
        signs = 1 - 2 * (evaluate_hashes(hashes, fv.support) % 2)
        out.append((signs @ fv.frequencies).astype(np.float64) ** 2)
    return np.concatenate(out)


def ams_samples(vals: ValueAssignment, p: int, count: int, rng: np.random.Generator) -> np.ndarray:
    r"""
    ``count`` independent single AMS estimators ``X = F1 (r^p - (r-1)^p)``
    with node index order as identifier order. ``E[X] = F_p``.
    """
    r = suffix_counts(vals, np.arange(vals.n))
    nonempty = np.flatnonzero(vals.nonempty)
    if len(nonempty) == 0:
        raise EmptyInstanceError("AMS sampling needs at least one non-empty node")
    chosen = r[rng.choice(nonempty, size=count)].astype(np.float64)
    return len(nonempty) * (chosen ** p - (chosen - 1) ** p)
