#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved
r"""
Exact ``sum_i g(f_i)`` and top-k frequent values by distributed sorting.

Nodes sort their values with a sorting network whose comparators are
realized as routed exchanges between the nodes hosting the two positions.
After the sort every value occupies a contiguous block of positions; the
first and last holders of a block (head and tail) turn into tokens, a second
sort places each head token right before its tail token, and the difference
of their original positions gives the frequency.
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .congest_sketches import NULL, FrequencyVector, ValueAssignment
from .engines import DEFAULT_C0, CongestEngine, RoundStats, field_bits
from .graph import Graph, Tree
from .primitives import Router, aggregate_sum, elect_leader_and_ids, make_router, upcast_k_smallest_grouped


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SortingNetwork:
    r"""
    Comparator network on ``width`` positions. Each layer is a tuple of
    disjoint ``(low, high)`` position pairs; a comparator leaves the smaller
    key at ``low``.

    Example:
        >>> build_sorting_network(4).layers
        (((0, 1), (2, 3)), ((0, 2), (1, 3)), ((1, 2),))
    """

    width: int
    layers: Tuple[Tuple[Tuple[int, int], ...], ...]

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def size(self) -> int:
        return sum(len(layer) for layer in self.layers)

    def apply(self, keys) -> np.ndarray:
        r"""
        Runs the network on ``width`` keys and returns the output.
        """
        out = np.array(keys, copy=True)
        if len(out) != self.width:
            raise ValueError(f"Network of width {self.width} got {len(out)} keys")
        for layer in self.layers:
            out = _compare_exchange(out, layer)
        return out


def _compare_exchange(keys: np.ndarray, layer: Sequence[Tuple[int, int]]) -> np.ndarray:
    if not layer:
        return keys
    pairs = np.asarray(layer, dtype=np.int64)
    low, high = keys[pairs[:, 0]], keys[pairs[:, 1]]
    keys[pairs[:, 0]] = np.minimum(low, high)
    keys[pairs[:, 1]] = np.maximum(low, high)
    return keys


def build_sorting_network(n: int) -> SortingNetwork:
    r"""
    Batcher odd-even mergesort on ``2^ceil(log2 n)`` positions, one layer per
    merge stage ``(p, k)``; depth ``k (k + 1) / 2`` for width ``2^k``.
    """
    if n < 1:
        raise ValueError(f"A sorting network needs n >= 1, got {n}")
    width = 1 << max(0, math.ceil(math.log2(n)))
    layers = []
    p = 1
    while p < width:
        k = p
        while k >= 1:
            layer = []
            for j in range(k % p, width - k, 2 * k):
                for i in range(min(k - 1, width - j - k - 1) + 1):
                    if (i + j) // (2 * p) == (i + j + k) // (2 * p):
                        layer.append((i + j, i + j + k))
            layers.append(tuple(layer))
            k //= 2
        p *= 2
    return SortingNetwork(width, tuple(layers))


@dataclass(frozen=True)
class GFunction:
    r"""
    The per-value function ``g`` of an exact sum.

    ``distinct`` maps every count to 1, ``power`` to ``f^p``, ``identity`` to
    ``f`` and ``entropy`` to ``-(f/F1) ln(f/F1)`` (the only kind that needs
    ``F1``).

    Example:
        >>> GFunction.from_config({"kind": "power", "p": 2})(3)
        9
    """

    kind: str
    p: int = 1

    KINDS = ("distinct", "power", "identity", "entropy")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"Unknown g function '{self.kind}', expected one of {self.KINDS}")
        if self.kind == "power" and self.p < 0:
            raise ValueError(f"power needs p >= 0, got {self.p}")

    @classmethod
    def from_config(cls, config: Union[str, Dict[str, Any]]) -> "GFunction":
        r"""
        Accepts ``{"kind": "power", "p": 3}`` or the names ``"distinct"``,
        ``"identity"``, ``"entropy"`` and ``"power-3"``.
        """
        if isinstance(config, str):
            if config.startswith("power-"):
                return cls("power", int(config.split("-", 1)[1]))
            return cls("entropy" if config == "entropy-term" else config)
        return cls(config["kind"], int(config.get("p", 1)))

    @property
    def needs_total(self) -> bool:
        return self.kind == "entropy"

    def __call__(self, f: int, total: Optional[int] = None) -> Union[int, float]:
        if self.kind == "distinct":
            return 1
        if self.kind == "power":
            return f ** self.p
        if self.kind == "identity":
            return f
        if not total:
            raise ValueError("entropy term needs F1 > 0")
        share = f / total
        return -share * math.log(share)

    def oracle(self, fv: FrequencyVector) -> Union[int, float]:
        r"""
        ``sum_i g(f_i)`` by direct counting.
        """
        if self.kind == "entropy":
            return fv.entropy()
        return sum(self(f, fv.F1) for _, f in fv.counts)


@dataclass
class SortContext:
    r"""
    A CONGEST instance prepared for sorting: elected tree, DFS identifiers
    and the router carrying comparator exchanges. Position ``q`` of the
    network is hosted by the node with identifier ``q mod n``.
    """

    engine: CongestEngine
    tree: Tree
    ids: np.ndarray
    router: Router
    network: SortingNetwork
    setup_stats: RoundStats

    @classmethod
    def prepare(
        cls,
        g: Graph,
        *,
        router: Union[str, Router] = "tree",
        max_value: int = 1,
        seed: int = 0,
        c0: int = DEFAULT_C0,
        router_c: float = 1,
        round_cap: Optional[int] = None,
    ) -> "SortContext":
        engine = CongestEngine(g, max_value=max_value, c0=c0, round_cap=round_cap)
        _, tree, ids, stats = elect_leader_and_ids(engine, seed=seed)
        if isinstance(router, str):
            router = make_router(router, engine, tree, c=router_c)
        return cls(engine, tree, ids, router, build_sorting_network(g.n), stats)

    @property
    def n(self) -> int:
        return self.engine.g.n

    def host(self, positions: np.ndarray) -> np.ndarray:
        node_of_id = np.argsort(self.ids)
        return node_of_id[np.asarray(positions) % self.n]

    def sort(self, keys: np.ndarray, *, key_bits: int) -> Tuple[np.ndarray, RoundStats]:
        r"""
        Sorts ``width`` position keys; every layer is one routed batch in
        which the two hosts of each comparator swap keys. Comparator outcomes
        are evaluated here and the router only accounts for the exchanges.
        """
        stats = RoundStats()
        keys = np.array(keys, copy=True)
        for layer in self.network.layers:
            pairs = np.asarray(layer, dtype=np.int64).reshape(-1, 2)
            stats = stats.then(self._exchange(pairs[:, 0], pairs[:, 1], key_bits))
            keys = _compare_exchange(keys, layer)
        return keys, stats

    def _exchange(self, left: np.ndarray, right: np.ndarray, bits: int) -> RoundStats:
        a, b = self.host(left), self.host(right)
        remote = a != b
        src = np.concatenate([a[remote], b[remote]])
        dst = np.concatenate([b[remote], a[remote]])
        if len(src) == 0:
            return RoundStats()
        _, stats = self.router.route(src, dst, bits=bits)
        return stats

    def neighbour_exchange(self, count: int, bits: int) -> RoundStats:
        r"""
        Positions ``q`` and ``q + 1`` (``q + 1 < count``) swap their keys;
        boundary positions skip the missing neighbour.
        """
        left = np.arange(max(count - 1, 0))
        return self._exchange(left, left + 1, bits)


def distributed_sort(
    g: Graph,
    vals: ValueAssignment,
    *,
    router: Union[str, Router] = "tree",
    seed: int = 0,
    c0: int = DEFAULT_C0,
    context: Optional[SortContext] = None,
) -> Tuple[np.ndarray, RoundStats]:
    r"""
    Sorts the node values so that the node with identifier ``i`` holds the
    ``i``-th smallest, NULLs first.

    Returns:
        ``placement[i]`` for identifiers ``0..n-1`` and the round accounting
        (including leader election when no ``context`` is given).
    """
    ctx = context or SortContext.prepare(g, router=router, max_value=vals.N, seed=seed, c0=c0)
    sentinel = vals.N + 1
    keys = np.full(ctx.network.width, sentinel, dtype=np.int64)
    keys[ctx.ids] = vals.values
    placement, stats = ctx.sort(keys, key_bits=field_bits(sentinel + 1))
    setup = ctx.setup_stats if context is None else RoundStats()
    return placement[: g.n], setup.then(stats)


@dataclass(frozen=True)
class HeadTailTokens:
    r"""
    Frequencies recovered by the two sorts: the head and tail positions of
    every value and the identifier holding each head token after the second
    sort.
    """

    values: np.ndarray
    head: np.ndarray
    tail: np.ndarray
    holder: np.ndarray

    @property
    def frequencies(self) -> np.ndarray:
        return self.tail - self.head + 1

    @property
    def token_count(self) -> int:
        return int(2 * len(self.values) - (self.head == self.tail).sum())


def head_tail_counts(ctx: SortContext, vals: ValueAssignment) -> Tuple[HeadTailTokens, RoundStats]:
    r"""
    Runs the first sort, the head/tail detection, the token sort and the
    frequency recovery. Does not include ``ctx.setup_stats``.
    """
    n, width = ctx.n, ctx.network.width
    placement, stats = distributed_sort(ctx.engine.g, vals, context=ctx)
    value_bits = field_bits(vals.N + 2)
    stats = stats.then(ctx.neighbour_exchange(n, value_bits))
    present = placement != NULL
    is_head = present & np.r_[True, placement[1:] != placement[:-1]]
    is_tail = present & np.r_[placement[1:] != placement[:-1], True]

    # tokens are keyed (value, origin); blanks sort first, sentinels last
    token = is_head | is_tail
    origin = np.arange(n)
    keys = np.full(width, (vals.N + 2) * width + 1, dtype=np.int64)
    keys[:n] = np.where(token, 1 + placement * width + origin, 0)
    token_bits = field_bits(int(keys.max()) + 1) + 2
    ranked, second = ctx.sort(keys, key_bits=token_bits)
    stats = stats.then(second).then(ctx.neighbour_exchange(n, token_bits))

    live = ranked[:n]
    live = live[live > 0]
    pos = (live - 1) % width
    value = (live - 1) // width
    first = np.flatnonzero(is_head[pos])
    heads = pos[first]
    has_tail_next = np.zeros(len(first), dtype=bool)
    nxt = first + 1
    inside = nxt < len(pos)
    has_tail_next[inside] = (value[nxt[inside]] == value[first[inside]]) & ~is_head[pos[nxt[inside]]]
    tails = np.where(has_tail_next, pos[np.minimum(nxt, len(pos) - 1)], heads)
    blanks = n - len(live)
    tokens = HeadTailTokens(
        values=value[first],
        head=heads,
        tail=tails,
        holder=blanks + first,
    )
    return tokens, stats


def exact_g_sum(
    g: Graph,
    vals: ValueAssignment,
    gfun: Union[GFunction, str, Dict[str, Any]],
    *,
    router: Union[str, Router] = "tree",
    seed: int = 0,
    c0: int = DEFAULT_C0,
    router_c: float = 1,
    round_cap: Optional[int] = None,
) -> Tuple[Union[int, float], RoundStats]:
    r"""
    Computes ``sum_{i: f_i > 0} g(f_i)`` exactly (entropy in double precision).

    Each head-token holder evaluates ``g`` on its recovered frequency and a
    tree aggregation sums the results.
    """
    if not isinstance(gfun, GFunction):
        gfun = GFunction.from_config(gfun)
    ctx = SortContext.prepare(
        g, router=router, max_value=vals.N, seed=seed, c0=c0, router_c=router_c, round_cap=round_cap
    )
    stats = ctx.setup_stats
    total = None
    if gfun.needs_total:
        counts, count_stats = aggregate_sum(ctx.engine, ctx.tree, vals.nonempty.astype(np.int64), value_range=g.n)
        total = int(counts[0])
        stats = stats.then(count_stats)
    tokens, pipeline = head_tail_counts(ctx, vals)
    stats = stats.then(pipeline)

    local = np.zeros(g.n, dtype=object)
    host = ctx.host(tokens.holder)
    for node, f in zip(host.tolist(), tokens.frequencies.tolist()):
        local[node] = gfun(int(f), total)
    if gfun.kind == "entropy":
        local = local.astype(np.float64)
    elif all(abs(x) < 2 ** 62 // max(g.n, 1) for x in local.tolist()):
        local = local.astype(np.int64)
    result, aggregation = aggregate_sum(ctx.engine, ctx.tree, local)
    value = result[0]
    value = float(value) if gfun.kind == "entropy" else int(value)
    logger.debug("exact %s sum %s in %d rounds", gfun.kind, value, stats.rounds)
    return value, stats.then(aggregation)


def top_k(
    g: Graph,
    vals: ValueAssignment,
    k: int,
    *,
    router: Union[str, Router] = "tree",
    seed: int = 0,
    c0: int = DEFAULT_C0,
    router_c: float = 1,
    round_cap: Optional[int] = None,
) -> Tuple[List[Tuple[int, int]], RoundStats]:
    r"""
    The ``k`` most frequent ``(value, count)`` pairs, ties broken by the
    smaller value; all pairs when ``k`` exceeds the number of distinct values.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ctx = SortContext.prepare(
        g, router=router, max_value=vals.N, seed=seed, c0=c0, router_c=router_c, round_cap=round_cap
    )
    tokens, pipeline = head_tail_counts(ctx, vals)
    items: List[List[Tuple[int, Tuple[int, int]]]] = [[] for _ in range(g.n)]
    for node, value, f in zip(
        ctx.host(tokens.holder).tolist(), tokens.values.tolist(), tokens.frequencies.tolist()
    ):
        items[node].append((0, (-f, value)))
    best, upcast = upcast_k_smallest_grouped(
        ctx.engine,
        ctx.tree,
        items,
        1,
        k,
        value_bits=field_bits(g.n + 1) + field_bits(vals.N + 1),
    )
    pairs = [(value, -neg) for neg, value in best[0]]
    return pairs, RoundStats.sequence(ctx.setup_stats, pipeline, upcast)
