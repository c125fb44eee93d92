#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved
r"""
CONGEST building blocks: leader election with DFS identifiers, tree
aggregation and broadcast, the pipelined grouped upcast, k-wise independent
hash functions and message routers.

Tree primitives are oblivious: their transmission schedule depends only on
the tree, so they are computed centrally and replayed through
:meth:`distsum.engines.CongestEngine.replay`, which enforces the same rules
as a node-program run.
"""
import heapq
import logging
import math
import warnings
from abc import ABC, abstractmethod
from collections import defaultdict, deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from .engines import (
    CongestEngine,
    Message,
    NodeProgram,
    NodeStep,
    ProtocolViolation,
    RoundStats,
    Schedule,
    field_bits,
)
from .graph import Graph, Tree, mixing_time


logger = logging.getLogger(__name__)

_MILLER_RABIN_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)
_HASH_DEGREE = {"pairwise": 1, "fourwise": 3}


def is_prime(x: int) -> bool:
    r"""
    Miller-Rabin with fixed bases; deterministic below ``3.3e24``.
    """
    if x < 2:
        return False
    for p in _MILLER_RABIN_BASES:
        if x % p == 0:
            return x == p
    d, s = x - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MILLER_RABIN_BASES:
        y = pow(a, d, x)
        if y in (1, x - 1):
            continue
        for _ in range(s - 1):
            y = y * y % x
            if y == x - 1:
                break
        else:
            return False
    return True


@lru_cache(maxsize=None)
def next_prime(x: int) -> int:
    r"""
    Smallest prime ``>= x``.

    Example:
        >>> next_prime(1000)
        1009
    """
    candidate = max(int(x), 2)
    while not is_prime(candidate):
        candidate += 1
    return candidate


@dataclass(frozen=True)
class HashFunction:
    r"""
    Random polynomial hash ``h(x) = sum_i a_i x^i mod M`` over the value
    domain ``[1, N]``. Degree 1 gives a pairwise independent family and
    degree 3 a 4-wise independent one; ``M`` is the smallest prime
    ``>= N^3``.

    Example:
        >>> h = HashFunction.random("pairwise", 100, np.random.default_rng(0))
        >>> h.modulus
        1000003
        >>> bool(((h(np.arange(1, 101)) >= 0) & (h(np.arange(1, 101)) < h.modulus)).all())
        True
    """

    kind: str
    modulus: int
    coefficients: Tuple[int, ...]
    domain: int

    def __post_init__(self):
        if self.kind not in _HASH_DEGREE:
            raise ValueError(f"Unknown hash family '{self.kind}'")
        if len(self.coefficients) != _HASH_DEGREE[self.kind] + 1:
            raise ValueError(
                f"A {self.kind} hash needs {_HASH_DEGREE[self.kind] + 1} coefficients"
            )

    @classmethod
    def random(
        cls, kind: str, domain: int, rng: np.random.Generator, *, min_modulus: int = 2
    ) -> "HashFunction":
        r"""
        A uniformly drawn member of the family over the prime
        ``next_prime(max(domain^3, min_modulus))``.
        """
        if kind not in _HASH_DEGREE:
            raise ValueError(f"Unknown hash family '{kind}'")
        modulus = next_prime(max(max(domain, 2) ** 3, min_modulus))
        coefficients = tuple(_uniform_below(modulus, rng) for _ in range(_HASH_DEGREE[kind] + 1))
        return cls(kind, modulus, coefficients, domain)

    def words(self) -> Tuple[int, ...]:
        r"""
        The description broadcast by the leader: coefficients then modulus.
        """
        return self.coefficients + (self.modulus,)

    @property
    def word_bits(self) -> int:
        return field_bits(self.modulus)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x)
        if self.modulus * (self.domain + 1) < 2 ** 63:
            xs = x.astype(np.int64) % self.modulus
            acc = np.zeros_like(xs)
            for c in self.coefficients:
                acc = (acc * xs + c) % self.modulus
            return acc
        # exact big-integer evaluation
        xs = x.astype(object) % self.modulus
        acc = np.zeros(xs.shape, dtype=object)
        for c in self.coefficients:
            acc = (acc * xs + c) % self.modulus
        return acc

    def sign(self, x) -> np.ndarray:
        r"""
        ``+1``/``-1`` from the parity of ``h(x)``. The modulus is odd, so
        ``+1`` has probability ``1/2 + 1/(2 * modulus)``.
        """
        return 1 - 2 * (np.asarray(self(x)) % 2).astype(np.int64)


def evaluate_hashes(hashes: Sequence[HashFunction], x) -> np.ndarray:
    r"""
    Values of every hash on ``x`` as an array of shape ``(len(hashes), len(x))``.
    """
    x = np.asarray(x)
    if not hashes:
        return np.zeros((0, len(x)), dtype=np.int64)
    modulus, domain = hashes[0].modulus, hashes[0].domain
    uniform = all(h.modulus == modulus and len(h.coefficients) == len(hashes[0].coefficients) for h in hashes)
    if not uniform or modulus * (domain + 1) >= 2 ** 63:
        return np.stack([np.asarray(h(x)) for h in hashes])
    coefficients = np.array([h.coefficients for h in hashes], dtype=np.int64)
    xs = x.astype(np.int64) % modulus
    acc = np.zeros((len(hashes), len(xs)), dtype=np.int64)
    for column in coefficients.T:
        acc = (acc * xs[None, :] + column[:, None]) % modulus
    return acc


def _uniform_below(bound: int, rng: np.random.Generator) -> int:
    if bound < 2 ** 63:
        return int(rng.integers(0, bound))
    nbytes = (bound.bit_length() + 7) // 8 + 8
    return int.from_bytes(rng.bytes(nbytes), "little") % bound


class _FloodMinId(NodeProgram):
    def __init__(self, g: Graph, bits: int):
        self.g = g
        self.bits = bits

    def initial_state(self, node):
        return {"best": node, "dist": 0, "parent": -1}

    def step(self, node, state, ctx):
        changed = ctx.round_index == 1
        for sender, msg in sorted(ctx.inbox, key=lambda item: (item[1].payload, item[0])):
            best, dist = msg.payload
            if (best, dist + 1) < (state["best"], state["dist"]):
                state.update(best=best, dist=dist + 1, parent=sender)
                changed = True
        send = []
        if changed:
            msg = Message((state["best"], state["dist"]), self.bits)
            send = [(u, msg) for u in self.g.neighbors(node)]
        return NodeStep(send=send, halt=True)


class _SubtreeSizes(NodeProgram):
    def __init__(self, parent: Sequence[int], bits: int):
        self.parent = parent
        self.bits = bits

    def initial_state(self, node):
        return {"children": [], "child_sizes": {}, "pending": None, "size": 1}

    def step(self, node, state, ctx):
        parent = self.parent[node]
        if ctx.round_index == 1:
            send = [(parent, Message("child", 1))] if parent >= 0 else []
            return NodeStep(send=send)
        if state["pending"] is None:
            state["children"] = sorted(s for s, msg in ctx.inbox if msg.payload == "child")
            state["pending"] = len(state["children"])
        for sender, msg in ctx.inbox:
            if msg.payload != "child":
                state["child_sizes"][sender] = msg.payload
                state["size"] += msg.payload
                state["pending"] -= 1
        send = []
        if state["pending"] == 0:
            state["pending"] = -1
            if parent >= 0:
                send = [(parent, Message(state["size"], self.bits))]
        return NodeStep(send=send, halt=True)


class _PreorderIds(NodeProgram):
    def __init__(self, root: int, sizes: List[dict], bits: int):
        self.root = root
        self.sizes = sizes
        self.bits = bits

    def initial_state(self, node):
        return {"id": 0 if node == self.root else None}

    def step(self, node, state, ctx):
        send = []
        for _, msg in ctx.inbox:
            state["id"] = msg.payload
        if state["id"] is not None and (ctx.inbox or node == self.root):
            next_id = state["id"] + 1
            for child in sorted(self.sizes[node]["children"]):
                send.append((child, Message(next_id, self.bits)))
                next_id += self.sizes[node]["child_sizes"][child]
        return NodeStep(send=send, halt=True)


def elect_leader_and_ids(
    engine: CongestEngine, *, seed: int = 0
) -> Tuple[int, Tree, np.ndarray, RoundStats]:
    r"""
    Elects the node of minimum identifier, builds a BFS tree rooted there and
    assigns identifiers ``0..n-1`` in DFS preorder.

    Runs three node programs: min-identifier flooding (which also fixes BFS
    parents, the smallest neighbour one level up), a child notification
    followed by a subtree-size convergecast, and the preorder identifier
    downcast. Uses at most ``3 * D + 4`` rounds.

    Returns:
        ``(leader, tree, ids, stats)`` where ``ids[v]`` is the new identifier
        of node ``v``.
    """
    g = engine.g
    id_bits = field_bits(g.n)
    states, flood = engine.run(_FloodMinId(g, 2 * id_bits), seed=seed)
    leader = states[0]["best"]
    parent = tuple(s["parent"] for s in states)
    tree = Tree(root=leader, parent=parent)
    sizes, convergecast = engine.run(_SubtreeSizes(parent, id_bits), seed=seed)
    ids_states, downcast = engine.run(_PreorderIds(leader, sizes, id_bits), seed=seed)
    ids = np.array([s["id"] for s in ids_states], dtype=np.int64)
    stats = RoundStats.sequence(flood, convergecast, downcast)
    logger.debug("Leader %d elected, tree depth %d, %d rounds", leader, tree.depth, stats.rounds)
    return leader, tree, ids, stats


def aggregate_sum(
    engine: CongestEngine,
    tree: Tree,
    values,
    *,
    value_range: Optional[int] = None,
    broadcast: bool = True,
) -> Tuple[np.ndarray, RoundStats]:
    r"""
    Sums per-node counters over the tree.

    ``values`` has shape ``(n,)`` or ``(n, K)``. Node ``v`` sends its partial
    sum of counter ``j`` (1-based) to its parent in round ``height(v) + j``;
    with ``broadcast`` the root pipelines the totals back down. Uses at most
    ``2 * depth + K - 1`` rounds, where a counter wider than the message
    budget counts as several words.

    Args:
        value_range: Declared bound on the absolute value of every partial
            sum; fixes the counter width. Defaults to the largest partial sum.

    Raises:
        ValueError: If a partial sum leaves the declared range.

    Example:
        >>> g = Graph.from_edges(3, [(0, 1), (1, 2)])
        >>> engine = CongestEngine(g)
        >>> total, stats = aggregate_sum(engine, bfs_tree(g, 0), [4, 5, 6])
        >>> int(total[0]), stats.rounds
        (15, 4)
    """
    return aggregate_sum_blocks(engine, tree, [values], value_range=value_range, broadcast=broadcast)


def _partial_sums(tree: Tree, values) -> np.ndarray:
    values = np.asarray(values)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != tree.n:
        raise ValueError(f"Expected values for {tree.n} nodes, got {values.shape[0]}")
    if values.dtype == object:
        partial = values.copy()
        parents = np.asarray(tree.parent)
        for level in range(tree.depth, 0, -1):
            nodes = tree.nodes_at_level(level)
            np.add.at(partial, parents[nodes], partial[nodes])
        return partial
    return subtree_matrix(tree) @ values.astype(np.int64 if values.dtype == np.bool_ else values.dtype)


def aggregate_sum_blocks(
    engine: CongestEngine,
    tree: Tree,
    blocks: Iterable,
    *,
    value_range: Optional[int] = None,
    broadcast: bool = True,
) -> Tuple[np.ndarray, RoundStats]:
    r"""
    :func:`aggregate_sum` over counters handed over as column blocks of
    shape ``(n, K_i)``. All blocks share one pipelined schedule, so the
    accounting equals one aggregation of the concatenated counters.

    Example:
        >>> g = Graph.from_edges(3, [(0, 1), (1, 2)])
        >>> blocks = [np.ones((3, 2), dtype=np.int64), np.arange(3)[:, None]]
        >>> total, stats = aggregate_sum_blocks(CongestEngine(g), bfs_tree(g, 0), blocks)
        >>> total.tolist(), stats.rounds
        ([3, 3, 3], 6)
    """
    totals = []
    counters = 0
    largest = 0
    for block in blocks:
        partial = _partial_sums(tree, block)
        if partial.size:
            largest = max(largest, math.ceil(np.abs(partial).max()))
        totals.append(partial[tree.root])
        counters += partial.shape[1]
    if value_range is None:
        value_range = largest
    elif largest > value_range:
        raise ValueError(f"Partial sum {largest} overflows declared range {value_range}")
    bits = field_bits(2 * value_range + 1)
    # counters wider than a message travel as several words
    words = math.ceil(bits / engine.budget)
    stats = aggregate_cost(engine, tree, counters * words, bits=min(bits, engine.budget), broadcast=broadcast)
    return (np.concatenate(totals) if totals else np.zeros(0, dtype=np.int64)), stats


@lru_cache(maxsize=32)
def subtree_matrix(tree: Tree) -> sparse.csr_matrix:
    r"""
    ``A[v, u] = 1`` iff ``u`` lies in the subtree of ``v``.
    """
    rows, cols = [], []
    for u in range(tree.n):
        for v in tree.path_to_root(u):
            rows.append(v)
            cols.append(u)
    data = np.ones(len(rows), dtype=np.int64)
    return sparse.csr_matrix((data, (rows, cols)), shape=(tree.n, tree.n))


def aggregate_cost(
    engine: CongestEngine, tree: Tree, counters: int, *, bits: int, broadcast: bool = True
) -> RoundStats:
    r"""
    Replays the convergecast (and optional downcast) schedule of ``counters``
    pipelined ``bits``-bit counters.
    """
    schedule = Schedule()
    nodes = np.array([v for v in range(tree.n) if v != tree.root], dtype=np.int64)
    parents = np.asarray(tree.parent, dtype=np.int64)
    if len(nodes) and counters:
        schedule.add(nodes, parents[nodes], tree.height[nodes] + 1, counters, bits)
        if broadcast:
            schedule.add(parents[nodes], nodes, tree.depth + tree.level[nodes], counters, bits)
    return engine.replay(schedule)


def broadcast_words(engine: CongestEngine, tree: Tree, words: Sequence[int], *, bits: Optional[int] = None) -> RoundStats:
    r"""
    Pipelines ``len(words)`` words from the root to every node in
    ``depth + len(words) - 1`` rounds.

    Example:
        >>> g = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
        >>> broadcast_words(CongestEngine(g), bfs_tree(g, 0), [7]).rounds
        3
    """
    if not words:
        return RoundStats()
    if bits is None:
        bits = max(field_bits(int(w) + 1) for w in words)
    schedule = Schedule()
    nodes = np.array([v for v in range(tree.n) if v != tree.root], dtype=np.int64)
    if len(nodes):
        parents = np.asarray(tree.parent, dtype=np.int64)
        schedule.add(parents[nodes], nodes, tree.level[nodes], len(words), bits)
    return engine.replay(schedule)


def upcast_k_smallest_grouped(
    engine: CongestEngine,
    tree: Tree,
    items: Sequence[Iterable[Tuple[int, Any]]],
    k: int,
    t: int,
    *,
    value_bits: int,
    distinct: bool = False,
    broadcast_back: bool = True,
) -> Tuple[List[List[Any]], RoundStats]:
    r"""
    Delivers the ``t`` smallest values of each of ``k`` groups to the root.

    ``items[v]`` lists node ``v``'s ``(group, value)`` pairs with groups in
    ``0..k-1``. Group ``j`` occupies rounds ``height(v) + j*t + 1`` to
    ``height(v) + (j+1)*t`` on the edge from ``v`` to its parent; node ``v``
    sends its ``i``-th smallest value of the group in the ``i``-th of them.
    With ``broadcast_back`` the root downcasts each result word as soon as it
    is final. Uses at most ``2 * depth + k * t`` rounds.

    Returns:
        Sorted result list per group (shorter when a group has fewer than
        ``t`` values) and the round accounting.

    Example:
        >>> g = Graph.from_edges(5, [(0, 1), (0, 2), (0, 3), (0, 4)])
        >>> items = [[], [(0, 5)], [(0, 1)], [(0, 9)], [(0, 2)]]
        >>> result, _ = upcast_k_smallest_grouped(
        ...     CongestEngine(g), bfs_tree(g, 0), items, 1, 3, value_bits=4)
        >>> result
        [[1, 2, 5]]
    """
    if k < 1 or t < 1:
        raise ValueError(f"Need k >= 1 and t >= 1, got k={k}, t={t}")
    own: List[List[List[Any]]] = [[[] for _ in range(k)] for _ in range(tree.n)]
    for v, node_items in enumerate(items):
        for group, value in node_items:
            if not 0 <= group < k:
                raise ValueError(f"Group {group} of node {v} outside [0, {k})")
            own[v][group].append(value)
    lists = own
    for v in reversed(tree.bfs_order):
        for j in range(k):
            merged = lists[v][j]
            for c in tree.children[v]:
                merged = merged + lists[c][j]
            if distinct:
                merged = list(set(merged))
            lists[v][j] = heapq.nsmallest(t, merged)
    result = lists[tree.root]

    bits = field_bits(k) + value_bits
    schedule = Schedule()
    parents = np.asarray(tree.parent, dtype=np.int64)
    nodes = np.array([v for v in range(tree.n) if v != tree.root], dtype=np.int64)
    if len(nodes):
        for j in range(k):
            lengths = np.array([len(lists[v][j]) for v in nodes], dtype=np.int64)
            schedule.add(nodes, parents[nodes], tree.height[nodes] + j * t + 1, lengths, bits)
            if broadcast_back:
                schedule.add(parents[nodes], nodes, tree.depth + j * t + tree.level[nodes], len(result[j]), bits)
    return [list(group) for group in result], engine.replay(schedule)


class Router(ABC):
    r"""
    Delivers a batch of point-to-point messages and accounts for the rounds.
    """

    def __init__(self, g: Graph):
        self.g = g

    def _check(self, src: np.ndarray, dst: np.ndarray):
        if len(src) != len(dst):
            raise ValueError(f"{len(src)} sources for {len(dst)} destinations")
        for name, nodes in (("source", src), ("destination", dst)):
            if len(nodes) and (nodes.min() < 0 or nodes.max() >= self.g.n):
                raise ValueError(f"Message {name} outside [0, {self.g.n})")
        bound = max(1.0, math.log2(self.g.n) ** 2) * self.g.degrees
        load = np.maximum(
            np.bincount(src, minlength=self.g.n), np.bincount(dst, minlength=self.g.n)
        )
        if (load > bound).any():
            warnings.warn(
                f"Router load {int(load.max())} exceeds the polylog(n) * deg bound at node "
                f"{int(np.argmax(load > bound))}"
            )

    def route(
        self, src, dst, *, bits: int, payloads: Optional[Sequence[Any]] = None
    ) -> Tuple[Dict[int, List[Tuple[int, Any]]], RoundStats]:
        r"""
        Routes message ``i`` from ``src[i]`` to ``dst[i]``.

        Returns:
            Deliveries as ``dst -> [(src, payload), ...]`` in batch order and
            the round accounting.
        """
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        self._check(src, dst)
        if payloads is None:
            payloads = [None] * len(src)
        stats = self._transmit(src, dst, bits)
        deliveries: Dict[int, List[Tuple[int, Any]]] = defaultdict(list)
        for s, d, payload in zip(src.tolist(), dst.tolist(), payloads):
            deliveries[d].append((s, payload))
        return dict(deliveries), stats

    @abstractmethod
    def _transmit(self, src: np.ndarray, dst: np.ndarray, bits: int) -> RoundStats:
        pass


class TreeRouter(Router):
    r"""
    Store-and-forward routing along tree paths with one FIFO queue per
    directed edge; every edge forwards its queue head once per round.
    ``max_edge_congestion`` reports the longest queue seen.
    """

    def __init__(self, engine: CongestEngine, tree: Tree):
        super().__init__(engine.g)
        self.engine = engine
        self.tree = tree

    def path(self, src: int, dst: int) -> List[int]:
        level, parent = self.tree.level, self.tree.parent
        up, down = [src], [dst]
        while up[-1] != down[-1]:
            if level[up[-1]] >= level[down[-1]]:
                up.append(parent[up[-1]])
            else:
                down.append(parent[down[-1]])
        return up + down[-2::-1]

    def _transmit(self, src, dst, bits):
        paths = [self.path(s, d) for s, d in zip(src.tolist(), dst.tolist())]
        hop = [0] * len(paths)
        queues: Dict[Tuple[int, int], deque] = defaultdict(deque)
        for i, p in enumerate(paths):
            if len(p) > 1:
                queues[(p[0], p[1])].append(i)
        congestion = max((len(q) for q in queues.values()), default=0)
        tx_src, tx_dst, tx_round = [], [], []
        r = 0
        while queues:
            r += 1
            arrivals = []
            for edge in list(queues):
                queue = queues[edge]
                i = queue.popleft()
                if not queue:
                    del queues[edge]
                tx_src.append(edge[0])
                tx_dst.append(edge[1])
                tx_round.append(r)
                hop[i] += 1
                if hop[i] < len(paths[i]) - 1:
                    arrivals.append(((paths[i][hop[i]], paths[i][hop[i] + 1]), i))
            for edge, i in arrivals:
                queues[edge].append(i)
                congestion = max(congestion, len(queues[edge]))
        schedule = Schedule()
        schedule.add(tx_src, tx_dst, tx_round, 1, bits)
        stats = self.engine.replay(schedule)
        stats.max_edge_congestion = congestion if stats.messages_sent else 0
        return stats


class CostModelRouter(Router):
    r"""
    Delivers instantly and charges ``ceil(tau_G * 2^(c * ceil(sqrt(log2 n))))``
    rounds per batch, the cost of a mixing-time based permutation router.

    Example:
        >>> router = CostModelRouter(CongestEngine(generate(GraphSpec("clique", (16,)))))
        >>> router.rounds_per_batch
        32
    """

    def __init__(self, engine: CongestEngine, *, c: float = 1, tau: Optional[int] = None):
        super().__init__(engine.g)
        g = engine.g
        self.engine = engine
        self.c = c
        self.tau = mixing_time(g) if tau is None else tau
        exponent = c * math.ceil(math.sqrt(math.log2(g.n))) if g.n > 1 else 0
        self.rounds_per_batch = math.ceil(self.tau * 2 ** exponent)

    def _transmit(self, src, dst, bits):
        moving = int((src != dst).sum())
        if not moving:
            return RoundStats()
        if bits > self.engine.budget:
            raise ProtocolViolation(int(src[0]), 1, f"payload of {bits} bits exceeds budget {self.engine.budget}")
        return self.engine.spend(RoundStats.charged(self.rounds_per_batch, messages=moving, congestion=1))


def make_router(kind: str, engine: CongestEngine, tree: Tree, *, c: float = 1) -> Router:
    if kind == "tree":
        return TreeRouter(engine, tree)
    if kind == "cost-model":
        return CostModelRouter(engine, c=c)
    raise ValueError(f"Unknown router '{kind}'")
