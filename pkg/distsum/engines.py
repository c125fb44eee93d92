#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved
r"""
Round-synchronous execution environments.

The CONGEST engine lets every node send one bit-budgeted message per incident
edge and direction per round; messages sent in round ``r`` are in the inbox of
round ``r + 1``. It executes either node programs (one handler call per awake
node and round) or oblivious transmission schedules, which tree primitives
compute up front and the engine replays against the same rules.

The GOSSIP engine gives every node one partner per round, drawn by a
partner source: uniformly at random (``IdealPartnerSource``) or through the
random-walk emulation in :mod:`distsum.gossip_emulation`.
"""
import heapq
import logging
import math
import warnings
from abc import ABC, abstractmethod
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .graph import Graph
from .utils.uniform_sampler import UniformPartnerSampler


logger = logging.getLogger(__name__)

DEFAULT_C0 = 8

# stream tags mixed into seeds so that the engines never share a generator
NODE_STREAM = 1
PARTNER_STREAM = 2
ALGORITHM_STREAM = 3


class ProtocolViolation(Exception):
    r"""
    Exception raised when a program breaks the communication rules of the
    model it runs in (oversized payload, two sends on one edge direction in
    one round, sending to a non-neighbour).
    """

    def __init__(self, node: int, round_index: int, reason: str):
        super().__init__(f"node {node}, round {round_index}: {reason}")
        self.node = node
        self.round_index = round_index
        self.reason = reason


class TrialCapExceeded(RuntimeError):
    r"""
    Exception raised when a retry loop that succeeds with high probability
    exhausts its trial cap, or a run passes the round cap of its engine.
    """

    pass


def bit_budget(n: int, max_value: int = 1, c0: int = DEFAULT_C0) -> int:
    r"""
    Payload budget ``B = c0 * ceil(log2(max(n, N, 16)))`` in bits.

    Example:
        >>> bit_budget(1024, 1024)
        80
    """
    return c0 * math.ceil(math.log2(max(n, max_value, 16)))


def field_bits(value_range: int) -> int:
    r"""
    Bits needed for a field taking ``value_range`` distinct values.
    """
    return max(1, math.ceil(math.log2(max(value_range, 2))))


@dataclass(frozen=True)
class Message:
    r"""
    A payload together with its semantic size in bits. Framing and control
    bits are not counted.
    """

    payload: Any
    bits: int

    @classmethod
    def of(cls, payload: Any, *ranges: int) -> "Message":
        r"""
        Message whose fields take ``ranges[i]`` distinct values each.

        Example:
            >>> Message.of((3, 17), 64, 1024).bits
            16
        """
        return cls(payload, sum(field_bits(r) for r in ranges))


@dataclass
class RoundStats:
    r"""
    Accounting of one run or phase.

    ``rounds`` is the number of communication rounds (the last round in which
    a message moved, or rounds charged by a cost model). ``halted_at`` is the
    round in which execution stopped. ``per_round_message_counts`` is kept for
    engine runs; long accumulations drop it (``None``) and keep the totals.
    """

    rounds: int = 0
    messages_sent: int = 0
    max_edge_congestion: int = 0
    per_round_message_counts: Optional[np.ndarray] = field(
        default_factory=lambda: np.zeros(0, dtype=np.int64)
    )
    halted_at: int = 0
    hit_round_cap: bool = False

    def __post_init__(self):
        if min(self.rounds, self.messages_sent, self.max_edge_congestion) < 0:
            raise ValueError(f"Round accounting must be nonnegative, got {self}")

    @classmethod
    def from_counts(cls, counts: np.ndarray, congestion: int = 1) -> "RoundStats":
        counts = np.asarray(counts, dtype=np.int64)
        nonzero = np.flatnonzero(counts)
        rounds = int(nonzero[-1]) + 1 if len(nonzero) else 0
        messages = int(counts.sum())
        return cls(
            rounds=rounds,
            messages_sent=messages,
            max_edge_congestion=congestion if messages else 0,
            per_round_message_counts=counts[:rounds],
            halted_at=rounds,
        )

    @classmethod
    def charged(cls, rounds: int, messages: int = 0, congestion: int = 0) -> "RoundStats":
        r"""
        Rounds charged by a cost model, without per-round detail.
        """
        return cls(
            rounds=rounds,
            messages_sent=messages,
            max_edge_congestion=congestion,
            per_round_message_counts=None,
            halted_at=rounds,
        )

    def then(self, other: "RoundStats") -> "RoundStats":
        r"""
        Sequential composition: ``other`` starts after this phase ends.
        """
        if self.per_round_message_counts is None or other.per_round_message_counts is None:
            per_round = None
        else:
            pad = np.zeros(self.rounds - len(self.per_round_message_counts), dtype=np.int64)
            per_round = np.concatenate(
                [self.per_round_message_counts, pad, other.per_round_message_counts]
            )
        return RoundStats(
            rounds=self.rounds + other.rounds,
            messages_sent=self.messages_sent + other.messages_sent,
            max_edge_congestion=max(self.max_edge_congestion, other.max_edge_congestion),
            per_round_message_counts=per_round,
            halted_at=self.rounds + other.halted_at,
            hit_round_cap=self.hit_round_cap or other.hit_round_cap,
        )

    @staticmethod
    def sequence(*phases: "RoundStats") -> "RoundStats":
        total = RoundStats()
        for phase in phases:
            total = total.then(phase)
        return total


class Schedule:
    r"""
    Oblivious transmission schedule: bursts of ``length`` consecutive
    messages sent from ``src`` to ``dst`` starting in round ``start``.
    """

    def __init__(self):
        self._parts: List[Tuple[np.ndarray, ...]] = []

    def add(self, src, dst, start, length, bits: int):
        src = np.atleast_1d(np.asarray(src, dtype=np.int64))
        dst = np.broadcast_to(np.asarray(dst, dtype=np.int64), src.shape)
        start = np.broadcast_to(np.asarray(start, dtype=np.int64), src.shape)
        length = np.broadcast_to(np.asarray(length, dtype=np.int64), src.shape)
        keep = length > 0
        if keep.any():
            bits_arr = np.full(int(keep.sum()), bits, dtype=np.int64)
            self._parts.append((src[keep], dst[keep], start[keep], length[keep], bits_arr))

    def arrays(self) -> Tuple[np.ndarray, ...]:
        if not self._parts:
            return tuple(np.zeros(0, dtype=np.int64) for _ in range(5))
        return tuple(np.concatenate(column) for column in zip(*self._parts))

    def __len__(self):
        return sum(len(part[0]) for part in self._parts)


class RoundContext:
    r"""
    What a node sees in one round: the round index, its inbox of
    ``(sender, Message)`` pairs and its private randomness stream.
    """

    def __init__(self, node: int, round_index: int, inbox: List[Tuple[int, Message]], seed: int):
        self.node = node
        self.round_index = round_index
        self.inbox = inbox
        self._seed = seed

    @cached_property
    def rng(self) -> np.random.Generator:
        return np.random.default_rng([self._seed, NODE_STREAM, self.node, self.round_index])


@dataclass
class NodeStep:
    r"""
    Result of a CONGEST handler call: ``send`` lists ``(neighbour, Message)``
    pairs; a node that halts or sleeps is invoked again only when a message
    arrives (or, when sleeping, at ``sleep_until``).
    """

    send: List[Tuple[int, Message]] = field(default_factory=list)
    halt: bool = False
    sleep_until: Optional[int] = None


@dataclass
class GossipStep:
    r"""
    Result of a GOSSIP handler call: at most one of ``push`` (a message for
    the partner) and ``pull``; ``respond`` is the payload served to nodes
    pulling from this node in the same round.
    """

    push: Optional[Message] = None
    pull: bool = False
    respond: Optional[Message] = None
    halt: bool = False


class NodeProgram(ABC):
    r"""
    A distributed program: per-node mutable state plus a round handler.

    The handler only touches the state of the node it is called for; all
    randomness comes from ``ctx.rng``.
    """

    def initial_state(self, node: int) -> Any:
        return {}

    @abstractmethod
    def step(self, node: int, state: Any, ctx: RoundContext) -> Union[NodeStep, GossipStep]:
        pass


class CongestEngine:
    r"""
    CONGEST execution on a fixed graph.

    Example:
        >>> g = Graph.from_edges(2, [(0, 1)])
        >>> engine = CongestEngine(g)
        >>> schedule = Schedule()
        >>> schedule.add([0], [1], [1], [3], bits=8)
        >>> engine.replay(schedule).rounds
        3
    """

    def __init__(self, g: Graph, *, max_value: int = 1, c0: int = DEFAULT_C0, round_cap: Optional[int] = None):
        self.g = g
        self.budget = bit_budget(g.n, max_value, c0)
        self.round_cap = round_cap
        self.rounds_used = 0

    def spend(self, stats: RoundStats) -> RoundStats:
        r"""
        Adds the rounds of ``stats`` to the rounds used on this engine.

        Raises:
            TrialCapExceeded: If the total passes ``round_cap``.
        """
        self.rounds_used += stats.rounds
        if self.round_cap is not None and self.rounds_used > self.round_cap:
            raise TrialCapExceeded(f"used {self.rounds_used} CONGEST rounds, cap is {self.round_cap}")
        return stats

    def _check_message(self, node: int, round_index: int, dst: int, msg: Message):
        if not self.g.has_edge(node, dst):
            raise ProtocolViolation(node, round_index, f"node {dst} is not a neighbour")
        if msg.bits > self.budget:
            raise ProtocolViolation(
                node, round_index, f"payload of {msg.bits} bits exceeds budget {self.budget}"
            )

    def run(
        self,
        program: NodeProgram,
        *,
        seed: int = 0,
        round_cap: int = 1_000_000,
    ) -> Tuple[List[Any], RoundStats]:
        r"""
        Executes ``program`` in lock step until quiescence or ``round_cap``.
        The engine's own ``round_cap`` bounds all runs and replays together.

        Returns:
            Final node states and the run's ``RoundStats``.

        Raises:
            ProtocolViolation: On an oversized payload, a non-neighbour
                destination or two sends on one edge direction in a round.
            TrialCapExceeded: If the run passes the engine's ``round_cap``.
        """
        if round_cap < 1:
            raise ValueError(f"round_cap must be >= 1, got {round_cap}")
        rounds_left = None if self.round_cap is None else self.round_cap - self.rounds_used
        n = self.g.n
        states = [program.initial_state(v) for v in range(n)]
        awake = set(range(n))
        wake_at: Dict[int, int] = {}
        alarms: List[Tuple[int, int]] = []
        inbox: Dict[int, List[Tuple[int, Message]]] = {}
        counts: List[int] = []
        halted_at = 0
        hit_cap = False
        r = 0
        while awake or inbox or alarms:
            r += 1
            if rounds_left is not None and r > rounds_left:
                raise TrialCapExceeded(f"CONGEST run passed round {r - 1}, cap is {self.round_cap}")
            if r > round_cap:
                hit_cap = True
                warnings.warn(f"CONGEST run stopped at round cap {round_cap}")
                break
            due = set(awake) | set(inbox)
            while alarms and alarms[0][0] <= r:
                when, v = heapq.heappop(alarms)
                if wake_at.get(v) == when:
                    due.add(v)
            outgoing: Dict[int, List[Tuple[int, Message]]] = defaultdict(list)
            awake = set()
            sent = 0
            for v in sorted(due):
                wake_at.pop(v, None)
                ctx = RoundContext(v, r, inbox.get(v, []), seed)
                step = program.step(v, states[v], ctx)
                used = set()
                for dst, msg in step.send:
                    self._check_message(v, r, dst, msg)
                    if dst in used:
                        raise ProtocolViolation(v, r, f"two messages to {dst} in one round")
                    used.add(dst)
                    outgoing[dst].append((v, msg))
                sent += len(step.send)
                if step.halt:
                    continue
                if step.sleep_until is not None:
                    if step.sleep_until <= r:
                        raise ValueError(f"node {v} asked to sleep until past round {step.sleep_until}")
                    wake_at[v] = step.sleep_until
                    heapq.heappush(alarms, (step.sleep_until, v))
                else:
                    awake.add(v)
            counts.append(sent)
            inbox = dict(outgoing)
            halted_at = r
        stats = RoundStats.from_counts(np.array(counts, dtype=np.int64))
        stats.halted_at = halted_at
        stats.hit_round_cap = hit_cap
        logger.debug("CONGEST run halted at round %d after %d messages", halted_at, stats.messages_sent)
        return states, self.spend(stats)

    def replay(self, schedule: Schedule) -> RoundStats:
        r"""
        Validates a transmission schedule against the CONGEST rules and
        returns its accounting.
        """
        src, dst, start, length, bits = schedule.arrays()
        if len(src) == 0:
            return RoundStats()
        if (start < 1).any():
            bad = int(np.argmin(start))
            raise ProtocolViolation(int(src[bad]), int(start[bad]), "send before round 1")
        edge = self.g.edge_ids(src, dst)
        if (edge < 0).any():
            bad = int(np.flatnonzero(edge < 0)[0])
            raise ProtocolViolation(int(src[bad]), int(start[bad]), f"node {int(dst[bad])} is not a neighbour")
        if (bits > self.budget).any():
            bad = int(np.flatnonzero(bits > self.budget)[0])
            raise ProtocolViolation(
                int(src[bad]), int(start[bad]), f"payload of {int(bits[bad])} bits exceeds budget {self.budget}"
            )
        end = start + length
        order = np.lexsort((start, edge))
        clash = (edge[order][1:] == edge[order][:-1]) & (start[order][1:] < end[order][:-1])
        if clash.any():
            bad = order[1:][clash][0]
            raise ProtocolViolation(
                int(src[bad]), int(start[bad]), f"two messages to {int(dst[bad])} in one round"
            )
        last = int(end.max())
        diff = np.zeros(last + 1, dtype=np.int64)
        np.add.at(diff, start - 1, 1)
        np.add.at(diff, end - 1, -1)
        return self.spend(RoundStats.from_counts(np.cumsum(diff)[:-1]))


def run_congest(
    g: Graph,
    program: NodeProgram,
    *,
    seed: int = 0,
    round_cap: int = 1_000_000,
    max_value: int = 1,
    c0: int = DEFAULT_C0,
) -> Tuple[List[Any], RoundStats]:
    r"""
    Runs a node program in the CONGEST model on ``g``.

    See :meth:`CongestEngine.run`.
    """
    return CongestEngine(g, max_value=max_value, c0=c0).run(program, seed=seed, round_cap=round_cap)


class PartnerSource(ABC):
    r"""
    Source of GOSSIP partner maps. ``lam`` bounds the deviation of
    ``Pr[t(u) = v]`` from ``1/n``.
    """

    n: int
    lam: float = 0.0

    @abstractmethod
    def draw(self, rounds: int) -> np.ndarray:
        r"""
        Partner maps of ``rounds`` consecutive rounds, shape ``(rounds, n)``.
        """
        pass

    def transport(self, partner_maps: np.ndarray, *, pull: bool = False):
        r"""
        Carries one message per node to its partner (and back for ``pull``)
        for every round in ``partner_maps``. Direct in the ideal model.
        """
        pass

    def charge(self, rounds: int):
        r"""
        Accounts for ``rounds`` rounds whose partner maps are not needed.
        """
        pass


class IdealPartnerSource(PartnerSource):
    r"""
    GOSSIP(0): every node picks a uniform partner, itself included.
    """

    def __init__(self, n: int, *, seed: int = 0):
        self.n = n
        self.lam = 0.0
        self.sampler = UniformPartnerSampler(
            n, generator=np.random.default_rng([seed, PARTNER_STREAM])
        )

    def draw(self, rounds: int) -> np.ndarray:
        return self.sampler.sample(rounds)


class GossipEngine:
    r"""
    Array-level GOSSIP engine used by the gossip algorithms.

    Every call to :meth:`draw` consumes ``rounds`` model rounds; algorithms
    operate on per-node numpy arrays indexed by node. ``rng`` supplies the
    nodes' local coin flips.
    A run that passes ``round_cap`` raises :class:`TrialCapExceeded`.

    Example:
        >>> engine = GossipEngine(8, seed=3)
        >>> engine.draw(2).shape
        (2, 8)
        >>> engine.stats.rounds
        2
    """

    def __init__(
        self,
        n: int,
        *,
        partners: Optional[PartnerSource] = None,
        seed: int = 0,
        max_value: int = 1,
        c0: int = DEFAULT_C0,
        round_cap: Optional[int] = None,
    ):
        if n < 1:
            raise ValueError(f"GOSSIP needs at least one node, got n={n}")
        self.n = n
        self.seed = seed
        self.partners = partners if partners is not None else IdealPartnerSource(n, seed=seed)
        if self.partners.n != n:
            raise ValueError(f"Partner source serves {self.partners.n} nodes, engine has {n}")
        self.budget = bit_budget(n, max_value, c0)
        self.rng = np.random.default_rng([seed, ALGORITHM_STREAM])
        self.round_cap = round_cap
        self.stats = RoundStats.charged(0)

    def check_bits(self, bits: int):
        if bits > self.budget:
            raise ProtocolViolation(-1, self.stats.rounds + 1, f"payload of {bits} bits exceeds budget {self.budget}")

    def _consume(self, rounds: int, messages: int):
        if self.round_cap is not None and self.stats.rounds + rounds > self.round_cap:
            raise TrialCapExceeded(f"GOSSIP run needs round {self.stats.rounds + rounds}, cap is {self.round_cap}")
        self.stats = self.stats.then(RoundStats.charged(rounds, messages=messages))

    def draw(
        self,
        rounds: int = 1,
        *,
        bits: int = 0,
        senders: Optional[int] = None,
        pull: bool = False,
        messages: Optional[int] = None,
    ) -> np.ndarray:
        r"""
        Consumes ``rounds`` rounds in which ``senders`` nodes (default all)
        send one ``bits``-bit message each; returns the partner maps.
        ``messages`` overrides the message count charged.
        """
        self.check_bits(bits)
        if messages is None:
            count = self.n if senders is None else senders
            messages = rounds * count * (2 if pull else 1)
        self._consume(rounds, messages)
        maps = self.partners.draw(rounds)
        self.partners.transport(maps, pull=pull)
        return maps

    def charge(self, rounds: int, messages: int = 0):
        r"""
        Charges ``rounds`` rounds of a sub-protocol whose outcome is already
        known, without drawing partner maps.
        """
        self._consume(rounds, messages)
        self.partners.charge(rounds)

    def push_sum_round(self, *masses: np.ndarray, bits: int) -> Tuple[np.ndarray, ...]:
        r"""
        One push-sum round on integer masses: every node keeps the floor half
        of each mass and pushes the rest to its partner.
        """
        t = self.draw(1, bits=bits)[0]
        out = []
        for mass in masses:
            keep = mass // 2
            updated = keep.copy()
            np.add.at(updated, t, mass - keep)
            out.append(updated)
        return tuple(out)


def run_gossip(
    n: int,
    program: NodeProgram,
    *,
    partners: Optional[PartnerSource] = None,
    seed: int = 0,
    round_cap: int = 1_000,
    max_value: int = 1,
    c0: int = DEFAULT_C0,
) -> Tuple[List[Any], RoundStats]:
    r"""
    Runs a node program in the GOSSIP model.

    In each round every non-halted node returns a :class:`GossipStep`; the
    engine then draws the partner map, delivers pushed payloads to the
    partners and answers pulls with the partner's declared ``respond``
    payload. Deliveries land in the inbox of the next round.

    Raises:
        ProtocolViolation: On oversized payloads or a node both pushing and
            pulling in one round.
    """
    if round_cap < 1:
        raise ValueError(f"round_cap must be >= 1, got {round_cap}")
    source = partners if partners is not None else IdealPartnerSource(n, seed=seed)
    budget = bit_budget(n, max_value, c0)
    states = [program.initial_state(v) for v in range(n)]
    active = set(range(n))
    inbox: Dict[int, List[Tuple[int, Message]]] = {}
    counts: List[int] = []
    r = 0
    hit_cap = False
    while active:
        r += 1
        if r > round_cap:
            hit_cap = True
            r -= 1
            break
        due = sorted(active | set(inbox))
        steps: Dict[int, GossipStep] = {}
        for v in due:
            ctx = RoundContext(v, r, inbox.get(v, []), seed)
            step = program.step(v, states[v], ctx)
            if step.push is not None and step.pull:
                raise ProtocolViolation(v, r, "PUSH and PULL in the same round")
            for msg in (step.push, step.respond):
                if msg is not None and msg.bits > budget:
                    raise ProtocolViolation(v, r, f"payload of {msg.bits} bits exceeds budget {budget}")
            steps[v] = step
            if step.halt:
                active.discard(v)
            else:
                active.add(v)
        t = source.draw(1)[0]
        pushing = np.array([v for v, s in steps.items() if s.push is not None], dtype=np.int64)
        pulling = np.array([v for v, s in steps.items() if s.pull], dtype=np.int64)
        source.transport(t[None, :], pull=bool(len(pulling)))
        delivered: Dict[int, List[Tuple[int, Message]]] = defaultdict(list)
        for v in pushing:
            delivered[int(t[v])].append((int(v), steps[v].push))
        served = 0
        for v in pulling:
            target = int(t[v])
            response = steps[target].respond if target in steps else None
            if response is not None:
                delivered[int(v)].append((target, response))
                served += 1
        counts.append(len(pushing) + served)
        inbox = dict(delivered)
    stats = RoundStats.from_counts(np.array(counts, dtype=np.int64), congestion=0)
    stats.halted_at = r
    stats.hit_round_cap = hit_cap
    return states, stats
