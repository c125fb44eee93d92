#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved
r"""
Emulation of GOSSIP rounds on a CONGEST network with random walks.

Every node ``u`` is split into ``deg(u)`` compartments, so a walk that lands
in a uniformly random slot of its end node ends in an almost uniform
compartment out of ``2m``. Setup places ``floor(1.5 m / n)`` destination
tokens per node, at most one per compartment (splitting stages followed by
distributing trials). Each emulated round every node walks a source token
until it lands on a compartment holding a destination token, whose owner
becomes the node's partner; messages then follow the source walk forward
and the destination walk backward.

All walks advance in lock step: one walk step over an edge carrying ``L``
tokens in one direction costs ``max(1, L)`` rounds.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .engines import (
    DEFAULT_C0,
    PARTNER_STREAM,
    GossipEngine,
    PartnerSource,
    ProtocolViolation,
    RoundStats,
    TrialCapExceeded,
    bit_budget,
)
from .graph import Graph, mixing_time


logger = logging.getLogger(__name__)

DEFAULT_CAP_FACTOR = 50
DISTRIBUTE_THRESHOLD = 0.1
TOKENS_PER_EDGE = 1.5


@dataclass
class WalkCost:
    r"""
    Lock-step cost of a batch of walks, per group of walks that run in
    separate emulated rounds.
    """

    rounds: np.ndarray
    messages: int = 0
    congestion: int = 0

    def __iadd__(self, other: "WalkCost") -> "WalkCost":
        self.rounds = self.rounds + other.rounds
        self.messages += other.messages
        self.congestion = max(self.congestion, other.congestion)
        return self

    def stats(self) -> RoundStats:
        return RoundStats.charged(int(self.rounds.sum()), self.messages, self.congestion)


def _zero_cost(groups: int) -> WalkCost:
    return WalkCost(np.zeros(groups, dtype=np.int64))


def _lazy_walk(
    g: Graph,
    starts: np.ndarray,
    steps: int,
    rng: np.random.Generator,
    group: Optional[np.ndarray] = None,
    groups: int = 1,
) -> Tuple[np.ndarray, WalkCost]:
    r"""
    Trajectories of shape ``(steps + 1, len(starts))`` and their cost.
    """
    width = len(starts)
    traj = np.empty((steps + 1, width), dtype=np.int64)
    traj[0] = starts
    cost = _zero_cost(groups)
    if group is None:
        group = np.zeros(width, dtype=np.int64)
    if g.m == 0 or width == 0:
        traj[1:] = starts
        cost.rounds += steps if width else 0
        return traj, cost
    two_m = len(g.indices)
    for s in range(steps):
        pos = traj[s]
        move = rng.random(width) < 0.5
        slot = (rng.random(width) * g.degrees[pos]).astype(np.int64)
        edge = g.indptr[pos] + slot
        traj[s + 1] = np.where(move, g.indices[edge], pos)
        if move.any():
            load = np.bincount(group[move] * two_m + edge[move], minlength=groups * two_m)
            load = load.reshape(groups, two_m).max(axis=1)
        else:
            load = np.zeros(groups, dtype=np.int64)
        cost.rounds += np.maximum(1, load)
        cost.messages += int(move.sum())
        cost.congestion = max(cost.congestion, int(load.max()))
    return traj, cost


def _compress(path: np.ndarray) -> np.ndarray:
    keep = np.r_[True, path[1:] != path[:-1]]
    return path[keep]


def _replay_cost(g: Graph, paths: Sequence[np.ndarray], group: np.ndarray, groups: int) -> WalkCost:
    r"""
    Lock-step replay of one message per path, hop by hop.
    """
    cost = _zero_cost(groups)
    if not paths:
        return cost
    lengths = np.array([len(p) for p in paths], dtype=np.int64)
    longest = int(lengths.max())
    padded = np.full((len(paths), longest), -1, dtype=np.int64)
    for i, p in enumerate(paths):
        padded[i, : len(p)] = p
    hops_per_group = np.zeros(groups, dtype=np.int64)
    np.maximum.at(hops_per_group, group, lengths - 1)
    two_m = len(g.indices)
    for h in range(longest - 1):
        moving = padded[:, h + 1] >= 0
        edge = g.edge_ids(padded[moving, h], padded[moving, h + 1])
        if (edge < 0).any():
            raise ProtocolViolation(int(padded[moving, h][edge < 0][0]), h + 1, "replayed path leaves the graph")
        load = np.bincount(group[moving] * two_m + edge, minlength=groups * two_m)
        load = load.reshape(groups, two_m).max(axis=1)
        active = hops_per_group > h
        cost.rounds += np.where(active, np.maximum(1, load), 0)
        cost.messages += int(moving.sum())
        cost.congestion = max(cost.congestion, int(load.max()))
    return cost


def parallel_random_walks(
    g: Graph, starts: Sequence[int], steps: int, *, seed: int = 0
) -> Tuple[np.ndarray, RoundStats]:
    r"""
    Runs one lazy walk of ``steps`` steps from every start node in lock step.

    Returns:
        Trajectories of shape ``(steps + 1, len(starts))`` (column ``i`` is
        walk ``i``) and the rounds used; each step costs the largest number
        of walks crossing one edge in one direction, at least 1.

    Example:
        >>> traj, stats = parallel_random_walks(generate(GraphSpec("clique", (4,))), [0, 1], 0)
        >>> traj.tolist(), stats.rounds
        ([[0, 1]], 0)
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    rng = np.random.default_rng([seed, PARTNER_STREAM])
    traj, cost = _lazy_walk(g, np.asarray(starts, dtype=np.int64), steps, rng)
    return traj, cost.stats()


def tokens_per_node(g: Graph) -> int:
    return math.floor(TOKENS_PER_EDGE * g.m / g.n)


@dataclass
class EmulationState:
    r"""
    Placement of the destination tokens and the data needed to draw
    partners.

    ``slot_owner[c]`` is the owner of the destination token resting in
    compartment ``c`` (``-1`` if empty); compartment ``c`` belongs to node
    ``g.edge_tails[c]``. ``destination_paths[c]`` is the stay-free walk of
    that token from its owner to the compartment.
    """

    g: Graph
    lam: float
    lam_prime: float
    dest_per_node: int
    tau: int
    tau_distribute: int
    tau_source: int
    slot_owner: np.ndarray
    destination_paths: Dict[int, np.ndarray]
    rng: np.random.Generator
    cap: int
    budget: int
    setup_stats: RoundStats = field(default_factory=RoundStats)
    partner_map: Optional[np.ndarray] = None
    source_retries: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.g.n

    def compartment_occupancy(self) -> np.ndarray:
        return (self.slot_owner >= 0).astype(np.int64)

    @property
    def destination_count(self) -> int:
        return int((self.slot_owner >= 0).sum())


@dataclass
class _Token:
    owner: int
    weight: int
    segments: List[np.ndarray]

    def path(self) -> np.ndarray:
        parts = [self.segments[0]] + [s[1:] for s in self.segments[1:]]
        return _compress(np.concatenate(parts))


def _split_and_scatter(g: Graph, k: int, tau: int, rng: np.random.Generator) -> Tuple[List[_Token], WalkCost]:
    tokens = [_Token(u, k, [np.array([u])]) for u in range(g.n)]
    cost = _zero_cost(1)
    stages = max(1, math.ceil(math.log2(k))) if k > 1 else 1
    for _ in range(stages):
        split = []
        for tok in tokens:
            if tok.weight > 1:
                half = tok.weight // 2
                tok.weight -= half
                split.append(_Token(tok.owner, half, list(tok.segments)))
        tokens.extend(split)
        starts = np.array([tok.segments[-1][-1] for tok in tokens], dtype=np.int64)
        traj, walk = _lazy_walk(g, starts, tau, rng)
        cost += walk
        for i, tok in enumerate(tokens):
            tok.segments.append(traj[:, i])
    return tokens, cost


def _land(g: Graph, nodes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return g.indptr[nodes] + (rng.random(len(nodes)) * g.degrees[nodes]).astype(np.int64)


def _distribute(
    g: Graph, tokens: List[_Token], tau: int, cap: int, rng: np.random.Generator
) -> Tuple[np.ndarray, WalkCost]:
    r"""
    Moves tokens until every compartment holds at most one.

    Returns the compartment of every token.
    """
    count = len(tokens)
    ends = np.array([tok.segments[-1][-1] for tok in tokens], dtype=np.int64)
    comp = _land(g, ends, rng)
    arrived = np.zeros(count, dtype=np.int64)
    cost = _zero_cost(1)
    for trial in range(1, cap + 1):
        order = np.lexsort((np.arange(count), arrived, comp))
        first = np.r_[True, comp[order][1:] != comp[order][:-1]]
        launch = np.sort(order[~first])
        if len(launch) == 0:
            return comp, cost
        starts = g.edge_tails[comp[launch]]
        traj, walk = _lazy_walk(g, starts, tau, rng)
        target = _land(g, traj[-1], rng)
        resting = np.zeros(len(g.indices), dtype=bool)
        resting[comp[order[first]]] = True
        landings = np.bincount(target, minlength=len(g.indices))
        success = ~resting[target] & (landings[target] == 1)
        cost += walk
        back = ~success
        if back.any():
            # failures retrace their segment to the compartment they left
            retrace = [_compress(traj[::-1, j]) for j in np.flatnonzero(back).tolist()]
            cost += _replay_cost(g, retrace, np.zeros(len(retrace), dtype=np.int64), 1)
        for j, i in enumerate(launch.tolist()):
            tokens[i].segments.append(traj[:, j])
            if success[j]:
                comp[i] = target[j]
                arrived[i] = trial
            else:
                tokens[i].segments.append(traj[::-1, j])
    raise TrialCapExceeded(f"Destination tokens not distributed after {cap} trials")


def emulate_setup(
    g: Graph,
    lam: float,
    *,
    seed: int = 0,
    cap_factor: float = DEFAULT_CAP_FACTOR,
    c0: int = DEFAULT_C0,
) -> EmulationState:
    r"""
    Places the destination tokens and draws a first partner map.

    Raises:
        ValueError: If ``m < 4`` or ``floor(1.5 m / n) < 1``.
        TrialCapExceeded: If distributing or a source walk needs more than
            ``cap_factor * log2 n`` trials.
    """
    if not 0 <= lam < 1:
        raise ValueError(f"lam must lie in [0, 1), got {lam}")
    k = tokens_per_node(g) if g.m else 0
    if g.m < 4 or k < 1:
        raise ValueError(f"Emulation needs m >= 4 and floor(1.5 m / n) >= 1, got n={g.n}, m={g.m}")
    rng = np.random.default_rng([seed, PARTNER_STREAM])
    cap = max(1, math.ceil(cap_factor * math.log2(g.n)))
    lam_prime = min(lam / (8 * g.m), DISTRIBUTE_THRESHOLD / g.m) if lam > 0 else DISTRIBUTE_THRESHOLD / g.m
    tau = mixing_time(g)
    tau_distribute = mixing_time(g, DISTRIBUTE_THRESHOLD / (2 * g.m))
    tau_source = mixing_time(g, lam_prime)

    tokens, split_cost = _split_and_scatter(g, k, tau, rng)
    comp, distribute_cost = _distribute(g, tokens, tau_distribute, cap, rng)
    slot_owner = np.full(len(g.indices), -1, dtype=np.int64)
    slot_owner[comp] = [tok.owner for tok in tokens]
    paths = {int(c): tok.path() for c, tok in zip(comp.tolist(), tokens)}
    state = EmulationState(
        g=g,
        lam=lam,
        lam_prime=lam_prime,
        dest_per_node=k,
        tau=tau,
        tau_distribute=tau_distribute,
        tau_source=tau_source,
        slot_owner=slot_owner,
        destination_paths=paths,
        rng=rng,
        cap=cap,
        budget=bit_budget(g.n, c0=c0),
    )
    maps, retries, _, _, cost = draw_partners(state, 1)
    state.partner_map = maps[0]
    state.source_retries = retries[0]
    state.setup_stats = RoundStats.sequence(split_cost.stats(), distribute_cost.stats(), cost.stats())
    logger.info(
        "Emulation setup on n=%d: %d destination tokens, tau=%d, tau_source=%d, %d rounds",
        g.n,
        state.destination_count,
        tau,
        tau_source,
        state.setup_stats.rounds,
    )
    return state


def draw_partners(
    state: EmulationState, rounds: int
) -> Tuple[np.ndarray, np.ndarray, List[np.ndarray], np.ndarray, WalkCost]:
    r"""
    Source-token walks for ``rounds`` independent emulated rounds.

    Returns:
        Partner maps ``(rounds, n)``, retry counts ``(rounds, n)``, the
        stay-free source path of every token (round-major), the compartment
        each token landed in and the walk cost per round.
    """
    g, n = state.g, state.n
    width = rounds * n
    group = np.repeat(np.arange(rounds), n)
    pos = np.tile(np.arange(n, dtype=np.int64), rounds)
    active = np.arange(width)
    landed = np.full(width, -1, dtype=np.int64)
    retries = np.zeros(width, dtype=np.int64)
    segments: List[Tuple[np.ndarray, np.ndarray]] = []
    cost = _zero_cost(rounds)
    for _ in range(state.cap):
        traj, walk = _lazy_walk(g, pos, state.tau_source, state.rng, group[active], rounds)
        cost += walk
        segments.append((active, traj))
        comp = _land(g, traj[-1], state.rng)
        hit = state.slot_owner[comp] >= 0
        landed[active[hit]] = comp[hit]
        retries[active] += 1
        active, pos = active[~hit], traj[-1][~hit]
        if len(active) == 0:
            break
    else:
        raise TrialCapExceeded(f"Source token of node {int(active[0]) % n} did not land after {state.cap} walks")
    columns = [dict(zip(idx.tolist(), range(len(idx)))) for idx, _ in segments]
    paths = []
    for token in range(width):
        parts = []
        for (idx, traj), col in zip(segments, columns):
            j = col.get(token)
            if j is not None:
                parts.append(traj[:, j] if not parts else traj[1:, j])
        paths.append(_compress(np.concatenate(parts)))
    maps = state.slot_owner[landed].reshape(rounds, n)
    return maps, retries.reshape(rounds, n), paths, landed, cost


def message_paths(state: EmulationState, source_paths: Sequence[np.ndarray], landed: np.ndarray) -> List[np.ndarray]:
    r"""
    Full routes: the source walk forward, then the matched destination walk
    backward to its owner.
    """
    routes = []
    for path, comp in zip(source_paths, landed.tolist()):
        back = state.destination_paths[comp][::-1]
        routes.append(_compress(np.concatenate([path, back[1:]])))
    return routes


def emulate_round(
    state: EmulationState,
    requests: Dict[int, Tuple[str, Any]],
    *,
    responses: Optional[Dict[int, Any]] = None,
    bits: int = 0,
) -> Tuple[Dict[int, List[Tuple[int, Any]]], RoundStats]:
    r"""
    One emulated GOSSIP round over CONGEST.

    ``requests[u]`` is ``("push", payload)`` or ``("pull", None)``; pulls are
    answered with ``responses[t(u)]``. A fresh partner map is drawn and
    stored in ``state.partner_map``.

    Returns:
        ``node -> [(sender, payload), ...]`` and the rounds charged.

    Raises:
        ProtocolViolation: If ``bits`` exceeds the payload budget.
    """
    if bits > state.budget:
        raise ProtocolViolation(-1, 1, f"payload of {bits} bits exceeds budget {state.budget}")
    maps, retries, source_paths, landed, walk = draw_partners(state, 1)
    t = maps[0]
    state.partner_map = t
    state.source_retries = retries[0]
    routes = message_paths(state, source_paths, landed)
    senders = sorted(requests)
    if not senders:
        return {}, walk.stats()
    forward = [routes[u] for u in senders]
    cost = walk
    cost += _replay_cost(state.g, forward, np.zeros(len(forward), dtype=np.int64), 1)
    deliveries: Dict[int, List[Tuple[int, Any]]] = {}
    pulls = []
    for u, route in zip(senders, forward):
        if route[-1] != t[u]:
            raise ProtocolViolation(u, 1, f"route ends at {int(route[-1])}, partner is {int(t[u])}")
        kind, payload = requests[u]
        if kind == "push":
            deliveries.setdefault(int(t[u]), []).append((u, payload))
        elif kind == "pull":
            pulls.append(u)
        else:
            raise ValueError(f"Unknown request '{kind}' from node {u}")
    if pulls:
        back = [routes[u][::-1] for u in pulls]
        cost += _replay_cost(state.g, back, np.zeros(len(back), dtype=np.int64), 1)
        for u in pulls:
            answer = (responses or {}).get(int(t[u]))
            if answer is not None:
                deliveries.setdefault(u, []).append((int(t[u]), answer))
    return deliveries, cost.stats()


class EmulatedPartnerSource(PartnerSource):
    r"""
    GOSSIP partner source backed by the random-walk emulation. Every drawn
    round reruns the source walks and charges their cost plus the replay of
    one message per node along its route; ``transport`` with ``pull``
    charges the way back.

    ``round_costs`` holds the CONGEST rounds charged per emulated round and
    ``congest_stats`` the running total, setup included.
    """

    def __init__(self, state: EmulationState, *, chunk: int = 32):
        self.state = state
        self.n = state.n
        self.lam = state.lam
        self.chunk = chunk
        self.round_costs: List[int] = []
        self.congest_stats = state.setup_stats
        self._last_costs = np.zeros(0, dtype=np.int64)

    def draw(self, rounds: int) -> np.ndarray:
        maps = []
        costs = []
        for start in range(0, rounds, self.chunk):
            size = min(self.chunk, rounds - start)
            batch, _, paths, landed, walk = draw_partners(self.state, size)
            routes = message_paths(self.state, paths, landed)
            group = np.repeat(np.arange(size), self.n)
            walk += _replay_cost(self.state.g, routes, group, size)
            maps.append(batch)
            costs.append(walk.rounds)
            self.congest_stats = self.congest_stats.then(walk.stats())
        self._last_costs = np.concatenate(costs) if costs else np.zeros(0, dtype=np.int64)
        self.round_costs.extend(self._last_costs.tolist())
        out = np.concatenate(maps) if maps else np.zeros((0, self.n), dtype=np.int64)
        if len(out):
            self.state.partner_map = out[-1]
        return out

    def transport(self, partner_maps: np.ndarray, *, pull: bool = False):
        if pull and len(self._last_costs):
            # the response retraces the request route
            back = int(self._last_costs.sum())
            self.congest_stats = self.congest_stats.then(RoundStats.charged(back))
            count = min(len(self._last_costs), len(self.round_costs))
            for i in range(1, count + 1):
                self.round_costs[-i] += int(self._last_costs[-i])

    def charge(self, rounds: int):
        if rounds <= 0:
            return
        if not self.round_costs:
            self.draw(1)
        # mean cost of the emulated rounds observed so far
        per_round = float(np.mean(self.round_costs))
        self.congest_stats = self.congest_stats.then(RoundStats.charged(math.ceil(per_round * rounds)))


def emulated_engine(
    g: Graph,
    lam: float,
    *,
    seed: int = 0,
    max_value: int = 1,
    c0: int = DEFAULT_C0,
    cap_factor: float = DEFAULT_CAP_FACTOR,
    round_cap: Optional[int] = None,
) -> GossipEngine:
    r"""
    A :class:`GossipEngine` whose partners come from the emulation on ``g``.
    The CONGEST rounds charged are in ``engine.partners.congest_stats``;
    ``round_cap`` bounds the GOSSIP rounds.

    Example:
        >>> engine = emulated_engine(generate(GraphSpec("clique", (8,))), 1 / 8 ** 3, seed=1)
        >>> engine.draw(1).shape
        (1, 8)
    """
    state = emulate_setup(g, lam, seed=seed, cap_factor=cap_factor, c0=c0)
    return GossipEngine(
        g.n, partners=EmulatedPartnerSource(state), seed=seed, max_value=max_value, c0=c0, round_cap=round_cap
    )
