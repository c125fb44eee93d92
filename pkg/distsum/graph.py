#!/usr/bin/env python3
# Copyright (c) distsum contributors. All Rights Reserved
r"""
Network topologies, BFS trees and lazy random walk mixing times.

Nodes are indexed ``0..n-1`` throughout the package. Identifier ``i`` of the
edge-list file format is node ``i - 1``.
"""
import logging
from collections import deque
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from scipy import sparse


logger = logging.getLogger(__name__)

RANDOM_REGULAR_RETRIES = 200
# absolute slack when comparing walk deviations against a threshold
_DEVIATION_SLACK = 1e-12


class DisconnectedGraphError(ValueError):
    r"""
    Exception raised when a generated or loaded topology is not connected.
    """

    pass


@dataclass(frozen=True)
class Graph:
    r"""
    Undirected, connected, simple graph on nodes ``0..n-1``.

    ``adjacency[v]`` is the sorted tuple of neighbours of ``v``. The
    constructor checks symmetry, absence of self-loops and parallel edges,
    and connectivity.

    Example:
        >>> g = Graph.from_edges(3, [(0, 1), (1, 2)])
        >>> g.m, list(g.degrees)
        (2, [1, 2, 1])
    """

    n: int
    adjacency: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"A graph needs at least one node, got n={self.n}")
        if len(self.adjacency) != self.n:
            raise ValueError(
                f"Adjacency has {len(self.adjacency)} rows for n={self.n} nodes"
            )
        for v, row in enumerate(self.adjacency):
            if list(row) != sorted(set(row)):
                raise ValueError(f"Neighbours of node {v} must be sorted and unique")
            if row and not (row[0] >= 0 and row[-1] < self.n):
                raise ValueError(f"Node {v} lists a neighbour outside [0, {self.n})")
            if v in row:
                raise ValueError(f"Self-loop at node {v}")
        forward = self.edge_tails * self.n + self.indices
        backward = np.sort(self.indices * self.n + self.edge_tails)
        if not np.array_equal(forward, backward):
            raise ValueError("Adjacency is not symmetric")
        if len(_bfs_levels(self.adjacency, 0)) != self.n:
            raise DisconnectedGraphError(f"Graph on {self.n} nodes is not connected")

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Tuple[int, int]]) -> "Graph":
        rows: List[set] = [set() for _ in range(n)]
        for u, v in edges:
            if u == v:
                raise ValueError(f"Self-loop at node {u}")
            rows[u].add(v)
            rows[v].add(u)
        return cls(n=n, adjacency=tuple(tuple(sorted(row)) for row in rows))

    @classmethod
    def from_networkx(cls, graph: nx.Graph) -> "Graph":
        order = sorted(graph.nodes())
        index = {node: i for i, node in enumerate(order)}
        edges = [(index[u], index[v]) for u, v in graph.edges()]
        return cls.from_edges(len(order), edges)

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from(self.edges())
        return graph

    def edges(self) -> List[Tuple[int, int]]:
        return [(u, v) for u, row in enumerate(self.adjacency) for v in row if u < v]

    def neighbors(self, v: int) -> Tuple[int, ...]:
        return self.adjacency[v]

    def has_edge(self, u: int, v: int) -> bool:
        return v in self.adjacency[u]

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.array([len(row) for row in self.adjacency], dtype=np.int64)

    @cached_property
    def m(self) -> int:
        return int(self.degrees.sum()) // 2

    @cached_property
    def indptr(self) -> np.ndarray:
        r"""
        CSR row pointer; the directed edge ``u -> adjacency[u][i]`` has id
        ``indptr[u] + i``.
        """
        return np.concatenate([[0], np.cumsum(self.degrees)]).astype(np.int64)

    @cached_property
    def indices(self) -> np.ndarray:
        return np.fromiter(
            (v for row in self.adjacency for v in row), dtype=np.int64, count=2 * self.m
        )

    @cached_property
    def edge_tails(self) -> np.ndarray:
        r"""
        Source node of every directed edge id.
        """
        return np.repeat(np.arange(self.n, dtype=np.int64), self.degrees)

    def edge_ids(self, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
        r"""
        Directed edge ids for node pairs; ``-1`` where the pair is not an edge.
        """
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        keys = src * self.n + dst
        table = self.edge_tails * self.n + self.indices
        pos = np.searchsorted(table, keys)
        pos = np.minimum(pos, max(len(table) - 1, 0))
        if len(table) == 0:
            return np.full(keys.shape, -1, dtype=np.int64)
        return np.where(table[pos] == keys, pos, -1)


@dataclass(frozen=True)
class Tree:
    r"""
    Rooted spanning tree given by parent pointers (``-1`` at the root).

    ``level`` is the BFS depth of a node and ``height`` the distance to its
    deepest descendant.
    """

    root: int
    parent: Tuple[int, ...]

    @cached_property
    def n(self) -> int:
        return len(self.parent)

    @cached_property
    def children(self) -> Tuple[Tuple[int, ...], ...]:
        rows: List[List[int]] = [[] for _ in range(self.n)]
        for v, p in enumerate(self.parent):
            if p >= 0:
                rows[p].append(v)
        return tuple(tuple(sorted(row)) for row in rows)

    @cached_property
    def bfs_order(self) -> Tuple[int, ...]:
        order = [self.root]
        for v in order:
            order.extend(self.children[v])
        if len(order) != self.n:
            raise ValueError("Parent pointers do not form a spanning tree")
        return tuple(order)

    @cached_property
    def level(self) -> np.ndarray:
        level = np.zeros(self.n, dtype=np.int64)
        for v in self.bfs_order[1:]:
            level[v] = level[self.parent[v]] + 1
        return level

    @cached_property
    def depth(self) -> int:
        return int(self.level.max())

    @cached_property
    def height(self) -> np.ndarray:
        height = np.zeros(self.n, dtype=np.int64)
        for v in reversed(self.bfs_order[1:]):
            p = self.parent[v]
            height[p] = max(height[p], height[v] + 1)
        return height

    @cached_property
    def subtree_size(self) -> np.ndarray:
        size = np.ones(self.n, dtype=np.int64)
        for v in reversed(self.bfs_order[1:]):
            size[self.parent[v]] += size[v]
        return size

    @cached_property
    def preorder(self) -> Tuple[int, ...]:
        r"""
        DFS preorder visiting children in increasing node order.
        """
        order: List[int] = []
        stack = [self.root]
        while stack:
            v = stack.pop()
            order.append(v)
            stack.extend(reversed(self.children[v]))
        return tuple(order)

    def path_to_root(self, v: int) -> List[int]:
        path = [v]
        while self.parent[path[-1]] >= 0:
            path.append(self.parent[path[-1]])
        return path

    def nodes_at_level(self, level: int) -> np.ndarray:
        return np.flatnonzero(self.level == level)


def _bfs_levels(adjacency: Sequence[Sequence[int]], root: int) -> dict:
    levels = {root: 0}
    queue = deque([root])
    while queue:
        v = queue.popleft()
        for u in adjacency[v]:
            if u not in levels:
                levels[u] = levels[v] + 1
                queue.append(u)
    return levels


def bfs_tree(g: Graph, root: int) -> Tree:
    r"""
    Breadth-first spanning tree of ``g`` rooted at ``root``.

    Neighbours are scanned in increasing order, so the first discoverer of a
    node is its parent.

    Args:
        g: Connected graph.
        root: Root node in ``[0, n)``.

    Returns:
        The BFS tree.

    Example:
        >>> bfs_tree(generate(GraphSpec("path", (5,))), 0).depth
        4
    """
    if not 0 <= root < g.n:
        raise ValueError(f"Root {root} outside [0, {g.n})")
    parent = [-2] * g.n
    parent[root] = -1
    queue = deque([root])
    while queue:
        v = queue.popleft()
        for u in g.adjacency[v]:
            if parent[u] == -2:
                parent[u] = v
                queue.append(u)
    return Tree(root=root, parent=tuple(parent))


def diameter(g: Graph) -> int:
    r"""
    Exact diameter by all-pairs BFS.
    """
    if g.n == 1:
        return 0
    return nx.diameter(g.to_networkx())


@dataclass(frozen=True)
class GraphSpec:
    r"""
    Description of a topology to generate.

    Families and their ``params``:

    - ``clique``, ``path``, ``cycle``, ``star``: ``(n,)``
    - ``random-regular``: ``(n, d)``
    - ``dumbbell``: ``(side_size, bridge_len)``
    - ``blackboard``: ``(t_parts, part_size)``
    - ``file``: no params, ``path`` names an edge-list file
    """

    family: str
    params: Tuple[int, ...] = ()
    seed: int = 0
    path: Optional[str] = None

    FAMILIES = (
        "clique",
        "path",
        "cycle",
        "star",
        "random-regular",
        "dumbbell",
        "blackboard",
        "file",
    )

    def __post_init__(self):
        if self.family not in self.FAMILIES:
            raise ValueError(
                f"Unknown graph family '{self.family}'. Expected one of {self.FAMILIES}"
            )

    @classmethod
    def parse(cls, text: str) -> "GraphSpec":
        r"""
        Parses ``family:param[:param...]``; random-regular accepts a trailing
        seed, e.g. ``random-regular:64:8:7``.

        Example:
            >>> GraphSpec.parse("dumbbell:3:2").params
            (3, 2)
        """
        family, _, rest = text.partition(":")
        if family == "file":
            if not rest:
                raise ValueError("file graph spec needs a path, e.g. file:graph.txt")
            return cls(family, (), 0, rest)
        try:
            values = tuple(int(x) for x in rest.split(":")) if rest else ()
        except ValueError:
            raise ValueError(f"Could not parse graph spec '{text}'")
        seed = 0
        if family == "random-regular" and len(values) == 3:
            values, seed = values[:2], values[2]
        return cls(family, values, seed)

    def __str__(self) -> str:
        if self.family == "file":
            return f"file:{self.path}"
        text = ":".join([self.family] + [str(x) for x in self.params])
        if self.family == "random-regular":
            text += f":{self.seed}"
        return text


def _expect(spec: GraphSpec, count: int):
    if len(spec.params) != count:
        raise ValueError(
            f"{spec.family} expects {count} size parameter(s), got {spec.params}"
        )


def _dumbbell(side: int, bridge: int) -> nx.Graph:
    graph = nx.Graph()
    left = list(range(side))
    right = list(range(side, 2 * side))
    chain = list(range(2 * side, 2 * side + bridge))
    graph.add_nodes_from(range(2 * side + bridge))
    graph.add_edges_from((a, b) for i, a in enumerate(left) for b in left[i + 1 :])
    graph.add_edges_from((a, b) for i, a in enumerate(right) for b in right[i + 1 :])
    if bridge == 0:
        graph.add_edge(left[0], right[0])
    else:
        graph.add_edges_from(zip(chain, chain[1:]))
        graph.add_edges_from((a, chain[0]) for a in left)
        graph.add_edges_from((b, chain[-1]) for b in right)
    return graph


def _blackboard(parts: int, part_size: int) -> nx.Graph:
    graph = nx.Graph()
    board = parts * part_size
    graph.add_node(board)
    for j in range(parts):
        block = list(range(j * part_size, (j + 1) * part_size))
        graph.add_nodes_from(block)
        graph.add_edges_from(
            (a, b) for i, a in enumerate(block) for b in block[i + 1 :]
        )
        graph.add_edge(block[0], board)
    return graph


def _random_regular(n: int, d: int, seed: int) -> nx.Graph:
    if d < 3:
        raise ValueError(f"random-regular needs d >= 3, got d={d}")
    if (n * d) % 2:
        raise ValueError(f"random-regular needs n*d even, got n={n}, d={d}")
    if d >= n:
        raise ValueError(f"random-regular needs d < n, got n={n}, d={d}")
    seeds = np.random.SeedSequence(seed).generate_state(RANDOM_REGULAR_RETRIES)
    for attempt, attempt_seed in enumerate(seeds):
        graph = nx.random_regular_graph(d, n, seed=int(attempt_seed))
        if nx.is_connected(graph):
            if attempt:
                logger.debug("random-regular(%d, %d) connected after %d retries", n, d, attempt)
            return graph
    raise DisconnectedGraphError(
        f"random-regular({n}, {d}) stayed disconnected after {RANDOM_REGULAR_RETRIES} draws"
    )


def generate(spec: GraphSpec) -> Graph:
    r"""
    Builds the graph described by ``spec``; deterministic given the seed.

    Raises:
        ValueError: On invalid size parameters.
        DisconnectedGraphError: If the result is not connected.

    Example:
        >>> g = generate(GraphSpec("clique", (4,)))
        >>> g.m, set(g.degrees.tolist())
        (6, {3})
    """
    if spec.family == "file":
        return load_edge_list(spec.path)
    if spec.family in ("clique", "path", "cycle", "star"):
        _expect(spec, 1)
    else:
        _expect(spec, 2)
    if spec.family == "dumbbell":
        side, bridge = spec.params
        if side < 1 or bridge < 0:
            raise ValueError(f"dumbbell needs side >= 1 and bridge >= 0, got {spec.params}")
        return Graph.from_networkx(_dumbbell(side, bridge))
    if any(x < 1 for x in spec.params):
        raise ValueError(f"Size parameters must be >= 1, got {spec.params}")
    n = spec.params[0]
    if spec.family == "clique":
        graph = nx.complete_graph(n)
    elif spec.family == "path":
        graph = nx.path_graph(n)
    elif spec.family == "cycle":
        if n < 3:
            raise ValueError(f"cycle needs n >= 3, got n={n}")
        graph = nx.cycle_graph(n)
    elif spec.family == "star":
        graph = nx.star_graph(n - 1)
    elif spec.family == "random-regular":
        graph = _random_regular(n, spec.params[1], spec.seed)
    else:
        graph = _blackboard(*spec.params)
    return Graph.from_networkx(graph)


def load_edge_list(path: str) -> Graph:
    r"""
    Reads the edge-list format: a header ``n m`` then ``m`` lines ``u v`` with
    1-based identifiers.
    """
    with open(path) as f:
        lines = [line.split() for line in f if line.strip() and not line.startswith("#")]
    if not lines or len(lines[0]) != 2:
        raise ValueError(f"{path}: expected header line 'n m'")
    n, m = int(lines[0][0]), int(lines[0][1])
    edges = []
    for row in lines[1:]:
        if len(row) != 2:
            raise ValueError(f"{path}: malformed edge line {' '.join(row)!r}")
        u, v = int(row[0]) - 1, int(row[1]) - 1
        if not (0 <= u < n and 0 <= v < n):
            raise ValueError(f"{path}: edge ({u + 1}, {v + 1}) outside 1..{n}")
        edges.append((u, v))
    if len(edges) != m:
        raise ValueError(f"{path}: header declares {m} edges, found {len(edges)}")
    graph = Graph.from_edges(n, edges)
    if graph.m != m:
        raise ValueError(f"{path}: parallel edges are not allowed")
    return graph


def save_edge_list(g: Graph, path: str):
    with open(path, "w") as f:
        f.write(f"{g.n} {g.m}\n")
        for u, v in g.edges():
            f.write(f"{u + 1} {v + 1}\n")


class MixingProfile:
    r"""
    Lazy random walk on ``g`` (stay with probability 1/2, else move to a
    uniform neighbour) iterated from every start node at once.

    The walk distributions are kept as the columns of a dense ``n x n``
    matrix and advanced with the sparse transposed transition operator. The
    per-step deviations from the stationary distribution ``deg(v)/2m`` are
    cached, so thresholds can be queried repeatedly.
    """

    def __init__(self, g: Graph, *, max_steps: int = 1_000_000):
        self.g = g
        self.max_steps = max_steps
        if g.n > 1:
            degrees = g.degrees.astype(np.float64)
            self.stationary = degrees / (2 * g.m)
            self.exact_bound = degrees / (2 * g.m * g.n)
            self.transition = self._lazy_operator(g)
            self._columns = np.eye(g.n)
            self._deviation: List[float] = []
            self._exact_excess: List[float] = []
            self._record()

    @staticmethod
    def _lazy_operator(g: Graph) -> sparse.csr_matrix:
        move = 0.5 / g.degrees[g.edge_tails]
        walk = sparse.csr_matrix((move, g.indices, g.indptr), shape=(g.n, g.n))
        return (walk + 0.5 * sparse.identity(g.n, format="csr")).tocsr()

    def _record(self):
        gap = np.abs(self._columns - self.stationary[:, None])
        self._deviation.append(float(gap.max()))
        self._exact_excess.append(
            float((gap - self.exact_bound[:, None]).max())
        )

    def _advance(self):
        if len(self._deviation) > self.max_steps:
            raise RuntimeError(
                f"Lazy walk on {self.g.n} nodes did not reach the threshold "
                f"within {self.max_steps} steps"
            )
        self._columns = np.asarray(self.transition.T @ self._columns)
        self._record()

    def distribution(self, u: int, t: int) -> np.ndarray:
        r"""
        Returns ``P^t_u``, the distribution of the walk after ``t`` steps
        from ``u``.
        """
        if self.g.n == 1:
            return np.ones(1)
        column = np.zeros(self.g.n)
        column[u] = 1.0
        step = self.transition.T.tocsr()
        for _ in range(t):
            column = step @ column
        return column

    def _first(self, series_name: str, limit: float) -> int:
        series = getattr(self, series_name)
        for t, value in enumerate(series):
            if value <= limit:
                return t
        while True:
            self._advance()
            if series[-1] <= limit:
                return len(series) - 1

    @cached_property
    def tau_exact(self) -> int:
        r"""
        Smallest ``t`` with ``|P^t_u(v) - deg(v)/2m| <= deg(v)/(2mn)`` for all
        ``u, v``.
        """
        if self.g.n == 1:
            return 0
        return self._first("_exact_excess", _DEVIATION_SLACK)

    def tau_at(self, lam: float) -> int:
        r"""
        Smallest ``t`` with ``|P^t_u(v) - deg(v)/2m| <= lam`` for all ``u, v``.
        """
        if lam <= 0:
            raise ValueError(f"Threshold must be positive, got {lam}")
        if self.g.n == 1:
            return 0
        return self._first("_deviation", lam + _DEVIATION_SLACK)

    def satisfies(self, t: int, threshold: Union[str, float] = "exact") -> bool:
        r"""
        Checks the defining inequality at step ``t`` for every pair.
        """
        if self.g.n == 1:
            return True
        while len(self._deviation) <= t:
            self._advance()
        if threshold == "exact":
            return self._exact_excess[t] <= _DEVIATION_SLACK
        return self._deviation[t] <= threshold + _DEVIATION_SLACK


@lru_cache(maxsize=16)
def mixing_profile(g: Graph) -> MixingProfile:
    r"""
    Shared :class:`MixingProfile` per graph.
    """
    return MixingProfile(g)


def mixing_time(g: Graph, threshold: Union[str, float] = "exact") -> int:
    r"""
    Mixing time of the lazy walk on ``g``.

    Args:
        g: Connected graph.
        threshold: ``"exact"`` for the pointwise bound ``deg(v)/(2mn)`` or a
            positive float ``lam`` for the uniform bound ``lam``.

    Returns:
        The smallest step count satisfying the bound from every start node.

    Example:
        >>> mixing_time(generate(GraphSpec("clique", (2,))))
        1
    """
    profile = mixing_profile(g)
    if threshold == "exact":
        return profile.tau_exact
    return profile.tau_at(float(threshold))
