"""Directed social graph and bounded source-to-edge path enumeration.

The graph stores followee -> follower edges plus a per-node feature vector.
Node ids may be ints or strings (any sortable hashable); they are interned to
dense integer indices at ingestion, and every query speaks original ids.

The one non-trivial query is :func:`enumerate_paths`: all simple directed
paths that start at a source node and end with a given target edge, with a
depth bound.  The inference engine treats each such path as a candidate route
the information took, so the enumeration order must be deterministic
(lexicographic by vertex sequence) and truncation, when the path count
explodes, must keep the shortest paths, which carry the bulk of the
probability mass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterator, Optional, Sequence

import numpy as np

from cascaudit.errors import GraphError

NodeId = Hashable
Edge = tuple  # (u, v) in original ids


@dataclass(frozen=True)
class DirectedPath:
    """A simple directed path, held as its vertex sequence."""

    vertices: tuple

    def __post_init__(self):
        if len(self.vertices) < 2:
            raise GraphError("a path needs at least one edge")
        if len(set(self.vertices)) != len(self.vertices):
            raise GraphError(f"path revisits a vertex: {self.vertices!r}")

    @property
    def edges(self) -> tuple:
        return tuple(zip(self.vertices[:-1], self.vertices[1:]))

    def __len__(self) -> int:
        """Length in edges."""
        return len(self.vertices) - 1

    def edge_positions(self) -> dict:
        """Map edge -> 1-based position along the path."""
        return {e: i + 1 for i, e in enumerate(self.edges)}


@dataclass(frozen=True)
class PathEnumConfig:
    """Bounds for path enumeration.

    ``max_path_length`` caps the number of edges per path; ``max_paths`` caps
    how many paths are returned (shortest first when the cap binds).
    """

    max_path_length: int = 8
    max_paths: int = 512

    def __post_init__(self):
        if self.max_path_length < 1:
            raise GraphError("max_path_length must be >= 1")
        if self.max_paths < 1:
            raise GraphError("max_paths must be >= 1")


@dataclass(frozen=True)
class PathEnumeration:
    """Result of a bounded enumeration: the paths plus a truncation flag."""

    paths: tuple
    truncated: bool = False

    def __iter__(self) -> Iterator[DirectedPath]:
        return iter(self.paths)

    def __len__(self) -> int:
        return len(self.paths)


class SocialGraph:
    """Directed graph with node features and optional per-edge class labels.

    Mutation (:meth:`add_node` / :meth:`add_edge`) happens at ingestion time,
    before any inference runs; afterwards the graph is treated as immutable
    and concurrent read-only queries are safe.  :meth:`freeze` makes that
    explicit.  Path queries are cached; any mutation clears the cache.
    """

    def __init__(self):
        self._index: dict = {}          # original id -> dense index
        self._ids: list = []            # dense index -> original id
        self._features: list = []       # dense index -> np.ndarray
        self._out: list = []            # dense index -> sorted list of follower ids
        self._pred: dict = {}           # node -> list of predecessors
        self._edges: set = set()        # (u, v) original-id pairs
        self.edge_classes: dict = {}    # (u, v) -> class index, filled by training
        self._frozen = False
        self._path_cache: dict = {}
        self._dist_cache: dict = {}

    # ---- mutation ---------------------------------------------------------

    def _check_mutable(self):
        if self._frozen:
            raise GraphError("graph is frozen; mutation is pre-inference only")

    def add_node(self, node_id: NodeId, features: Sequence[float]) -> None:
        """Add a node with its feature vector.

        The first insertion fixes the feature dimension for the whole graph.
        """
        self._check_mutable()
        if node_id in self._index:
            raise GraphError(f"duplicate node id: {node_id!r}")
        vec = np.asarray(features, dtype=float)
        if vec.ndim != 1:
            raise GraphError(f"features for {node_id!r} must be a flat vector")
        if self._features and vec.shape[0] != self._features[0].shape[0]:
            raise GraphError(
                f"feature dimension {vec.shape[0]} for {node_id!r} does not match "
                f"graph dimension {self._features[0].shape[0]}"
            )
        self._index[node_id] = len(self._ids)
        self._ids.append(node_id)
        self._features.append(vec)
        self._out.append([])
        self._pred[node_id] = []
        self._path_cache.clear()
        self._dist_cache.clear()

    def add_edge(self, u: NodeId, v: NodeId) -> None:
        """Add the directed followee -> follower edge (u, v)."""
        self._check_mutable()
        if u == v:
            raise GraphError(f"self-loop on {u!r}")
        for endpoint in (u, v):
            if endpoint not in self._index:
                raise GraphError(f"edge endpoint {endpoint!r} is not a node")
        if (u, v) in self._edges:
            return
        self._edges.add((u, v))
        out = self._out[self._index[u]]
        out.append(v)
        out.sort()
        self._pred[v].append(u)
        self._path_cache.clear()
        self._dist_cache.clear()

    def freeze(self) -> "SocialGraph":
        self._frozen = True
        return self

    # ---- queries ----------------------------------------------------------

    def has_node(self, node_id: NodeId) -> bool:
        return node_id in self._index

    def has_edge(self, u: NodeId, v: NodeId) -> bool:
        return (u, v) in self._edges

    def followers(self, u: NodeId) -> list:
        """Out-neighbors of ``u`` in sorted order."""
        return list(self._out[self._index[u]])

    def features(self, node_id: NodeId) -> np.ndarray:
        return self._features[self._index[node_id]]

    @property
    def feature_dim(self) -> Optional[int]:
        return self._features[0].shape[0] if self._features else None

    @property
    def node_count(self) -> int:
        return len(self._ids)

    @property
    def edge_count(self) -> int:
        return len(self._edges)

    def nodes(self) -> list:
        return sorted(self._ids)

    def edges(self) -> list:
        return sorted(self._edges)

    def validate_edge_classes(self, num_classes: int) -> None:
        for edge, cls in self.edge_classes.items():
            if not 0 <= cls < num_classes:
                raise GraphError(f"edge {edge!r} has class {cls} >= {num_classes}")

    def _distance_to(self, target: NodeId) -> dict:
        """Minimum edge count from each node to ``target`` (reverse BFS).

        Used as an admissible pruning bound during path search; nodes absent
        from the map cannot reach ``target`` at all.
        """
        cached = self._dist_cache.get(target)
        if cached is not None:
            return cached
        dist = {target: 0}
        frontier = [target]
        while frontier:
            nxt = []
            for node in frontier:
                for pred in self._pred[node]:
                    if pred not in dist:
                        dist[pred] = dist[node] + 1
                        nxt.append(pred)
            frontier = nxt
        self._dist_cache[target] = dist
        return dist


def enumerate_paths(
    graph: SocialGraph,
    source: NodeId,
    target_edge: Edge,
    cfg: PathEnumConfig = PathEnumConfig(),
) -> PathEnumeration:
    """All simple directed paths from ``source`` whose final edge is ``target_edge``.

    Paths are returned in lexicographic order of their vertex sequences.  When
    more than ``cfg.max_paths`` paths exist within the depth bound, the
    shortest paths (ties broken lexicographically) are kept and the result is
    flagged as truncated.  An unreachable target yields an empty result, not
    an error.
    """
    u, v = target_edge
    if not graph.has_node(source):
        raise GraphError(f"source {source!r} is not a node")
    if not graph.has_edge(u, v):
        raise GraphError(f"target edge {target_edge!r} is not in the graph")

    key = (source, (u, v), cfg.max_path_length, cfg.max_paths)
    cached = graph._path_cache.get(key)
    if cached is not None:
        return cached

    found: list = []
    truncated = False
    if v != source:  # a simple path cannot return to its own source
        # Iterative deepening: exploring one exact length at a time yields the
        # shortest-first order needed for truncation without ranking the full
        # (potentially huge) path set.
        for length in range(1, cfg.max_path_length + 1):
            for path in _paths_of_exact_length(graph, source, u, v, length):
                if len(found) < cfg.max_paths:
                    found.append(path)
                else:
                    truncated = True
                    break
            if truncated:
                break

    found.sort(key=lambda p: p.vertices)
    result = PathEnumeration(paths=tuple(found), truncated=truncated)
    graph._path_cache[key] = result
    return result


def _paths_of_exact_length(graph, source, u, v, length):
    """Yield simple paths source ~> u -> v with exactly ``length`` edges.

    Children are visited in sorted order, so yields are lexicographic within
    one length.  The final edge (u, v) is fixed, so the search looks for
    vertex-disjoint prefixes source ~> u of ``length - 1`` edges avoiding v,
    pruned by the minimum remaining distance to u.
    """
    if length == 1:
        if source == u:
            yield DirectedPath((source, v))
        return
    dist_to_u = graph._distance_to(u)
    if dist_to_u.get(source, length) > length - 1:
        return
    stack = [source]
    on_stack = {source, v}

    def dfs(node, remaining):
        if remaining == 0:
            if node == u:
                yield DirectedPath(tuple(stack) + (v,))
            return
        if node == u:
            return  # u closes the prefix; a simple path cannot revisit it
        for child in graph.followers(node):
            if child in on_stack:
                continue
            if dist_to_u.get(child, remaining) > remaining - 1:
                continue
            stack.append(child)
            on_stack.add(child)
            yield from dfs(child, remaining - 1)
            stack.pop()
            on_stack.remove(child)

    yield from dfs(source, length - 1)


# ---- flat-file ingestion ----------------------------------------------------
#
# Edge list: one record per line, "u<TAB>v".  Node features: "id<TAB>f1,f2,...".
# Both UTF-8 with LF line endings.  Numeric-looking ids are read as ints so the
# two files and JSON trace files agree on id identity.


def _parse_id(token: str):
    token = token.strip()
    try:
        return int(token)
    except ValueError:
        return token


def read_node_features(path) -> dict:
    """Read an ``id<TAB>f1,f2,...,fd`` feature file into {id: vector}."""
    table: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                raw_id, raw_vec = line.split("\t")
                vec = np.array([float(x) for x in raw_vec.split(",")], dtype=float)
            except ValueError as exc:
                raise GraphError(f"{path}:{lineno}: bad feature record: {exc}") from exc
            table[_parse_id(raw_id)] = vec
    return table


def load_graph(edge_path, feature_path=None, feature_dim: int = 1) -> SocialGraph:
    """Build a graph from an edge-list file plus an optional feature file.

    Nodes missing from the feature file (or all nodes, when no feature file is
    given) get zero vectors of ``feature_dim`` so the graph stays usable for
    inference, which never reads features.
    """
    features = read_node_features(feature_path) if feature_path else {}
    if features:
        feature_dim = len(next(iter(features.values())))
    graph = SocialGraph()
    edges = []
    with open(edge_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise GraphError(f"{edge_path}:{lineno}: expected 'u<TAB>v'")
            edges.append((_parse_id(parts[0]), _parse_id(parts[1])))
    for u, v in edges:
        for node in (u, v):
            if not graph.has_node(node):
                graph.add_node(node, features.get(node, np.zeros(feature_dim)))
    for u, v in edges:
        graph.add_edge(u, v)
    return graph


def save_graph(graph: SocialGraph, edge_path, feature_path=None) -> None:
    with open(edge_path, "w", encoding="utf-8", newline="\n") as fh:
        for u, v in graph.edges():
            fh.write(f"{u}\t{v}\n")
    if feature_path is not None:
        with open(feature_path, "w", encoding="utf-8", newline="\n") as fh:
            for node in graph.nodes():
                vec = ",".join(repr(float(x)) for x in graph.features(node))
                fh.write(f"{node}\t{vec}\n")
