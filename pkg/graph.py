"""
Finite directed graphs, their paths, and the source-saturation machinery.

Conventions:
    A(v, w) = number of edges e with r(e) = v and s(e) = w.
    A *source* is a vertex that receives no edges (vE^1 is empty); this is the
    opposite of the usual network convention. A *sink* emits no edges.
    Paths compose right to left: mu nu is defined when s(mu) == r(nu), and then
    r(mu nu) = r(mu), s(mu nu) = s(nu).

Vertex order is always the declaration order of the input document.
"""

import json
import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from functools import cached_property
from typing import Any

import networkx as nx
import numpy as np
from numpy.typing import NDArray

from errors import GraphParseError
from validate_graph import validate_graph_document

logger = logging.getLogger(__name__)

VertexId = str
IntMatrix = NDArray[np.int64]


@dataclass(frozen=True)
class Edge:
    """An edge e with range r(e) and source s(e)."""

    id: str
    range: VertexId
    source: VertexId


@dataclass(frozen=True)
class Path:
    """
    A path mu = mu_1 ... mu_n with s(mu_i) = r(mu_{i+1}).

    `at` is the source s(mu); for a path of length 0 it is the vertex itself.
    """

    edges: tuple[Edge, ...]
    at: VertexId

    def __post_init__(self) -> None:
        for first, second in zip(self.edges, self.edges[1:], strict=False):
            if first.source != second.range:
                raise ValueError(
                    f"Edges {first.id} and {second.id} do not compose: "
                    f"s({first.id})={first.source} but r({second.id})={second.range}"
                )
        if self.edges and self.edges[-1].source != self.at:
            raise ValueError(f"Path source {self.at} does not match its last edge")

    @classmethod
    def vertex(cls, v: VertexId) -> "Path":
        """The path of length 0 at v."""
        return cls((), v)

    @classmethod
    def from_edges(cls, edges: Iterable[Edge]) -> "Path":
        edges = tuple(edges)
        if not edges:
            raise ValueError("Use Path.vertex for paths of length 0")
        return cls(edges, edges[-1].source)

    @property
    def length(self) -> int:
        return len(self.edges)

    @property
    def range(self) -> VertexId:
        return self.edges[0].range if self.edges else self.at

    @property
    def source(self) -> VertexId:
        return self.at

    @property
    def is_vertex(self) -> bool:
        return not self.edges

    def concat(self, other: "Path") -> "Path":
        """The composition self·other; requires s(self) == r(other)."""
        if self.source != other.range:
            raise ValueError(f"Cannot compose {self} with {other}: {self.source} != {other.range}")
        if other.is_vertex:
            return self
        if self.is_vertex:
            return other
        return Path(self.edges + other.edges, other.at)

    def __str__(self) -> str:
        if self.is_vertex:
            return self.at
        return "".join(e.id for e in self.edges)


@dataclass(frozen=True)
class DirectedGraph:
    """A finite directed graph E = (E^0, E^1, r, s)."""

    vertices: tuple[VertexId, ...]
    edges: tuple[Edge, ...]

    def __post_init__(self) -> None:
        if not self.vertices:
            raise GraphParseError("Graph must have at least one vertex")
        seen: set[str] = set()
        for v in self.vertices:
            if v in seen:
                raise GraphParseError(f"Duplicate vertex id: {v!r}")
            seen.add(v)
        edge_ids: set[str] = set()
        for e in self.edges:
            if e.id in edge_ids:
                raise GraphParseError(f"Duplicate edge id: {e.id!r}")
            edge_ids.add(e.id)
            for role, endpoint in (("range", e.range), ("source", e.source)):
                if endpoint not in seen:
                    raise GraphParseError(
                        f"dangling endpoint: edge {e.id!r} has {role} {endpoint!r}, "
                        "which is not a declared vertex"
                    )

    @cached_property
    def index(self) -> dict[VertexId, int]:
        """Canonical position of each vertex."""
        return {v: i for i, v in enumerate(self.vertices)}

    @cached_property
    def _incoming(self) -> dict[VertexId, tuple[Edge, ...]]:
        incoming: dict[VertexId, list[Edge]] = {v: [] for v in self.vertices}
        for e in self.edges:
            incoming[e.range].append(e)
        return {v: tuple(es) for v, es in incoming.items()}

    @cached_property
    def _outgoing(self) -> dict[VertexId, tuple[Edge, ...]]:
        outgoing: dict[VertexId, list[Edge]] = {v: [] for v in self.vertices}
        for e in self.edges:
            outgoing[e.source].append(e)
        return {v: tuple(es) for v, es in outgoing.items()}

    @cached_property
    def edge_position(self) -> dict[str, int]:
        """Declaration index of each edge."""
        return {e.id: i for i, e in enumerate(self.edges)}

    @cached_property
    def _by_id(self) -> dict[str, Edge]:
        return {e.id: e for e in self.edges}

    def edges_into(self, v: VertexId) -> tuple[Edge, ...]:
        """vE^1, in declaration order."""
        return self._incoming[v]

    def edges_out_of(self, w: VertexId) -> tuple[Edge, ...]:
        """E^1w, in declaration order."""
        return self._outgoing[w]

    def edge(self, edge_id: str) -> Edge:
        return self._by_id[edge_id]

    def ordered(self, vertex_set: Iterable[VertexId]) -> list[VertexId]:
        """Vertices of a set in canonical order."""
        members = set(vertex_set)
        return [v for v in self.vertices if v in members]

    def path(self, spec: str | Iterable[str]) -> Path:
        """Build a path from a vertex id or a sequence of edge ids."""
        if isinstance(spec, str):
            if spec in self.index:
                return Path.vertex(spec)
            return Path.from_edges([self.edge(spec)])
        return Path.from_edges(self.edge(eid) for eid in spec)


def parse_graph(document: str | Mapping[str, Any]) -> DirectedGraph:
    """Parse and validate a graph document (JSON text or decoded mapping)."""
    if isinstance(document, str):
        try:
            data = json.loads(document)
        except json.JSONDecodeError as e:
            raise GraphParseError(f"malformed document: {e}") from e
    else:
        data = document

    is_valid, errors = validate_graph_document(data)
    if not is_valid:
        raise GraphParseError("invalid graph document: " + "; ".join(errors))

    edges = tuple(Edge(e["id"], e["range"], e["source"]) for e in data["edges"])
    return DirectedGraph(tuple(data["vertices"]), edges)


def load_graph(path: str) -> DirectedGraph:
    """Read a UTF-8 graph file and parse it."""
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except (OSError, UnicodeDecodeError) as e:
        raise GraphParseError(f"Cannot read graph file {path}: {e}") from e
    return parse_graph(text)


def graph_to_document(graph: DirectedGraph) -> dict[str, Any]:
    return {
        "vertices": list(graph.vertices),
        "edges": [{"id": e.id, "range": e.range, "source": e.source} for e in graph.edges],
    }


def vertex_matrix(graph: DirectedGraph) -> IntMatrix:
    """The vertex matrix A with A(v, w) = |vE^1w|."""
    n = len(graph.vertices)
    matrix = np.zeros((n, n), dtype=np.int64)
    for e in graph.edges:
        matrix[graph.index[e.range], graph.index[e.source]] += 1
    return matrix


def enumerate_paths(graph: DirectedGraph, n: int, at: VertexId | None = None) -> list[Path]:
    """
    All paths of length n, optionally only those with source `at`.

    Length-0 paths come in canonical vertex order; longer paths are ordered
    lexicographically by the declaration index of their edges.
    """
    if n < 0:
        raise ValueError(f"Path length must be nonnegative, got {n}")
    if at is not None and at not in graph.index:
        raise ValueError(f"Unknown vertex: {at!r}")

    starts = [at] if at is not None else list(graph.vertices)
    paths = [Path.vertex(v) for v in starts]
    for _ in range(n):
        paths = [Path((e,) + p.edges, p.at) for p in paths for e in graph.edges_out_of(p.range)]
    if n > 0:
        paths.sort(key=lambda p: [graph.edge_position[e.id] for e in p.edges])
    return paths


def enumerate_paths_up_to(graph: DirectedGraph, n: int) -> list[Path]:
    """E^{<=n}, ordered by length."""
    paths: list[Path] = []
    for k in range(n + 1):
        paths.extend(enumerate_paths(graph, k))
    return paths


def count_paths(graph: DirectedGraph, n: int) -> int:
    """|E^n|, computed exactly from integer matrix powers."""
    power = np.linalg.matrix_power(vertex_matrix(graph).astype(object), n)
    return int(power.sum())


def sources(graph: DirectedGraph) -> frozenset[VertexId]:
    """Vertices receiving no edges."""
    return frozenset(v for v in graph.vertices if not graph.edges_into(v))


def sinks(graph: DirectedGraph) -> frozenset[VertexId]:
    """Vertices emitting no edges."""
    return frozenset(v for v in graph.vertices if not graph.edges_out_of(v))


def to_networkx(graph: DirectedGraph) -> nx.DiGraph:
    """Support digraph with an arc s(e) -> r(e) for every edge (loops kept)."""
    digraph = nx.DiGraph()
    digraph.add_nodes_from(graph.vertices)
    digraph.add_edges_from((e.source, e.range) for e in graph.edges)
    return digraph


def strongly_connected(graph: DirectedGraph) -> bool:
    """
    True iff the vertex matrix is irreducible.

    A single vertex without a loop counts as NOT strongly connected, even though
    the empty path joins it to itself.
    """
    if len(graph.vertices) == 1:
        return len(graph.edges) > 0
    return bool(nx.is_strongly_connected(to_networkx(graph)))


def strongly_connected_components(graph: DirectedGraph) -> list[frozenset[VertexId]]:
    """SCCs ordered by their first vertex in canonical order."""
    components = [frozenset(c) for c in nx.strongly_connected_components(to_networkx(graph))]
    return sorted(components, key=lambda c: min(graph.index[v] for v in c))


def has_cycle(graph: DirectedGraph) -> bool:
    return not nx.is_directed_acyclic_graph(to_networkx(graph))


@dataclass(frozen=True)
class SaturationChain:
    """S_0 ⊆ S_1 ⊆ ... ⊆ S_n = H, with S_0 the set of sources."""

    levels: tuple[frozenset[VertexId], ...]

    @property
    def saturation(self) -> frozenset[VertexId]:
        return self.levels[-1]


def _saturate_step(graph: DirectedGraph, current: frozenset[VertexId]) -> frozenset[VertexId]:
    added = {
        v for v in graph.vertices if all(e.source in current for e in graph.edges_into(v))
    }
    return current | added


def source_saturation(graph: DirectedGraph) -> SaturationChain:
    """
    The saturation H of the sources, built as S_{k+1} = S_k ∪ {v : s(vE^1) ⊆ S_k}.

    Stops when S_{k+1} == S_k, which takes at most |E^0| steps.
    """
    level = sources(graph)
    levels = [level]
    for _ in range(len(graph.vertices)):
        nxt = _saturate_step(graph, level)
        if nxt == level:
            break
        levels.append(nxt)
        level = nxt
    if not (is_saturated(graph, level) and is_hereditary(graph, level)):
        raise RuntimeError(f"Source saturation {sorted(level)} is not saturated and hereditary")
    logger.debug("Source saturation stabilized after %d levels", len(levels))
    return SaturationChain(tuple(levels))


def is_saturated(graph: DirectedGraph, vertex_set: Iterable[VertexId]) -> bool:
    """s(vE^1) ⊆ H forces v ∈ H."""
    members = frozenset(vertex_set)
    return _saturate_step(graph, members) == members


def is_hereditary(graph: DirectedGraph, vertex_set: Iterable[VertexId]) -> bool:
    """r(e) ∈ H forces s(e) ∈ H."""
    members = frozenset(vertex_set)
    return all(e.source in members for e in graph.edges if e.range in members)


def subgraph_without(graph: DirectedGraph, vertex_set: Iterable[VertexId]) -> DirectedGraph:
    """E∖H: the vertices outside H and the edges whose endpoints both lie outside H."""
    removed = frozenset(vertex_set)
    vertices = tuple(v for v in graph.vertices if v not in removed)
    if not vertices:
        raise ValueError("Removing H leaves no vertices")
    edges = tuple(e for e in graph.edges if e.source not in removed and e.range not in removed)
    return DirectedGraph(vertices, edges)


@dataclass(frozen=True, eq=False)
class BlockDecomposition:
    """
    The vertex matrix reordered as [[A_{E∖H}, B], [0, A_H]].

    `ordering` lists E^0∖H first, then H∖S_{n-1}, ..., and the sources last.
    """

    ordering: tuple[VertexId, ...]
    complement_size: int
    matrix: IntMatrix

    @property
    def complement_block(self) -> IntMatrix:
        k = self.complement_size
        return self.matrix[:k, :k]

    @property
    def coupling_block(self) -> IntMatrix:
        k = self.complement_size
        return self.matrix[:k, k:]

    @property
    def saturated_block(self) -> IntMatrix:
        k = self.complement_size
        return self.matrix[k:, k:]


def block_decomposition(
    graph: DirectedGraph, saturation: SaturationChain | Iterable[VertexId]
) -> BlockDecomposition:
    """Reorder the vertex matrix by the saturation levels of the sources."""
    if isinstance(saturation, SaturationChain):
        chain = saturation
    else:
        chain = source_saturation(graph)
        if chain.saturation != frozenset(saturation):
            raise ValueError("Vertex set is not the saturation of the sources")

    saturated = chain.saturation
    ordering = [v for v in graph.vertices if v not in saturated]
    complement_size = len(ordering)
    for upper, lower in zip(reversed(chain.levels), list(reversed(chain.levels))[1:], strict=False):
        ordering.extend(graph.ordered(upper - lower))
    ordering.extend(graph.ordered(chain.levels[0]))

    positions = [graph.index[v] for v in ordering]
    matrix = vertex_matrix(graph)[np.ix_(positions, positions)]
    blocks = BlockDecomposition(tuple(ordering), complement_size, matrix)

    if np.any(matrix[complement_size:, :complement_size]):
        raise RuntimeError("Block decomposition has a nonzero lower-left block")
    if np.any(np.tril(blocks.saturated_block)):
        raise RuntimeError("A_H is not strictly upper triangular")
    return blocks


def factorize_path(lam: Path, mu: Path) -> Path | None:
    """The path lam' with lam = mu lam', or None if mu is not a prefix of lam."""
    if mu.length > lam.length:
        return None
    if mu.is_vertex:
        return lam if lam.range == mu.at else None
    if lam.edges[: mu.length] != mu.edges:
        return None
    return Path(lam.edges[mu.length :], lam.at)
