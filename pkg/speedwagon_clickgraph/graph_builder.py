"""Query and document homogeneous graphs built from training sessions."""
from __future__ import annotations

import dataclasses
import enum
import itertools
import logging
from typing import (
    Dict,
    Iterable,
    Iterator,
    List,
    Optional,
    Sequence,
    Set,
    TextIO,
    Tuple,
    Union,
)

import numpy as np

from speedwagon_clickgraph.exceptions import GraphFormatError
from speedwagon_clickgraph.session_log import Session, UNKNOWN_INDEX

__all__ = [
    "EdgeKind",
    "NodeDomain",
    "SamplingPolicy",
    "HomogeneousGraph",
    "NeighborSample",
    "SessionGraphOverlay",
    "GraphSummary",
    "build_query_graph",
    "build_doc_graph",
    "sample_neighbors",
    "sample_node",
    "summarize_graph",
    "write_graph",
    "read_graph",
]

logger = logging.getLogger(__name__)

GRAPH_FILE_HEADER = "# clickgraph-graph v1"


class EdgeKind(enum.Enum):
    MULTI_HOP = "MULTI_HOP"
    CONSECUTIVE = "CONSECUTIVE"


class NodeDomain(enum.Enum):
    QUERY = "QUERY"
    DOC = "DOC"


class SamplingPolicy(enum.Enum):
    """How K neighbors are drawn for a node."""

    UNIFORM = "uniform"
    BALANCED = "balanced"


Edge = Tuple[int, int, EdgeKind]


@dataclasses.dataclass(frozen=True)
class HomogeneousGraph:
    """Undirected graph over the ids of one vocabulary.

    Adjacency is symmetric and has no duplicate (neighbor, kind) entries.
    Node 0 is the UNKNOWN id and never has edges. Self-loops are not
    stored; the sampler always adds them.
    """

    domain: NodeDomain
    node_count: int
    adjacency: Tuple[Tuple[Tuple[int, EdgeKind], ...], ...]

    @classmethod
    def from_edges(
        cls,
        domain: NodeDomain,
        node_count: int,
        edges: Iterable[Edge]
    ) -> "HomogeneousGraph":
        """Create a graph from undirected edges, ignoring duplicates."""
        entries: List[Set[Tuple[int, EdgeKind]]] = [
            set() for _ in range(node_count)
        ]
        for first, second, kind in edges:
            if first == second:
                continue
            for node in (first, second):
                if not 0 < node < node_count:
                    raise ValueError(
                        f"Edge ({first}, {second}) refers to a node outside "
                        f"1..{node_count - 1}"
                    )
            entries[first].add((second, kind))
            entries[second].add((first, kind))
        adjacency = tuple(
            tuple(sorted(node_entries, key=lambda e: (e[0], e[1].value)))
            for node_entries in entries
        )
        return cls(domain=domain, node_count=node_count, adjacency=adjacency)

    def neighbors(
        self,
        node: int,
        kind: Optional[EdgeKind] = None
    ) -> List[int]:
        """Distinct neighbors of node, optionally of one edge kind only."""
        if not 0 <= node < self.node_count:
            return []
        return sorted(
            {
                neighbor for neighbor, edge_kind in self.adjacency[node]
                if kind is None or edge_kind == kind
            }
        )

    def degree(self, node: int) -> int:
        return len(self.neighbors(node))

    def edges(self) -> Iterator[Edge]:
        """Each undirected edge once, as (u, v, kind) with u < v."""
        for node, node_entries in enumerate(self.adjacency):
            for neighbor, kind in node_entries:
                if node < neighbor:
                    yield node, neighbor, kind

    def edge_set(self) -> Set[Edge]:
        return set(self.edges())


@dataclasses.dataclass(frozen=True)
class NeighborSample:
    """K sampled neighbor ids for every node of a graph."""

    table: np.ndarray
    policy: SamplingPolicy
    seed: int

    @property
    def k(self) -> int:
        return int(self.table.shape[1])

    def __getitem__(self, node: int) -> np.ndarray:
        return self.table[node]


@dataclasses.dataclass(frozen=True)
class GraphSummary:
    """Size of a graph for reporting."""

    domain: NodeDomain
    nodes: int
    multi_hop_edges: int
    consecutive_edges: int
    isolated_nodes: int
    mean_degree: float


def _max_id(values: Iterable[int]) -> int:
    return max(values, default=UNKNOWN_INDEX)


def _resolve_node_count(
    node_count: Optional[int],
    largest_id: int
) -> int:
    if node_count is None:
        return largest_id + 1
    if node_count <= largest_id:
        raise ValueError(
            f"node_count {node_count} does not cover id {largest_id}"
        )
    return node_count


def _pairs(nodes: Iterable[int]) -> Iterator[Tuple[int, int]]:
    return itertools.combinations(sorted(set(nodes)), 2)


def build_query_graph(
    train: Sequence[Session],
    node_count: Optional[int] = None
) -> HomogeneousGraph:
    """Build the query graph.

    Two queries share a MULTI_HOP edge when some document was clicked
    under both of them, in any training sessions. Adjacent queries of a
    session share a CONSECUTIVE edge.

    Args:
        train: training sessions.
        node_count: number of rows of the query vocabulary including
            UNKNOWN. Defaults to the largest query id seen plus one.
    """
    clicked_under: Dict[int, Set[int]] = {}
    edges: List[Edge] = []
    largest = UNKNOWN_INDEX
    for session in train:
        query_ids = [query.query_id for query in session.queries]
        largest = max(largest, _max_id(query_ids))
        for first, second in zip(query_ids, query_ids[1:]):
            edges.append((first, second, EdgeKind.CONSECUTIVE))
        for query in session.queries:
            for impression in query.impressions:
                if impression.click:
                    clicked_under.setdefault(
                        impression.doc_id, set()
                    ).add(query.query_id)
    for queries in clicked_under.values():
        edges.extend(
            (first, second, EdgeKind.MULTI_HOP)
            for first, second in _pairs(queries)
        )
    graph = HomogeneousGraph.from_edges(
        NodeDomain.QUERY, _resolve_node_count(node_count, largest), edges
    )
    logger.info(
        "Built query graph with %d nodes and %d edges",
        graph.node_count - 1,
        len(graph.edge_set())
    )
    return graph


def build_doc_graph(
    train: Sequence[Session],
    node_count: Optional[int] = None
) -> HomogeneousGraph:
    """Build the document graph.

    Two documents share a MULTI_HOP edge when both were clicked for the
    same query, in any training sessions. Rank adjacent documents of a
    result page share a CONSECUTIVE edge.
    """
    clicked_for: Dict[int, Set[int]] = {}
    edges: List[Edge] = []
    largest = UNKNOWN_INDEX
    for session in train:
        for query in session.queries:
            doc_ids = query.doc_ids
            largest = max(largest, _max_id(doc_ids))
            for first, second in zip(doc_ids, doc_ids[1:]):
                edges.append((first, second, EdgeKind.CONSECUTIVE))
            for impression in query.impressions:
                if impression.click:
                    clicked_for.setdefault(
                        query.query_id, set()
                    ).add(impression.doc_id)
    for docs in clicked_for.values():
        edges.extend(
            (first, second, EdgeKind.MULTI_HOP)
            for first, second in _pairs(docs)
        )
    graph = HomogeneousGraph.from_edges(
        NodeDomain.DOC, _resolve_node_count(node_count, largest), edges
    )
    logger.info(
        "Built document graph with %d nodes and %d edges",
        graph.node_count - 1,
        len(graph.edge_set())
    )
    return graph


def _draw(
    rng: np.random.Generator,
    candidates: Sequence[int],
    count: int
) -> List[int]:
    if count <= 0 or not candidates:
        return []
    if len(candidates) <= count:
        return list(candidates)
    picked = rng.choice(len(candidates), size=count, replace=False)
    return [candidates[i] for i in picked]


def _sample_from(
    node: int,
    multi_hop: Sequence[int],
    consecutive: Sequence[int],
    k: int,
    rng: np.random.Generator,
    policy: SamplingPolicy
) -> List[int]:
    if policy is SamplingPolicy.UNIFORM:
        union = sorted(set(multi_hop) | set(consecutive))
        chosen = _draw(rng, union, k - 1)
    else:
        slots = k - 1
        multi_hop_share = (slots + 1) // 2
        chosen = _draw(rng, multi_hop, multi_hop_share)
        chosen += _draw(
            rng,
            [n for n in consecutive if n not in chosen],
            slots - len(chosen)
        )
        if len(chosen) < slots:
            chosen += _draw(
                rng,
                [n for n in multi_hop if n not in chosen],
                slots - len(chosen)
            )
    sample = [node] + chosen
    sample += [node] * (k - len(sample))
    return sample


def _validate_k(k: int) -> None:
    if k < 1:
        raise ValueError(f"K must be 1 or greater, got {k}")


def sample_node(
    graph: Union[HomogeneousGraph, SessionGraphOverlay],
    node: int,
    k: int,
    rng: np.random.Generator,
    policy: SamplingPolicy = SamplingPolicy.UNIFORM
) -> List[int]:
    """Sample K neighbors of one node.

    The node itself always comes first. The remaining K - 1 entries are
    drawn uniformly without replacement from its neighbors, and padded
    with the node's own id when it has fewer than K - 1 neighbors.
    """
    _validate_k(k)
    return _sample_from(
        node,
        graph.neighbors(node, EdgeKind.MULTI_HOP),
        graph.neighbors(node, EdgeKind.CONSECUTIVE),
        k,
        rng,
        policy
    )


def sample_neighbors(
    graph: HomogeneousGraph,
    k: int,
    seed: int,
    policy: SamplingPolicy = SamplingPolicy.UNIFORM
) -> NeighborSample:
    """Sample K neighbors for every node of the graph.

    Raises:
        ValueError: if K is less than 1.
    """
    _validate_k(k)
    rng = np.random.default_rng(seed)
    table = np.empty((graph.node_count, k), dtype=np.int64)
    for node in range(graph.node_count):
        table[node] = sample_node(graph, node, k, rng, policy)
    return NeighborSample(table=table, policy=policy, seed=seed)


class SessionGraphOverlay:
    """A training graph plus CONSECUTIVE edges observed in one session.

    The wrapped graph is never modified. Nodes outside the graph (ids that
    only occur outside training) are allowed and start without edges.
    """

    def __init__(self, graph: HomogeneousGraph) -> None:
        self.graph = graph
        self._extra: Dict[int, Set[int]] = {}

    def add_edge(self, first: int, second: int) -> None:
        if first == second or UNKNOWN_INDEX in (first, second):
            return
        self._extra.setdefault(first, set()).add(second)
        self._extra.setdefault(second, set()).add(first)

    def neighbors(
        self,
        node: int,
        kind: Optional[EdgeKind] = None
    ) -> List[int]:
        found = set(self.graph.neighbors(node, kind))
        if kind in (None, EdgeKind.CONSECUTIVE):
            found |= self._extra.get(node, set())
        return sorted(found)


def summarize_graph(graph: HomogeneousGraph) -> GraphSummary:
    multi_hop = consecutive = 0
    for _, _, kind in graph.edges():
        if kind is EdgeKind.MULTI_HOP:
            multi_hop += 1
        else:
            consecutive += 1
    real_nodes = range(1, graph.node_count)
    degrees = [graph.degree(node) for node in real_nodes]
    return GraphSummary(
        domain=graph.domain,
        nodes=len(degrees),
        multi_hop_edges=multi_hop,
        consecutive_edges=consecutive,
        isolated_nodes=sum(1 for degree in degrees if degree == 0),
        mean_degree=float(np.mean(degrees)) if degrees else 0.0,
    )


def write_graph(graph: HomogeneousGraph, stream: TextIO) -> None:
    """Write the text adjacency format, one undirected edge per line."""
    stream.write(f"{GRAPH_FILE_HEADER}\n")
    stream.write(f"node_count {graph.node_count}\n")
    stream.write(f"domain {graph.domain.value}\n")
    for first, second, kind in sorted(
            graph.edges(), key=lambda e: (e[0], e[1], e[2].value)):
        stream.write(f"{first} {second} {kind.value}\n")


def _read_header_value(line: str, key: str, line_number: int) -> str:
    fields = line.split()
    if len(fields) != 2 or fields[0] != key:
        raise GraphFormatError(
            f"line {line_number}: expected '{key} <value>', got {line!r}"
        )
    return fields[1]


def read_graph(stream: TextIO) -> HomogeneousGraph:
    """Read a graph written by :func:`write_graph`.

    Raises:
        GraphFormatError: if the header or any edge line is malformed.
    """
    lines = [line.rstrip("\n") for line in stream]
    if len(lines) < 3 or lines[0].strip() != GRAPH_FILE_HEADER:
        raise GraphFormatError("Missing clickgraph graph header")
    try:
        node_count = int(_read_header_value(lines[1], "node_count", 2))
        domain = NodeDomain(_read_header_value(lines[2], "domain", 3))
    except ValueError as error:
        raise GraphFormatError(str(error)) from error
    edges: List[Edge] = []
    for line_number, line in enumerate(lines[3:], start=4):
        if not line.strip():
            continue
        fields = line.split()
        try:
            if len(fields) != 3:
                raise ValueError(f"expected 3 fields, got {len(fields)}")
            edges.append(
                (int(fields[0]), int(fields[1]), EdgeKind(fields[2]))
            )
        except ValueError as error:
            raise GraphFormatError(
                f"line {line_number}: {error}"
            ) from error
    try:
        return HomogeneousGraph.from_edges(domain, node_count, edges)
    except ValueError as error:
        raise GraphFormatError(str(error)) from error
