"""Graph-enhanced click model.

The network predicts, for every impression of a session, an
attractiveness score, an examination probability and their combination
into a click probability. Query and document embeddings are adjusted by
graph attention over neighbors sampled from the homogeneous graphs before
they enter the recurrent encoders.
"""
from __future__ import annotations

import dataclasses
import enum
import logging
import zlib
from typing import (
    Any,
    Dict,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np

from speedwagon_clickgraph import diff_engine as de
from speedwagon_clickgraph.diff_engine import GruParams, ParamStore, Tensor
from speedwagon_clickgraph.exceptions import ShapeError, UnsupportedCombination
from speedwagon_clickgraph.graph_builder import (
    HomogeneousGraph,
    NeighborSample,
    SamplingPolicy,
    SessionGraphOverlay,
    sample_node,
)
from speedwagon_clickgraph.session_log import Session, UNKNOWN_INDEX

__all__ = [
    "Aggregation",
    "CombinationKind",
    "RankBy",
    "GatConfig",
    "ModelConfig",
    "KnownIds",
    "SessionBatch",
    "Neighborhoods",
    "ForwardOutputs",
    "gat_aggregate",
    "encode_queries",
    "encode_documents",
    "neighbor_interaction",
    "attractiveness",
    "examination",
    "combine",
    "loss",
    "GraphCM",
]

logger = logging.getLogger(__name__)

PROBABILITY_EPSILON = de.BCE_EPSILON
NO_PREVIOUS_CLICK = 0


class Aggregation(enum.Enum):
    CONCAT = "concat"
    AVERAGE = "average"


class CombinationKind(enum.Enum):
    """How examination and attractiveness become a click probability."""

    MUL = "mul"
    EXPMUL = "expmul"
    LINEAR = "linear"
    NONLINEAR = "nonlinear"


class RankBy(enum.Enum):
    """Which output orders documents for relevance estimation."""

    ATTRACTIVENESS = "attractiveness"
    CLICK = "click"


@dataclasses.dataclass(frozen=True)
class GatConfig:
    heads: int = 2
    aggregation: Aggregation = Aggregation.AVERAGE
    k: int = 8
    slope: float = 0.2

    def __post_init__(self) -> None:
        if self.heads < 1:
            raise ValueError(f"heads must be 1 or greater, got {self.heads}")
        if self.k < 1:
            raise ValueError(f"K must be 1 or greater, got {self.k}")

    def head_width(self, width: int) -> int:
        """Width each head attends over for embeddings of the given width.

        Raises:
            ValueError: if CONCAT heads do not divide the width.
        """
        if self.aggregation is Aggregation.AVERAGE:
            return width
        if width % self.heads:
            raise ValueError(
                f"{self.heads} concatenated heads do not divide width {width}"
            )
        return width // self.heads


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    """Structure of a GraphCM network.

    Vocabulary sizes count the UNKNOWN row.
    """

    query_vocab_size: int
    doc_vocab_size: int
    vertical_vocab_size: int
    max_list_length: int
    query_dim: int = 64
    doc_dim: int = 64
    vertical_dim: int = 8
    click_dim: int = 4
    position_dim: int = 4
    hidden_size: int = 64
    gat: GatConfig = dataclasses.field(default_factory=GatConfig)
    combination: CombinationKind = CombinationKind.EXPMUL
    nonlinear_hidden: int = 8
    dropout: float = 0.5
    use_q_gat: bool = True
    use_d_gat: bool = True
    use_neighbor_interaction: bool = True
    reset_doc_state_per_query: bool = False
    rank_by: RankBy = RankBy.ATTRACTIVENESS
    substitution_probability: float = 0.01

    def __post_init__(self) -> None:
        if self.query_dim != self.doc_dim:
            raise ValueError(
                f"Query width {self.query_dim} and document width "
                f"{self.doc_dim} must match for neighbor interaction"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be within [0, 1), got "
                             f"{self.dropout}")
        if self.max_list_length < 1:
            raise ValueError("max_list_length must be 1 or greater")
        self.gat.head_width(self.query_dim)

    def to_dict(self) -> Dict[str, Any]:
        """Plain values suitable for a checkpoint manifest."""
        values = dataclasses.asdict(self)
        values["gat"] = {
            "heads": self.gat.heads,
            "aggregation": self.gat.aggregation.value,
            "k": self.gat.k,
            "slope": self.gat.slope,
        }
        values["combination"] = self.combination.value
        values["rank_by"] = self.rank_by.value
        return values

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> "ModelConfig":
        values = dict(values)
        gat = dict(values.pop("gat", {}))
        if "aggregation" in gat:
            gat["aggregation"] = Aggregation(gat["aggregation"])
        values["gat"] = GatConfig(**gat)
        if "combination" in values:
            values["combination"] = CombinationKind(values["combination"])
        if "rank_by" in values:
            values["rank_by"] = RankBy(values["rank_by"])
        return cls(**values)

    @property
    def doc_input_size(self) -> int:
        return (
            self.doc_dim + self.vertical_dim + self.click_dim
            + self.position_dim
        )

    @property
    def examination_input_size(self) -> int:
        return self.position_dim + self.vertical_dim + self.click_dim


@dataclasses.dataclass(frozen=True)
class KnownIds:
    """Ids seen during training; every other id is cold."""

    queries: np.ndarray
    documents: np.ndarray

    @classmethod
    def from_sessions(
        cls,
        train: Sequence[Session],
        query_rows: int,
        doc_rows: int
    ) -> "KnownIds":
        queries = np.zeros(query_rows, dtype=bool)
        documents = np.zeros(doc_rows, dtype=bool)
        for session in train:
            for query in session.queries:
                queries[query.query_id] = True
                for impression in query.impressions:
                    documents[impression.doc_id] = True
        return cls(queries=queries, documents=documents)

    @staticmethod
    def _remap(known: np.ndarray, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        inside = ids < len(known)
        warm = np.zeros_like(inside)
        warm[inside] = known[ids[inside]]
        return np.where(warm, ids, UNKNOWN_INDEX)

    def remap_queries(self, ids: np.ndarray) -> np.ndarray:
        return self._remap(self.queries, ids)

    def remap_documents(self, ids: np.ndarray) -> np.ndarray:
        return self._remap(self.documents, ids)


@dataclasses.dataclass
class SessionBatch:
    """Padded arrays for a list of sessions.

    ``B`` is the number of sessions, ``Q`` the longest query count and
    ``T`` the longest impression count. Impressions are flattened in
    (query, position) order per session. ``raw_*`` arrays keep ids before
    cold ids were replaced by UNKNOWN.
    """

    sessions: Tuple[Session, ...]
    query_ids: np.ndarray
    query_mask: np.ndarray
    raw_query_ids: np.ndarray
    doc_ids: np.ndarray
    raw_doc_ids: np.ndarray
    verticals: np.ndarray
    positions: np.ndarray
    clicks: np.ndarray
    previous_clicks: np.ndarray
    query_index: np.ndarray
    query_start: np.ndarray
    mask: np.ndarray

    @classmethod
    def from_sessions(
        cls,
        sessions: Sequence[Session],
        known: KnownIds,
        max_list_length: int,
        vertical_rows: Optional[int] = None
    ) -> "SessionBatch":
        """Encode sessions, replacing ids unseen in training by UNKNOWN.

        Positions beyond max_list_length share the last position row.
        """
        if not sessions:
            raise ValueError("A batch requires at least one session")
        batch = len(sessions)
        query_slots = max(len(session.queries) for session in sessions)
        impression_slots = max(s.impression_count for s in sessions)

        def table(shape: Tuple[int, int], dtype: Any) -> np.ndarray:
            return np.zeros(shape, dtype=dtype)

        raw_query_ids = table((batch, query_slots), np.int64)
        query_mask = table((batch, query_slots), bool)
        raw_doc_ids = table((batch, impression_slots), np.int64)
        verticals = table((batch, impression_slots), np.int64)
        positions = table((batch, impression_slots), np.int64)
        clicks = table((batch, impression_slots), np.float64)
        query_index = table((batch, impression_slots), np.int64)
        query_start = table((batch, impression_slots), bool)
        mask = table((batch, impression_slots), bool)

        for row, session in enumerate(sessions):
            slot = 0
            for query_number, query in enumerate(session.queries):
                raw_query_ids[row, query_number] = query.query_id
                query_mask[row, query_number] = True
                for impression in query.impressions:
                    raw_doc_ids[row, slot] = impression.doc_id
                    verticals[row, slot] = impression.vertical_type
                    positions[row, slot] = min(
                        impression.position, max_list_length
                    )
                    clicks[row, slot] = float(impression.click)
                    query_index[row, slot] = query_number
                    query_start[row, slot] = impression.position == 1
                    mask[row, slot] = True
                    slot += 1
        if vertical_rows is not None:
            verticals = np.where(
                verticals < vertical_rows, verticals, UNKNOWN_INDEX
            )
        previous_clicks = np.full_like(raw_doc_ids, NO_PREVIOUS_CLICK)
        previous_clicks[:, 1:] = clicks[:, :-1].astype(np.int64)
        return cls(
            sessions=tuple(sessions),
            query_ids=known.remap_queries(raw_query_ids) * query_mask,
            query_mask=query_mask,
            raw_query_ids=raw_query_ids,
            doc_ids=known.remap_documents(raw_doc_ids) * mask,
            raw_doc_ids=raw_doc_ids,
            verticals=verticals,
            positions=positions,
            clicks=clicks,
            previous_clicks=previous_clicks * mask,
            query_index=query_index,
            query_start=query_start,
            mask=mask,
        )

    @property
    def size(self) -> int:
        return len(self.sessions)


@dataclasses.dataclass
class Neighborhoods:
    """Sampled neighbors used by one forward pass.

    Slot arrays hold neighbor ids for every query slot and every
    impression slot. Neighbors of neighbors come from a node table:
    ``doc_node_table[n]`` holds the neighbors of ``doc_nodes[n]`` and
    ``doc_slot_nodes`` points every slot neighbor at its row. Training
    shares one row per distinct document; evaluation keeps one row per
    slot neighbor, since each session has its own overlay.
    """

    query_slots: np.ndarray
    doc_slots: np.ndarray
    doc_nodes: np.ndarray
    doc_node_table: np.ndarray
    doc_slot_nodes: np.ndarray

    @classmethod
    def _with_doc_nodes(
        cls,
        query_slots: np.ndarray,
        doc_slots: np.ndarray,
        doc_sample: NeighborSample,
        known: KnownIds,
    ) -> "Neighborhoods":
        nodes, inverse = np.unique(doc_slots, return_inverse=True)
        table = known.remap_documents(doc_sample.table[nodes])
        return cls(
            query_slots=query_slots,
            doc_slots=doc_slots,
            doc_nodes=nodes,
            doc_node_table=table,
            doc_slot_nodes=inverse.reshape(doc_slots.shape),
        )

    @classmethod
    def from_samples(
        cls,
        batch: SessionBatch,
        query_sample: NeighborSample,
        doc_sample: NeighborSample,
        known: KnownIds,
    ) -> "Neighborhoods":
        """Neighborhoods read from per-node samples of the training graphs.

        Used during training, where every id is in the graphs.
        """
        query_slots = known.remap_queries(
            query_sample.table[batch.query_ids]
        )
        doc_slots = known.remap_documents(doc_sample.table[batch.doc_ids])
        return cls._with_doc_nodes(query_slots, doc_slots, doc_sample, known)

    @classmethod
    def from_overlays(
        cls,
        batch: SessionBatch,
        query_graph: HomogeneousGraph,
        doc_graph: HomogeneousGraph,
        doc_sample: NeighborSample,
        known: KnownIds,
        seed: int,
        policy: SamplingPolicy = SamplingPolicy.UNIFORM,
    ) -> "Neighborhoods":
        """Neighborhoods for sessions outside training.

        CONSECUTIVE edges of each session are added as the session
        unfolds, so a slot only sees edges from earlier in its session.
        The neighbors of each sampled document neighbor are drawn from the
        same overlay at the same point, so both hops see the same edges.
        Sampling is seeded from the seed and the session id.
        """
        k = doc_sample.k
        query_slots = np.zeros(batch.query_ids.shape + (k,), dtype=np.int64)
        doc_slots = np.zeros(batch.doc_ids.shape + (k,), dtype=np.int64)
        second_hop = np.zeros(batch.doc_ids.shape + (k, k), dtype=np.int64)
        for row, session in enumerate(batch.sessions):
            rng = np.random.default_rng(
                [seed, zlib.crc32(session.session_id.encode("utf-8"))]
            )
            query_overlay = SessionGraphOverlay(query_graph)
            doc_overlay = SessionGraphOverlay(doc_graph)
            slot = 0
            previous_query: Optional[int] = None
            for query_number, query in enumerate(session.queries):
                if previous_query is not None:
                    query_overlay.add_edge(previous_query, query.query_id)
                previous_query = query.query_id
                query_slots[row, query_number] = sample_node(
                    query_overlay, query.query_id, k, rng, policy
                )
                previous_doc: Optional[int] = None
                for impression in query.impressions:
                    if previous_doc is not None:
                        doc_overlay.add_edge(previous_doc, impression.doc_id)
                    previous_doc = impression.doc_id
                    neighbors = sample_node(
                        doc_overlay, impression.doc_id, k, rng, policy
                    )
                    doc_slots[row, slot] = neighbors
                    for number, neighbor in enumerate(neighbors):
                        second_hop[row, slot, number] = sample_node(
                            doc_overlay, neighbor, k, rng, policy
                        )
                    slot += 1
        query_slots = known.remap_queries(query_slots)
        doc_slots = known.remap_documents(doc_slots)
        second_hop = known.remap_documents(second_hop)
        query_slots[~batch.query_mask] = UNKNOWN_INDEX
        doc_slots[~batch.mask] = UNKNOWN_INDEX
        second_hop[~batch.mask] = UNKNOWN_INDEX
        return cls(
            query_slots=query_slots,
            doc_slots=doc_slots,
            doc_nodes=doc_slots.reshape(-1),
            doc_node_table=second_hop.reshape(-1, k),
            doc_slot_nodes=np.arange(doc_slots.size).reshape(doc_slots.shape),
        )


@dataclasses.dataclass
class ForwardOutputs:
    """Per impression outputs of a forward pass, shaped like the batch."""

    attractiveness: np.ndarray
    examination: np.ndarray
    click_probability: np.ndarray
    mask: np.ndarray
    hidden: Dict[str, np.ndarray]
    click_tensor: Tensor
    rank_by: RankBy = RankBy.ATTRACTIVENESS

    def _per_session(self, values: np.ndarray) -> List[np.ndarray]:
        return [row[row_mask] for row, row_mask in zip(values, self.mask)]

    def click_predictions(self) -> List[np.ndarray]:
        """Click probabilities of each session in session order."""
        return self._per_session(self.click_probability)

    def relevance_scores(self) -> List[np.ndarray]:
        """Scores used to rank documents for relevance estimation."""
        source = self.attractiveness \
            if self.rank_by is RankBy.ATTRACTIVENESS \
            else self.click_probability
        return self._per_session(source)


def _split_attention(weight: Tensor, width: int) -> Tuple[Tensor, Tensor]:
    if weight.shape != (2 * width, 1):
        raise ShapeError("attention", weight.shape, (2 * width, 1))
    return weight[:width], weight[width:]


def _attend(
    center: Tensor,
    neighbors: Tensor,
    weight: Tensor,
    slope: float
) -> Tensor:
    """Attention weighted sum of neighbors for one head."""
    width = center.shape[-1]
    left, right = _split_attention(weight, width)
    center_score = de.reshape(
        de.matmul(center, left), center.shape[:-1] + (1, 1)
    )
    neighbor_score = de.matmul(neighbors, right)
    weights = de.softmax(
        de.leaky_relu(de.add(center_score, neighbor_score), slope), axis=-2
    )
    return de.tensor_sum(de.mul(weights, neighbors), axis=-2)


def gat_aggregate(
    embeddings: Tensor,
    neighbor_embeddings: Tensor,
    attention: Sequence[Tensor],
    config: GatConfig
) -> Tensor:
    """Adjust embeddings by attending over their sampled neighbors.

    Args:
        embeddings: centers of shape (..., D), at least two axes.
        neighbor_embeddings: neighbors of shape (..., K, D).
        attention: one weight of shape (2 * head width, 1) per head.
        config: heads and aggregation mode.

    Returns:
        Adjusted embeddings of shape (..., D).

    Raises:
        ShapeError: when widths of embeddings, neighbors and attention
            weights disagree.
    """
    if len(attention) != config.heads:
        raise ValueError(
            f"Expected {config.heads} attention weights, got {len(attention)}"
        )
    width = embeddings.shape[-1]
    if embeddings.ndim < 2 or neighbor_embeddings.shape[:-2] + (
            neighbor_embeddings.shape[-1],) != embeddings.shape:
        raise ShapeError(
            "gat_aggregate", embeddings.shape, neighbor_embeddings.shape
        )
    if config.aggregation is Aggregation.AVERAGE:
        heads = [
            _attend(embeddings, neighbor_embeddings, weight, config.slope)
            for weight in attention
        ]
        total = heads[0]
        for head in heads[1:]:
            total = de.add(total, head)
        return de.leaky_relu(
            de.mul(total, 1.0 / config.heads), config.slope
        )
    head_width = config.head_width(width)
    outputs = []
    for number, weight in enumerate(attention):
        part = slice(number * head_width, (number + 1) * head_width)
        outputs.append(
            de.leaky_relu(
                _attend(
                    embeddings[..., part],
                    neighbor_embeddings[..., part],
                    weight,
                    config.slope
                ),
                config.slope
            )
        )
    return de.concat(outputs, axis=-1)


def _run_gru(
    inputs: Tensor,
    mask: np.ndarray,
    params: GruParams,
    reset: Optional[np.ndarray] = None
) -> Tensor:
    batch, steps = inputs.shape[0], inputs.shape[1]
    zeros = de.constant(
        np.zeros((batch, params.hidden_size)), dtype=inputs.dtype
    )
    state = zeros
    states = []
    for step in range(steps):
        if reset is not None and reset[:, step].any():
            state = de.where(reset[:, step:step + 1], zeros, state)
        updated = de.gru_cell(inputs[:, step], state, params)
        state = de.where(mask[:, step:step + 1], updated, state)
        states.append(state)
    return de.stack(states, axis=1)


def encode_queries(
    adjusted_queries: Tensor,
    query_mask: np.ndarray,
    params: GruParams
) -> Tensor:
    """Query context states, one GRU step per query of the prefix.

    Args:
        adjusted_queries: (B, Q, D) query embeddings in issue order.
        query_mask: (B, Q) true for real queries.
        params: query GRU weights.

    Returns:
        (B, Q, H) states; slot i only depends on queries 1..i.

    Raises:
        ValueError: for an empty prefix.
    """
    if adjusted_queries.ndim != 3 or adjusted_queries.shape[1] == 0:
        raise ValueError("Query encoding requires a nonempty prefix")
    return _run_gru(adjusted_queries, np.asarray(query_mask), params)


def _check_stream_order(order: np.ndarray, mask: np.ndarray) -> None:
    for row_order, row_mask in zip(order, mask):
        keys = [tuple(key) for key in row_order[row_mask]]
        if keys != sorted(keys) or len(set(keys)) != len(keys):
            raise ValueError(
                "Impression stream is not in (query, position) order"
            )


def encode_documents(
    inputs: Tensor,
    mask: np.ndarray,
    params: GruParams,
    reset: Optional[np.ndarray] = None,
    order: Optional[np.ndarray] = None
) -> Tensor:
    """Document context states over the whole session's impressions.

    Args:
        inputs: (B, T, F) impression features in session order.
        mask: (B, T) true for real impressions.
        params: document GRU weights.
        reset: optional (B, T) flags restarting the state from zero.
        order: optional (B, T, 2) (query index, position) keys checked to
            be strictly increasing.

    Raises:
        ValueError: if order is given and not lexicographic.
    """
    mask = np.asarray(mask)
    if order is not None:
        _check_stream_order(np.asarray(order), mask)
    return _run_gru(inputs, mask, params, reset)


def neighbor_interaction(
    adjusted_query: Tensor,
    neighbor_docs: Tensor,
    weight: Tensor
) -> Tensor:
    """Attention over query-document products of a document's neighbors.

    Args:
        adjusted_query: (..., D) adjusted query embedding.
        neighbor_docs: (..., K, D) adjusted embeddings of the neighbors.
        weight: (D, 1) interaction attention weight.

    Raises:
        ShapeError: if the widths disagree.
    """
    width = adjusted_query.shape[-1]
    if neighbor_docs.shape[:-2] + (neighbor_docs.shape[-1],) \
            != adjusted_query.shape:
        raise ShapeError(
            "neighbor_interaction", adjusted_query.shape, neighbor_docs.shape
        )
    if weight.shape != (width, 1):
        raise ShapeError("neighbor_interaction", weight.shape, (width, 1))
    query = de.reshape(
        adjusted_query, adjusted_query.shape[:-1] + (1, width)
    )
    products = de.mul(query, neighbor_docs)
    weights = de.softmax(de.matmul(products, weight), axis=-2)
    return de.tensor_sum(de.mul(weights, products), axis=-2)


@dataclasses.dataclass(frozen=True)
class MlpParams:
    first_weight: Tensor
    first_bias: Tensor
    second_weight: Tensor
    second_bias: Tensor


def _mlp_output(features: Tensor, params: MlpParams, slope: float) -> Tensor:
    hidden = de.leaky_relu(
        de.add(de.matmul(features, params.first_weight), params.first_bias),
        slope
    )
    return de.add(de.matmul(hidden, params.second_weight),
                  params.second_bias)


def _squeeze_last(tensor: Tensor) -> Tensor:
    return de.reshape(tensor, tensor.shape[:-1])


def _clamp_probability(tensor: Tensor) -> Tensor:
    return de.clamp(tensor, PROBABILITY_EPSILON, 1.0 - PROBABILITY_EPSILON)


def attractiveness(
    query_state: Tensor,
    doc_state: Tensor,
    interaction_state: Tensor,
    params: MlpParams,
    slope: float = 0.2,
    dropout_rate: float = 0.0,
    train: bool = False,
    rng: Optional[np.random.Generator] = None
) -> Tensor:
    """Two layer perceptron over the three states, squashed by a sigmoid."""
    features = de.dropout(
        de.concat([query_state, doc_state, interaction_state], axis=-1),
        dropout_rate,
        train,
        rng
    )
    output = de.leaky_relu(_mlp_output(features, params, slope), slope)
    return _clamp_probability(de.sigmoid(_squeeze_last(output)))


def examination(
    inputs: Tensor,
    mask: np.ndarray,
    gru: GruParams,
    weight: Tensor,
    bias: Tensor
) -> Tuple[Tensor, Tensor]:
    """Examination probabilities from position, vertical and prior click.

    Args:
        inputs: (B, T, F) concatenated position, vertical and previous
            click embeddings.
        mask: (B, T) true for real impressions.
        gru: session level GRU weights.
        weight: (H, 1) output weight.
        bias: (1,) output bias.

    Returns:
        (B, T) probabilities and the (B, T, H) GRU states.
    """
    states = _run_gru(inputs, np.asarray(mask), gru)
    logits = de.add(de.matmul(states, weight), bias)
    return _clamp_probability(de.sigmoid(_squeeze_last(logits))), states


@dataclasses.dataclass(frozen=True)
class CombinationParams:
    alpha: Optional[Tensor] = None
    beta: Optional[Tensor] = None
    mlp: Optional[MlpParams] = None


def combine(
    examination_probability: Tensor,
    attractiveness_score: Tensor,
    kind: CombinationKind,
    params: CombinationParams = CombinationParams(),
    slope: float = 0.2
) -> Tensor:
    """Click probability from examination and attractiveness.

    Raises:
        ValueError: when the parameters the kind requires are missing.
    """
    e, a = examination_probability, attractiveness_score
    if kind is CombinationKind.MUL:
        combined = de.mul(e, a)
    elif kind in (CombinationKind.EXPMUL, CombinationKind.LINEAR):
        if params.alpha is None or params.beta is None:
            raise ValueError(f"{kind.value} requires alpha and beta")
        if kind is CombinationKind.EXPMUL:
            combined = de.exp(
                de.add(
                    de.mul(params.alpha, de.log(e)),
                    de.mul(params.beta, de.log(a))
                )
            )
        else:
            combined = de.add(de.mul(params.alpha, e), de.mul(params.beta, a))
    else:
        if params.mlp is None:
            raise ValueError("nonlinear requires perceptron weights")
        combined = de.sigmoid(
            _squeeze_last(
                _mlp_output(de.stack([e, a], axis=-1), params.mlp, slope)
            )
        )
    return _clamp_probability(combined)


def loss(
    click_probability: Tensor,
    clicks: np.ndarray,
    mask: Optional[np.ndarray],
    l2: float,
    store: ParamStore
) -> Tensor:
    """Mean binary cross entropy plus l2 times the squared norm of theta."""
    objective = de.bce_loss(click_probability, clicks, mask)
    if l2:
        objective = de.add(objective, de.mul(store.l2_penalty(), l2))
    return objective


class GraphCM:
    """The full network and its parameters."""

    def __init__(
        self,
        config: ModelConfig,
        seed: int = 0,
        dtype: Any = np.float64
    ) -> None:
        self.config = config
        self.store = ParamStore(dtype=dtype, seed=seed)
        self._build()

    def _build(self) -> None:
        config = self.config
        store = self.store
        store.normal("embedding.query",
                     (config.query_vocab_size, config.query_dim))
        store.normal("embedding.doc", (config.doc_vocab_size, config.doc_dim))
        store.normal("embedding.vertical",
                     (config.vertical_vocab_size, config.vertical_dim))
        store.normal("embedding.click", (2, config.click_dim))
        store.normal("embedding.position",
                     (config.max_list_length + 1, config.position_dim))
        for domain, enabled, width in (
                ("query", config.use_q_gat, config.query_dim),
                ("doc", config.use_d_gat, config.doc_dim)):
            if not enabled:
                continue
            head_width = config.gat.head_width(width)
            for head in range(config.gat.heads):
                store.uniform(
                    f"gat.{domain}.head{head}",
                    (2 * head_width, 1),
                    fan_in=2 * head_width
                )
        self.query_gru = store.gru(
            "gru.query", config.query_dim, config.hidden_size
        )
        self.doc_gru = store.gru(
            "gru.doc", config.doc_input_size, config.hidden_size
        )
        if config.use_neighbor_interaction:
            store.uniform("interaction.weight", (config.doc_dim, 1))
        attract_inputs = 2 * config.hidden_size + config.doc_dim
        self.attract_mlp = MlpParams(
            first_weight=store.uniform(
                "attractiveness.first_weight",
                (attract_inputs, config.hidden_size)
            ),
            first_bias=store.uniform(
                "attractiveness.first_bias",
                (config.hidden_size,),
                fan_in=attract_inputs
            ),
            second_weight=store.uniform(
                "attractiveness.second_weight", (config.hidden_size, 1)
            ),
            second_bias=store.uniform(
                "attractiveness.second_bias",
                (1,),
                fan_in=config.hidden_size
            ),
        )
        self.exam_gru = store.gru(
            "gru.examination",
            config.examination_input_size,
            config.hidden_size
        )
        store.uniform("examination.weight", (config.hidden_size, 1))
        store.uniform("examination.bias", (1,), fan_in=config.hidden_size)
        self.combination = self._build_combination()

    def _build_combination(self) -> CombinationParams:
        kind = self.config.combination
        if kind is CombinationKind.EXPMUL:
            return CombinationParams(
                alpha=self.store.add("combination.alpha", 1.0),
                beta=self.store.add("combination.beta", 1.0),
            )
        if kind is CombinationKind.LINEAR:
            return CombinationParams(
                alpha=self.store.add("combination.alpha", 0.5),
                beta=self.store.add("combination.beta", 0.5),
            )
        if kind is CombinationKind.NONLINEAR:
            width = self.config.nonlinear_hidden
            return CombinationParams(
                mlp=MlpParams(
                    first_weight=self.store.uniform(
                        "combination.first_weight", (2, width)
                    ),
                    first_bias=self.store.uniform(
                        "combination.first_bias", (width,), fan_in=2
                    ),
                    second_weight=self.store.uniform(
                        "combination.second_weight", (width, 1)
                    ),
                    second_bias=self.store.uniform(
                        "combination.second_bias", (1,), fan_in=width
                    ),
                )
            )
        return CombinationParams()

    def _attention(self, domain: str) -> List[Tensor]:
        return [
            self.store[f"gat.{domain}.head{head}"]
            for head in range(self.config.gat.heads)
        ]

    def _substitute(
        self,
        ids: np.ndarray,
        train: bool,
        rng: np.random.Generator
    ) -> np.ndarray:
        probability = self.config.substitution_probability
        if not train or probability <= 0:
            return ids
        return np.where(rng.random(ids.shape) < probability,
                        UNKNOWN_INDEX, ids)

    def forward(
        self,
        batch: SessionBatch,
        neighborhoods: Neighborhoods,
        train: bool = False,
        rng: Optional[np.random.Generator] = None
    ) -> ForwardOutputs:
        """Predict every impression of the batch.

        Args:
            batch: encoded sessions.
            neighborhoods: sampled neighbors for the batch's slots.
            train: enables dropout and UNKNOWN substitution.
            rng: randomness for dropout and substitution.
        """
        config = self.config
        store = self.store
        rng = rng if rng is not None else np.random.default_rng(0)
        slope = config.gat.slope
        query_table = store["embedding.query"]
        doc_table = store["embedding.doc"]

        query_ids = self._substitute(batch.query_ids, train, rng)
        query_embeddings = de.embedding_lookup(query_table, query_ids)
        if config.use_q_gat:
            query_embeddings = gat_aggregate(
                query_embeddings,
                de.embedding_lookup(query_table, neighborhoods.query_slots),
                self._attention("query"),
                config.gat
            )
        query_embeddings = de.dropout(
            query_embeddings, config.dropout, train, rng
        )
        query_states = encode_queries(
            query_embeddings, batch.query_mask, self.query_gru
        )
        rows = np.arange(batch.size)[:, None]
        impression_query_states = query_states[rows, batch.query_index]
        impression_queries = query_embeddings[rows, batch.query_index]

        doc_ids = self._substitute(batch.doc_ids, train, rng)
        doc_embeddings = de.embedding_lookup(doc_table, doc_ids)
        if config.use_d_gat:
            doc_embeddings = gat_aggregate(
                doc_embeddings,
                de.embedding_lookup(doc_table, neighborhoods.doc_slots),
                self._attention("doc"),
                config.gat
            )
        doc_embeddings = de.dropout(doc_embeddings, config.dropout, train, rng)
        verticals = de.embedding_lookup(
            store["embedding.vertical"], batch.verticals
        )
        previous_clicks = de.embedding_lookup(
            store["embedding.click"], batch.previous_clicks
        )
        positions = de.embedding_lookup(
            store["embedding.position"], batch.positions
        )
        doc_states = encode_documents(
            de.concat(
                [doc_embeddings, verticals, previous_clicks, positions],
                axis=-1
            ),
            batch.mask,
            self.doc_gru,
            reset=batch.query_start
            if config.reset_doc_state_per_query else None
        )

        if config.use_neighbor_interaction:
            node_embeddings = de.embedding_lookup(
                doc_table, neighborhoods.doc_nodes[:, None]
            )
            if config.use_d_gat:
                node_embeddings = gat_aggregate(
                    node_embeddings,
                    de.embedding_lookup(
                        doc_table, neighborhoods.doc_node_table[:, None, :]
                    ),
                    self._attention("doc"),
                    config.gat
                )
            node_embeddings = de.reshape(
                node_embeddings, (len(neighborhoods.doc_nodes), -1)
            )
            interaction_states = neighbor_interaction(
                impression_queries,
                node_embeddings[neighborhoods.doc_slot_nodes],
                store["interaction.weight"]
            )
        else:
            interaction_states = de.constant(
                np.zeros(batch.mask.shape + (config.doc_dim,)),
                dtype=store.dtype
            )

        attract = attractiveness(
            impression_query_states,
            doc_states,
            interaction_states,
            self.attract_mlp,
            slope,
            config.dropout,
            train,
            rng
        )
        exam, exam_states = examination(
            de.concat([positions, verticals, previous_clicks], axis=-1),
            batch.mask,
            self.exam_gru,
            store["examination.weight"],
            store["examination.bias"]
        )
        click = combine(
            exam, attract, config.combination, self.combination, slope
        )
        mask = batch.mask
        return ForwardOutputs(
            attractiveness=attract.value * mask,
            examination=exam.value * mask,
            click_probability=click.value * mask,
            mask=mask,
            hidden={
                "query": impression_query_states.value,
                "doc": doc_states.value,
                "interaction": interaction_states.value,
                "examination": exam_states.value,
            },
            click_tensor=click,
            rank_by=config.rank_by,
        )

    def objective(
        self,
        outputs: ForwardOutputs,
        batch: SessionBatch,
        l2: float = 0.0
    ) -> Tensor:
        """Training objective of a forward pass."""
        return loss(outputs.click_tensor, batch.clicks, batch.mask, l2,
                    self.store)

    def train_step(
        self,
        batch: SessionBatch,
        neighborhoods: Neighborhoods,
        lr: float,
        l2: float,
        rng: np.random.Generator
    ) -> float:
        """Run one Adam step on a batch and return its BCE.

        The L2 term is applied by the optimizer as a gradient addition.
        """
        self.store.zero_grad()
        outputs = self.forward(batch, neighborhoods, train=True, rng=rng)
        objective = self.objective(outputs, batch)
        objective.backward()
        de.adam_step(self.store, lr=lr, weight_decay=l2)
        return objective.item()

    def combination_parameters(self) -> Dict[str, float]:
        """Learned alpha and beta of an EXPMUL or LINEAR model.

        Raises:
            UnsupportedCombination: for MUL and NONLINEAR models.
        """
        if self.config.combination not in (
                CombinationKind.EXPMUL, CombinationKind.LINEAR):
            raise UnsupportedCombination(
                f"The {self.config.combination.value} combination has no "
                f"alpha and beta"
            )
        return {
            "alpha": float(self.store["combination.alpha"].value),
            "beta": float(self.store["combination.beta"].value),
        }
