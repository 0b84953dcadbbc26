"""Synthetic session logs sampled from known click models."""
from __future__ import annotations

import dataclasses
import enum
import json
import logging
from typing import Any, Dict, List, Optional, Sequence, TextIO, Tuple

import numpy as np
import yaml

from speedwagon_clickgraph.session_log import (
    LogVocabularies,
    Session,
    parse_log,
)

__all__ = [
    "GeneratorKind",
    "GeneratorSettings",
    "GroundTruth",
    "SyntheticLog",
    "generate_synthetic",
    "write_ground_truth",
]

logger = logging.getLogger(__name__)


class GeneratorKind(enum.Enum):
    PBM = "PBM"
    UBM = "UBM"
    SDBN = "SDBN"
    GRAPH_PLANTED = "GRAPH_PLANTED"


@dataclasses.dataclass(frozen=True)
class GeneratorSettings:
    """What to generate.

    ``docs_per_query`` is the size of each query's candidate pool; result
    pages show ``serp_size`` of them in random order. ``gamma`` defaults to
    examination falling linearly from 0.95 to 0.2 over the ranks.
    GRAPH_PLANTED logs assign queries and documents to ``topics`` latent
    topics, keep sessions on one topic and add ``boost`` to the
    attractiveness of same-topic documents.
    """

    kind: GeneratorKind = GeneratorKind.PBM
    sessions: int = 1000
    n_queries: int = 50
    n_docs: int = 500
    n_verticals: int = 1
    serp_size: int = 4
    docs_per_query: Optional[int] = None
    queries_per_session: Tuple[int, int] = (1, 1)
    gamma: Optional[Tuple[float, ...]] = None
    alpha_range: Tuple[float, float] = (0.05, 0.9)
    satisfaction_range: Tuple[float, float] = (0.2, 0.8)
    topics: int = 5
    boost: float = 0.6
    off_topic_share: float = 0.25
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sessions < 1:
            raise ValueError("sessions must be 1 or greater")
        if self.serp_size < 1 or self.serp_size > self.n_docs:
            raise ValueError("serp_size must be within 1..n_docs")
        if self.pool_size < self.serp_size:
            raise ValueError("docs_per_query must be at least serp_size")
        low, high = self.queries_per_session
        if low < 1 or high < low:
            raise ValueError(f"Invalid queries_per_session {low}..{high}")
        if self.gamma is not None and len(self.gamma) != self.serp_size:
            raise ValueError("gamma needs one value per rank")
        for value in (self.gamma or ()) + self.alpha_range \
                + self.satisfaction_range:
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"Probability {value} outside [0, 1]")
        if self.kind is GeneratorKind.GRAPH_PLANTED and self.topics < 1:
            raise ValueError("GRAPH_PLANTED needs at least one topic")

    @property
    def pool_size(self) -> int:
        return self.docs_per_query or self.serp_size

    def examination(self) -> np.ndarray:
        if self.gamma is not None:
            return np.asarray(self.gamma, dtype=np.float64)
        return np.linspace(0.95, 0.2, self.serp_size)

    def to_dict(self) -> Dict[str, Any]:
        values = dataclasses.asdict(self)
        values["kind"] = self.kind.value
        values["queries_per_session"] = list(self.queries_per_session)
        values["alpha_range"] = list(self.alpha_range)
        values["satisfaction_range"] = list(self.satisfaction_range)
        if self.gamma is not None:
            values["gamma"] = list(self.gamma)
        return values


@dataclasses.dataclass
class GroundTruth:
    """Parameters the log was sampled from, keyed by raw tokens."""

    kind: GeneratorKind
    gamma: np.ndarray
    alpha: Dict[Tuple[str, str], float]
    satisfaction: Dict[Tuple[str, str], float] = dataclasses.field(
        default_factory=dict
    )
    query_topics: Dict[str, int] = dataclasses.field(default_factory=dict)
    doc_topics: Dict[str, int] = dataclasses.field(default_factory=dict)

    def click_probabilities(
        self,
        query_token: str,
        doc_tokens: Sequence[str],
        clicks: Sequence[bool]
    ) -> np.ndarray:
        """Generator click probability of each rank given earlier clicks."""
        probabilities = []
        last_click = 0
        examination = 1.0
        for rank, (doc, clicked) in enumerate(zip(doc_tokens, clicks),
                                              start=1):
            alpha = self.alpha[(query_token, doc)]
            if self.kind is GeneratorKind.UBM:
                probabilities.append(self.gamma[rank - 1, last_click] * alpha)
            elif self.kind is GeneratorKind.SDBN:
                probabilities.append(examination * alpha)
                if clicked:
                    examination = 1.0 - self.satisfaction[(query_token, doc)]
                else:
                    examination = examination * (1.0 - alpha) / max(
                        1.0 - examination * alpha, 1e-12
                    )
            else:
                probabilities.append(self.gamma[rank - 1] * alpha)
            if clicked:
                last_click = rank
        return np.asarray(probabilities)

    def to_dict(self) -> Dict[str, Any]:
        def pairs(values: Dict[Tuple[str, str], float]) -> Dict[str, float]:
            return {f"{q} {d}": float(v) for (q, d), v in sorted(
                values.items())}

        data: Dict[str, Any] = {
            "kind": self.kind.value,
            "gamma": self.gamma.tolist(),
            "alpha": pairs(self.alpha),
        }
        if self.satisfaction:
            data["satisfaction"] = pairs(self.satisfaction)
        if self.query_topics:
            data["query_topics"] = dict(sorted(self.query_topics.items()))
            data["doc_topics"] = dict(sorted(self.doc_topics.items()))
        return data


@dataclasses.dataclass
class SyntheticLog:
    lines: List[str]
    sessions: List[Session]
    vocabularies: LogVocabularies
    ground_truth: GroundTruth
    generator: GeneratorSettings

    def true_click_probabilities(self, session: Session) -> np.ndarray:
        """Generator click probabilities of every impression of a session."""
        queries = self.vocabularies.queries
        documents = self.vocabularies.documents
        values = []
        for query in session.queries:
            values.append(
                self.ground_truth.click_probabilities(
                    queries.token(query.query_id),
                    [documents.token(doc) for doc in query.doc_ids],
                    query.clicks
                )
            )
        return np.concatenate(values)


def _ubm_examination(serp_size: int) -> np.ndarray:
    gamma = np.zeros((serp_size, serp_size + 1))
    for rank in range(1, serp_size + 1):
        for previous in range(rank):
            gamma[rank - 1, previous] = 0.95 * 0.7 ** (rank - previous - 1)
    return gamma


class _Sampler:
    def __init__(self, generator: GeneratorSettings) -> None:
        self.generator = generator
        self.rng = np.random.default_rng(generator.seed)
        self.query_topics: Dict[int, int] = {}
        self.doc_topics: Dict[int, int] = {}
        self.pools = self._candidate_pools()
        self.alpha: Dict[Tuple[int, int], float] = {}
        self.satisfaction: Dict[Tuple[int, int], float] = {}
        self.verticals = self.rng.integers(
            0, generator.n_verticals, size=generator.n_docs
        )
        if generator.kind is GeneratorKind.UBM:
            self.gamma = _ubm_examination(generator.serp_size)
        else:
            self.gamma = generator.examination()

    def _candidate_pools(self) -> List[np.ndarray]:
        generator = self.generator
        if generator.kind is not GeneratorKind.GRAPH_PLANTED:
            return [
                self.rng.choice(generator.n_docs, size=generator.pool_size,
                                replace=False)
                for _ in range(generator.n_queries)
            ]
        doc_topics = self.rng.integers(
            0, generator.topics, size=generator.n_docs
        )
        query_topics = self.rng.integers(
            0, generator.topics, size=generator.n_queries
        )
        self.doc_topics = dict(enumerate(doc_topics.tolist()))
        self.query_topics = dict(enumerate(query_topics.tolist()))
        pools = []
        off_topic = int(round(generator.pool_size * generator.off_topic_share))
        for topic in query_topics:
            inside = np.flatnonzero(doc_topics == topic)
            outside = np.flatnonzero(doc_topics != topic)
            out_count = min(off_topic, outside.size)
            in_count = min(generator.pool_size - out_count, inside.size)
            out_count = generator.pool_size - in_count
            chosen = list(self.rng.choice(inside, size=in_count,
                                          replace=False))
            chosen += list(
                self.rng.choice(outside, size=out_count, replace=False)
            )
            pools.append(np.asarray(chosen))
        return pools

    def pair_alpha(self, query: int, doc: int) -> float:
        key = (query, doc)
        if key not in self.alpha:
            low, high = self.generator.alpha_range
            value = float(self.rng.uniform(low, high))
            if self.generator.kind is GeneratorKind.GRAPH_PLANTED:
                value = low + (value - low) * 0.3
                if self.query_topics[query] == self.doc_topics[doc]:
                    value = min(value + self.generator.boost, 0.95)
            self.alpha[key] = value
            low, high = self.generator.satisfaction_range
            self.satisfaction[key] = float(self.rng.uniform(low, high))
        return self.alpha[key]

    def session_queries(self) -> List[int]:
        low, high = self.generator.queries_per_session
        count = int(self.rng.integers(low, high + 1))
        if self.generator.kind is not GeneratorKind.GRAPH_PLANTED:
            return self.rng.integers(0, self.generator.n_queries,
                                     size=count).tolist()
        topic = int(self.rng.integers(0, self.generator.topics))
        members = [q for q, t in self.query_topics.items() if t == topic]
        if not members:
            members = list(self.query_topics)
        return self.rng.choice(
            members, size=count, replace=count > len(members)
        ).tolist()

    def clicks(self, query: int, docs: Sequence[int]) -> List[int]:
        kind = self.generator.kind
        clicks: List[int] = []
        last_click = 0
        examined = True
        for rank, doc in enumerate(docs, start=1):
            alpha = self.pair_alpha(query, doc)
            if kind is GeneratorKind.SDBN:
                clicked = examined and self.rng.random() < alpha
                if clicked and self.rng.random() < self.satisfaction[
                        (query, doc)]:
                    examined = False
            else:
                gamma = self.gamma[rank - 1, last_click] \
                    if kind is GeneratorKind.UBM else self.gamma[rank - 1]
                clicked = self.rng.random() < gamma * alpha
            if clicked:
                last_click = rank
            clicks.append(int(clicked))
        return clicks

    def session(self, number: int) -> Dict[str, Any]:
        queries = []
        for query in self.session_queries():
            docs = self.rng.choice(
                self.pools[query], size=self.generator.serp_size, replace=False
            ).tolist()
            clicks = self.clicks(query, docs)
            queries.append(
                {
                    "qid": f"q{query}",
                    "docs": [
                        {
                            "did": f"d{doc}",
                            "pos": rank,
                            "vert": f"v{self.verticals[doc]}",
                            "click": click,
                        }
                        for rank, (doc, click) in enumerate(
                            zip(docs, clicks), start=1)
                    ],
                }
            )
        return {"sid": f"s{number}", "queries": queries}

    def ground_truth(self) -> GroundTruth:
        def named(values: Dict[Tuple[int, int], float]
                  ) -> Dict[Tuple[str, str], float]:
            return {(f"q{q}", f"d{d}"): v for (q, d), v in values.items()}

        return GroundTruth(
            kind=self.generator.kind,
            gamma=np.asarray(self.gamma),
            alpha=named(self.alpha),
            satisfaction=named(self.satisfaction)
            if self.generator.kind is GeneratorKind.SDBN else {},
            query_topics={f"q{q}": t for q, t in self.query_topics.items()},
            doc_topics={f"d{d}": t for d, t in self.doc_topics.items()},
        )


def generate_synthetic(generator: GeneratorSettings) -> SyntheticLog:
    """Sample a log exactly from the named click process.

    The same generator always gives the same log.
    """
    sampler = _Sampler(generator)
    lines = [
        json.dumps(sampler.session(number))
        for number in range(generator.sessions)
    ]
    vocabularies = LogVocabularies()
    sessions = parse_log(lines, vocabularies)
    logger.info(
        "Generated %d %s sessions", len(sessions), generator.kind.value
    )
    return SyntheticLog(
        lines=lines,
        sessions=sessions,
        vocabularies=vocabularies,
        ground_truth=sampler.ground_truth(),
        generator=generator,
    )


def write_ground_truth(log: SyntheticLog, stream: TextIO) -> None:
    """Write the generator settings and parameters as YAML."""
    yaml.safe_dump(
        {
            "generator": log.generator.to_dict(),
            "ground_truth": log.ground_truth.to_dict(),
        },
        stream,
        sort_keys=True
    )
