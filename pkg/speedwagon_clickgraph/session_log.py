"""Web search session logs.

Reading, validating, splitting and characterizing session logs in the
canonical JSON-lines format::

    {"sid": "s1", "queries": [{"qid": "q1", "docs": [
        {"did": "d1", "pos": 1, "vert": "organic", "click": 1}]}]}

Raw query, document and vertical tokens are mapped to dense indices by a
:class:`Vocabulary`. Index 0 is reserved for ``UNKNOWN`` and is never
assigned to a token.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from typing import (
    Any,
    Dict,
    FrozenSet,
    Iterable,
    Iterator,
    List,
    Mapping,
    Optional,
    Set,
    Tuple,
)

import numpy as np

from speedwagon_clickgraph.exceptions import (
    LogFormatError,
    LogLineProblem,
    SplitError,
)

__all__ = [
    "UNKNOWN_INDEX",
    "ImpressionRecord",
    "QueryRecord",
    "Session",
    "Vocabulary",
    "LogVocabularies",
    "DatasetSplit",
    "ColdStartPartition",
    "LogStatistics",
    "parse_log",
    "serialize_log",
    "split_dataset",
    "hold_out_queries",
    "partition_cold_start",
    "sparsity_ratio",
    "describe_log",
    "read_relevance",
    "write_split",
    "load_split",
]

logger = logging.getLogger(__name__)

UNKNOWN_INDEX = 0
SHARED_VERTICAL = "-"
MINIMUM_SPLIT_SESSIONS = 10
SPLIT_FILE_NAMES = ("train.jsonl", "valid.jsonl", "test.jsonl")

_SESSION_FIELDS = frozenset({"sid", "queries"})
_QUERY_FIELDS = frozenset({"qid", "docs"})
_DOC_FIELDS = frozenset({"did", "pos", "vert", "click"})
_DOC_FIELDS_NO_VERTICAL = frozenset({"did", "pos", "click"})


@dataclasses.dataclass(frozen=True)
class ImpressionRecord:
    """One document shown on a result page."""

    doc_id: int
    position: int
    vertical_type: int
    click: bool


@dataclasses.dataclass(frozen=True)
class QueryRecord:
    """A query and the ranked list of documents returned for it."""

    query_id: int
    impressions: Tuple[ImpressionRecord, ...]

    def __post_init__(self) -> None:
        if not self.impressions:
            raise ValueError("A query record requires at least one document")
        positions = [impression.position for impression in self.impressions]
        if positions != list(range(1, len(positions) + 1)):
            raise ValueError(
                f"Positions {positions} are not ranks 1..{len(positions)} "
                f"in ascending order"
            )

    @property
    def clicks(self) -> List[bool]:
        """Click flags in rank order."""
        return [impression.click for impression in self.impressions]

    @property
    def doc_ids(self) -> List[int]:
        """Document ids in rank order."""
        return [impression.doc_id for impression in self.impressions]


@dataclasses.dataclass(frozen=True)
class Session:
    """Sequence of queries issued by one user, in issue order."""

    session_id: str
    queries: Tuple[QueryRecord, ...]

    def __post_init__(self) -> None:
        if not self.queries:
            raise ValueError(
                f"Session {self.session_id} does not contain any queries"
            )

    def impressions(self) -> Iterator[Tuple[int, ImpressionRecord]]:
        """Iterate (query index, impression) in session order."""
        for query_index, query in enumerate(self.queries):
            for impression in query.impressions:
                yield query_index, impression

    @property
    def impression_count(self) -> int:
        """Number of documents shown during the session."""
        return sum(len(query.impressions) for query in self.queries)


class Vocabulary:
    """Bijection between raw tokens and dense indices starting at 1."""

    def __init__(self, tokens: Iterable[str] = ()) -> None:
        """Create a vocabulary, optionally pre-populated in order."""
        self._forward: Dict[str, int] = {}
        self._reverse: List[str] = []
        for token in tokens:
            self.add(token)

    def add(self, token: str) -> int:
        """Get the index for token, assigning the next one if new."""
        index = self._forward.get(token)
        if index is None:
            self._reverse.append(token)
            index = len(self._reverse)
            self._forward[token] = index
        return index

    def lookup(self, token: str) -> int:
        """Get the index for token or UNKNOWN_INDEX."""
        return self._forward.get(token, UNKNOWN_INDEX)

    def token(self, index: int) -> str:
        """Get the raw token of an index.

        Raises:
            KeyError: for UNKNOWN_INDEX and indices never assigned.
        """
        if index <= UNKNOWN_INDEX or index > len(self._reverse):
            raise KeyError(index)
        return self._reverse[index - 1]

    def __contains__(self, token: object) -> bool:
        return token in self._forward

    def __len__(self) -> int:
        return len(self._reverse)

    @property
    def size(self) -> int:
        """Number of embedding rows needed, UNKNOWN row included."""
        return len(self._reverse) + 1

    def as_dict(self) -> Dict[str, int]:
        """Copy of the forward map."""
        return dict(self._forward)


@dataclasses.dataclass
class LogVocabularies:
    """Vocabularies shared by every file of one dataset."""

    queries: Vocabulary = dataclasses.field(default_factory=Vocabulary)
    documents: Vocabulary = dataclasses.field(default_factory=Vocabulary)
    verticals: Vocabulary = dataclasses.field(default_factory=Vocabulary)


@dataclasses.dataclass(frozen=True)
class DatasetSplit:
    """Training, validation and test sessions."""

    train: Tuple[Session, ...]
    valid: Tuple[Session, ...]
    test: Tuple[Session, ...]
    ratios: Tuple[int, int, int] = (8, 1, 1)
    seed: Optional[int] = None
    held_out_queries: FrozenSet[int] = frozenset()

    @property
    def sizes(self) -> Tuple[int, int, int]:
        """Number of sessions in each partition."""
        return len(self.train), len(self.valid), len(self.test)


@dataclasses.dataclass(frozen=True)
class ColdStartPartition:
    """The test set divided by how much of it was seen during training."""

    cold_q: Tuple[Session, ...]
    cold_d: Tuple[Session, ...]
    cold_qd: Tuple[Session, ...]
    warm_qd: Tuple[Session, ...]

    LABELS = ("Cold Q", "Cold D", "Cold QD", "Warm QD")

    def items(self) -> List[Tuple[str, Tuple[Session, ...]]]:
        """Label and sessions for each of the four sets."""
        return list(
            zip(
                self.LABELS,
                (self.cold_q, self.cold_d, self.cold_qd, self.warm_qd)
            )
        )


@dataclasses.dataclass(frozen=True)
class LogStatistics:
    """Descriptive statistics of a list of sessions."""

    sessions: int
    queries: int
    impressions: int
    clicks: int
    distinct_queries: int
    distinct_documents: int
    max_list_length: int
    click_rate_by_rank: Tuple[float, ...]


class _LineRejected(Exception):
    """Internal signal for a rejected line."""


def _require_fields(
    record: Any,
    expected: Iterable[FrozenSet[str]],
    what: str
) -> Mapping[str, Any]:
    if not isinstance(record, dict):
        raise _LineRejected(f"{what} is not a JSON object")
    keys = frozenset(record.keys())
    if keys not in expected:
        raise _LineRejected(
            f"{what} has fields {sorted(keys)}; unknown field count"
        )
    return record


def _read_click(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, int) and value in (0, 1):
        return bool(value)
    raise _LineRejected(f"click must be 0 or 1, got {value!r}")


def _read_token(value: Any, what: str) -> str:
    if not isinstance(value, str):
        raise _LineRejected(f"{what} must be a string, got {value!r}")
    return value


def _read_position(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise _LineRejected(f"position must be an integer, got {value!r}")
    if value < 1:
        raise _LineRejected(f"position must be 1 or greater, got {value}")
    return value


RawDoc = Tuple[str, int, str, bool]
RawQuery = Tuple[str, List[RawDoc]]


def _validate_session(record: Any) -> Tuple[str, List[RawQuery]]:
    session = _require_fields(record, [_SESSION_FIELDS], "session")
    session_id = _read_token(session["sid"], "sid")
    if not isinstance(session["queries"], list):
        raise _LineRejected("queries must be a list")
    queries: List[RawQuery] = []
    for query_number, raw_query in enumerate(session["queries"], start=1):
        query = _require_fields(
            raw_query, [_QUERY_FIELDS], f"query {query_number}"
        )
        if not isinstance(query["docs"], list) or not query["docs"]:
            raise _LineRejected(
                f"query {query_number} requires a nonempty docs list"
            )
        docs: List[RawDoc] = []
        for raw_doc in query["docs"]:
            doc = _require_fields(
                raw_doc,
                [_DOC_FIELDS, _DOC_FIELDS_NO_VERTICAL],
                f"document of query {query_number}"
            )
            docs.append(
                (
                    _read_token(doc["did"], "did"),
                    _read_position(doc["pos"]),
                    _read_token(doc.get("vert", SHARED_VERTICAL), "vert"),
                    _read_click(doc["click"]),
                )
            )
        positions = sorted(doc[1] for doc in docs)
        if len(set(positions)) != len(positions):
            raise _LineRejected(
                f"query {query_number} has duplicate positions {positions}"
            )
        if positions != list(range(1, len(positions) + 1)):
            raise _LineRejected(
                f"query {query_number} positions {positions} are not "
                f"ranks 1..{len(positions)}"
            )
        queries.append(
            (
                _read_token(query["qid"], "qid"),
                sorted(docs, key=lambda d: d[1]),
            )
        )
    return session_id, queries


def parse_log(
    stream: Iterable[str],
    vocabularies: Optional[LogVocabularies] = None,
    strict: bool = True,
) -> List[Session]:
    """Parse a canonical session log.

    Dense indices are assigned in order of first appearance, only for
    records that are accepted.

    Args:
        stream: Newline delimited records, one session per line.
        vocabularies: Vocabularies to extend. New ones are created if None.
        strict: Raise LogFormatError for malformed lines. When False the
            malformed lines are logged and skipped.

    Returns:
        Sessions in the order read.

    Raises:
        LogFormatError: if strict and any line was rejected.
    """
    vocabularies = vocabularies if vocabularies is not None \
        else LogVocabularies()
    problems: List[LogLineProblem] = []
    sessions: List[Session] = []
    seen_session_ids: Set[str] = set()

    for line_number, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            session_id, raw_queries = _validate_session(record)
            if session_id in seen_session_ids:
                raise _LineRejected(f"duplicate session id {session_id}")
        except json.JSONDecodeError as error:
            problems.append(
                LogLineProblem(line_number, f"invalid JSON: {error.msg}")
            )
            continue
        except _LineRejected as error:
            problems.append(LogLineProblem(line_number, str(error)))
            continue

        if not raw_queries:
            logger.warning(
                "Dropping empty session %s on line %d",
                session_id,
                line_number
            )
            continue
        seen_session_ids.add(session_id)
        queries = []
        for raw_query_id, docs in raw_queries:
            impressions = tuple(
                ImpressionRecord(
                    doc_id=vocabularies.documents.add(doc_token),
                    position=position,
                    vertical_type=vocabularies.verticals.add(vertical),
                    click=click,
                )
                for doc_token, position, vertical, click in docs
            )
            queries.append(
                QueryRecord(
                    query_id=vocabularies.queries.add(raw_query_id),
                    impressions=impressions,
                )
            )
        sessions.append(Session(session_id=session_id, queries=tuple(queries)))

    if problems:
        if strict:
            raise LogFormatError(problems)
        for problem in problems:
            logger.warning("Skipped %s", problem)
    return sessions


def serialize_log(
    sessions: Iterable[Session],
    vocabularies: LogVocabularies
) -> Iterator[str]:
    """Write sessions back to the canonical format, one line per session."""
    for session in sessions:
        record = {
            "sid": session.session_id,
            "queries": [
                {
                    "qid": vocabularies.queries.token(query.query_id),
                    "docs": [
                        {
                            "did": vocabularies.documents.token(
                                impression.doc_id
                            ),
                            "pos": impression.position,
                            "vert": vocabularies.verticals.token(
                                impression.vertical_type
                            ),
                            "click": int(impression.click),
                        }
                        for impression in query.impressions
                    ],
                }
                for query in session.queries
            ],
        }
        yield json.dumps(record)


def split_dataset(
    sessions: List[Session],
    ratios: Tuple[int, int, int] = (8, 1, 1),
    seed: int = 0,
) -> DatasetSplit:
    """Split sessions into training, validation and test sets.

    Sessions are never divided. The split is a deterministic function of
    the input order and seed.

    Raises:
        SplitError: if any partition would end up empty.
        ValueError: for negative or all-zero ratios.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) == 0:
        raise ValueError(f"Invalid split ratios {ratios}")
    partitions = sum(1 for r in ratios if r > 0)
    total = len(sessions)
    if total < max(partitions, MINIMUM_SPLIT_SESSIONS):
        raise SplitError(
            f"Unable to split {total} session(s) into {partitions} "
            f"partitions; at least {MINIMUM_SPLIT_SESSIONS} are required"
        )
    weight = sum(ratios)
    valid_count = int(math.floor(total * ratios[1] / weight + 0.5))
    test_count = int(math.floor(total * ratios[2] / weight + 0.5))
    train_count = total - valid_count - test_count
    for name, ratio, count in zip(
            ("train", "valid", "test"),
            ratios,
            (train_count, valid_count, test_count)):
        if ratio > 0 and count < 1:
            raise SplitError(
                f"{total} session(s) leave the {name} partition empty"
            )

    order = np.random.default_rng(seed).permutation(total)
    shuffled = [sessions[i] for i in order]
    split = DatasetSplit(
        train=tuple(shuffled[:train_count]),
        valid=tuple(shuffled[train_count:train_count + valid_count]),
        test=tuple(shuffled[train_count + valid_count:]),
        ratios=(int(ratios[0]), int(ratios[1]), int(ratios[2])),
        seed=seed,
    )
    logger.info(
        "Split %d sessions into %d/%d/%d", total, *split.sizes
    )
    return split


def _query_ids(sessions: Iterable[Session]) -> Set[int]:
    return {
        query.query_id for session in sessions for query in session.queries
    }


def _doc_ids(sessions: Iterable[Session]) -> Set[int]:
    return {
        impression.doc_id
        for session in sessions
        for _, impression in session.impressions()
    }


def hold_out_queries(
    split: DatasetSplit,
    fraction: float,
    seed: int = 0
) -> DatasetSplit:
    """Make a fraction of the test queries unseen during training.

    Every training or validation session containing one of the chosen
    queries is removed.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be within [0, 1], got {fraction}")
    candidates = sorted(_query_ids(split.test))
    count = int(math.ceil(fraction * len(candidates)))
    rng = np.random.default_rng(seed)
    chosen = frozenset(
        int(q) for q in rng.choice(candidates, size=count, replace=False)
    ) if count else frozenset()

    def keep(session: Session) -> bool:
        return not any(query.query_id in chosen for query in session.queries)

    train = tuple(filter(keep, split.train))
    valid = tuple(filter(keep, split.valid))
    if not train:
        raise SplitError("Holding out queries removed every training session")
    logger.info(
        "Held out %d test queries; removed %d training and %d validation "
        "sessions",
        len(chosen),
        len(split.train) - len(train),
        len(split.valid) - len(valid)
    )
    return dataclasses.replace(
        split,
        train=train,
        valid=valid,
        held_out_queries=split.held_out_queries | chosen
    )


def partition_cold_start(split: DatasetSplit) -> ColdStartPartition:
    """Divide the test set into Cold Q, Cold D, Cold QD and Warm QD sets."""
    warm_queries = _query_ids(split.train)
    warm_docs = _doc_ids(split.train)
    groups: Dict[Tuple[bool, bool], List[Session]] = {
        (True, False): [],
        (False, True): [],
        (True, True): [],
        (False, False): [],
    }
    for session in split.test:
        has_cold_query = any(
            query.query_id not in warm_queries for query in session.queries
        )
        has_cold_doc = any(
            impression.doc_id not in warm_docs
            for _, impression in session.impressions()
        )
        groups[(has_cold_query, has_cold_doc)].append(session)
    return ColdStartPartition(
        cold_q=tuple(groups[(True, False)]),
        cold_d=tuple(groups[(False, True)]),
        cold_qd=tuple(groups[(True, True)]),
        warm_qd=tuple(groups[(False, False)]),
    )


def sparsity_ratio(train: Iterable[Session]) -> float:
    """Fraction of possible query-document pairs never shown together.

    Raises:
        ValueError: if there are no queries or documents.
    """
    pairs: Set[Tuple[int, int]] = set()
    queries: Set[int] = set()
    docs: Set[int] = set()
    for session in train:
        for query in session.queries:
            queries.add(query.query_id)
            for impression in query.impressions:
                docs.add(impression.doc_id)
                pairs.add((query.query_id, impression.doc_id))
    if not queries or not docs:
        raise ValueError("Sparsity is undefined without queries and documents")
    return 1.0 - len(pairs) / (len(queries) * len(docs))


def describe_log(sessions: Iterable[Session]) -> LogStatistics:
    """Count sessions, queries, impressions and clicks."""
    session_count = query_count = impression_count = click_count = 0
    max_length = 0
    shown: Dict[int, int] = {}
    clicked: Dict[int, int] = {}
    queries: Set[int] = set()
    docs: Set[int] = set()
    for session in sessions:
        session_count += 1
        for query in session.queries:
            query_count += 1
            queries.add(query.query_id)
            max_length = max(max_length, len(query.impressions))
            for impression in query.impressions:
                impression_count += 1
                docs.add(impression.doc_id)
                shown[impression.position] = \
                    shown.get(impression.position, 0) + 1
                if impression.click:
                    click_count += 1
                    clicked[impression.position] = \
                        clicked.get(impression.position, 0) + 1
    return LogStatistics(
        sessions=session_count,
        queries=query_count,
        impressions=impression_count,
        clicks=click_count,
        distinct_queries=len(queries),
        distinct_documents=len(docs),
        max_list_length=max_length,
        click_rate_by_rank=tuple(
            clicked.get(rank, 0) / shown[rank]
            for rank in range(1, max_length + 1)
            if shown.get(rank)
        ),
    )


def read_relevance(
    stream: Iterable[str],
    vocabularies: LogVocabularies
) -> Dict[Tuple[int, int], int]:
    """Read ``qid<TAB>did<TAB>grade`` relevance annotations.

    Pairs referring to tokens absent from the vocabularies are skipped.

    Raises:
        LogFormatError: for lines that are not three fields or whose grade
            is not an integer within 0..4.
    """
    grades: Dict[Tuple[int, int], int] = {}
    problems: List[LogLineProblem] = []
    skipped = 0
    for line_number, line in enumerate(stream, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            problems.append(
                LogLineProblem(line_number, f"expected 3 fields, got "
                                            f"{len(fields)}")
            )
            continue
        query_token, doc_token, grade_text = fields
        try:
            grade = int(grade_text)
        except ValueError:
            problems.append(
                LogLineProblem(line_number, f"grade {grade_text!r} is not "
                                            f"an integer")
            )
            continue
        if not 0 <= grade <= 4:
            problems.append(
                LogLineProblem(line_number, f"grade {grade} outside 0..4")
            )
            continue
        query_id = vocabularies.queries.lookup(query_token)
        doc_id = vocabularies.documents.lookup(doc_token)
        if UNKNOWN_INDEX in (query_id, doc_id):
            skipped += 1
            continue
        grades[(query_id, doc_id)] = grade
    if problems:
        raise LogFormatError(problems)
    if skipped:
        logger.warning(
            "Skipped %d relevance annotation(s) for unknown ids", skipped
        )
    return grades


def write_split(
    split: DatasetSplit,
    vocabularies: LogVocabularies,
    directory: str
) -> List[str]:
    """Write the three partitions as canonical logs in a directory."""
    os.makedirs(directory, exist_ok=True)
    written = []
    for file_name, sessions in zip(
            SPLIT_FILE_NAMES, (split.train, split.valid, split.test)):
        path = os.path.join(directory, file_name)
        with open(path, "w", encoding="utf-8") as write_file:
            for line in serialize_log(sessions, vocabularies):
                write_file.write(line + "\n")
        written.append(path)
    return written


def load_split(directory: str) -> Tuple[DatasetSplit, LogVocabularies]:
    """Read a split written by :func:`write_split`.

    The files are read in train, valid, test order with one shared set of
    vocabularies, so indices are reproducible across runs.
    """
    vocabularies = LogVocabularies()
    partitions = []
    for file_name in SPLIT_FILE_NAMES:
        path = os.path.join(directory, file_name)
        with open(path, "r", encoding="utf-8") as read_file:
            partitions.append(tuple(parse_log(read_file, vocabularies)))
    train, valid, test = partitions
    return DatasetSplit(train=train, valid=valid, test=test), vocabularies
