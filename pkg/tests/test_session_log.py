import io
import os
import json

import numpy as np
import pytest

from speedwagon_clickgraph import session_log
from speedwagon_clickgraph.exceptions import LogFormatError, SplitError


@pytest.fixture
def many_sessions(make_line):
    lines = [
        make_line(
            f"s{number}",
            [(f"q{number % 7}", [(f"d{number % 11}", number % 2),
                                 (f"d{number % 5 + 20}", 0)])]
        )
        for number in range(100)
    ]
    vocabularies = session_log.LogVocabularies()
    return session_log.parse_log(lines, vocabularies), vocabularies


class TestParseLog:
    def test_ids_follow_first_appearance(self, tiny_sessions):
        sessions, vocabularies = tiny_sessions
        assert len(sessions) == 3
        assert vocabularies.queries.lookup("q1") == 1
        assert vocabularies.queries.lookup("q3") == 3
        assert vocabularies.documents.lookup("d5") == 5
        assert sessions[0].queries[1].doc_ids == [2, 4, 1]

    def test_unknown_index_is_never_assigned(self, tiny_sessions):
        _, vocabularies = tiny_sessions
        assert vocabularies.documents.lookup("never seen") == \
            session_log.UNKNOWN_INDEX
        with pytest.raises(KeyError):
            vocabularies.documents.token(session_log.UNKNOWN_INDEX)

    def test_clicks_and_positions(self, tiny_sessions):
        sessions, _ = tiny_sessions
        query = sessions[2].queries[0]
        assert query.clicks == [False, True, True]
        assert [i.position for i in query.impressions] == [1, 2, 3]

    def test_documents_are_sorted_by_position(self):
        line = json.dumps({
            "sid": "s1",
            "queries": [{"qid": "q", "docs": [
                {"did": "b", "pos": 2, "vert": "x", "click": 0},
                {"did": "a", "pos": 1, "vert": "x", "click": 1},
            ]}]
        })
        vocabularies = session_log.LogVocabularies()
        sessions = session_log.parse_log([line], vocabularies)
        first = sessions[0].queries[0].impressions[0]
        assert vocabularies.documents.token(first.doc_id) == "a"
        assert first.click is True

    def test_missing_vertical_uses_shared_type(self):
        line = json.dumps({
            "sid": "s1",
            "queries": [{"qid": "q", "docs": [
                {"did": "a", "pos": 1, "click": 0}
            ]}]
        })
        vocabularies = session_log.LogVocabularies()
        session_log.parse_log([line], vocabularies)
        assert session_log.SHARED_VERTICAL in vocabularies.verticals

    @pytest.mark.parametrize(
        "bad_line",
        [
            "{not json",
            json.dumps({"sid": "x", "queries": [], "extra": 1}),
            json.dumps({"sid": "x", "queries": [{"qid": "q", "docs": [
                {"did": "a", "pos": 1, "click": 0},
                {"did": "b", "pos": 1, "click": 0}]}]}),
            json.dumps({"sid": "x", "queries": [{"qid": "q", "docs": [
                {"did": "a", "pos": 2, "click": 0}]}]}),
            json.dumps({"sid": "x", "queries": [{"qid": "q", "docs": [
                {"did": "a", "pos": 1, "click": 3}]}]}),
            json.dumps({"sid": "x", "queries": [{"qid": "q", "docs": []}]}),
            json.dumps({"sid": "x", "queries": [{"qid": "q", "docs": [
                {"did": 7, "pos": 1, "click": 0}]}]}),
            json.dumps({"sid": "x", "queries": [{"qid": 7, "docs": [
                {"did": "a", "pos": 1, "click": 0}]}]}),
            json.dumps({"sid": "x", "queries": [{"qid": "q", "docs": [
                {"did": "a", "pos": 1, "vert": 2, "click": 0}]}]}),
            json.dumps({"sid": 7, "queries": [{"qid": "q", "docs": [
                {"did": "a", "pos": 1, "click": 0}]}]}),
        ],
        ids=[
            "invalid-json",
            "unknown-field",
            "duplicate-position",
            "gap-in-positions",
            "click-not-binary",
            "empty-result-list",
            "numeric-doc-id",
            "numeric-query-id",
            "numeric-vertical",
            "numeric-session-id",
        ]
    )
    def test_strict_mode_reports_line_numbers(self, make_line, bad_line):
        lines = [make_line("ok", [("q", [("d", 1)])]), bad_line]
        with pytest.raises(LogFormatError) as error:
            session_log.parse_log(lines)
        assert error.value.line_numbers == [2]

    def test_lenient_mode_skips_without_assigning_ids(self, make_line):
        bad = json.dumps({"sid": "bad", "queries": [{"qid": "qbad", "docs": [
            {"did": "dbad", "pos": 3, "click": 0}]}]})
        lines = [bad, make_line("ok", [("q", [("d", 1)])])]
        vocabularies = session_log.LogVocabularies()
        sessions = session_log.parse_log(lines, vocabularies, strict=False)
        assert [s.session_id for s in sessions] == ["ok"]
        assert "qbad" not in vocabularies.queries
        assert vocabularies.queries.lookup("q") == 1

    def test_duplicate_session_id_is_rejected(self, make_line):
        line = make_line("same", [("q", [("d", 0)])])
        with pytest.raises(LogFormatError) as error:
            session_log.parse_log([line, line])
        assert error.value.line_numbers == [2]

    def test_session_without_queries_is_dropped(self, make_line):
        lines = [
            json.dumps({"sid": "empty", "queries": []}),
            make_line("s", [("q", [("d", 0)])]),
        ]
        sessions = session_log.parse_log(lines)
        assert [s.session_id for s in sessions] == ["s"]

    def test_blank_lines_are_ignored(self, make_line):
        lines = ["", make_line("s", [("q", [("d", 0)])]), "   "]
        assert len(session_log.parse_log(lines)) == 1

    def test_serialized_log_parses_to_same_sessions(self, tiny_sessions):
        sessions, vocabularies = tiny_sessions
        lines = list(session_log.serialize_log(sessions, vocabularies))
        reparsed = session_log.parse_log(lines, vocabularies)
        assert reparsed == sessions


class TestSplitDataset:
    def test_ratio_sizes(self, many_sessions):
        sessions, _ = many_sessions
        split = session_log.split_dataset(sessions, (8, 1, 1), seed=3)
        assert split.sizes == (80, 10, 10)

    def test_partitions_are_disjoint_and_complete(self, many_sessions):
        sessions, _ = many_sessions
        split = session_log.split_dataset(sessions, seed=1)
        ids = [
            s.session_id for part in (split.train, split.valid, split.test)
            for s in part
        ]
        assert sorted(ids) == sorted(s.session_id for s in sessions)
        assert len(set(ids)) == len(ids)

    def test_same_seed_same_split(self, many_sessions):
        sessions, _ = many_sessions
        assert session_log.split_dataset(sessions, seed=5) == \
            session_log.split_dataset(sessions, seed=5)

    def test_different_seed_different_split(self, many_sessions):
        sessions, _ = many_sessions
        first = session_log.split_dataset(sessions, seed=5)
        second = session_log.split_dataset(sessions, seed=6)
        assert first.test != second.test

    def test_too_few_sessions(self, tiny_sessions):
        sessions, _ = tiny_sessions
        with pytest.raises(SplitError):
            session_log.split_dataset(sessions)

    @pytest.mark.parametrize("ratios", [(0, 0, 0), (8, -1, 1), (1, 1)])
    def test_invalid_ratios(self, many_sessions, ratios):
        sessions, _ = many_sessions
        with pytest.raises(ValueError):
            session_log.split_dataset(sessions, ratios)


def test_hold_out_queries_removes_training_sessions(many_sessions):
    sessions, _ = many_sessions
    split = session_log.split_dataset(sessions, seed=2)
    held_out = session_log.hold_out_queries(split, 0.5, seed=0)
    assert held_out.held_out_queries
    for session in held_out.train + held_out.valid:
        for query in session.queries:
            assert query.query_id not in held_out.held_out_queries
    assert held_out.test == split.test


def test_hold_out_zero_fraction_is_identity(many_sessions):
    sessions, _ = many_sessions
    split = session_log.split_dataset(sessions, seed=2)
    assert session_log.hold_out_queries(split, 0.0) == split


def test_partition_cold_start(make_line):
    vocabularies = session_log.LogVocabularies()
    train = session_log.parse_log(
        [make_line("t", [("q1", [("d1", 1), ("d2", 0)])])], vocabularies
    )
    test = session_log.parse_log(
        [
            make_line("cold_q", [("q9", [("d1", 0), ("d2", 0)])]),
            make_line("cold_d", [("q1", [("d1", 0), ("d9", 0)])]),
            make_line("cold_qd", [("q8", [("d8", 0)])]),
            make_line("warm", [("q1", [("d2", 0), ("d1", 1)])]),
        ],
        vocabularies
    )
    split = session_log.DatasetSplit(
        train=tuple(train), valid=(), test=tuple(test)
    )
    partition = session_log.partition_cold_start(split)
    assert [
        (label, [s.session_id for s in sessions])
        for label, sessions in partition.items()
    ] == [
        ("Cold Q", ["cold_q"]),
        ("Cold D", ["cold_d"]),
        ("Cold QD", ["cold_qd"]),
        ("Warm QD", ["warm"]),
    ]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_partition_cold_start_matches_token_scan(make_line, seed):
    rng = np.random.default_rng(seed)
    lines = []
    for number in range(200):
        queries = []
        for _ in range(int(rng.integers(1, 4))):
            docs = rng.choice(150, size=3, replace=False)
            queries.append(
                (
                    f"q{rng.integers(0, 40)}",
                    [(f"d{doc}", int(rng.integers(0, 2))) for doc in docs],
                )
            )
        lines.append(make_line(f"s{number}", queries))
    records = {
        record["sid"]: record for record in map(json.loads, lines)
    }

    def tokens(session):
        record = records[session.session_id]
        queries = {query["qid"] for query in record["queries"]}
        docs = {
            doc["did"] for query in record["queries"]
            for doc in query["docs"]
        }
        return queries, docs

    sessions = session_log.parse_log(lines)
    split = session_log.hold_out_queries(
        session_log.split_dataset(sessions, (6, 1, 3), seed=seed),
        0.1,
        seed=seed
    )
    partition = session_log.partition_cold_start(split)

    warm_queries, warm_docs = set(), set()
    for session in split.train:
        queries, docs = tokens(session)
        warm_queries |= queries
        warm_docs |= docs
    labels = {
        (True, False): "Cold Q",
        (False, True): "Cold D",
        (True, True): "Cold QD",
        (False, False): "Warm QD",
    }
    expected = {label: [] for label in labels.values()}
    for session in split.test:
        queries, docs = tokens(session)
        label = labels[(bool(queries - warm_queries), bool(docs - warm_docs))]
        expected[label].append(session.session_id)

    found = {
        label: [s.session_id for s in group]
        for label, group in partition.items()
    }
    assert found == expected
    assert expected["Cold Q"] or expected["Cold QD"]
    every_id = [sid for group in found.values() for sid in group]
    assert len(every_id) == len(set(every_id))
    assert sorted(every_id) == sorted(s.session_id for s in split.test)


def test_sparsity_ratio(tiny_sessions):
    sessions, _ = tiny_sessions
    assert session_log.sparsity_ratio(sessions) == pytest.approx(0.4)


def test_sparsity_ratio_requires_pairs():
    with pytest.raises(ValueError):
        session_log.sparsity_ratio([])


def test_describe_log(tiny_sessions):
    sessions, _ = tiny_sessions
    statistics = session_log.describe_log(sessions)
    assert statistics.sessions == 3
    assert statistics.queries == 4
    assert statistics.impressions == 12
    assert statistics.clicks == 5
    assert statistics.distinct_queries == 3
    assert statistics.distinct_documents == 5
    assert statistics.max_list_length == 3
    assert statistics.click_rate_by_rank == pytest.approx((0.5, 0.5, 0.25))


class TestReadRelevance:
    def test_grades_are_keyed_by_ids(self, tiny_sessions):
        _, vocabularies = tiny_sessions
        grades = session_log.read_relevance(
            io.StringIO("q1\td1\t3\nq2\td4\t0\n"), vocabularies
        )
        assert grades == {(1, 1): 3, (2, 4): 0}

    def test_unknown_tokens_are_skipped(self, tiny_sessions):
        _, vocabularies = tiny_sessions
        grades = session_log.read_relevance(
            io.StringIO("q1\tnope\t3\n"), vocabularies
        )
        assert grades == {}

    @pytest.mark.parametrize("line", ["q1\td1\t7", "q1\td1", "q1\td1\thigh"])
    def test_malformed_lines(self, tiny_sessions, line):
        _, vocabularies = tiny_sessions
        with pytest.raises(LogFormatError):
            session_log.read_relevance(io.StringIO(line + "\n"), vocabularies)


def test_write_split_then_load_split(tmp_path, many_sessions):
    sessions, vocabularies = many_sessions
    split = session_log.split_dataset(sessions, seed=4)
    written = session_log.write_split(split, vocabularies, str(tmp_path))
    assert [os.path.basename(path) for path in written] == \
        list(session_log.SPLIT_FILE_NAMES)
    loaded, loaded_vocabularies = session_log.load_split(str(tmp_path))
    assert loaded.sizes == split.sizes
    assert [s.session_id for s in loaded.test] == \
        [s.session_id for s in split.test]
    first = loaded.train[0].queries[0]
    assert loaded_vocabularies.queries.token(first.query_id) == \
        vocabularies.queries.token(split.train[0].queries[0].query_id)
