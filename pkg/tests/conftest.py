import json

import pytest

from speedwagon_clickgraph import session_log
from speedwagon_clickgraph.evaluation import MetricsReport


def session_line(sid, queries):
    """Render a canonical log line.

    ``queries`` is a list of (qid, [(did, click), ...]) in rank order.
    """
    return json.dumps(
        {
            "sid": sid,
            "queries": [
                {
                    "qid": qid,
                    "docs": [
                        {"did": did, "pos": rank, "vert": "web",
                         "click": click}
                        for rank, (did, click) in enumerate(docs, start=1)
                    ],
                }
                for qid, docs in queries
            ],
        }
    )


@pytest.fixture
def make_line():
    return session_line


@pytest.fixture
def tiny_log_lines():
    return [
        session_line("s1", [("q1", [("d1", 1), ("d2", 0), ("d3", 0)]),
                            ("q2", [("d2", 1), ("d4", 0), ("d1", 0)])]),
        session_line("s2", [("q1", [("d1", 0), ("d3", 1), ("d2", 0)])]),
        session_line("s3", [("q3", [("d5", 0), ("d3", 1), ("d4", 1)])]),
    ]


@pytest.fixture
def tiny_sessions(tiny_log_lines):
    vocabularies = session_log.LogVocabularies()
    return session_log.parse_log(tiny_log_lines, vocabularies), vocabularies


@pytest.fixture
def make_report():
    def make(label, perplexity=1.25, sessions=3):
        return MetricsReport(
            label=label,
            log_likelihood=-0.5,
            perplexity_by_rank=(perplexity,),
            perplexity=perplexity,
            ndcg={},
            sessions=sessions,
            queries=sessions,
            impressions=3 * sessions,
        )
    return make
