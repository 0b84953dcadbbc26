import io
import itertools

import numpy as np
import pytest

from speedwagon_clickgraph import pgm_baselines, synthetic
from speedwagon_clickgraph.pgm_baselines import ClickModelKind
from speedwagon_clickgraph.evaluation import evaluate_predictions
from speedwagon_clickgraph.session_log import (
    ImpressionRecord,
    QueryRecord,
    Session,
    split_dataset,
)


@pytest.fixture
def sessions(tiny_sessions):
    return tiny_sessions[0]


@pytest.fixture(scope="module")
def pbm_log():
    return synthetic.generate_synthetic(
        synthetic.GeneratorSettings(
            kind=synthetic.GeneratorKind.PBM,
            sessions=2000,
            n_queries=10,
            n_docs=40,
            serp_size=4,
            seed=3,
        )
    )


class TestCascadeCounts:
    def test_dcm_attractiveness(self, sessions):
        params = pgm_baselines.fit_cascade(sessions, ClickModelKind.DCM)
        assert params.alpha[(1, 1)] == pytest.approx(0.5)
        assert params.alpha[(1, 2)] == pytest.approx(0.5)
        assert params.alpha[(1, 3)] == pytest.approx(2 / 3)

    def test_dcm_continuation(self, sessions):
        params = pgm_baselines.fit_cascade(sessions, ClickModelKind.DCM)
        np.testing.assert_allclose(params.continuation, [0.25, 0.5, 1 / 3])

    def test_sdbn_satisfaction(self, sessions):
        params = pgm_baselines.fit_cascade(sessions, ClickModelKind.SDBN)
        assert params.satisfaction[(3, 3)] == pytest.approx(1 / 3)
        assert params.satisfaction[(3, 4)] == pytest.approx(0.5, abs=1e-5)

    def test_only_cascade_variants(self, sessions):
        with pytest.raises(ValueError):
            pgm_baselines.fit_cascade(sessions, ClickModelKind.PBM)


class TestExpectationMaximization:
    @pytest.mark.parametrize("kind", [ClickModelKind.PBM, ClickModelKind.UBM])
    def test_log_likelihood_never_decreases(self, pbm_log, kind):
        params = pgm_baselines.fit_baseline(
            kind, pbm_log.sessions, iterations=30, tolerance=0.0
        )
        differences = np.diff(params.log_likelihood)
        assert (differences >= -1e-9).all()

    def test_stops_at_tolerance(self, pbm_log):
        params = pgm_baselines.em_fit_pbm(
            pbm_log.sessions, iterations=500, tolerance=1e-3
        )
        assert len(params.log_likelihood) < 500

    def test_iterations_must_be_positive(self, sessions):
        with pytest.raises(ValueError):
            pgm_baselines.em_fit_pbm(sessions, iterations=0)

    def test_requires_impressions(self):
        with pytest.raises(ValueError):
            pgm_baselines.em_fit_pbm([])

    def test_ubm_table_shape(self, sessions):
        params = pgm_baselines.em_fit_ubm(sessions, iterations=3)
        assert params.gamma.shape == (3, 4)


class TestPrediction:
    def test_one_probability_per_impression(self, sessions):
        params = pgm_baselines.fit_baseline(ClickModelKind.UBM, sessions)
        for session in sessions:
            predictions = pgm_baselines.predict_clicks(params, session)
            assert predictions.shape == (session.impression_count,)
            assert ((predictions >= 0) & (predictions <= 1)).all()

    def test_sdbn_after_click_uses_satisfaction(self, sessions):
        params = pgm_baselines.fit_cascade(sessions, ClickModelKind.SDBN)
        predictions = pgm_baselines.predict_clicks(params, sessions[2])
        expected = (1.0 - params.satisfaction[(3, 3)]) \
            * params.alpha[(3, 4)]
        assert predictions[2] == pytest.approx(expected)

    def test_unseen_pairs_use_mean_attractiveness(self, sessions):
        params = pgm_baselines.fit_baseline(ClickModelKind.PBM, sessions)
        query = QueryRecord(
            query_id=99,
            impressions=sessions[0].queries[0].impressions[:1]
        )
        scores = pgm_baselines.relevance_scores(params, query)
        assert scores[0] == pytest.approx(params.default_alpha)

    def test_sdbn_relevance_is_attractiveness_times_satisfaction(
            self, sessions):
        params = pgm_baselines.fit_cascade(sessions, ClickModelKind.SDBN)
        query = sessions[2].queries[0]
        scores = pgm_baselines.relevance_scores(params, query)
        assert scores[1] == pytest.approx(
            params.alpha[(3, 3)] * params.satisfaction[(3, 3)]
        )


@pytest.mark.parametrize("kind", list(ClickModelKind))
def test_dumped_parameters_predict_the_same(sessions, kind):
    params = pgm_baselines.fit_baseline(kind, sessions, iterations=5)
    stream = io.StringIO()
    pgm_baselines.dump_params(params, stream)
    stream.seek(0)
    loaded = pgm_baselines.load_params(stream)
    assert loaded.kind is kind
    for session in sessions:
        np.testing.assert_allclose(
            pgm_baselines.predict_clicks(loaded, session),
            pgm_baselines.predict_clicks(params, session)
        )


@pytest.mark.parametrize(
    "text",
    ["alpha_default\t-\t0.5\n", "model\tkind\tPBM\nweird\tx\t1\n",
     "model\tkind\n"],
    ids=["missing-model", "unknown-family", "short-line"]
)
def test_load_params_rejects_malformed(text):
    with pytest.raises(ValueError):
        pgm_baselines.load_params(io.StringIO(text))


def _flip(value, probability):
    return probability if value else 1.0 - probability


def _two_document_joint(params, e1, a1, s1, e2, a2):
    """Probability of one assignment of the latent variables."""
    alpha_1 = params.alpha[(1, 1)]
    alpha_2 = params.alpha[(1, 2)]
    c1 = e1 and a1
    satisfied_rate = 0.0
    if isinstance(params, pgm_baselines.PbmParams):
        first, second = params.gamma
    elif isinstance(params, pgm_baselines.UbmParams):
        first, second = params.gamma[0, 0], params.gamma[1, 1 if c1 else 0]
    elif params.variant is ClickModelKind.DCM:
        first = 1.0
        second = params.continuation[0] if c1 else 1.0
    else:
        first = 1.0
        satisfied_rate = params.satisfaction[(1, 1)] if c1 else 0.0
        second = 0.0 if s1 else 1.0
    return (
        _flip(e1, first) * _flip(a1, alpha_1)
        * _flip(s1, satisfied_rate)
        * _flip(e2, second) * _flip(a2, alpha_2)
    )


TWO_DOCUMENT_PARAMS = {
    ClickModelKind.PBM: pgm_baselines.PbmParams(
        gamma=np.array([0.9, 0.45]),
        alpha={(1, 1): 0.6, (1, 2): 0.3},
        default_alpha=0.5,
    ),
    ClickModelKind.UBM: pgm_baselines.UbmParams(
        gamma=np.array([[0.9, 0.0, 0.0], [0.4, 0.75, 0.0]]),
        alpha={(1, 1): 0.6, (1, 2): 0.3},
        default_alpha=0.5,
    ),
    ClickModelKind.DCM: pgm_baselines.CascadeParams(
        variant=ClickModelKind.DCM,
        alpha={(1, 1): 0.6, (1, 2): 0.3},
        default_alpha=0.5,
        continuation=np.array([0.35, 0.2]),
    ),
    ClickModelKind.SDBN: pgm_baselines.CascadeParams(
        variant=ClickModelKind.SDBN,
        alpha={(1, 1): 0.6, (1, 2): 0.3},
        default_alpha=0.5,
        satisfaction={(1, 1): 0.7, (1, 2): 0.25},
    ),
}


@pytest.mark.parametrize("kind", list(ClickModelKind))
@pytest.mark.parametrize("first_click", [False, True])
def test_two_document_page_matches_enumeration(kind, first_click):
    params = TWO_DOCUMENT_PARAMS[kind]
    totals = {(c1, c2): 0.0 for c1 in (0, 1) for c2 in (0, 1)}
    for e1, a1, s1, e2, a2 in itertools.product((0, 1), repeat=5):
        clicks = (int(e1 and a1), int(e2 and a2))
        totals[clicks] += _two_document_joint(params, e1, a1, s1, e2, a2)
    assert sum(totals.values()) == pytest.approx(1.0)
    first = int(first_click)
    session = Session(
        session_id="s",
        queries=(
            QueryRecord(
                query_id=1,
                impressions=(
                    ImpressionRecord(1, 1, 1, first_click),
                    ImpressionRecord(2, 2, 1, False),
                ),
            ),
        ),
    )
    predictions = pgm_baselines.predict_clicks(params, session)
    assert predictions[0] == pytest.approx(totals[(1, 0)] + totals[(1, 1)])
    assert predictions[1] == pytest.approx(
        totals[(first, 1)] / (totals[(first, 0)] + totals[(first, 1)])
    )


def _token_pairs(log, pairs):
    queries = log.vocabularies.queries
    documents = log.vocabularies.documents
    return [
        (queries.token(query), documents.token(doc)) for query, doc in pairs
    ]


@pytest.mark.slow
def test_pbm_matches_generator_click_probabilities():
    log = synthetic.generate_synthetic(
        synthetic.GeneratorSettings(
            kind=synthetic.GeneratorKind.PBM,
            sessions=50000,
            n_queries=8,
            n_docs=32,
            serp_size=4,
            gamma=(0.95, 0.7, 0.45, 0.2),
            seed=7,
        )
    )
    params = pgm_baselines.em_fit_pbm(
        log.sessions, iterations=500, tolerance=1e-10
    )
    assert (np.diff(params.log_likelihood) >= -1e-9).all()
    predicted = np.concatenate(
        [pgm_baselines.predict_clicks(params, s) for s in log.sessions]
    )
    expected = np.concatenate(
        [log.true_click_probabilities(s) for s in log.sessions]
    )
    assert np.mean(np.abs(predicted - expected)) <= 0.01


@pytest.mark.slow
def test_sdbn_recovers_generator_parameters():
    log = synthetic.generate_synthetic(
        synthetic.GeneratorSettings(
            kind=synthetic.GeneratorKind.SDBN,
            sessions=50000,
            n_queries=8,
            n_docs=32,
            serp_size=4,
            seed=7,
        )
    )
    params = pgm_baselines.fit_cascade(
        log.sessions, ClickModelKind.SDBN, iterations=1000, tolerance=1e-9
    )
    pairs = list(params.alpha)
    tokens = _token_pairs(log, pairs)
    truth = log.ground_truth
    alpha_error = np.mean(
        [abs(params.alpha[p] - truth.alpha[t]) for p, t in zip(pairs, tokens)]
    )
    satisfaction_error = np.mean(
        [
            abs(params.satisfaction[p] - truth.satisfaction[t])
            for p, t in zip(pairs, tokens)
        ]
    )
    assert alpha_error <= 0.02
    assert satisfaction_error <= 0.05


WELL_SPECIFIED = {
    synthetic.GeneratorKind.PBM: ClickModelKind.PBM,
    synthetic.GeneratorKind.UBM: ClickModelKind.UBM,
    synthetic.GeneratorKind.SDBN: ClickModelKind.SDBN,
}


@pytest.mark.slow
@pytest.mark.parametrize("seed", [1, 2, 3])
@pytest.mark.parametrize("generator", list(WELL_SPECIFIED))
def test_matching_model_has_lowest_perplexity(generator, seed):
    log = synthetic.generate_synthetic(
        synthetic.GeneratorSettings(
            kind=generator,
            sessions=20000,
            n_queries=20,
            n_docs=100,
            serp_size=10,
            seed=seed,
        )
    )
    split = split_dataset(list(log.sessions), (1, 0, 1), seed=seed)
    perplexities = {}
    for kind in WELL_SPECIFIED.values():
        params = pgm_baselines.fit_baseline(kind, split.train, 300, 1e-9)
        predictions = [
            pgm_baselines.predict_clicks(params, session)
            for session in split.test
        ]
        perplexities[kind] = evaluate_predictions(
            split.test, predictions
        ).perplexity
    assert min(perplexities, key=perplexities.get) \
        is WELL_SPECIFIED[generator], perplexities
