"""Probabilistic graphical click models used as baselines.

* PBM and UBM are fitted by expectation maximization. Examination depends
  on the rank (PBM) or on the rank and the rank of the previous click on
  the same result page (UBM).
* DCM is fitted in closed form from counts over the ranks a cascade user
  examined, i.e. every rank up to the last click, or every rank when
  nothing was clicked.
* SDBN users examine until a click satisfies them. Whether the last click
  satisfied is latent, so SDBN is refined by expectation maximization.

Result pages are treated independently of the session they belong to.
"""
from __future__ import annotations

import dataclasses
import enum
import logging
from typing import (
    Dict,
    Iterable,
    List,
    Optional,
    Sequence,
    TextIO,
    Tuple,
    Union,
)

import numpy as np

from speedwagon_clickgraph.session_log import QueryRecord, Session

__all__ = [
    "ClickModelKind",
    "PbmParams",
    "UbmParams",
    "CascadeParams",
    "BaselineParams",
    "em_fit_pbm",
    "em_fit_ubm",
    "fit_cascade",
    "fit_baseline",
    "predict_clicks",
    "relevance_scores",
    "dump_params",
    "load_params",
]

logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-12

Pair = Tuple[int, int]


class ClickModelKind(enum.Enum):
    PBM = "PBM"
    UBM = "UBM"
    DCM = "DCM"
    SDBN = "SDBN"


@dataclasses.dataclass
class PbmParams:
    """Examination per rank and attractiveness per query-document pair.

    ``gamma[r - 1]`` is the examination probability of rank r.
    """

    gamma: np.ndarray
    alpha: Dict[Pair, float]
    default_alpha: float
    log_likelihood: List[float] = dataclasses.field(default_factory=list)

    kind = ClickModelKind.PBM


@dataclasses.dataclass
class UbmParams:
    """Examination per (rank, previous click rank) and attractiveness.

    ``gamma[r - 1, r_prev]`` with ``r_prev`` 0 when nothing above was
    clicked.
    """

    gamma: np.ndarray
    alpha: Dict[Pair, float]
    default_alpha: float
    log_likelihood: List[float] = dataclasses.field(default_factory=list)

    kind = ClickModelKind.UBM


@dataclasses.dataclass
class CascadeParams:
    """Parameters of the cascade family.

    DCM uses ``continuation[r - 1]``, the probability of going on after a
    click at rank r. SDBN uses ``satisfaction`` per pair instead.
    """

    variant: ClickModelKind
    alpha: Dict[Pair, float]
    default_alpha: float
    continuation: np.ndarray = dataclasses.field(
        default_factory=lambda: np.zeros(0)
    )
    satisfaction: Dict[Pair, float] = dataclasses.field(default_factory=dict)
    default_satisfaction: float = 0.5

    @property
    def kind(self) -> ClickModelKind:
        return self.variant


BaselineParams = Union[PbmParams, UbmParams, CascadeParams]


@dataclasses.dataclass
class _ImpressionArrays:
    """Every impression of a corpus as flat arrays."""

    pairs: List[Pair]
    pair_index: np.ndarray
    rank: np.ndarray
    previous_click_rank: np.ndarray
    click: np.ndarray
    serp: np.ndarray
    max_rank: int

    @classmethod
    def from_sessions(cls, sessions: Iterable[Session]) -> "_ImpressionArrays":
        pair_lookup: Dict[Pair, int] = {}
        pair_index: List[int] = []
        ranks: List[int] = []
        previous: List[int] = []
        clicks: List[bool] = []
        serps: List[int] = []
        serp_number = 0
        for session in sessions:
            for query in session.queries:
                last_click = 0
                for impression in query.impressions:
                    pair = (query.query_id, impression.doc_id)
                    pair_index.append(
                        pair_lookup.setdefault(pair, len(pair_lookup))
                    )
                    ranks.append(impression.position)
                    previous.append(last_click)
                    clicks.append(impression.click)
                    serps.append(serp_number)
                    if impression.click:
                        last_click = impression.position
                serp_number += 1
        if not ranks:
            raise ValueError("Unable to fit a click model without impressions")
        return cls(
            pairs=list(pair_lookup),
            pair_index=np.asarray(pair_index, dtype=np.int64),
            rank=np.asarray(ranks, dtype=np.int64),
            previous_click_rank=np.asarray(previous, dtype=np.int64),
            click=np.asarray(clicks, dtype=bool),
            serp=np.asarray(serps, dtype=np.int64),
            max_rank=int(max(ranks)),
        )


def _mean_log_likelihood(probability: np.ndarray, click: np.ndarray) -> float:
    clipped = np.clip(probability, PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)
    return float(
        np.mean(np.where(click, np.log(clipped), np.log(1.0 - clipped)))
    )


def _expectation_maximization(
    data: _ImpressionArrays,
    examination_index: np.ndarray,
    examination_size: int,
    iterations: int,
    tolerance: float
) -> Tuple[np.ndarray, np.ndarray, List[float]]:
    if iterations < 1:
        raise ValueError(f"iterations must be 1 or greater, got {iterations}")
    pair_count = len(data.pairs)
    alpha = np.full(pair_count, 0.5)
    gamma = np.full(examination_size, 0.5)
    shown_pairs = np.bincount(data.pair_index, minlength=pair_count)
    shown_exams = np.bincount(examination_index, minlength=examination_size)
    click = data.click
    history: List[float] = []
    for iteration in range(iterations):
        a = alpha[data.pair_index]
        e = gamma[examination_index]
        no_click = np.maximum(1.0 - a * e, PROBABILITY_FLOOR)
        posterior_attractive = np.where(click, 1.0, a * (1.0 - e) / no_click)
        posterior_examined = np.where(click, 1.0, e * (1.0 - a) / no_click)
        alpha = np.bincount(
            data.pair_index, posterior_attractive, minlength=pair_count
        ) / shown_pairs
        observed = shown_exams > 0
        gamma = np.where(
            observed,
            np.bincount(
                examination_index, posterior_examined,
                minlength=examination_size
            ) / np.maximum(shown_exams, 1),
            gamma
        )
        history.append(
            _mean_log_likelihood(
                alpha[data.pair_index] * gamma[examination_index], click
            )
        )
        logger.debug("EM iteration %d: LL %.6f", iteration + 1, history[-1])
        if len(history) > 1 and history[-1] - history[-2] < tolerance:
            break
    return alpha, gamma, history


def em_fit_pbm(
    train: Sequence[Session],
    iterations: int = 50,
    tolerance: float = 1e-6
) -> PbmParams:
    """Fit PBM by expectation maximization.

    The training log-likelihood never decreases between iterations.
    Fitting stops after the given iterations, or once an iteration gains
    less than tolerance.

    Raises:
        ValueError: if iterations is less than 1 or train is empty.
    """
    data = _ImpressionArrays.from_sessions(train)
    alpha, gamma, history = _expectation_maximization(
        data, data.rank - 1, data.max_rank, iterations, tolerance
    )
    logger.info(
        "PBM fitted in %d iterations, LL %.6f", len(history), history[-1]
    )
    return PbmParams(
        gamma=gamma,
        alpha=dict(zip(data.pairs, alpha.tolist())),
        default_alpha=float(alpha.mean()),
        log_likelihood=history,
    )


def em_fit_ubm(
    train: Sequence[Session],
    iterations: int = 50,
    tolerance: float = 1e-6
) -> UbmParams:
    """Fit UBM by expectation maximization, as :func:`em_fit_pbm`."""
    data = _ImpressionArrays.from_sessions(train)
    columns = data.max_rank + 1
    alpha, gamma, history = _expectation_maximization(
        data,
        (data.rank - 1) * columns + data.previous_click_rank,
        data.max_rank * columns,
        iterations,
        tolerance
    )
    logger.info(
        "UBM fitted in %d iterations, LL %.6f", len(history), history[-1]
    )
    return UbmParams(
        gamma=gamma.reshape(data.max_rank, columns),
        alpha=dict(zip(data.pairs, alpha.tolist())),
        default_alpha=float(alpha.mean()),
        log_likelihood=history,
    )


def _ratio(success: np.ndarray, total: np.ndarray) -> np.ndarray:
    return (success + 1.0) / (total + 2.0)


def _refine_sdbn(
    data: _ImpressionArrays,
    serp_last: np.ndarray,
    alpha: np.ndarray,
    satisfaction: np.ndarray,
    iterations: int,
    tolerance: float
) -> Tuple[np.ndarray, np.ndarray, int]:
    """EM over whether the last click of each page satisfied the user.

    Clicks above the last one are known not to satisfy and every rank up
    to the last click was examined. The ranks below it were examined only
    when the last click did not satisfy, in which case none of them
    attracted. Pages without clicks were examined to the bottom.
    """
    pair_count = len(data.pairs)
    serp_count = serp_last.size
    impression_last = serp_last[data.serp]
    below = (impression_last > 0) & (data.rank > impression_last)
    is_last_click = data.click & (data.rank == impression_last)
    last_pair = np.zeros(serp_count, dtype=np.int64)
    last_pair[data.serp[is_last_click]] = data.pair_index[is_last_click]
    has_click = serp_last > 0
    shown = np.bincount(data.pair_index, minlength=pair_count)
    clicks = np.bincount(
        data.pair_index, data.click.astype(float), minlength=pair_count
    )
    observed = data.click.astype(float)
    iteration = 0
    for iteration in range(1, iterations + 1):
        skipped_below = np.exp(
            np.bincount(
                data.serp[below],
                np.log(np.maximum(1.0 - alpha[data.pair_index[below]],
                                  PROBABILITY_FLOOR)),
                minlength=serp_count
            )
        )
        sigma = satisfaction[last_pair]
        satisfied = np.where(
            has_click,
            sigma / np.maximum(sigma + (1.0 - sigma) * skipped_below,
                               PROBABILITY_FLOOR),
            0.0
        )
        attractive = np.where(
            below, satisfied[data.serp] * alpha[data.pair_index], observed
        )
        new_alpha = _ratio(
            np.bincount(data.pair_index, attractive, minlength=pair_count),
            shown.astype(float)
        )
        new_satisfaction = _ratio(
            np.bincount(
                data.pair_index[is_last_click],
                satisfied[data.serp[is_last_click]],
                minlength=pair_count
            ),
            clicks
        )
        change = max(
            float(np.max(np.abs(new_alpha - alpha))),
            float(np.max(np.abs(new_satisfaction - satisfaction)))
        )
        alpha, satisfaction = new_alpha, new_satisfaction
        logger.debug("SDBN EM iteration %d: change %.3g", iteration, change)
        if change < tolerance:
            break
    return alpha, satisfaction, iteration


def fit_cascade(
    train: Sequence[Session],
    variant: ClickModelKind,
    iterations: int = 50,
    tolerance: float = 1e-6
) -> CascadeParams:
    """Fit DCM or SDBN, with (1, 1) pseudo-counts on every ratio.

    DCM is the closed-form count ratio. SDBN starts from the count ratios
    that treat every last click as satisfying and is refined by
    expectation maximization until no parameter moves by tolerance.

    Raises:
        ValueError: for a variant outside the cascade family, or
            iterations less than 1.
    """
    if variant not in (ClickModelKind.DCM, ClickModelKind.SDBN):
        raise ValueError(f"{variant.value} is not a cascade model")
    if iterations < 1:
        raise ValueError(f"iterations must be 1 or greater, got {iterations}")
    data = _ImpressionArrays.from_sessions(train)
    serp_count = int(data.serp.max()) + 1
    last_click = np.zeros(serp_count, dtype=np.int64)
    np.maximum.at(last_click, data.serp, np.where(data.click, data.rank, 0))
    serp_last = last_click[data.serp]
    examined = (serp_last == 0) | (data.rank <= serp_last)
    is_last_click = data.click & (data.rank == serp_last)

    pair_count = len(data.pairs)
    clicks = np.bincount(
        data.pair_index, data.click.astype(float), minlength=pair_count
    )
    alpha = _ratio(
        clicks,
        np.bincount(
            data.pair_index, examined.astype(float), minlength=pair_count
        )
    )
    if variant is ClickModelKind.DCM:
        clicked_ranks = data.rank[data.click] - 1
        went_on = ~is_last_click[data.click]
        params = CascadeParams(
            variant=variant,
            alpha=dict(zip(data.pairs, alpha.tolist())),
            default_alpha=float(alpha.mean()),
            continuation=_ratio(
                np.bincount(clicked_ranks, went_on.astype(float),
                            minlength=data.max_rank),
                np.bincount(clicked_ranks,
                            minlength=data.max_rank).astype(float)
            ),
        )
        logger.info("DCM fitted on %d impressions", len(data.rank))
        return params
    satisfaction = _ratio(
        np.bincount(
            data.pair_index, is_last_click.astype(float),
            minlength=pair_count
        ),
        clicks
    )
    alpha, satisfaction, used = _refine_sdbn(
        data, last_click, alpha, satisfaction, iterations, tolerance
    )
    logger.info(
        "SDBN fitted on %d impressions in %d iterations",
        len(data.rank), used
    )
    return CascadeParams(
        variant=variant,
        alpha=dict(zip(data.pairs, alpha.tolist())),
        default_alpha=float(alpha.mean()),
        satisfaction=dict(zip(data.pairs, satisfaction.tolist())),
        default_satisfaction=float(satisfaction.mean()),
    )


def fit_baseline(
    kind: ClickModelKind,
    train: Sequence[Session],
    iterations: int = 50,
    tolerance: float = 1e-6
) -> BaselineParams:
    """Fit any baseline by kind."""
    if kind is ClickModelKind.PBM:
        return em_fit_pbm(train, iterations, tolerance)
    if kind is ClickModelKind.UBM:
        return em_fit_ubm(train, iterations, tolerance)
    return fit_cascade(train, kind, iterations, tolerance)


def _alpha(params: BaselineParams, query_id: int, doc_id: int) -> float:
    return params.alpha.get((query_id, doc_id), params.default_alpha)


def _rank_row(table: np.ndarray, rank: int) -> int:
    return min(rank, len(table)) - 1


def _predict_query(
    params: BaselineParams,
    query: QueryRecord
) -> List[float]:
    predictions: List[float] = []
    if isinstance(params, PbmParams):
        for impression in query.impressions:
            gamma = params.gamma[_rank_row(params.gamma, impression.position)]
            predictions.append(
                float(gamma) * _alpha(params, query.query_id,
                                      impression.doc_id)
            )
        return predictions
    if isinstance(params, UbmParams):
        last_click = 0
        columns = params.gamma.shape[1]
        for impression in query.impressions:
            gamma = params.gamma[
                _rank_row(params.gamma, impression.position),
                min(last_click, columns - 1)
            ]
            predictions.append(
                float(gamma) * _alpha(params, query.query_id,
                                      impression.doc_id)
            )
            if impression.click:
                last_click = impression.position
        return predictions

    examination = 1.0
    for impression in query.impressions:
        pair = (query.query_id, impression.doc_id)
        alpha = _alpha(params, *pair)
        probability = examination * alpha
        predictions.append(probability)
        if impression.click:
            if params.variant is ClickModelKind.DCM:
                examination = float(
                    params.continuation[
                        _rank_row(params.continuation, impression.position)
                    ]
                )
            else:
                examination = 1.0 - params.satisfaction.get(
                    pair, params.default_satisfaction
                )
        else:
            examination = examination * (1.0 - alpha) / max(
                1.0 - probability, PROBABILITY_FLOOR
            )
    return predictions


def predict_clicks(params: BaselineParams, session: Session) -> np.ndarray:
    """Click probabilities of every impression of a session.

    Each probability is conditioned on the clicks observed above it on the
    same result page. Pairs never seen in training use the mean fitted
    attractiveness.
    """
    values: List[float] = []
    for query in session.queries:
        values.extend(_predict_query(params, query))
    return np.asarray(values, dtype=np.float64)


def relevance_scores(
    params: BaselineParams,
    query: QueryRecord
) -> np.ndarray:
    """Relevance of each document of a result page.

    Attractiveness for PBM, UBM and DCM, attractiveness times
    satisfaction for SDBN.
    """
    scores = []
    for doc_id in query.doc_ids:
        score = _alpha(params, query.query_id, doc_id)
        if isinstance(params, CascadeParams) \
                and params.variant is ClickModelKind.SDBN:
            score *= params.satisfaction.get(
                (query.query_id, doc_id), params.default_satisfaction
            )
        scores.append(score)
    return np.asarray(scores, dtype=np.float64)


def _write(stream: TextIO, family: str, key: str, value: object) -> None:
    stream.write(f"{family}\t{key}\t{value}\n")


def _write_pairs(
    stream: TextIO,
    family: str,
    values: Dict[Pair, float]
) -> None:
    for (query_id, doc_id), value in sorted(values.items()):
        _write(stream, family, f"{query_id},{doc_id}", repr(float(value)))


def dump_params(params: BaselineParams, stream: TextIO) -> None:
    """Write fitted parameters as ``family<TAB>key<TAB>value`` lines."""
    _write(stream, "model", "kind", params.kind.value)
    _write(stream, "alpha_default", "-", repr(params.default_alpha))
    _write_pairs(stream, "alpha", params.alpha)
    if isinstance(params, PbmParams):
        for rank, value in enumerate(params.gamma, start=1):
            _write(stream, "gamma", str(rank), repr(float(value)))
    elif isinstance(params, UbmParams):
        for (row, column), value in np.ndenumerate(params.gamma):
            _write(stream, "gamma", f"{row + 1},{column}", repr(float(value)))
    elif params.variant is ClickModelKind.DCM:
        for rank, value in enumerate(params.continuation, start=1):
            _write(stream, "continuation", str(rank), repr(float(value)))
    else:
        _write(stream, "satisfaction_default", "-",
               repr(params.default_satisfaction))
        _write_pairs(stream, "satisfaction", params.satisfaction)
    if isinstance(params, (PbmParams, UbmParams)):
        for iteration, value in enumerate(params.log_likelihood, start=1):
            _write(stream, "log_likelihood", str(iteration), repr(value))


def _parse_pair(key: str) -> Pair:
    query_id, doc_id = key.split(",")
    return int(query_id), int(doc_id)


def load_params(stream: TextIO) -> BaselineParams:
    """Read parameters written by :func:`dump_params`.

    Raises:
        ValueError: for unknown families or a missing model line.
    """
    kind: Optional[ClickModelKind] = None
    scalars: Dict[str, float] = {}
    pairs: Dict[str, Dict[Pair, float]] = {"alpha": {}, "satisfaction": {}}
    ranked: Dict[Tuple[int, int], float] = {}
    history: List[Tuple[int, float]] = []
    for line_number, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            family, key, value = line.rstrip("\n").split("\t")
        except ValueError as error:
            raise ValueError(
                f"line {line_number}: expected three tab separated fields"
            ) from error
        if family == "model":
            kind = ClickModelKind(value)
        elif family in ("alpha_default", "satisfaction_default"):
            scalars[family] = float(value)
        elif family in pairs:
            pairs[family][_parse_pair(key)] = float(value)
        elif family in ("gamma", "continuation"):
            if "," in key:
                row, column = (int(part) for part in key.split(","))
            else:
                row, column = int(key), 0
            ranked[(row, column)] = float(value)
        elif family == "log_likelihood":
            history.append((int(key), float(value)))
        else:
            raise ValueError(f"line {line_number}: unknown family {family}")
    if kind is None:
        raise ValueError("Missing model line")
    default_alpha = scalars.get("alpha_default", 0.5)
    log_likelihood = [value for _, value in sorted(history)]
    if kind is ClickModelKind.PBM:
        gamma = np.asarray([v for _, v in sorted(ranked.items())])
        return PbmParams(gamma, pairs["alpha"], default_alpha,
                         log_likelihood)
    if kind is ClickModelKind.UBM:
        rows = max(row for row, _ in ranked)
        columns = max(column for _, column in ranked) + 1
        gamma = np.zeros((rows, columns))
        for (row, column), value in ranked.items():
            gamma[row - 1, column] = value
        return UbmParams(gamma, pairs["alpha"], default_alpha,
                         log_likelihood)
    params = CascadeParams(
        variant=kind,
        alpha=pairs["alpha"],
        default_alpha=default_alpha,
    )
    if kind is ClickModelKind.DCM:
        params.continuation = np.asarray(
            [v for _, v in sorted(ranked.items())]
        )
    else:
        params.satisfaction = pairs["satisfaction"]
        params.default_satisfaction = scalars.get(
            "satisfaction_default", 0.5
        )
    return params
