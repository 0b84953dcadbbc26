"""Training, evaluation and reporting runs."""
from __future__ import annotations

import dataclasses
import itertools
import logging
import math
import os
from typing import (
    Dict,
    Iterator,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np

from speedwagon_clickgraph import pgm_baselines
from speedwagon_clickgraph.checkpoint import read_checkpoint, save_checkpoint
from speedwagon_clickgraph.config import (
    ExperimentConfig,
    apply_overrides,
    make_run_directory,
    write_manifest,
)
from speedwagon_clickgraph.evaluation import (
    MetricsReport,
    evaluate_predictions,
    format_key_values,
    format_table,
)
from speedwagon_clickgraph.exceptions import (
    ConfigurationError,
    TrainingDiverged,
)
from speedwagon_clickgraph.graph_builder import (
    HomogeneousGraph,
    NeighborSample,
    SamplingPolicy,
    build_doc_graph,
    build_query_graph,
    read_graph,
    sample_neighbors,
    write_graph,
)
from speedwagon_clickgraph.graphcm_model import (
    GraphCM,
    KnownIds,
    ModelConfig,
    Neighborhoods,
    SessionBatch,
)
from speedwagon_clickgraph.session_log import (
    DatasetSplit,
    LogVocabularies,
    Session,
    hold_out_queries,
    load_split,
    partition_cold_start,
    read_relevance,
    serialize_log,
    split_dataset,
    write_split,
)
from speedwagon_clickgraph.synthetic import (
    GeneratorSettings,
    SyntheticLog,
    generate_synthetic,
    write_ground_truth,
)

__all__ = [
    "ABLATION_VARIANTS",
    "QUERY_GRAPH_FILE",
    "DOC_GRAPH_FILE",
    "CHECKPOINT_FILE",
    "ExperimentData",
    "EpochRecord",
    "TrainingResult",
    "AblationResult",
    "GridSearchResult",
    "prepare_data",
    "write_graphs",
    "train",
    "load_model",
    "predict",
    "evaluate",
    "evaluate_model",
    "ablate",
    "run_ablation_variant",
    "inspect_combination",
    "grid_search",
    "fit_baselines",
    "evaluate_baselines",
    "write_reports",
    "synthesize",
]

logger = logging.getLogger(__name__)

QUERY_GRAPH_FILE = "query_graph.txt"
DOC_GRAPH_FILE = "doc_graph.txt"
CHECKPOINT_FILE = "best.clkg"
TRAINING_LOG_FILE = "training_log.tsv"
METRICS_TABLE_FILE = "metrics.txt"
METRICS_VALUES_FILE = "metrics.kv"
LOG_FILE_NAME = "log.jsonl"
GROUND_TRUTH_FILE_NAME = "ground_truth.yml"

ABLATION_VARIANTS: Mapping[str, Mapping[str, bool]] = {
    "full": {},
    "no_q_gat": {"use_q_gat": False},
    "no_d_gat": {"use_d_gat": False},
    "no_gat": {"use_q_gat": False, "use_d_gat": False},
    "no_interaction": {"use_neighbor_interaction": False},
    "ncm_like": {
        "use_q_gat": False,
        "use_d_gat": False,
        "use_neighbor_interaction": False,
    },
}


@dataclasses.dataclass
class ExperimentData:
    """Everything a run reads besides its settings.

    Row counts cover the ids of the training partition plus UNKNOWN;
    ids that only appear in validation or test are cold.
    """

    split: DatasetSplit
    vocabularies: LogVocabularies
    query_graph: HomogeneousGraph
    doc_graph: HomogeneousGraph
    query_rows: int
    doc_rows: int
    vertical_rows: int
    max_list_length: int
    relevance: Dict[Tuple[int, int], int] = dataclasses.field(
        default_factory=dict
    )

    def model_config(self, config: ExperimentConfig) -> ModelConfig:
        return config.model_config(
            self.query_rows,
            self.doc_rows,
            self.vertical_rows,
            self.max_list_length,
        )

    def known_ids(self, model_config: ModelConfig) -> KnownIds:
        """Training ids that have rows in the given model."""
        known = KnownIds.from_sessions(
            self.split.train, self.query_rows, self.doc_rows
        )
        return KnownIds(
            queries=known.queries[:model_config.query_vocab_size],
            documents=known.documents[:model_config.doc_vocab_size],
        )


@dataclasses.dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    valid_perplexity: float


@dataclasses.dataclass
class TrainingResult:
    """Outcome of a training run."""

    model: GraphCM
    run_dir: str
    checkpoint_path: str
    epochs: List[EpochRecord]
    best_epoch: int
    best_valid_perplexity: float


@dataclasses.dataclass
class AblationResult:
    table: str
    reports: Dict[str, List[MetricsReport]]


@dataclasses.dataclass
class GridSearchResult:
    """Validation perplexity of every grid point."""

    best_config: ExperimentConfig
    best_result: TrainingResult
    rows: List[Tuple[Dict[str, float], float]]


def _row_count(values: Sequence[int]) -> int:
    return max(values, default=0) + 1


def prepare_data(config: ExperimentConfig) -> ExperimentData:
    """Load the split and graphs named by the settings.

    Graphs are read from ``graph_dir`` when set and built from the
    training partition otherwise.

    Raises:
        ConfigurationError: if stored graphs do not cover the training ids.
    """
    split, vocabularies = load_split(config.resolve(config.data_dir))
    if config.hold_out_fraction > 0:
        split = hold_out_queries(
            split, config.hold_out_fraction, config.hold_out_seed
        )
    train = split.train
    query_rows = _row_count(
        [query.query_id for s in train for query in s.queries]
    )
    doc_rows = _row_count(
        [
            impression.doc_id
            for s in train for _, impression in s.impressions()
        ]
    )
    vertical_rows = _row_count(
        [
            impression.vertical_type
            for s in train for _, impression in s.impressions()
        ]
    )
    max_list_length = max(
        impression.position
        for s in train for _, impression in s.impressions()
    )
    if config.graph_dir:
        graph_dir = config.resolve(config.graph_dir)
        with open(os.path.join(graph_dir, QUERY_GRAPH_FILE),
                  "r", encoding="utf-8") as read_file:
            query_graph = read_graph(read_file)
        with open(os.path.join(graph_dir, DOC_GRAPH_FILE),
                  "r", encoding="utf-8") as read_file:
            doc_graph = read_graph(read_file)
        if query_graph.node_count < query_rows \
                or doc_graph.node_count < doc_rows:
            raise ConfigurationError(
                f"Graphs in {graph_dir} do not cover the training ids. "
                f"Rebuild them from the same split"
            )
    else:
        query_graph = build_query_graph(train, query_rows)
        doc_graph = build_doc_graph(train, doc_rows)
    relevance: Dict[Tuple[int, int], int] = {}
    if config.relevance_file:
        with open(config.resolve(config.relevance_file),
                  "r", encoding="utf-8") as read_file:
            relevance = read_relevance(read_file, vocabularies)
    return ExperimentData(
        split=split,
        vocabularies=vocabularies,
        query_graph=query_graph,
        doc_graph=doc_graph,
        query_rows=query_rows,
        doc_rows=doc_rows,
        vertical_rows=vertical_rows,
        max_list_length=max_list_length,
        relevance=relevance,
    )


def write_graphs(data: ExperimentData, directory: str) -> List[str]:
    """Store both graphs where ``graph_dir`` can find them."""
    os.makedirs(directory, exist_ok=True)
    written = []
    for file_name, graph in (
            (QUERY_GRAPH_FILE, data.query_graph),
            (DOC_GRAPH_FILE, data.doc_graph)):
        path = os.path.join(directory, file_name)
        with open(path, "w", encoding="utf-8") as write_file:
            write_graph(graph, write_file)
        written.append(path)
    return written


def _derived_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def _chunks(
    sessions: Sequence[Session],
    size: int
) -> Iterator[Sequence[Session]]:
    for start in range(0, len(sessions), size):
        yield sessions[start:start + size]


def _policy(config: ExperimentConfig) -> SamplingPolicy:
    return SamplingPolicy(config.sampling_policy)


def predict(
    model: GraphCM,
    sessions: Sequence[Session],
    data: ExperimentData,
    config: ExperimentConfig,
    doc_sample: Optional[NeighborSample] = None,
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Click probabilities and relevance scores of sessions.

    Neighbors are sampled with the evaluation seed, so the same model
    and sessions always give the same predictions.
    """
    model_config = model.config
    known = data.known_ids(model_config)
    if doc_sample is None:
        doc_sample = sample_neighbors(
            data.doc_graph, model_config.gat.k, config.eval_seed,
            _policy(config)
        )
    predictions: List[np.ndarray] = []
    scores: List[np.ndarray] = []
    for chunk in _chunks(sessions, config.batch_size):
        batch = SessionBatch.from_sessions(
            chunk, known, model_config.max_list_length,
            model_config.vertical_vocab_size
        )
        neighborhoods = Neighborhoods.from_overlays(
            batch,
            data.query_graph,
            data.doc_graph,
            doc_sample,
            known,
            config.eval_seed,
            _policy(config),
        )
        outputs = model.forward(batch, neighborhoods, train=False)
        predictions.extend(outputs.click_predictions())
        scores.extend(outputs.relevance_scores())
    return predictions, scores


def _validation_perplexity(
    model: GraphCM,
    data: ExperimentData,
    config: ExperimentConfig,
    doc_sample: NeighborSample,
) -> float:
    sessions = data.split.valid
    if not sessions:
        return float("nan")
    predictions, _ = predict(model, sessions, data, config, doc_sample)
    return evaluate_predictions(sessions, predictions).perplexity


def _hyperparameters(
    model_config: ModelConfig,
    config: ExperimentConfig
) -> Dict[str, object]:
    return {"model": model_config.to_dict(), "experiment": config.to_dict()}


def _write_training_log(run_dir: str, epochs: Sequence[EpochRecord]) -> None:
    path = os.path.join(run_dir, TRAINING_LOG_FILE)
    with open(path, "w", encoding="utf-8") as write_file:
        write_file.write("epoch\ttrain_loss\tvalid_ppl\n")
        for record in epochs:
            write_file.write(
                f"{record.epoch}\t{record.train_loss:.12g}\t"
                f"{record.valid_perplexity:.12g}\n"
            )


def train(
    config: ExperimentConfig,
    data: Optional[ExperimentData] = None,
    run_dir: Optional[str] = None,
) -> TrainingResult:
    """Train GraphCM and keep the parameters with the best validation PPL.

    Training stops after ``patience`` epochs without improvement or at
    ``max_epochs``. Without validation sessions, the training loss is
    used for selection instead.

    Raises:
        TrainingDiverged: if the loss or the validation PPL is not finite.
    """
    data = data or prepare_data(config)
    run_dir = run_dir or make_run_directory(config)
    os.makedirs(run_dir, exist_ok=True)
    write_manifest(run_dir, config)
    model_config = data.model_config(config)
    known = data.known_ids(model_config)
    model = GraphCM(
        model_config, seed=config.init_seed, dtype=config.numpy_dtype
    )
    logger.info(
        "Training GraphCM with %d parameters on %d sessions",
        model.store.parameter_count, len(data.split.train)
    )
    policy = _policy(config)
    eval_doc_sample = sample_neighbors(
        data.doc_graph, config.k, config.eval_seed, policy
    )
    order_rng = np.random.default_rng([config.sampler_seed, 0])
    model_rng = np.random.default_rng([config.init_seed, 1])
    train_sessions = data.split.train
    checkpoint_path = os.path.join(run_dir, CHECKPOINT_FILE)
    saved: Optional[str] = None
    epochs: List[EpochRecord] = []
    best = math.inf
    best_epoch = 0
    stale = 0
    query_sample = doc_sample = None
    for epoch in range(1, config.max_epochs + 1):
        if query_sample is None or doc_sample is None \
                or (epoch - 1) % config.resample_every == 0:
            query_sample = sample_neighbors(
                data.query_graph, config.k,
                _derived_seed(config.sampler_seed, epoch, 0), policy
            )
            doc_sample = sample_neighbors(
                data.doc_graph, config.k,
                _derived_seed(config.sampler_seed, epoch, 1), policy
            )
        order = order_rng.permutation(len(train_sessions))
        shuffled = [train_sessions[i] for i in order]
        total = 0.0
        impressions = 0
        for chunk in _chunks(shuffled, config.batch_size):
            batch = SessionBatch.from_sessions(
                chunk, known, model_config.max_list_length,
                model_config.vertical_vocab_size
            )
            neighborhoods = Neighborhoods.from_samples(
                batch, query_sample, doc_sample, known
            )
            value = model.train_step(
                batch, neighborhoods, config.lr, config.l2, model_rng
            )
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, saved)
            count = int(batch.mask.sum())
            total += value * count
            impressions += count
        train_loss = total / impressions
        valid = _validation_perplexity(model, data, config, eval_doc_sample)
        if data.split.valid and not math.isfinite(valid):
            raise TrainingDiverged(epoch, saved)
        epochs.append(EpochRecord(epoch, train_loss, valid))
        _write_training_log(run_dir, epochs)
        logger.info(
            "Epoch %d: train loss %.6f, validation PPL %.6f",
            epoch, train_loss, valid
        )
        criterion = valid if data.split.valid else train_loss
        if criterion < best:
            best = criterion
            best_epoch = epoch
            stale = 0
            saved = save_checkpoint(
                checkpoint_path,
                model.store.state_dict(),
                _hyperparameters(model_config, config),
                {
                    "epoch": epoch,
                    "train_loss": train_loss,
                    "valid_perplexity": valid,
                },
            )
        else:
            stale += 1
            if stale >= config.patience:
                logger.info(
                    "No improvement for %d epochs, stopping", stale
                )
                break
    best_model, _ = load_model(checkpoint_path)
    return TrainingResult(
        model=best_model,
        run_dir=run_dir,
        checkpoint_path=checkpoint_path,
        epochs=epochs,
        best_epoch=best_epoch,
        best_valid_perplexity=epochs[best_epoch - 1].valid_perplexity,
    )


def load_model(checkpoint_path: str) -> Tuple[GraphCM, ExperimentConfig]:
    """Rebuild a model and its settings from a checkpoint."""
    checkpoint = read_checkpoint(checkpoint_path)
    hyperparameters = checkpoint.hyperparameters
    try:
        model_config = ModelConfig.from_dict(hyperparameters["model"])
    except (KeyError, TypeError, ValueError) as error:
        raise ConfigurationError(
            f"{checkpoint_path} does not describe a GraphCM model"
        ) from error
    config = apply_overrides(
        ExperimentConfig(), hyperparameters.get("experiment", {})
    )
    model = GraphCM(model_config, seed=config.init_seed,
                    dtype=config.numpy_dtype)
    model.store.load_state_dict(checkpoint.parameters)
    return model, config


def evaluate_model(
    model: GraphCM,
    data: ExperimentData,
    config: ExperimentConfig,
    prefix: str = "",
) -> List[MetricsReport]:
    """Reports for the full test set and the four cold-start partitions.

    Predictions are made once for the full test set, so each partition
    report uses the same predictions as the full one.
    """
    test = data.split.test
    predictions, scores = predict(model, test, data, config)
    relevance = data.relevance or None
    reports = [
        evaluate_predictions(
            test, predictions, scores, relevance, label=f"{prefix}Full"
        )
    ]
    position = {session.session_id: n for n, session in enumerate(test)}
    partition = partition_cold_start(data.split)
    for label, sessions in partition.items():
        indices = [position[session.session_id] for session in sessions]
        reports.append(
            evaluate_predictions(
                sessions,
                [predictions[i] for i in indices],
                [scores[i] for i in indices],
                relevance,
                label=f"{prefix}{label}",
            )
        )
    return reports


def evaluate(
    checkpoint_path: str,
    config: Optional[ExperimentConfig] = None,
    data: Optional[ExperimentData] = None,
) -> List[MetricsReport]:
    """Evaluate a checkpoint on the test partition.

    Settings stored in the checkpoint are used unless others are given.
    """
    model, stored = load_model(checkpoint_path)
    config = config or stored
    data = data or prepare_data(config)
    return evaluate_model(model, data, config)


def write_reports(
    reports: Sequence[MetricsReport],
    directory: str
) -> Tuple[str, str]:
    """Write the metrics table and its key-value form."""
    os.makedirs(directory, exist_ok=True)
    table_path = os.path.join(directory, METRICS_TABLE_FILE)
    values_path = os.path.join(directory, METRICS_VALUES_FILE)
    with open(table_path, "w", encoding="utf-8") as write_file:
        write_file.write(format_table(reports) + "\n")
    with open(values_path, "w", encoding="utf-8") as write_file:
        for line in format_key_values(reports):
            write_file.write(line + "\n")
    return table_path, values_path


def run_ablation_variant(
    config: ExperimentConfig,
    name: str,
    data: ExperimentData,
    run_dir: str,
) -> List[MetricsReport]:
    """Train and evaluate one named variant in its own subdirectory."""
    if name not in ABLATION_VARIANTS:
        raise ConfigurationError(
            f"Unknown ablation variant: {name}. Choose from "
            f"{', '.join(ABLATION_VARIANTS)}"
        )
    variant_config = config.replace(**ABLATION_VARIANTS[name])
    logger.info("Ablation variant %s", name)
    result = train(variant_config, data, os.path.join(run_dir, name))
    return evaluate_model(
        result.model, data, variant_config, prefix=f"{name} "
    )


def ablate(
    config: ExperimentConfig,
    variants: Sequence[str] = tuple(ABLATION_VARIANTS),
    data: Optional[ExperimentData] = None,
    run_dir: Optional[str] = None,
) -> AblationResult:
    """Train and evaluate model variants side by side.

    Every variant shares the data order, the neighbor samples and the
    seeds, so only the model structure differs.

    Raises:
        ConfigurationError: for unknown variant names.
    """
    unknown = [name for name in variants if name not in ABLATION_VARIANTS]
    if unknown:
        raise ConfigurationError(
            f"Unknown ablation variant(s): {', '.join(unknown)}. Choose "
            f"from {', '.join(ABLATION_VARIANTS)}"
        )
    data = data or prepare_data(config)
    run_dir = run_dir or make_run_directory(config)
    reports: Dict[str, List[MetricsReport]] = {}
    for name in variants:
        reports[name] = run_ablation_variant(config, name, data, run_dir)
    rows = [report for name in variants for report in reports[name]]
    table = format_table(rows)
    write_reports(rows, run_dir)
    return AblationResult(table=table, reports=reports)


def inspect_combination(checkpoint_path: str) -> Dict[str, float]:
    """Learned alpha and beta of an EXPMUL or LINEAR checkpoint."""
    model, _ = load_model(checkpoint_path)
    return model.combination_parameters()


def grid_search(
    config: ExperimentConfig,
    data: Optional[ExperimentData] = None,
    run_dir: Optional[str] = None,
) -> GridSearchResult:
    """Train at every point of the lr, l2, dropout and K grids.

    The point with the lowest validation PPL wins.
    """
    data = data or prepare_data(config)
    run_dir = run_dir or make_run_directory(config)
    rows: List[Tuple[Dict[str, float], float]] = []
    best: Optional[Tuple[ExperimentConfig, TrainingResult]] = None
    grid = itertools.product(
        config.lr_grid, config.l2_grid, config.dropout_grid, config.k_grid
    )
    for number, (lr, l2, dropout, k) in enumerate(grid):
        point = {"lr": lr, "l2": l2, "dropout": dropout, "k": k}
        point_config = config.replace(**point)
        result = train(
            point_config, data, os.path.join(run_dir, f"grid-{number:03d}")
        )
        rows.append((point, result.best_valid_perplexity))
        logger.info(
            "Grid point %s: validation PPL %.6f",
            point, result.best_valid_perplexity
        )
        if best is None or result.best_valid_perplexity \
                < best[1].best_valid_perplexity:
            best = (point_config, result)
    if best is None:
        raise ConfigurationError("Every grid is empty")
    return GridSearchResult(
        best_config=best[0], best_result=best[1], rows=rows
    )


def _baseline_path(directory: str, kind: pgm_baselines.ClickModelKind) -> str:
    return os.path.join(directory, f"{kind.value.lower()}.tsv")


def fit_baselines(
    config: ExperimentConfig,
    kinds: Sequence[pgm_baselines.ClickModelKind],
    output_dir: str,
    data: Optional[ExperimentData] = None,
) -> Dict[pgm_baselines.ClickModelKind, pgm_baselines.BaselineParams]:
    """Fit baselines on the training partition and store their parameters.
    """
    data = data or prepare_data(config)
    os.makedirs(output_dir, exist_ok=True)
    fitted = {}
    for kind in kinds:
        params = pgm_baselines.fit_baseline(
            kind,
            data.split.train,
            config.baseline_iterations,
            config.baseline_tolerance
        )
        with open(_baseline_path(output_dir, kind), "w",
                  encoding="utf-8") as write_file:
            pgm_baselines.dump_params(params, write_file)
        fitted[kind] = params
    return fitted


def evaluate_baselines(
    params_dir: str,
    kinds: Sequence[pgm_baselines.ClickModelKind],
    config: ExperimentConfig,
    data: Optional[ExperimentData] = None,
) -> List[MetricsReport]:
    """Reports of stored baselines for the full test set and partitions."""
    data = data or prepare_data(config)
    relevance = data.relevance or None
    partition = partition_cold_start(data.split)
    reports = []
    for kind in kinds:
        with open(_baseline_path(params_dir, kind), "r",
                  encoding="utf-8") as read_file:
            params = pgm_baselines.load_params(read_file)
        groups = [("Full", data.split.test)] + list(partition.items())
        for label, sessions in groups:
            predictions = [
                pgm_baselines.predict_clicks(params, session)
                for session in sessions
            ]
            scores = [
                np.concatenate(
                    [
                        pgm_baselines.relevance_scores(params, query)
                        for query in session.queries
                    ]
                )
                for session in sessions
            ]
            reports.append(
                evaluate_predictions(
                    sessions, predictions, scores, relevance,
                    label=f"{kind.value} {label}"
                )
            )
    return reports


def synthesize(
    generator: GeneratorSettings,
    directory: str,
    split_seed: Optional[int] = None,
) -> SyntheticLog:
    """Write a synthetic log and its ground truth into a directory.

    With a split seed the log is also divided 8:1:1 into split files.
    """
    log = generate_synthetic(generator)
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, LOG_FILE_NAME), "w",
              encoding="utf-8") as write_file:
        for line in serialize_log(log.sessions, log.vocabularies):
            write_file.write(line + "\n")
    with open(os.path.join(directory, GROUND_TRUTH_FILE_NAME), "w",
              encoding="utf-8") as write_file:
        write_ground_truth(log, write_file)
    if split_seed is not None:
        split = split_dataset(log.sessions, (8, 1, 1), seed=split_seed)
        write_split(split, log.vocabularies, directory)
    return log
