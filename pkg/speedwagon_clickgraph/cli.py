"""Command line interface for the click model toolkit."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence

from speedwagon_clickgraph import config as settings
from speedwagon_clickgraph import harness
from speedwagon_clickgraph.evaluation import format_table
from speedwagon_clickgraph.exceptions import (
    ClickGraphException,
    ConfigurationError,
)
from speedwagon_clickgraph.graph_builder import summarize_graph
from speedwagon_clickgraph.pgm_baselines import ClickModelKind
from speedwagon_clickgraph.session_log import (
    LogVocabularies,
    describe_log,
    parse_log,
    partition_cold_start,
    serialize_log,
    sparsity_ratio,
    split_dataset,
    write_split,
)
from speedwagon_clickgraph.synthetic import GeneratorKind, GeneratorSettings

__all__ = ["main", "get_arg_parser"]

logger = logging.getLogger(__name__)

Command = Callable[[argparse.Namespace], int]


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("settings")
    group.add_argument(
        "--config",
        help="YAML file of settings. Flags below override its values"
    )
    group.add_argument(
        "--set",
        dest="assignments",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a setting. May be repeated"
    )
    defaults = settings.ExperimentConfig()
    for name in settings.ExperimentConfig.field_names():
        flags = [f"--{name}"]
        if "_" in name:
            flags.append(f"--{name.replace('_', '-')}")
        group.add_argument(
            *flags,
            dest=f"setting_{name}",
            default=None,
            metavar="VALUE",
            help=f"(default: {getattr(defaults, name)})"
        )


def _experiment_config(
    args: argparse.Namespace,
    base: Optional[settings.ExperimentConfig] = None
) -> settings.ExperimentConfig:
    overrides: Dict[str, Any] = settings.parse_assignments(args.assignments)
    for name in settings.ExperimentConfig.field_names():
        value = getattr(args, f"setting_{name}", None)
        if value is not None:
            overrides[name] = value
    config = base or settings.ExperimentConfig()
    if args.config:
        with open(args.config, "r", encoding="utf-8") as read_file:
            config = settings.apply_overrides(
                config, settings.read_settings(read_file)
            )
    return settings.apply_overrides(config, overrides)


def _print_reports(reports: Sequence[Any]) -> None:
    print(format_table(reports))


def run_parse(args: argparse.Namespace) -> int:
    vocabularies = LogVocabularies()
    with open(args.log, "r", encoding="utf-8") as read_file:
        sessions = parse_log(
            read_file, vocabularies, strict=not args.lenient
        )
    statistics = describe_log(sessions)
    for field in dataclasses.fields(statistics):
        value = getattr(statistics, field.name)
        if isinstance(value, tuple):
            value = " ".join(f"{rate:.4f}" for rate in value)
        print(f"{field.name}: {value}")
    print(f"sparsity: {sparsity_ratio(sessions):.6f}")
    if args.output:
        with open(args.output, "w", encoding="utf-8") as write_file:
            for line in serialize_log(sessions, vocabularies):
                write_file.write(line + "\n")
        print(f"Wrote {args.output}")
    return 0


def run_split(args: argparse.Namespace) -> int:
    vocabularies = LogVocabularies()
    with open(args.log, "r", encoding="utf-8") as read_file:
        sessions = parse_log(read_file, vocabularies)
    split = split_dataset(sessions, tuple(args.ratios), seed=args.seed)
    for path, size in zip(
            write_split(split, vocabularies, args.output), split.sizes):
        print(f"{path}: {size} sessions")
    return 0


def run_build_graph(args: argparse.Namespace) -> int:
    config = _experiment_config(args).replace(graph_dir="")
    data = harness.prepare_data(config)
    for path in harness.write_graphs(data, args.output):
        print(f"Wrote {path}")
    for graph in (data.query_graph, data.doc_graph):
        summary = summarize_graph(graph)
        print(
            f"{summary.domain.name}: {summary.nodes} nodes, "
            f"{summary.multi_hop_edges} multi-hop edges, "
            f"{summary.consecutive_edges} consecutive edges, "
            f"{summary.isolated_nodes} isolated, "
            f"mean degree {summary.mean_degree:.3f}"
        )
    return 0


def run_partition(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    data = harness.prepare_data(config)
    partition = partition_cold_start(data.split)
    for label, sessions in partition.items():
        print(f"{label}: {len(sessions)} sessions")
    print(f"Test: {len(data.split.test)} sessions")
    print(f"Training sparsity: {sparsity_ratio(data.split.train):.6f}")
    return 0


def run_synth(args: argparse.Namespace) -> int:
    try:
        generator = GeneratorSettings(
            kind=GeneratorKind(args.kind),
            sessions=args.sessions,
            n_queries=args.queries,
            n_docs=args.docs,
            n_verticals=args.verticals,
            serp_size=args.serp_size,
            docs_per_query=args.docs_per_query,
            queries_per_session=tuple(args.queries_per_session),
            gamma=tuple(args.gamma) if args.gamma else None,
            topics=args.topics,
            boost=args.boost,
            seed=args.seed,
        )
    except ValueError as error:
        raise ConfigurationError(str(error)) from error
    log = harness.synthesize(generator, args.output, args.split_seed)
    print(
        f"Wrote {len(log.sessions)} {generator.kind.value} sessions to "
        f"{args.output}"
    )
    return 0


def run_train(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    if args.grid:
        search = harness.grid_search(config)
        for point, perplexity in search.rows:
            print(
                " ".join(f"{key}={value}" for key, value in point.items())
                + f" valid_ppl={perplexity:.6f}"
            )
        result = search.best_result
    else:
        result = harness.train(config)
    for record in result.epochs:
        print(
            f"epoch {record.epoch} train_loss {record.train_loss:.6f} "
            f"valid_ppl {record.valid_perplexity:.6f}"
        )
    print(
        f"Best epoch {result.best_epoch} "
        f"(validation PPL {result.best_valid_perplexity:.6f}): "
        f"{result.checkpoint_path}"
    )
    return 0


def run_evaluate(args: argparse.Namespace) -> int:
    model, stored = harness.load_model(args.checkpoint)
    config = _experiment_config(args, base=stored)
    data = harness.prepare_data(config)
    reports = harness.evaluate_model(model, data, config)
    _print_reports(reports)
    output = args.output or os.path.dirname(os.path.abspath(args.checkpoint))
    for path in harness.write_reports(reports, output):
        print(f"Wrote {path}")
    return 0


def run_ablate(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    result = harness.ablate(config, args.variants)
    print(result.table)
    return 0


def run_inspect(args: argparse.Namespace) -> int:
    for name, value in harness.inspect_combination(args.checkpoint).items():
        print(f"{name}: {value:.6f}")
    return 0


def _kinds(names: Sequence[str]) -> List[ClickModelKind]:
    return [ClickModelKind(name.upper()) for name in names]


def run_baseline_fit(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    fitted = harness.fit_baselines(config, _kinds(args.models), args.output)
    for kind in fitted:
        print(f"Fitted {kind.value}")
    return 0


def run_baseline_eval(args: argparse.Namespace) -> int:
    config = _experiment_config(args)
    reports = harness.evaluate_baselines(
        args.params_dir, _kinds(args.models), config
    )
    _print_reports(reports)
    if args.output:
        for path in harness.write_reports(reports, args.output):
            print(f"Wrote {path}")
    return 0


def get_arg_parser() -> argparse.ArgumentParser:
    """Parser for every subcommand."""
    parser = argparse.ArgumentParser(
        prog="clickgraph",
        description="Graph-enhanced click models and PGM baselines"
    )
    parser.add_argument(
        "--verbose", action="store_true", help="Log debugging messages"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    parse = commands.add_parser("parse", help="Validate and describe a log")
    parse.add_argument("log")
    parse.add_argument("--output", help="Write the log in canonical form")
    parse.add_argument(
        "--lenient",
        action="store_true",
        help="Skip malformed lines instead of failing"
    )
    parse.set_defaults(func=run_parse)

    split = commands.add_parser(
        "split", help="Divide a log into train, valid and test files"
    )
    split.add_argument("log")
    split.add_argument("--output", required=True)
    split.add_argument("--seed", type=int, default=0)
    split.add_argument(
        "--ratios", type=int, nargs=3, default=[8, 1, 1],
        metavar=("TRAIN", "VALID", "TEST")
    )
    split.set_defaults(func=run_split)

    build_graph = commands.add_parser(
        "build-graph", help="Build query and document graphs"
    )
    build_graph.add_argument("--output", required=True)
    _add_config_arguments(build_graph)
    build_graph.set_defaults(func=run_build_graph)

    partition = commands.add_parser(
        "partition", help="Count the cold-start partitions of the test set"
    )
    _add_config_arguments(partition)
    partition.set_defaults(func=run_partition)

    synth = commands.add_parser("synth", help="Generate a synthetic log")
    synth.add_argument(
        "--kind",
        choices=[kind.value for kind in GeneratorKind],
        default=GeneratorKind.PBM.value
    )
    synth.add_argument("--sessions", type=int, default=1000)
    synth.add_argument("--queries", type=int, default=50)
    synth.add_argument("--docs", type=int, default=500)
    synth.add_argument("--verticals", type=int, default=1)
    synth.add_argument("--serp-size", type=int, default=4)
    synth.add_argument("--docs-per-query", type=int, default=None)
    synth.add_argument(
        "--queries-per-session", type=int, nargs=2, default=[1, 1],
        metavar=("MIN", "MAX")
    )
    synth.add_argument("--gamma", type=float, nargs="+")
    synth.add_argument("--topics", type=int, default=5)
    synth.add_argument("--boost", type=float, default=0.6)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument(
        "--split-seed", type=int, default=None,
        help="Also write train, valid and test files split with this seed"
    )
    synth.add_argument("--output", required=True)
    synth.set_defaults(func=run_synth)

    train = commands.add_parser("train", help="Train GraphCM")
    train.add_argument(
        "--grid",
        action="store_true",
        help="Search the lr, l2, dropout and k grids"
    )
    _add_config_arguments(train)
    train.set_defaults(func=run_train)

    evaluate = commands.add_parser(
        "evaluate", help="Evaluate a checkpoint on the test set"
    )
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--output", help="Directory for metric files")
    _add_config_arguments(evaluate)
    evaluate.set_defaults(func=run_evaluate)

    ablate = commands.add_parser("ablate", help="Compare model variants")
    ablate.add_argument(
        "--variants",
        nargs="+",
        default=list(harness.ABLATION_VARIANTS),
        choices=list(harness.ABLATION_VARIANTS)
    )
    _add_config_arguments(ablate)
    ablate.set_defaults(func=run_ablate)

    inspect = commands.add_parser(
        "inspect", help="Show learned combination parameters"
    )
    inspect.add_argument("--checkpoint", required=True)
    inspect.set_defaults(func=run_inspect)

    model_names = [kind.value for kind in ClickModelKind]
    baseline_fit = commands.add_parser(
        "baseline-fit", help="Fit PGM click models"
    )
    baseline_fit.add_argument(
        "--models", nargs="+", default=model_names, type=str.upper,
        choices=model_names
    )
    baseline_fit.add_argument("--output", required=True)
    _add_config_arguments(baseline_fit)
    baseline_fit.set_defaults(func=run_baseline_fit)

    baseline_eval = commands.add_parser(
        "baseline-eval", help="Evaluate fitted PGM click models"
    )
    baseline_eval.add_argument(
        "--models", nargs="+", default=model_names, type=str.upper,
        choices=model_names
    )
    baseline_eval.add_argument("--params-dir", required=True)
    baseline_eval.add_argument("--output", help="Directory for metric files")
    _add_config_arguments(baseline_eval)
    baseline_eval.set_defaults(func=run_baseline_eval)
    return parser


def _configure_logging(verbose: bool) -> None:
    package_logger = logging.getLogger("speedwagon_clickgraph")
    package_logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    if package_logger.handlers:
        return
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(
        logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
    )
    package_logger.addHandler(handler)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run a subcommand and return the process exit code."""
    parser = get_arg_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)
    command: Command = args.func
    try:
        return command(args)
    except ClickGraphException as error:
        print(f"clickgraph: {error}", file=sys.stderr)
        return 1
    except OSError as error:
        print(f"clickgraph: {error}", file=sys.stderr)
        return 1
