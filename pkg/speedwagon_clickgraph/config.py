"""Experiment settings, run directories and their manifests."""
from __future__ import annotations

import dataclasses
import datetime
import logging
import os
import platform
from importlib import metadata
from typing import (
    Any,
    Callable,
    Dict,
    Iterable,
    Mapping,
    Optional,
    TextIO,
    Tuple,
)

import numpy as np
import yaml

from speedwagon_clickgraph.exceptions import ConfigurationError
from speedwagon_clickgraph.graph_builder import SamplingPolicy
from speedwagon_clickgraph.graphcm_model import (
    Aggregation,
    CombinationKind,
    GatConfig,
    ModelConfig,
    RankBy,
)

__all__ = [
    "CLICKGRAPH_HOME_VARIABLE",
    "MANIFEST_FILE_NAME",
    "ExperimentConfig",
    "clickgraph_home",
    "load_config",
    "load_config_file",
    "read_settings",
    "apply_overrides",
    "parse_assignments",
    "make_run_directory",
    "write_manifest",
]

logger = logging.getLogger(__name__)

CLICKGRAPH_HOME_VARIABLE = "CLICKGRAPH_HOME"
MANIFEST_FILE_NAME = "manifest.yml"
PACKAGE_NAME = "speedwagon-clickgraph"


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Every setting of a training or evaluation run.

    Paths that are not absolute are resolved against
    :func:`clickgraph_home`.
    """

    data_dir: str = "data"
    graph_dir: str = ""
    relevance_file: str = ""
    run_dir: str = ""
    run_name: str = "graphcm"

    batch_size: int = 128
    hidden_size: int = 64
    query_dim: int = 64
    doc_dim: int = 64
    vertical_dim: int = 8
    click_dim: int = 4
    position_dim: int = 4
    lr: float = 1e-3
    l2: float = 1e-5
    dropout: float = 0.5
    k: int = 8
    heads: int = 2
    aggregation: str = Aggregation.AVERAGE.value
    slope: float = 0.2
    combination: str = CombinationKind.EXPMUL.value
    nonlinear_hidden: int = 8
    use_q_gat: bool = True
    use_d_gat: bool = True
    use_neighbor_interaction: bool = True
    reset_doc_state_per_query: bool = False
    rank_by: str = RankBy.ATTRACTIVENESS.value
    sampling_policy: str = SamplingPolicy.UNIFORM.value
    substitution_probability: float = 0.01
    dtype: str = "float32"

    max_epochs: int = 50
    patience: int = 5
    resample_every: int = 1

    init_seed: int = 0
    sampler_seed: int = 0
    eval_seed: int = 0
    hold_out_fraction: float = 0.0
    hold_out_seed: int = 0

    lr_grid: Tuple[float, ...] = (1e-3, 5e-4, 1e-4)
    l2_grid: Tuple[float, ...] = (1e-4, 1e-5)
    dropout_grid: Tuple[float, ...] = (0.25, 0.5)
    k_grid: Tuple[int, ...] = (1, 2, 4, 8, 16, 32)

    baseline_iterations: int = 50
    baseline_tolerance: float = 1e-6

    def __post_init__(self) -> None:
        positive = (
            "batch_size", "hidden_size", "query_dim", "doc_dim",
            "vertical_dim", "click_dim", "position_dim", "k", "heads",
            "nonlinear_hidden", "max_epochs", "patience", "resample_every",
            "baseline_iterations",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be 1 or greater")
        if self.lr <= 0:
            raise ConfigurationError("lr must be greater than 0")
        if self.l2 < 0:
            raise ConfigurationError("l2 cannot be negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must be within [0, 1)")
        if not 0.0 <= self.hold_out_fraction < 1.0:
            raise ConfigurationError(
                "hold_out_fraction must be within [0, 1)"
            )
        for name in ("lr_grid", "l2_grid", "dropout_grid", "k_grid"):
            values = getattr(self, name)
            if not values or any(value <= 0 for value in values):
                raise ConfigurationError(
                    f"{name} must hold positive values, got {values}"
                )
        if any(value >= 1 for value in self.dropout_grid):
            raise ConfigurationError("dropout_grid values must be below 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(
                f"dtype must be float32 or float64, not {self.dtype}"
            )
        choices = (
            ("aggregation", Aggregation),
            ("combination", CombinationKind),
            ("rank_by", RankBy),
            ("sampling_policy", SamplingPolicy),
        )
        for name, kind in choices:
            value = getattr(self, name)
            if value not in {member.value for member in kind}:
                raise ConfigurationError(
                    f"Invalid {name} {value!r}. Choose from "
                    f"{', '.join(member.value for member in kind)}"
                )

    @classmethod
    def field_names(cls) -> Tuple[str, ...]:
        return tuple(field.name for field in dataclasses.fields(cls))

    def to_dict(self) -> Dict[str, Any]:
        values = dataclasses.asdict(self)
        for name, value in values.items():
            if isinstance(value, tuple):
                values[name] = list(value)
        return values

    def replace(self, **changes: Any) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def resolve(self, path: str) -> str:
        """Resolve a configured path against the working root."""
        if not path or os.path.isabs(path):
            return path
        return os.path.join(clickgraph_home(), path)

    @property
    def numpy_dtype(self) -> Any:
        return np.dtype(self.dtype).type

    def model_config(
        self,
        query_vocab_size: int,
        doc_vocab_size: int,
        vertical_vocab_size: int,
        max_list_length: int,
    ) -> ModelConfig:
        """Network structure for vocabularies of the given sizes."""
        try:
            return ModelConfig(
                query_vocab_size=query_vocab_size,
                doc_vocab_size=doc_vocab_size,
                vertical_vocab_size=vertical_vocab_size,
                max_list_length=max_list_length,
                query_dim=self.query_dim,
                doc_dim=self.doc_dim,
                vertical_dim=self.vertical_dim,
                click_dim=self.click_dim,
                position_dim=self.position_dim,
                hidden_size=self.hidden_size,
                gat=GatConfig(
                    heads=self.heads,
                    aggregation=Aggregation(self.aggregation),
                    k=self.k,
                    slope=self.slope,
                ),
                combination=CombinationKind(self.combination),
                nonlinear_hidden=self.nonlinear_hidden,
                dropout=self.dropout,
                use_q_gat=self.use_q_gat,
                use_d_gat=self.use_d_gat,
                use_neighbor_interaction=self.use_neighbor_interaction,
                reset_doc_state_per_query=self.reset_doc_state_per_query,
                rank_by=RankBy(self.rank_by),
                substitution_probability=self.substitution_probability,
            )
        except ValueError as error:
            raise ConfigurationError(str(error)) from error


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{value!r} is not a boolean")


def _tuple_parser(item: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(value: str) -> Tuple[Any, ...]:
        return tuple(
            item(part) for part in value.replace(",", " ").split()
        )
    return parse


def _parser_for(default: Any) -> Callable[[str], Any]:
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, tuple):
        return _tuple_parser(type(default[0]) if default else float)
    return type(default)


_DEFAULTS = ExperimentConfig()
FIELD_PARSERS: Dict[str, Callable[[str], Any]] = {
    name: _parser_for(getattr(_DEFAULTS, name))
    for name in ExperimentConfig.field_names()
}


def _coerce(name: str, value: Any) -> Any:
    if name not in FIELD_PARSERS:
        raise ConfigurationError(f"Unknown setting: {name}")
    default = getattr(_DEFAULTS, name)
    try:
        if isinstance(value, str):
            return FIELD_PARSERS[name](value)
        if isinstance(default, tuple):
            items = value if isinstance(value, (list, tuple)) else [value]
            element = type(default[0]) if default else float
            return tuple(element(item) for item in items)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ValueError(f"{value!r} is not a boolean")
            return value
        if isinstance(default, float):
            return float(value)
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise ValueError(f"{value!r} is not an integer")
            return int(value)
        return str(value)
    except (TypeError, ValueError) as error:
        raise ConfigurationError(
            f"Invalid value for {name}: {error}"
        ) from error


def apply_overrides(
    config: ExperimentConfig,
    overrides: Mapping[str, Any]
) -> ExperimentConfig:
    """Copy of the config with some settings replaced.

    String values are parsed according to the setting's type.

    Raises:
        ConfigurationError: for unknown settings or unparsable values.
    """
    changes = {name: _coerce(name, value) for name, value in overrides.items()}
    if changes:
        logger.debug("Overriding settings: %s", changes)
    return config.replace(**changes)


def parse_assignments(assignments: Iterable[str]) -> Dict[str, str]:
    """Read ``key=value`` strings."""
    values = {}
    for assignment in assignments:
        key, separator, value = assignment.partition("=")
        if not separator or not key.strip():
            raise ConfigurationError(
                f"Expected key=value, got {assignment!r}"
            )
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def read_settings(stream: TextIO) -> Dict[str, Any]:
    """Raw settings of a flat YAML file."""
    try:
        values = yaml.safe_load(stream) or {}
    except yaml.YAMLError as error:
        raise ConfigurationError(
            f"Unable to read settings: {error}"
        ) from error
    if not isinstance(values, dict):
        raise ConfigurationError(
            "A settings file must contain a mapping of settings"
        )
    return values


def load_config(
    stream: Optional[TextIO] = None,
    overrides: Optional[Mapping[str, Any]] = None
) -> ExperimentConfig:
    """Read a flat YAML settings file and apply overrides on top.

    Raises:
        ConfigurationError: if the file is not a mapping, or names an
            unknown setting.
    """
    config = ExperimentConfig()
    if stream is not None:
        config = apply_overrides(config, read_settings(stream))
    return apply_overrides(config, overrides or {})


def clickgraph_home() -> str:
    """Root for relative paths and run directories."""
    return os.environ.get(CLICKGRAPH_HOME_VARIABLE) or os.getcwd()


def make_run_directory(
    config: ExperimentConfig,
    now: Optional[datetime.datetime] = None
) -> str:
    """Create the directory a run writes into.

    Uses ``run_dir`` when set, otherwise ``runs/<run_name>-<timestamp>``
    under the working root.
    """
    if config.run_dir:
        path = config.resolve(config.run_dir)
    else:
        stamp = (now or datetime.datetime.now()).strftime("%Y%m%d-%H%M%S")
        path = os.path.join(
            clickgraph_home(), "runs", f"{config.run_name}-{stamp}"
        )
    os.makedirs(path, exist_ok=True)
    return path


def _package_version() -> str:
    try:
        return metadata.version(PACKAGE_NAME)
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(
    run_dir: str,
    config: ExperimentConfig,
    extra: Optional[Mapping[str, Any]] = None
) -> str:
    """Write the settings, seeds and versions of a run.

    Returns:
        Path of the manifest file.
    """
    manifest: Dict[str, Any] = {
        "config": config.to_dict(),
        "seeds": {
            "init": config.init_seed,
            "sampler": config.sampler_seed,
            "eval": config.eval_seed,
            "hold_out": config.hold_out_seed,
        },
        "versions": {
            PACKAGE_NAME: _package_version(),
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(run_dir, MANIFEST_FILE_NAME)
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(manifest, handle, sort_keys=True)
    logger.debug("Wrote %s", path)
    return path


def load_config_file(
    path: Optional[str],
    overrides: Optional[Mapping[str, Any]] = None
) -> ExperimentConfig:
    """Load settings from an optional file path."""
    if not path:
        return load_config(overrides=overrides)
    with open(path, "r", encoding="utf-8") as read_file:
        return load_config(read_file, overrides)
