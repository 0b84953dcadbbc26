"""GraphCM training and evaluation tasks."""
import os
import typing
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import speedwagon

from speedwagon_clickgraph import harness
from speedwagon_clickgraph.config import ExperimentConfig, apply_overrides
from speedwagon_clickgraph.evaluation import MetricsReport
from speedwagon_clickgraph.exceptions import UnsupportedCombination
from .common import package_logging

TrainingSummary = typing.TypedDict(
    "TrainingSummary",
    {
        "run_dir": str,
        "checkpoint": str,
        "best_epoch": int,
        "best_valid_perplexity": float,
        "epochs": List[harness.EpochRecord],
        "grid": List[Tuple[Dict[str, float], float]],
    }
)

EvaluationResult = typing.TypedDict(
    "EvaluationResult",
    {
        "checkpoint": str,
        "reports": List[MetricsReport],
        "combination": Optional[Dict[str, float]],
        "files": List[str],
    }
)

VariantResult = typing.TypedDict(
    "VariantResult",
    {
        "variant": str,
        "run_dir": str,
        "reports": List[MetricsReport],
    }
)


class TrainModelTask(speedwagon.tasks.Subtask[TrainingSummary]):
    """Train GraphCM once, or at every grid point."""

    name = "Train GraphCM"

    def __init__(self, config: ExperimentConfig, grid: bool = False) -> None:
        """Create a training task."""
        super().__init__()
        self._config = config
        self._grid = grid

    def task_description(self) -> Optional[str]:
        """Get user readable information about what the subtask is doing."""
        if self._grid:
            return f"Grid search on {self._config.data_dir}"
        return f"Training GraphCM on {self._config.data_dir}"

    def work(self) -> bool:
        """Run training and report the selected checkpoint."""
        with package_logging(self.log):
            grid: List[Tuple[Dict[str, float], float]] = []
            if self._grid:
                search = harness.grid_search(self._config)
                result = search.best_result
                grid = search.rows
            else:
                result = harness.train(self._config)
            self.log(f"Best checkpoint: {result.checkpoint_path}")
            self.set_results(
                {
                    "run_dir": result.run_dir,
                    "checkpoint": result.checkpoint_path,
                    "best_epoch": result.best_epoch,
                    "best_valid_perplexity": result.best_valid_perplexity,
                    "epochs": result.epochs,
                    "grid": grid,
                }
            )
        return True


class EvaluateModelTask(speedwagon.tasks.Subtask[EvaluationResult]):
    """Evaluate a checkpoint on the full test set and its partitions."""

    name = "Evaluate GraphCM"

    def __init__(
        self,
        checkpoint: str,
        overrides: Optional[Mapping[str, Any]] = None
    ) -> None:
        """Create an evaluation task.

        Args:
            checkpoint: path to a checkpoint written by training.
            overrides: settings replacing those stored in the checkpoint.
        """
        super().__init__()
        self._checkpoint = checkpoint
        self._overrides = dict(overrides or {})

    def task_description(self) -> Optional[str]:
        """Get user readable information about what the subtask is doing."""
        return f"Evaluating {self._checkpoint}"

    def work(self) -> bool:
        """Compute the reports and write them beside the checkpoint."""
        with package_logging(self.log):
            model, stored = harness.load_model(self._checkpoint)
            config = apply_overrides(stored, self._overrides)
            data = harness.prepare_data(config)
            reports = harness.evaluate_model(model, data, config)
            try:
                combination: Optional[Dict[str, float]] = \
                    model.combination_parameters()
            except UnsupportedCombination:
                combination = None
            files = harness.write_reports(
                reports, os.path.dirname(os.path.abspath(self._checkpoint))
            )
            self.set_results(
                {
                    "checkpoint": self._checkpoint,
                    "reports": reports,
                    "combination": combination,
                    "files": list(files),
                }
            )
        return True


class AblationVariantTask(speedwagon.tasks.Subtask[VariantResult]):
    """Train and evaluate one ablation variant."""

    name = "GraphCM Ablation Variant"

    def __init__(
        self,
        config: ExperimentConfig,
        variant: str,
        run_dir: str
    ) -> None:
        """Create a task for a variant named in ABLATION_VARIANTS."""
        super().__init__()
        self._config = config
        self._variant = variant
        self._run_dir = run_dir

    def task_description(self) -> Optional[str]:
        """Get user readable information about what the subtask is doing."""
        return f"Running ablation variant {self._variant}"

    def work(self) -> bool:
        """Train the variant and evaluate it."""
        with package_logging(self.log):
            data = harness.prepare_data(self._config)
            reports = harness.run_ablation_variant(
                self._config, self._variant, data, self._run_dir
            )
            self.set_results(
                {
                    "variant": self._variant,
                    "run_dir": os.path.join(self._run_dir, self._variant),
                    "reports": reports,
                }
            )
        return True


class WriteMetricsReportTask(speedwagon.tasks.Subtask[List[str]]):
    """Write reports of several runs into one table."""

    name = "Write Metrics Report"

    def __init__(
        self,
        reports: Sequence[MetricsReport],
        output_dir: str
    ) -> None:
        """Create a report writing task."""
        super().__init__()
        self._reports = list(reports)
        self._output_dir = output_dir

    def task_description(self) -> Optional[str]:
        """Get user readable information about what the subtask is doing."""
        return f"Writing metrics to {self._output_dir}"

    def work(self) -> bool:
        """Write the table and key-value files."""
        files = harness.write_reports(self._reports, self._output_dir)
        for path in files:
            self.log(f"Wrote {path}")
        self.set_results(list(files))
        return True
