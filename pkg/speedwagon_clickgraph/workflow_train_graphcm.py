"""Training GraphCM."""
from __future__ import annotations

from typing import List, Mapping, Optional, TypedDict, TYPE_CHECKING

import speedwagon
import speedwagon.workflow
from speedwagon.job import Workflow
from speedwagon.reports import add_report_borders

from speedwagon_clickgraph import tasks
from speedwagon_clickgraph.config import ExperimentConfig
from speedwagon_clickgraph.options import (
    experiment_settings,
    output_directory_option,
    settings_file_option,
    split_directory_option,
)

if TYPE_CHECKING:
    import sys
    if sys.version_info >= (3, 11):
        from typing import Never
    else:
        from typing_extensions import Never

__all__ = ["TrainGraphCMWorkflow"]

UserArgs = TypedDict(
    "UserArgs",
    {
        "Input": str,
        "Output": str,
        "Settings File": Optional[str],
        "Grid Search": bool,
    }
)

JobArgs = TypedDict(
    "JobArgs",
    {
        "config": ExperimentConfig,
        "grid": bool,
    }
)


class TrainGraphCMWorkflow(Workflow[UserArgs]):
    """Train GraphCM on a split and keep the best validation checkpoint."""

    name = "Train GraphCM"
    description = "Trains the graph-enhanced click model on train.jsonl, " \
                  "measuring perplexity on valid.jsonl after every epoch " \
                  "and keeping the parameters with the lowest value in " \
                  "best.clkg. Settings not given in the optional YAML " \
                  "settings file use their defaults." \
                  "\n" \
                  "With Grid Search checked, every combination of the " \
                  "learning rate, L2, dropout and neighbor count grids is " \
                  "trained and the best one is reported." \
                  "\n" \
                  "Input: Directory containing train.jsonl, valid.jsonl " \
                  "and test.jsonl" \
                  "\n" \
                  "Output: Run directory"

    def job_options(
        self
    ) -> List[
        speedwagon.workflow.AbsOutputOptionDataType[
            speedwagon.workflow.UserDataType
        ]
    ]:
        """Request the data, run directory and settings."""
        grid = speedwagon.workflow.BooleanSelect("Grid Search")
        grid.value = False
        return [
            split_directory_option(),
            output_directory_option(),
            settings_file_option(),
            grid,
        ]

    def discover_task_metadata(
        self,
        initial_results: List[  # pylint: disable=unused-argument
            speedwagon.tasks.Result[Never]
        ],
        additional_data: Mapping[str, Never],  # pylint: disable=W0613
        user_args: UserArgs,
    ) -> List[JobArgs]:
        """Resolve the settings of the run."""
        config = experiment_settings(
            user_args["Settings File"],
            data_dir=user_args["Input"],
            run_dir=user_args["Output"],
        )
        return [{"config": config, "grid": user_args["Grid Search"]}]

    def create_new_task(
        self,
        task_builder: speedwagon.tasks.TaskBuilder,
        job_args: JobArgs
    ) -> None:
        """Add the training task."""
        task_builder.add_subtask(
            tasks.TrainModelTask(job_args["config"], job_args["grid"])
        )

    @classmethod
    @add_report_borders
    def generate_report(
        cls,
        results: List[speedwagon.tasks.Result[tasks.TrainingSummary]],
        user_args: UserArgs  # pylint: disable=unused-argument
    ) -> Optional[str]:
        """Report the training curve and the selected checkpoint."""
        lines = []
        for result in results:
            summary = result.data
            for point, perplexity in summary["grid"]:
                settings = ", ".join(
                    f"{key}={value}" for key, value in point.items()
                )
                lines.append(f"{settings}: validation PPL {perplexity:.4f}")
            for record in summary["epochs"]:
                lines.append(
                    f"Epoch {record.epoch}: train loss "
                    f"{record.train_loss:.4f}, validation PPL "
                    f"{record.valid_perplexity:.4f}"
                )
            lines.append(
                f"Best epoch {summary['best_epoch']} with validation PPL "
                f"{summary['best_valid_perplexity']:.4f}"
            )
            lines.append(f"Checkpoint: {summary['checkpoint']}")
        return "\n".join(lines)
