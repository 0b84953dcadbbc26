"""Fitting probabilistic graphical click models."""
from __future__ import annotations

from typing import List, Mapping, Optional, TypedDict, TYPE_CHECKING

import speedwagon
import speedwagon.workflow
from speedwagon.job import Workflow
from speedwagon.reports import add_report_borders

from speedwagon_clickgraph import tasks
from speedwagon_clickgraph.config import ExperimentConfig
from speedwagon_clickgraph.evaluation import MetricsReport, format_table
from speedwagon_clickgraph.options import (
    experiment_settings,
    output_directory_option,
    settings_file_option,
    split_directory_option,
)
from speedwagon_clickgraph.pgm_baselines import ClickModelKind

if TYPE_CHECKING:
    import sys
    if sys.version_info >= (3, 11):
        from typing import Never
    else:
        from typing_extensions import Never

__all__ = ["FitPgmClickModelsWorkflow"]

EVALUATE_LABEL = "Evaluate on test set"

UserArgs = TypedDict(
    "UserArgs",
    {
        "Input": str,
        "Output": str,
        "Settings File": Optional[str],
        "PBM": bool,
        "UBM": bool,
        "DCM": bool,
        "SDBN": bool,
        "Evaluate on test set": bool,
    }
)

JobArgs = TypedDict(
    "JobArgs",
    {
        "config": ExperimentConfig,
        "model": str,
        "output_dir": str,
        "evaluate": bool,
    }
)


def _reports(
    results: List[speedwagon.tasks.Result[tasks.BaselineResult]]
) -> List[MetricsReport]:
    order = [kind.value for kind in ClickModelKind]
    fitted = sorted(
        (
            result.data for result in results
            if result.source == tasks.FitBaselineTask
        ),
        key=lambda data: order.index(data["model"])
    )
    return [report for data in fitted for report in data["reports"]]


class FitPgmClickModelsWorkflow(Workflow[UserArgs]):
    """Fit PBM, UBM, DCM and SDBN on a training partition."""

    name = "Fit PGM Click Models"
    description = "Fits the position-based model and the user browsing " \
                  "model by expectation maximization, and the dependent " \
                  "click model and simplified dynamic Bayesian network " \
                  "by counting. Parameters are written as one TSV file " \
                  "per model. When evaluating, test metrics for the full " \
                  "test set and the cold-start sets are reported." \
                  "\n" \
                  "Input: Directory containing train.jsonl, valid.jsonl " \
                  "and test.jsonl" \
                  "\n" \
                  "Output: Directory for parameter and metric files"

    def job_options(
        self
    ) -> List[
        speedwagon.workflow.AbsOutputOptionDataType[
            speedwagon.workflow.UserDataType
        ]
    ]:
        """Request the data, output and models to fit."""
        options: List[
            speedwagon.workflow.AbsOutputOptionDataType[
                speedwagon.workflow.UserDataType
            ]
        ] = [
            split_directory_option(),
            output_directory_option(),
            settings_file_option(),
        ]
        for kind in ClickModelKind:
            model = speedwagon.workflow.BooleanSelect(kind.value)
            model.value = True
            options.append(model)
        evaluate = speedwagon.workflow.BooleanSelect(EVALUATE_LABEL)
        evaluate.value = True
        options.append(evaluate)
        return options

    def discover_task_metadata(
        self,
        initial_results: List[  # pylint: disable=unused-argument
            speedwagon.tasks.Result[Never]
        ],
        additional_data: Mapping[str, Never],  # pylint: disable=W0613
        user_args: UserArgs,
    ) -> List[JobArgs]:
        """Create one job per selected model.

        No selected model will raise a JobCancelled error.
        """
        config = experiment_settings(
            user_args["Settings File"], data_dir=user_args["Input"]
        )
        jobs: List[JobArgs] = [
            {
                "config": config,
                "model": kind.value,
                "output_dir": user_args["Output"],
                "evaluate": user_args[EVALUATE_LABEL],  # type: ignore
            }
            for kind in ClickModelKind
            if user_args[kind.value]  # type: ignore[literal-required]
        ]
        if not jobs:
            raise speedwagon.JobCancelled("No click model selected")
        return jobs

    def create_new_task(
        self,
        task_builder: speedwagon.tasks.TaskBuilder,
        job_args: JobArgs
    ) -> None:
        """Add a fitting task for the model."""
        task_builder.add_subtask(
            tasks.FitBaselineTask(
                job_args["config"],
                ClickModelKind(job_args["model"]),
                job_args["output_dir"],
                job_args["evaluate"],
            )
        )

    def completion_task(
        self,
        task_builder: speedwagon.tasks.TaskBuilder,
        results: List[speedwagon.tasks.Result[tasks.BaselineResult]],
        user_args: UserArgs
    ) -> None:
        """Write the metrics of every evaluated model together."""
        reports = _reports(results)
        if reports:
            task_builder.add_subtask(
                tasks.WriteMetricsReportTask(reports, user_args["Output"])
            )

    @classmethod
    @add_report_borders
    def generate_report(
        cls,
        results: List[speedwagon.tasks.Result[tasks.BaselineResult]],
        user_args: UserArgs  # pylint: disable=unused-argument
    ) -> Optional[str]:
        """List the fitted models and their metrics."""
        fitted = [
            result.data["model"] for result in results
            if result.source == tasks.FitBaselineTask
        ]
        lines = [f"Fitted {', '.join(fitted)} into {user_args['Output']}"]
        reports = _reports(results)
        if reports:
            lines += ["", format_table(reports)]
        return "\n".join(lines)
