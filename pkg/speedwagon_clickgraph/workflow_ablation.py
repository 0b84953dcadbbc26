"""Comparing GraphCM with parts of it removed."""
from __future__ import annotations

from typing import Dict, List, Mapping, Optional, TypedDict, TYPE_CHECKING

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

if TYPE_CHECKING:
    import sys
    if sys.version_info >= (3, 11):
        from typing import Never
    else:
        from typing_extensions import Never

__all__ = ["GraphCMAblationWorkflow"]

VARIANT_OPTIONS: Dict[str, str] = {
    "Full Model": "full",
    "Without Query GAT": "no_q_gat",
    "Without Document GAT": "no_d_gat",
    "Without Both GATs": "no_gat",
    "Without Neighbor Interaction": "no_interaction",
    "Without Any Graph Component": "ncm_like",
}

UserArgs = TypedDict(
    "UserArgs",
    {
        "Input": str,
        "Output": str,
        "Settings File": Optional[str],
        "Full Model": bool,
        "Without Query GAT": bool,
        "Without Document GAT": bool,
        "Without Both GATs": bool,
        "Without Neighbor Interaction": bool,
        "Without Any Graph Component": bool,
    }
)

JobArgs = TypedDict(
    "JobArgs",
    {
        "config": ExperimentConfig,
        "variant": str,
        "run_dir": str,
    }
)


def _ordered_reports(
    results: List[speedwagon.tasks.Result[tasks.VariantResult]]
) -> List[MetricsReport]:
    order = list(VARIANT_OPTIONS.values())
    variant_results = sorted(
        (
            result.data for result in results
            if result.source == tasks.AblationVariantTask
        ),
        key=lambda data: order.index(data["variant"])
    )
    return [
        report for data in variant_results for report in data["reports"]
    ]


class GraphCMAblationWorkflow(Workflow[UserArgs]):
    """Train and evaluate selected variants with shared seeds."""

    name = "GraphCM Ablation Study"
    description = "Trains the full model and variants without the query " \
                  "graph attention, the document graph attention, both " \
                  "attention layers, the neighbor interaction, or every " \
                  "graph component. Every variant sees " \
                  "the same data order, neighbor samples and seeds, so the " \
                  "resulting table compares model structure only." \
                  "\n" \
                  "Input: Directory containing train.jsonl, valid.jsonl " \
                  "and test.jsonl" \
                  "\n" \
                  "Output: Directory receiving one run per variant and " \
                  "the combined metrics"

    def job_options(
        self
    ) -> List[
        speedwagon.workflow.AbsOutputOptionDataType[
            speedwagon.workflow.UserDataType
        ]
    ]:
        """Request the data, output, settings and variants."""
        options: List[
            speedwagon.workflow.AbsOutputOptionDataType[
                speedwagon.workflow.UserDataType
            ]
        ] = [
            split_directory_option(),
            output_directory_option(),
            settings_file_option(),
        ]
        for label in VARIANT_OPTIONS:
            variant = speedwagon.workflow.BooleanSelect(label)
            variant.value = True
            options.append(variant)
        return options

    def discover_task_metadata(
        self,
        initial_results: List[  # pylint: disable=unused-argument
            speedwagon.tasks.Result[Never]
        ],
        additional_data: Mapping[str, Never],  # pylint: disable=W0613
        user_args: UserArgs,
    ) -> List[JobArgs]:
        """Create one job per selected variant.

        No selected variant will raise a JobCancelled error.
        """
        config = experiment_settings(
            user_args["Settings File"],
            data_dir=user_args["Input"],
            run_dir=user_args["Output"],
        )
        jobs: List[JobArgs] = [
            {
                "config": config,
                "variant": variant,
                "run_dir": user_args["Output"],
            }
            for label, variant in VARIANT_OPTIONS.items()
            if user_args[label]  # type: ignore[literal-required]
        ]
        if not jobs:
            raise speedwagon.JobCancelled("No variant selected")
        return jobs

    def create_new_task(
        self,
        task_builder: speedwagon.tasks.TaskBuilder,
        job_args: JobArgs
    ) -> None:
        """Add a task for the variant."""
        task_builder.add_subtask(
            tasks.AblationVariantTask(
                job_args["config"], job_args["variant"], job_args["run_dir"]
            )
        )

    def completion_task(
        self,
        task_builder: speedwagon.tasks.TaskBuilder,
        results: List[speedwagon.tasks.Result[tasks.VariantResult]],
        user_args: UserArgs
    ) -> None:
        """Write the combined table of every variant."""
        task_builder.add_subtask(
            tasks.WriteMetricsReportTask(
                _ordered_reports(results), user_args["Output"]
            )
        )

    @classmethod
    @add_report_borders
    def generate_report(
        cls,
        results: List[speedwagon.tasks.Result[tasks.VariantResult]],
        user_args: UserArgs  # pylint: disable=unused-argument
    ) -> Optional[str]:
        """Show the variants side by side."""
        return format_table(_ordered_reports(results))
