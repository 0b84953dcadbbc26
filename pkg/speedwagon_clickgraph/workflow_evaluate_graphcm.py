"""Evaluating GraphCM checkpoints."""
from __future__ import annotations

from typing import Any, Dict, List, Mapping, Optional, TypedDict, \
    TYPE_CHECKING

import speedwagon
import speedwagon.workflow
from speedwagon import validators
from speedwagon.job import Workflow
from speedwagon.reports import add_report_borders

from speedwagon_clickgraph import conditions, tasks
from speedwagon_clickgraph.evaluation import format_table

if TYPE_CHECKING:
    import sys
    if sys.version_info >= (3, 11):
        from typing import Never
    else:
        from typing_extensions import Never

__all__ = ["EvaluateGraphCMWorkflow"]

UserArgs = TypedDict(
    "UserArgs",
    {
        "Checkpoint": str,
        "Input": Optional[str],
        "Relevance File": Optional[str],
    }
)

JobArgs = TypedDict(
    "JobArgs",
    {
        "checkpoint": str,
        "overrides": Dict[str, Any],
    }
)


class EvaluateGraphCMWorkflow(Workflow[UserArgs]):
    """Report click prediction and ranking metrics of a checkpoint."""

    name = "Evaluate GraphCM"
    description = "Evaluates a GraphCM checkpoint on the test partition " \
                  "it was trained with, reporting log-likelihood, " \
                  "perplexity and, given relevance annotations, NDCG for " \
                  "the full test set and for the Cold Q, Cold D, Cold QD " \
                  "and Warm QD session sets. Metrics are written beside " \
                  "the checkpoint." \
                  "\n" \
                  "Checkpoint: best.clkg of a training run" \
                  "\n" \
                  "Input: Optional split directory replacing the one the " \
                  "model was trained on" \
                  "\n" \
                  "Relevance File: Optional qid, did, grade TSV file"

    def job_options(
        self
    ) -> List[
        speedwagon.workflow.AbsOutputOptionDataType[
            speedwagon.workflow.UserDataType
        ]
    ]:
        """Request the checkpoint and optional data."""
        checkpoint = speedwagon.workflow.FileSelectData(
            "Checkpoint", required=True
        )
        checkpoint.filter = "Checkpoints (*.clkg)"
        checkpoint.add_validation(validators.ExistsOnFileSystem())
        checkpoint.add_validation(
            validators.IsFile(),
            condition=conditions.candidate_exists
        )

        input_path = speedwagon.workflow.DirectorySelect(
            "Input", required=False
        )
        input_path.add_validation(
            validators.ExistsOnFileSystem(),
            condition=conditions.value_provided
        )

        relevance = speedwagon.workflow.FileSelectData(
            "Relevance File", required=False
        )
        relevance.add_validation(
            validators.ExistsOnFileSystem(),
            condition=conditions.value_provided
        )
        return [checkpoint, input_path, relevance]

    def discover_task_metadata(
        self,
        initial_results: List[  # pylint: disable=unused-argument
            speedwagon.tasks.Result[Never]
        ],
        additional_data: Mapping[str, Never],  # pylint: disable=W0613
        user_args: UserArgs,
    ) -> List[JobArgs]:
        """Collect settings replacing those stored in the checkpoint."""
        overrides: Dict[str, Any] = {}
        if user_args["Input"]:
            overrides["data_dir"] = user_args["Input"]
        if user_args["Relevance File"]:
            overrides["relevance_file"] = user_args["Relevance File"]
        return [
            {"checkpoint": user_args["Checkpoint"], "overrides": overrides}
        ]

    def create_new_task(
        self,
        task_builder: speedwagon.tasks.TaskBuilder,
        job_args: JobArgs
    ) -> None:
        """Add the evaluation task."""
        task_builder.add_subtask(
            tasks.EvaluateModelTask(
                job_args["checkpoint"], job_args["overrides"]
            )
        )

    @classmethod
    @add_report_borders
    def generate_report(
        cls,
        results: List[speedwagon.tasks.Result[tasks.EvaluationResult]],
        user_args: UserArgs  # pylint: disable=unused-argument
    ) -> Optional[str]:
        """Show the metrics table."""
        sections = []
        for result in results:
            lines = [
                f"Checkpoint: {result.data['checkpoint']}",
                "",
                format_table(result.data["reports"]),
            ]
            combination = result.data["combination"]
            if combination is not None:
                lines += [
                    "",
                    f"Combination alpha: {combination['alpha']:.4f}",
                    f"Combination beta: {combination['beta']:.4f}",
                ]
            lines += [f"Wrote {path}" for path in result.data["files"]]
            sections.append("\n".join(lines))
        return "\n\n".join(sections)
