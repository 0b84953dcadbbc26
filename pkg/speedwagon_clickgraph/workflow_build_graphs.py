"""Building query and document graphs from a training partition."""
from __future__ import annotations

from typing import List, Mapping, Optional, TypedDict, TYPE_CHECKING

import speedwagon
import speedwagon.workflow
from speedwagon.job import Workflow
from speedwagon.reports import add_report_borders

from speedwagon_clickgraph import tasks
from speedwagon_clickgraph.config import load_config
from speedwagon_clickgraph.exceptions import ConfigurationError
from speedwagon_clickgraph.options import (
    output_directory_option,
    split_directory_option,
)

if TYPE_CHECKING:
    import sys
    if sys.version_info >= (3, 11):
        from typing import Never
    else:
        from typing_extensions import Never

__all__ = ["BuildClickGraphsWorkflow"]

UserArgs = TypedDict(
    "UserArgs",
    {
        "Input": str,
        "Output": str,
        "Hold Out Fraction": str,
    }
)

JobArgs = TypedDict(
    "JobArgs",
    {
        "data_dir": str,
        "output_dir": str,
        "hold_out_fraction": float,
    }
)


class BuildClickGraphsWorkflow(Workflow[UserArgs]):
    """Build the homogeneous graphs GraphCM trains on."""

    name = "Build Click Graphs"
    description = "Builds the query graph and the document graph from the " \
                  "training partition of a split. Queries are linked when " \
                  "they share a clicked document or follow each other in " \
                  "a session; documents are linked when clicked under the " \
                  "same query or shown next to each other." \
                  "\n" \
                  "Input: Directory containing train.jsonl, valid.jsonl " \
                  "and test.jsonl" \
                  "\n" \
                  "Output: Directory to write query_graph.txt and " \
                  "doc_graph.txt into"

    def job_options(
        self
    ) -> List[
        speedwagon.workflow.AbsOutputOptionDataType[
            speedwagon.workflow.UserDataType
        ]
    ]:
        """Request the split directory and the output directory."""
        hold_out = speedwagon.workflow.TextLineEditData("Hold Out Fraction")
        hold_out.value = "0.0"
        return [
            split_directory_option(),
            output_directory_option(),
            hold_out,
        ]

    def discover_task_metadata(
        self,
        initial_results: List[  # pylint: disable=unused-argument
            speedwagon.tasks.Result[Never]
        ],
        additional_data: Mapping[str, Never],  # pylint: disable=W0613
        user_args: UserArgs,
    ) -> List[JobArgs]:
        """Create one job for the split directory."""
        try:
            fraction = float(user_args["Hold Out Fraction"] or 0.0)
        except ValueError as error:
            raise speedwagon.JobCancelled(
                f"Hold Out Fraction must be a number: {error}"
            ) from error
        return [
            {
                "data_dir": user_args["Input"],
                "output_dir": user_args["Output"],
                "hold_out_fraction": fraction,
            }
        ]

    def create_new_task(
        self,
        task_builder: speedwagon.tasks.TaskBuilder,
        job_args: JobArgs
    ) -> None:
        """Add the graph building task."""
        try:
            config = load_config(
                overrides={
                    "data_dir": job_args["data_dir"],
                    "hold_out_fraction": job_args["hold_out_fraction"],
                }
            )
        except ConfigurationError as error:
            raise speedwagon.JobCancelled(str(error)) from error
        task_builder.add_subtask(
            tasks.BuildGraphsTask(config, job_args["output_dir"])
        )

    @classmethod
    @add_report_borders
    def generate_report(
        cls,
        results: List[speedwagon.tasks.Result[tasks.GraphReport]],
        user_args: UserArgs  # pylint: disable=unused-argument
    ) -> Optional[str]:
        """Summarize the size of each graph."""
        lines: List[str] = []
        for result in results:
            for summary in result.data["summaries"]:
                lines.append(
                    f"{summary.domain.name.title()} graph: "
                    f"{summary.nodes} nodes, "
                    f"{summary.multi_hop_edges} multi-hop edges, "
                    f"{summary.consecutive_edges} consecutive edges, "
                    f"{summary.isolated_nodes} isolated nodes, "
                    f"mean degree {summary.mean_degree:.2f}"
                )
            lines += [f"Wrote {path}" for path in result.data["files"]]
        return "\n".join(lines)