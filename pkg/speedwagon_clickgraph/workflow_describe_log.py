"""Validating and describing session logs."""
from __future__ import annotations

from typing import Any, List, Mapping, Optional, TypedDict, TYPE_CHECKING

import speedwagon
import speedwagon.workflow
from speedwagon import validators
from speedwagon.job import Workflow
from speedwagon.reports import add_report_borders

from speedwagon_clickgraph import conditions, tasks

if TYPE_CHECKING:
    import sys
    if sys.version_info >= (3, 11):
        from typing import Never
    else:
        from typing_extensions import Never

__all__ = ["DescribeClickLogWorkflow"]

UserArgs = TypedDict(
    "UserArgs",
    {
        "Input": str,
        "Split into train, valid and test": bool,
        "Output": Optional[str],
        "Split Seed": str,
    }
)

JobArgs = TypedDict(
    "JobArgs",
    {
        "log_file": str,
        "split_output": Optional[str],
        "seed": int,
    }
)


class DescribeClickLogWorkflow(Workflow[UserArgs]):
    """Check a session log and report its statistics."""

    name = "Describe Click Log"
    description = "Reads a session log in the canonical JSON lines format " \
                  "and reports the number of sessions, queries, " \
                  "impressions and clicks, the click rate at each rank " \
                  "and the sparsity of query-document pairs. Malformed " \
                  "lines stop the job with their line numbers." \
                  "\n" \
                  "Optionally writes train.jsonl, valid.jsonl and " \
                  "test.jsonl, split 8:1:1 by session, into the Output " \
                  "directory." \
                  "\n" \
                  "Input: Path to a session log file"

    def job_options(
        self
    ) -> List[
        speedwagon.workflow.AbsOutputOptionDataType[
            speedwagon.workflow.UserDataType
        ]
    ]:
        """Request the log file and split settings."""
        input_file = speedwagon.workflow.FileSelectData("Input", required=True)
        input_file.filter = "Session logs (*.jsonl *.json *.txt)"
        input_file.add_validation(validators.ExistsOnFileSystem())
        input_file.add_validation(
            validators.IsFile(),
            condition=conditions.candidate_exists
        )

        split = speedwagon.workflow.BooleanSelect(
            "Split into train, valid and test"
        )
        split.value = False

        output = speedwagon.workflow.DirectorySelect("Output", required=False)

        seed = speedwagon.workflow.TextLineEditData("Split Seed")
        seed.value = "0"
        return [input_file, split, output, seed]

    def discover_task_metadata(
        self,
        initial_results: List[  # pylint: disable=unused-argument
            speedwagon.tasks.Result[Never]
        ],
        additional_data: Mapping[str, Never],  # pylint: disable=W0613
        user_args: UserArgs,
    ) -> List[JobArgs]:
        """Create a single job for the log file."""
        split_output = None
        if user_args["Split into train, valid and test"]:
            split_output = user_args["Output"]
            if not split_output:
                raise speedwagon.JobCancelled(
                    "Splitting requires an Output directory"
                )
        try:
            seed = int(user_args["Split Seed"] or 0)
        except ValueError as error:
            raise speedwagon.JobCancelled(
                f"Split Seed must be a whole number: {error}"
            ) from error
        return [
            {
                "log_file": user_args["Input"],
                "split_output": split_output,
                "seed": seed,
            }
        ]

    def create_new_task(
        self,
        task_builder: speedwagon.tasks.TaskBuilder,
        job_args: JobArgs
    ) -> None:
        """Describe the log and split it when requested."""
        task_builder.add_subtask(tasks.DescribeLogTask(job_args["log_file"]))
        if job_args["split_output"]:
            task_builder.add_subtask(
                tasks.SplitLogTask(
                    job_args["log_file"],
                    job_args["split_output"],
                    job_args["seed"]
                )
            )

    @classmethod
    @add_report_borders
    def generate_report(
        cls,
        results: List[speedwagon.tasks.Result[Any]],
        user_args: UserArgs  # pylint: disable=unused-argument
    ) -> Optional[str]:
        """List the statistics of the log."""
        lines: List[str] = []
        for result in results:
            if result.source == tasks.DescribeLogTask:
                statistics = result.data["statistics"]
                lines += [
                    f"Log: {result.data['source']}",
                    f"Sessions: {statistics.sessions}",
                    f"Queries: {statistics.queries}",
                    f"Impressions: {statistics.impressions}",
                    f"Clicks: {statistics.clicks}",
                    f"Distinct queries: {statistics.distinct_queries}",
                    f"Distinct documents: {statistics.distinct_documents}",
                    f"Longest result list: {statistics.max_list_length}",
                    "Click rate by rank: " + ", ".join(
                        f"{rate:.3f}"
                        for rate in statistics.click_rate_by_rank
                    ),
                    f"Sparsity: {result.data['sparsity']:.6f}",
                ]
            elif result.source == tasks.SplitLogTask:
                train, valid, test = result.data["sizes"]
                lines.append(
                    f"Split into {train} training, {valid} validation and "
                    f"{test} test sessions"
                )
                lines += [f"  {path}" for path in result.data["files"]]
        return "\n".join(lines)
