"""Generating synthetic session logs."""
from __future__ import annotations

from typing import List, Mapping, Optional, TypedDict, TYPE_CHECKING

import speedwagon
import speedwagon.workflow
from speedwagon import validators
from speedwagon.job import Workflow
from speedwagon.reports import add_report_borders

from speedwagon_clickgraph import conditions, tasks
from speedwagon_clickgraph.synthetic import GeneratorKind, GeneratorSettings

if TYPE_CHECKING:
    import sys
    if sys.version_info >= (3, 11):
        from typing import Never
    else:
        from typing_extensions import Never

__all__ = ["GenerateSyntheticLogWorkflow"]

UserArgs = TypedDict(
    "UserArgs",
    {
        "Output": str,
        "Click Model": str,
        "Sessions": str,
        "Queries": str,
        "Documents": str,
        "Result Page Size": str,
        "Seed": str,
        "Split into train, valid and test": bool,
    }
)

JobArgs = TypedDict(
    "JobArgs",
    {
        "generator": GeneratorSettings,
        "output_dir": str,
        "split_seed": Optional[int],
    }
)

_WHOLE_NUMBERS = ("Sessions", "Queries", "Documents", "Result Page Size",
                  "Seed")


class GenerateSyntheticLogWorkflow(Workflow[UserArgs]):
    """Write a log sampled from a click model with known parameters."""

    name = "Generate Synthetic Click Log"
    description = "Samples sessions from a PBM, UBM or SDBN click model, " \
                  "or from GRAPH_PLANTED, where queries and documents " \
                  "belong to latent topics and same-topic documents are " \
                  "more attractive. The log is written as log.jsonl " \
                  "together with ground_truth.yml holding the parameters " \
                  "it was sampled from." \
                  "\n" \
                  "Output: Directory to write the log into"

    def job_options(
        self
    ) -> List[
        speedwagon.workflow.AbsOutputOptionDataType[
            speedwagon.workflow.UserDataType
        ]
    ]:
        """Request the generator and its sizes."""
        output_path = speedwagon.workflow.DirectorySelect("Output")
        output_path.add_validation(validators.ExistsOnFileSystem())
        output_path.add_validation(
            validators.IsDirectory(),
            condition=conditions.candidate_exists
        )

        click_model = speedwagon.workflow.ChoiceSelection("Click Model")
        click_model.placeholder_text = "Select a click model"
        for kind in GeneratorKind:
            click_model.add_selection(kind.value)
        click_model.value = GeneratorKind.PBM.value

        defaults = GeneratorSettings()
        values = {
            "Sessions": defaults.sessions,
            "Queries": defaults.n_queries,
            "Documents": defaults.n_docs,
            "Result Page Size": defaults.serp_size,
            "Seed": defaults.seed,
        }
        sizes = []
        for label in _WHOLE_NUMBERS:
            option = speedwagon.workflow.TextLineEditData(label)
            option.value = str(values[label])
            sizes.append(option)

        split = speedwagon.workflow.BooleanSelect(
            "Split into train, valid and test"
        )
        split.value = True
        return [output_path, click_model, *sizes, split]

    def discover_task_metadata(
        self,
        initial_results: List[  # pylint: disable=unused-argument
            speedwagon.tasks.Result[Never]
        ],
        additional_data: Mapping[str, Never],  # pylint: disable=W0613
        user_args: UserArgs,
    ) -> List[JobArgs]:
        """Turn the options into a generator settings."""
        numbers = {}
        for label in _WHOLE_NUMBERS:
            try:
                numbers[label] = int(user_args[label])  # type: ignore
            except ValueError as error:
                raise speedwagon.JobCancelled(
                    f"{label} must be a whole number: {error}"
                ) from error
        try:
            generator = GeneratorSettings(
                kind=GeneratorKind(user_args["Click Model"]),
                sessions=numbers["Sessions"],
                n_queries=numbers["Queries"],
                n_docs=numbers["Documents"],
                serp_size=numbers["Result Page Size"],
                seed=numbers["Seed"],
            )
        except ValueError as error:
            raise speedwagon.JobCancelled(str(error)) from error
        split = user_args["Split into train, valid and test"]
        return [
            {
                "generator": generator,
                "output_dir": user_args["Output"],
                "split_seed": generator.seed if split else None,
            }
        ]

    def create_new_task(
        self,
        task_builder: speedwagon.tasks.TaskBuilder,
        job_args: JobArgs
    ) -> None:
        """Add the generation task."""
        task_builder.add_subtask(
            tasks.GenerateSyntheticLogTask(
                job_args["generator"],
                job_args["output_dir"],
                job_args["split_seed"]
            )
        )

    @classmethod
    @add_report_borders
    def generate_report(
        cls,
        results: List[speedwagon.tasks.Result[tasks.SyntheticLogResult]],
        user_args: UserArgs  # pylint: disable=unused-argument
    ) -> Optional[str]:
        """Say what was written where."""
        lines = []
        for result in results:
            lines.append(
                f"Wrote {result.data['sessions']} {result.data['kind']} "
                f"sessions to {result.data['output']}"
            )
            if result.data["split"]:
                lines.append("Split into train, valid and test files")
        return "\n".join(lines)
